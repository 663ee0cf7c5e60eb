//! Graph selection metric (label aggregation across hops) and precomputed
//! structural node features.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Bfs, TypedGraph};
use crate::labels::{Label, LabelTable};

pub const DEFAULT_MAX_HOP: usize = 2;
pub const DEFAULT_ECCENTRICITY_CAP: usize = 2000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HopAggregation {
    pub hop: usize,
    /// Sum over high-risk nodes of high-risk nodes at this hop.
    pub numerator: u64,
    /// Sum over labeled nodes of all nodes at this hop.
    pub denominator: u64,
    pub eta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaReport {
    pub per_hop: Vec<HopAggregation>,
    pub eta: f64,
    pub max_hop: usize,
}

impl EtaReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "hop,numerator,denominator,eta")?;
        for h in &self.per_hop {
            writeln!(w, "{},{},{},{}", h.hop, h.numerator, h.denominator, h.eta)?;
        }
        writeln!(w, "max,,,{}", self.eta)?;
        Ok(())
    }
}

/// Label aggregation per hop: for each hop the number of high-risk nodes
/// found at exactly that distance from high-risk nodes, divided by the number
/// of nodes at that distance from any labeled node. Unlabeled nodes lie on
/// paths but are neither sources nor counted in the numerator.
pub fn label_aggregation_eta(graph: &TypedGraph, labels: &LabelTable, max_hop: usize) -> Result<EtaReport> {
    if max_hop < 1 {
        return Err(Error::usage("max hop must be at least 1"));
    }
    labels.validate(graph)?;
    let aligned = labels.aligned(graph);
    let sources: Vec<u32> =
        (0..graph.node_count() as u32).filter(|&v| aligned[v as usize] != Label::Unlabeled).collect();

    let zero = || (vec![0u64; max_hop], vec![0u64; max_hop]);
    let (num, den) = sources
        .par_iter()
        .fold(
            || (Bfs::new(graph.node_count()), zero()),
            |(mut bfs, (mut num, mut den)), &i| {
                let from_fraud = aligned[i as usize] == Label::HighRisk;
                bfs.run(graph, i, max_hop, |j, d| {
                    den[d - 1] += 1;
                    if from_fraud && aligned[j as usize] == Label::HighRisk {
                        num[d - 1] += 1;
                    }
                });
                (bfs, (num, den))
            },
        )
        .map(|(_, counts)| counts)
        .reduce(zero, |(mut n1, mut d1), (n2, d2)| {
            n1.iter_mut().zip(n2).for_each(|(a, b)| *a += b);
            d1.iter_mut().zip(d2).for_each(|(a, b)| *a += b);
            (n1, d1)
        });

    let per_hop: Vec<HopAggregation> = (0..max_hop)
        .map(|h| HopAggregation {
            hop: h + 1,
            numerator: num[h],
            denominator: den[h],
            eta: if den[h] == 0 { 0.0 } else { num[h] as f64 / den[h] as f64 },
        })
        .collect();
    let eta = per_hop.iter().map(|h| h.eta).fold(0.0, f64::max);
    Ok(EtaReport { per_hop, eta, max_hop })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeStructure {
    pub degree: usize,
    pub component_index: usize,
    pub component_size: usize,
    pub eccentricity: usize,
    /// False when the eccentricity is the component's diameter estimate.
    pub exact: bool,
}

/// Structural features indexed like the graph's nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct StructuralFeatures {
    pub ids: Vec<String>,
    pub rows: Vec<NodeStructure>,
}

impl StructuralFeatures {
    pub const COLUMNS: [&'static str; 4] = ["degree", "component_index", "component_size", "eccentricity"];

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "node_id,{}", Self::COLUMNS.join(","))?;
        for (id, r) in self.ids.iter().zip(&self.rows) {
            writeln!(w, "{id},{},{},{},{}", r.degree, r.component_index, r.component_size, r.eccentricity)?;
        }
        Ok(())
    }

    /// Numeric feature table: degree, component size and eccentricity. The
    /// component index is an identifier, not a magnitude, and is left out.
    pub fn to_table(&self) -> crate::features::DenseTable {
        let names = vec!["degree".to_string(), "component_size".to_string(), "eccentricity".to_string()];
        let values = ndarray::Array2::from_shape_fn((self.rows.len(), 3), |(i, j)| {
            let r = &self.rows[i];
            [r.degree, r.component_size, r.eccentricity][j] as f64
        });
        crate::features::DenseTable::new(self.ids.clone(), names, values).expect("shape is consistent")
    }
}

/// Degree, component and eccentricity per node. Eccentricity is exact BFS
/// depth for components of at most `eccentricity_cap` nodes; larger
/// components get their two-sweep diameter estimate on every node.
pub fn structural_features(graph: &TypedGraph, eccentricity_cap: usize) -> Result<StructuralFeatures> {
    if eccentricity_cap < 1 {
        return Err(Error::usage("eccentricity cap must be at least 1"));
    }
    let cc = graph.connected_components();
    let n = graph.node_count();
    let per_component: Vec<Vec<(u32, usize, bool)>> = cc
        .members()
        .into_par_iter()
        .map_init(
            || Bfs::new(n),
            |bfs, members| {
                if members.len() <= eccentricity_cap {
                    members.iter().map(|&v| (v, bfs.farthest(graph, v).1, true)).collect()
                } else {
                    let (a, _) = bfs.farthest(graph, members[0]);
                    let (_, diameter) = bfs.farthest(graph, a);
                    members.iter().map(|&v| (v, diameter, false)).collect()
                }
            },
        )
        .collect();
    let mut ecc = vec![(0usize, true); n];
    for (v, e, exact) in per_component.into_iter().flatten() {
        ecc[v as usize] = (e, exact);
    }
    let rows = (0..n as u32)
        .map(|v| NodeStructure {
            degree: graph.degree(v),
            component_index: cc.component_of(v),
            component_size: cc.size_of(v),
            eccentricity: ecc[v as usize].0,
            exact: ecc[v as usize].1,
        })
        .collect();
    Ok(StructuralFeatures { ids: graph.ids().to_vec(), rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{EdgeRecord, EdgeType, GraphKind, NodeRecord, NodeType};

    fn graph(list: &[(&str, &str)], extra: &[&str]) -> TypedGraph {
        let edges: Vec<_> = list
            .iter()
            .map(|&(s, d)| EdgeRecord { src: s.into(), dst: d.into(), edge_type: EdgeType::Friendship, weight: 1.0 })
            .collect();
        let nodes: Vec<_> =
            extra.iter().map(|&id| NodeRecord { id: id.into(), node_type: NodeType::Account }).collect();
        TypedGraph::build(GraphKind::Friendship, &nodes, &edges).unwrap()
    }

    fn labels(list: &[(&str, Label)]) -> LabelTable {
        list.iter().map(|&(k, l)| (k.to_string(), l)).collect()
    }

    #[test]
    fn all_fraud_triangle() {
        let g = graph(&[("a", "b"), ("b", "c"), ("c", "a")], &[]);
        let l = labels(&[("a", Label::HighRisk), ("b", Label::HighRisk), ("c", Label::HighRisk)]);
        let r = label_aggregation_eta(&g, &l, 1).unwrap();
        assert_eq!((r.per_hop[0].numerator, r.per_hop[0].denominator), (6, 6));
        assert_eq!(r.eta, 1.0);
    }

    #[test]
    fn fraud_path_through_regular_node() {
        let g = graph(&[("b1", "w"), ("w", "b2")], &[]);
        let l = labels(&[("b1", Label::HighRisk), ("w", Label::NoObservableRisk), ("b2", Label::HighRisk)]);
        let r = label_aggregation_eta(&g, &l, 2).unwrap();
        assert_eq!((r.per_hop[0].numerator, r.per_hop[0].denominator), (0, 4));
        assert_eq!((r.per_hop[1].numerator, r.per_hop[1].denominator), (2, 2));
        assert_eq!(r.per_hop[0].eta, 0.0);
        assert_eq!(r.per_hop[1].eta, 1.0);
        assert_eq!(r.eta, 1.0);
    }

    #[test]
    fn no_fraud_means_zero() {
        let g = graph(&[("a", "b"), ("b", "c")], &[]);
        let l = labels(&[("a", Label::NoObservableRisk), ("b", Label::NoObservableRisk)]);
        assert_eq!(label_aggregation_eta(&g, &l, 3).unwrap().eta, 0.0);
        assert_eq!(label_aggregation_eta(&g, &LabelTable::new(), 2).unwrap().eta, 0.0);
    }

    #[test]
    fn unlabeled_nodes_carry_paths_only() {
        // b1 - u - b2 with u unlabeled: u is counted in hop-1 denominators but
        // not as a source.
        let g = graph(&[("b1", "u"), ("u", "b2")], &[]);
        let l = labels(&[("b1", Label::HighRisk), ("b2", Label::HighRisk)]);
        let r = label_aggregation_eta(&g, &l, 2).unwrap();
        assert_eq!((r.per_hop[0].numerator, r.per_hop[0].denominator), (0, 2));
        assert_eq!((r.per_hop[1].numerator, r.per_hop[1].denominator), (2, 2));
    }

    #[test]
    fn eta_rejects_zero_hops_and_unknown_labels() {
        let g = graph(&[("a", "b")], &[]);
        assert!(matches!(label_aggregation_eta(&g, &LabelTable::new(), 0), Err(Error::Usage(_))));
        let l = labels(&[("ghost", Label::HighRisk)]);
        assert!(matches!(label_aggregation_eta(&g, &l, 1), Err(Error::Lookup(_))));
    }

    #[test]
    fn path_structure() {
        let g = graph(&[("n0", "n1"), ("n1", "n2"), ("n2", "n3"), ("n3", "n4")], &[]);
        let s = structural_features(&g, 100).unwrap();
        assert_eq!((s.rows[0].degree, s.rows[0].eccentricity), (1, 4));
        assert_eq!((s.rows[4].degree, s.rows[4].eccentricity), (1, 4));
        assert_eq!((s.rows[2].degree, s.rows[2].eccentricity), (2, 2));
        assert!(s.rows.iter().all(|r| r.exact && r.component_size == 5));
    }

    #[test]
    fn isolated_node_structure() {
        let g = graph(&[("a", "b")], &["lonely"]);
        let s = structural_features(&g, 10).unwrap();
        let ix = g.index_of("lonely").unwrap() as usize;
        assert_eq!(
            s.rows[ix],
            NodeStructure { degree: 0, component_index: 1, component_size: 1, eccentricity: 0, exact: true }
        );
    }

    #[test]
    fn large_components_use_the_diameter_estimate() {
        let g = graph(&[("n0", "n1"), ("n1", "n2"), ("n2", "n3"), ("n3", "n4")], &[]);
        let s = structural_features(&g, 3).unwrap();
        assert!(s.rows.iter().all(|r| !r.exact && r.eccentricity == 4));
        assert!(structural_features(&g, 0).is_err());
    }
}
