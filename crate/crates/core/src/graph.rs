//! Typed relationship graphs: construction from TSV records, canonical
//! serialization, hop queries, connected components and isolated-node
//! preprocessing.
//!
//! Graphs are immutable multi-graphs. Node ids are kept in ascending byte
//! order, so the dense node index doubles as the lexicographic rank of the
//! id. All traversal is undirected, whatever the edge type.

use std::cmp::Ordering;
use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeType {
    Account,
    Device,
}

impl NodeType {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeType::Account => "account",
            NodeType::Device => "device",
        }
    }
}

impl fmt::Display for NodeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NodeType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "account" => Ok(NodeType::Account),
            "device" => Ok(NodeType::Device),
            other => Err(Error::usage(format!("unknown node type `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeType {
    Transaction,
    DeviceUse,
    Friendship,
    Order,
}

impl EdgeType {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeType::Transaction => "transaction",
            EdgeType::DeviceUse => "device_use",
            EdgeType::Friendship => "friendship",
            EdgeType::Order => "order",
        }
    }

    /// Fund transfers and orders have a direction; device use and
    /// friendship do not.
    pub fn is_directed(self) -> bool {
        matches!(self, EdgeType::Transaction | EdgeType::Order)
    }
}

impl fmt::Display for EdgeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EdgeType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "transaction" => Ok(EdgeType::Transaction),
            "device_use" | "deviceuse" => Ok(EdgeType::DeviceUse),
            "friendship" => Ok(EdgeType::Friendship),
            "order" => Ok(EdgeType::Order),
            other => Err(Error::usage(format!("unknown edge type `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    BuyerSeller,
    Transaction,
    DeviceSharing,
    Friendship,
}

impl GraphKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GraphKind::BuyerSeller => "buyer_seller",
            GraphKind::Transaction => "transaction",
            GraphKind::DeviceSharing => "device_sharing",
            GraphKind::Friendship => "friendship",
        }
    }
}

impl fmt::Display for GraphKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GraphKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "buyer_seller" => Ok(GraphKind::BuyerSeller),
            "transaction" => Ok(GraphKind::Transaction),
            "device_sharing" => Ok(GraphKind::DeviceSharing),
            "friendship" => Ok(GraphKind::Friendship),
            other => Err(Error::usage(format!("unknown graph kind `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IsolationPolicy {
    /// Drop nodes without any incident edge.
    ZeroDegree,
    /// Drop accounts that share no device with another account, together
    /// with devices used by at most one account.
    NoSharedDevice,
}

impl FromStr for IsolationPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "zero_degree" => Ok(IsolationPolicy::ZeroDegree),
            "no_shared_device" => Ok(IsolationPolicy::NoSharedDevice),
            other => Err(Error::usage(format!("unknown isolation policy `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeRecord {
    pub id: String,
    pub node_type: NodeType,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeRecord {
    pub src: String,
    pub dst: String,
    pub edge_type: EdgeType,
    pub weight: f64,
}

fn data_lines<R: BufRead>(reader: R, header: &str) -> impl Iterator<Item = Result<(usize, String)>> {
    let header = header.to_string();
    let mut first = true;
    reader.lines().enumerate().filter_map(move |(i, line)| {
        let line = match line {
            Ok(l) => l,
            Err(e) => return Some(Err(Error::from(e))),
        };
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            return None;
        }
        if std::mem::take(&mut first) && trimmed.split('\t').next() == Some(header.as_str()) {
            return None;
        }
        Some(Ok((i + 1, trimmed.to_string())))
    })
}

/// Reads `node_id<TAB>node_type` rows. A leading header row is skipped.
pub fn read_node_records<R: BufRead>(reader: R) -> Result<Vec<NodeRecord>> {
    let mut out = Vec::new();
    for row in data_lines(reader, "node_id") {
        let (line, text) = row?;
        let fields: Vec<&str> = text.split('\t').collect();
        if fields.len() != 2 || fields[0].is_empty() {
            return Err(Error::parse(line, "expected `node_id<TAB>node_type`"));
        }
        let node_type = fields[1].parse().map_err(|e: Error| Error::parse(line, e.to_string()))?;
        out.push(NodeRecord { id: fields[0].to_string(), node_type });
    }
    Ok(out)
}

/// Reads `src<TAB>dst<TAB>edge_type[<TAB>weight]` rows. A leading header row
/// is skipped and a missing weight defaults to 1.
pub fn read_edge_records<R: BufRead>(reader: R) -> Result<Vec<EdgeRecord>> {
    let mut out = Vec::new();
    for row in data_lines(reader, "src") {
        let (line, text) = row?;
        let fields: Vec<&str> = text.split('\t').collect();
        if !(3..=4).contains(&fields.len()) || fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::parse(line, "expected `src<TAB>dst<TAB>edge_type[<TAB>weight]`"));
        }
        let edge_type = fields[2].parse().map_err(|e: Error| Error::parse(line, e.to_string()))?;
        let weight = match fields.get(3).map(|w| w.trim()) {
            None | Some("") => 1.0,
            Some(w) => w
                .parse::<f64>()
                .ok()
                .filter(|w| w.is_finite() && *w >= 0.0)
                .ok_or_else(|| Error::parse(line, format!("invalid weight `{w}`")))?,
        };
        out.push(EdgeRecord { src: fields[0].to_string(), dst: fields[1].to_string(), edge_type, weight });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub src: u32,
    pub dst: u32,
    pub edge_type: EdgeType,
    pub weight: f64,
}

impl Edge {
    pub fn directed(&self) -> bool {
        self.edge_type.is_directed()
    }
}

/// Incrementally assembles a [`TypedGraph`], inferring the type of nodes
/// that only appear as edge endpoints.
#[derive(Debug)]
pub struct GraphBuilder {
    kind: GraphKind,
    index: HashMap<String, u32>,
    ids: Vec<String>,
    types: Vec<NodeType>,
    edges: Vec<Edge>,
}

impl GraphBuilder {
    pub fn new(kind: GraphKind) -> Self {
        Self { kind, index: HashMap::new(), ids: Vec::new(), types: Vec::new(), edges: Vec::new() }
    }

    pub fn with_capacity(kind: GraphKind, nodes: usize, edges: usize) -> Self {
        Self {
            kind,
            index: HashMap::with_capacity(nodes),
            ids: Vec::with_capacity(nodes),
            types: Vec::with_capacity(nodes),
            edges: Vec::with_capacity(edges),
        }
    }

    fn insert(&mut self, id: &str, node_type: NodeType) -> u32 {
        let ix = self.ids.len() as u32;
        self.index.insert(id.to_string(), ix);
        self.ids.push(id.to_string());
        self.types.push(node_type);
        ix
    }

    /// Declares a node. Re-declaring with the same type is a no-op.
    pub fn add_node(&mut self, id: &str, node_type: NodeType) -> Result<u32> {
        match self.index.get(id) {
            Some(&ix) if self.types[ix as usize] == node_type => Ok(ix),
            Some(&ix) => {
                Err(Error::schema(format!("node `{id}` declared as both {} and {node_type}", self.types[ix as usize])))
            }
            None => Ok(self.insert(id, node_type)),
        }
    }

    fn resolve(&mut self, id: &str, wanted: NodeType, edge_type: EdgeType) -> Result<u32> {
        match self.index.get(id) {
            Some(&ix) if self.types[ix as usize] == wanted => Ok(ix),
            Some(&ix) => Err(Error::schema(format!(
                "{edge_type} edge needs `{id}` to be {wanted}, but it is {}",
                self.types[ix as usize]
            ))),
            None => Ok(self.insert(id, wanted)),
        }
    }

    /// Adds an edge, creating missing endpoints. Device-use edges connect one
    /// account and one device; when neither endpoint is known the source is
    /// taken to be the account.
    pub fn add_edge(&mut self, src: &str, dst: &str, edge_type: EdgeType, weight: f64) -> Result<()> {
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(Error::schema(format!("edge {src}->{dst} has invalid weight {weight}")));
        }
        let (s, d) = if edge_type == EdgeType::DeviceUse {
            let known = |b: &Self, id: &str| b.index.get(id).map(|&ix| b.types[ix as usize]);
            let (src_type, dst_type) = match (known(self, src), known(self, dst)) {
                (Some(NodeType::Device), _) | (None, Some(NodeType::Account)) => (NodeType::Device, NodeType::Account),
                _ => (NodeType::Account, NodeType::Device),
            };
            if src == dst {
                return Err(Error::schema(format!("device_use self-loop on `{src}`")));
            }
            (self.resolve(src, src_type, edge_type)?, self.resolve(dst, dst_type, edge_type)?)
        } else {
            (self.resolve(src, NodeType::Account, edge_type)?, self.resolve(dst, NodeType::Account, edge_type)?)
        };
        self.edges.push(Edge { src: s, dst: d, edge_type, weight });
        Ok(())
    }

    pub fn finish(self) -> TypedGraph {
        let GraphBuilder { kind, index, ids, types, edges } = self;
        drop(index);
        let mut order: Vec<u32> = (0..ids.len() as u32).collect();
        order.sort_unstable_by(|&a, &b| ids[a as usize].cmp(&ids[b as usize]));
        let mut remap = vec![0u32; ids.len()];
        for (new, &old) in order.iter().enumerate() {
            remap[old as usize] = new as u32;
        }
        let mut ids = ids;
        let mut sorted_ids = Vec::with_capacity(ids.len());
        let mut sorted_types = Vec::with_capacity(ids.len());
        for &old in &order {
            sorted_ids.push(std::mem::take(&mut ids[old as usize]));
            sorted_types.push(types[old as usize]);
        }
        let edges =
            edges.into_iter().map(|e| Edge { src: remap[e.src as usize], dst: remap[e.dst as usize], ..e }).collect();
        TypedGraph::from_sorted_parts(kind, sorted_ids, sorted_types, edges)
    }
}

fn edge_order(a: &Edge, b: &Edge) -> Ordering {
    a.src.cmp(&b.src).then(a.dst.cmp(&b.dst)).then_with(|| a.edge_type.as_str().cmp(b.edge_type.as_str())).then_with(
        || {
            if a.weight == b.weight {
                Ordering::Equal
            } else {
                a.weight.to_string().cmp(&b.weight.to_string())
            }
        },
    )
}

/// An immutable typed multi-graph with an undirected incidence index.
#[derive(Clone, Debug, PartialEq)]
pub struct TypedGraph {
    kind: GraphKind,
    ids: Vec<String>,
    types: Vec<NodeType>,
    edges: Vec<Edge>,
    offsets: Vec<usize>,
    incidences: Vec<u32>,
}

impl TypedGraph {
    /// Builds a graph from node and edge file rows.
    pub fn build(kind: GraphKind, nodes: &[NodeRecord], edges: &[EdgeRecord]) -> Result<Self> {
        let mut builder = GraphBuilder::with_capacity(kind, nodes.len(), edges.len());
        for n in nodes {
            builder.add_node(&n.id, n.node_type)?;
        }
        for (i, e) in edges.iter().enumerate() {
            builder.add_edge(&e.src, &e.dst, e.edge_type, e.weight).map_err(|err| match err {
                Error::Schema(m) => Error::Schema(format!("edge record {}: {m}", i + 1)),
                other => other,
            })?;
        }
        Ok(builder.finish())
    }

    /// Reads node (optional) and edge TSV files and builds the graph.
    pub fn read_tsv<N: BufRead, E: BufRead>(kind: GraphKind, nodes: Option<N>, edges: E) -> Result<Self> {
        let node_records = match nodes {
            Some(r) => read_node_records(r)?,
            None => Vec::new(),
        };
        let edge_records = read_edge_records(edges)?;
        Self::build(kind, &node_records, &edge_records)
    }

    /// `ids` must be strictly ascending and edges must reference valid
    /// indices.
    fn from_sorted_parts(kind: GraphKind, ids: Vec<String>, types: Vec<NodeType>, mut edges: Vec<Edge>) -> Self {
        debug_assert!(ids.windows(2).all(|w| w[0] < w[1]));
        edges.sort_by(edge_order);
        let n = ids.len();
        let mut offsets = vec![0usize; n + 1];
        for e in &edges {
            offsets[e.src as usize + 1] += 1;
            offsets[e.dst as usize + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let mut fill = offsets.clone();
        let mut incidences = vec![0u32; offsets[n]];
        for e in &edges {
            incidences[fill[e.src as usize]] = e.dst;
            fill[e.src as usize] += 1;
            incidences[fill[e.dst as usize]] = e.src;
            fill[e.dst as usize] += 1;
        }
        for v in 0..n {
            incidences[offsets[v]..offsets[v + 1]].sort_unstable();
        }
        Self { kind, ids, types, edges, offsets, incidences }
    }

    pub fn kind(&self) -> GraphKind {
        self.kind
    }

    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn node_id(&self, ix: u32) -> &str {
        &self.ids[ix as usize]
    }

    pub fn node_type(&self, ix: u32) -> NodeType {
        self.types[ix as usize]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn index_of(&self, id: &str) -> Option<u32> {
        self.ids.binary_search_by(|probe| probe.as_str().cmp(id)).ok().map(|i| i as u32)
    }

    pub fn require(&self, id: &str) -> Result<u32> {
        self.index_of(id).ok_or_else(|| Error::Lookup(id.to_string()))
    }

    /// Neighbor of each incident edge end, sorted, with multiplicity.
    pub fn incident(&self, ix: u32) -> &[u32] {
        &self.incidences[self.offsets[ix as usize]..self.offsets[ix as usize + 1]]
    }

    /// Number of incident edge ends (a self-loop counts twice).
    pub fn degree(&self, ix: u32) -> usize {
        self.offsets[ix as usize + 1] - self.offsets[ix as usize]
    }

    /// Deduplicated, self-loop free neighbor lists in CSR form.
    pub fn simple_adjacency(&self) -> Adjacency {
        let n = self.node_count();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut targets = Vec::with_capacity(self.incidences.len());
        offsets.push(0);
        for v in 0..n as u32 {
            let mut last = None;
            for &u in self.incident(v) {
                if u != v && last != Some(u) {
                    targets.push(u);
                }
                last = Some(u);
            }
            offsets.push(targets.len());
        }
        Adjacency { offsets, targets }
    }

    /// Nodes at undirected shortest-path distance exactly `hop` from `node`,
    /// in ascending id order.
    pub fn neighbors(&self, node: &str, hop: usize) -> Result<Vec<&str>> {
        if hop == 0 {
            return Err(Error::usage("hop must be at least 1"));
        }
        let start = self.require(node)?;
        let mut bfs = Bfs::new(self.node_count());
        let mut found = Vec::new();
        bfs.run(self, start, hop, |v, d| {
            if d == hop {
                found.push(v);
            }
        });
        found.sort_unstable();
        Ok(found.into_iter().map(|v| self.node_id(v)).collect())
    }

    /// Components numbered by ascending smallest node id.
    pub fn connected_components(&self) -> ComponentMap {
        let n = self.node_count();
        let mut component = vec![u32::MAX; n];
        let mut sizes = Vec::new();
        let mut queue = VecDeque::new();
        for start in 0..n as u32 {
            if component[start as usize] != u32::MAX {
                continue;
            }
            let c = sizes.len() as u32;
            component[start as usize] = c;
            queue.push_back(start);
            let mut size = 0usize;
            while let Some(v) = queue.pop_front() {
                size += 1;
                for &u in self.incident(v) {
                    if component[u as usize] == u32::MAX {
                        component[u as usize] = c;
                        queue.push_back(u);
                    }
                }
            }
            sizes.push(size);
        }
        ComponentMap { component, sizes }
    }

    /// Returns the subgraph induced by `keep`, preserving every edge whose
    /// endpoints are both kept.
    pub fn induced(&self, keep: &[bool]) -> TypedGraph {
        assert_eq!(keep.len(), self.node_count());
        let mut remap = vec![u32::MAX; self.node_count()];
        let mut ids = Vec::new();
        let mut types = Vec::new();
        for (v, &k) in keep.iter().enumerate() {
            if k {
                remap[v] = ids.len() as u32;
                ids.push(self.ids[v].clone());
                types.push(self.types[v]);
            }
        }
        let edges = self
            .edges
            .iter()
            .filter(|e| keep[e.src as usize] && keep[e.dst as usize])
            .map(|e| Edge { src: remap[e.src as usize], dst: remap[e.dst as usize], ..*e })
            .collect();
        TypedGraph::from_sorted_parts(self.kind, ids, types, edges)
    }

    /// Removes isolated nodes under `policy`, returning a new graph.
    pub fn remove_isolated(&self, policy: IsolationPolicy) -> Result<TypedGraph> {
        let keep = match policy {
            IsolationPolicy::ZeroDegree => (0..self.node_count() as u32).map(|v| self.degree(v) > 0).collect(),
            IsolationPolicy::NoSharedDevice => {
                if self.kind != GraphKind::DeviceSharing {
                    return Err(Error::usage(format!(
                        "no_shared_device preprocessing needs a device_sharing graph, got {}",
                        self.kind
                    )));
                }
                self.shared_device_mask()
            }
        };
        Ok(self.induced(&keep))
    }

    fn shared_device_mask(&self) -> Vec<bool> {
        let n = self.node_count();
        let mut keep = vec![false; n];
        for d in 0..n as u32 {
            if self.node_type(d) != NodeType::Device {
                continue;
            }
            let mut accounts =
                self.incident(d).iter().copied().filter(|&u| self.node_type(u) == NodeType::Account).peekable();
            let first = accounts.next();
            let shared = match first {
                Some(a) => accounts.any(|b| b != a),
                None => false,
            };
            keep[d as usize] = shared;
        }
        for a in 0..n as u32 {
            if self.node_type(a) == NodeType::Account {
                keep[a as usize] =
                    self.incident(a).iter().any(|&d| keep[d as usize] && self.node_type(d) == NodeType::Device);
            }
        }
        keep
    }

    pub fn node_records(&self) -> Vec<NodeRecord> {
        self.ids.iter().zip(&self.types).map(|(id, &node_type)| NodeRecord { id: id.clone(), node_type }).collect()
    }

    pub fn edge_records(&self) -> Vec<EdgeRecord> {
        self.edges
            .iter()
            .map(|e| EdgeRecord {
                src: self.ids[e.src as usize].clone(),
                dst: self.ids[e.dst as usize].clone(),
                edge_type: e.edge_type,
                weight: e.weight,
            })
            .collect()
    }

    /// Writes the canonical node and edge TSV files (sorted, with headers).
    pub fn write_tsv<N: Write, E: Write>(&self, mut nodes: N, mut edges: E) -> Result<()> {
        writeln!(nodes, "node_id\tnode_type")?;
        for (id, t) in self.ids.iter().zip(&self.types) {
            writeln!(nodes, "{id}\t{t}")?;
        }
        writeln!(edges, "src\tdst\tedge_type\tweight")?;
        for e in &self.edges {
            writeln!(
                edges,
                "{}\t{}\t{}\t{}",
                self.ids[e.src as usize], self.ids[e.dst as usize], e.edge_type, e.weight
            )?;
        }
        nodes.flush()?;
        edges.flush()?;
        Ok(())
    }
}

/// Compressed neighbor lists without duplicates or self-loops.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Adjacency {
    offsets: Vec<usize>,
    targets: Vec<u32>,
}

impl Adjacency {
    pub fn node_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn neighbors(&self, v: u32) -> &[u32] {
        &self.targets[self.offsets[v as usize]..self.offsets[v as usize + 1]]
    }

    pub fn offset(&self, v: u32) -> usize {
        self.offsets[v as usize]
    }

    pub fn entry_count(&self) -> usize {
        self.targets.len()
    }
}

/// Node-id to connected-component assignment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ComponentMap {
    component: Vec<u32>,
    sizes: Vec<usize>,
}

impl ComponentMap {
    pub fn component_of(&self, ix: u32) -> usize {
        self.component[ix as usize] as usize
    }

    pub fn size_of(&self, ix: u32) -> usize {
        self.sizes[self.component_of(ix)]
    }

    pub fn component_count(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// `(component index, component size)` for a node id.
    pub fn get(&self, graph: &TypedGraph, id: &str) -> Result<(usize, usize)> {
        let ix = graph.require(id)?;
        Ok((self.component_of(ix), self.size_of(ix)))
    }

    /// Node indices grouped by component.
    pub fn members(&self) -> Vec<Vec<u32>> {
        let mut out: Vec<Vec<u32>> = self.sizes.iter().map(|&s| Vec::with_capacity(s)).collect();
        for (v, &c) in self.component.iter().enumerate() {
            out[c as usize].push(v as u32);
        }
        out
    }
}

/// Reusable breadth-first search scratch space.
#[derive(Debug)]
pub struct Bfs {
    dist: Vec<u32>,
    touched: Vec<u32>,
    queue: VecDeque<u32>,
}

impl Bfs {
    pub fn new(n: usize) -> Self {
        Self { dist: vec![u32::MAX; n], touched: Vec::new(), queue: VecDeque::new() }
    }

    /// Visits every node within `max_hop` of `start` (excluding `start`)
    /// with its distance. Returns the largest distance reached.
    pub fn run(&mut self, graph: &TypedGraph, start: u32, max_hop: usize, mut visit: impl FnMut(u32, usize)) -> usize {
        for &v in &self.touched {
            self.dist[v as usize] = u32::MAX;
        }
        self.touched.clear();
        self.queue.clear();
        self.dist[start as usize] = 0;
        self.touched.push(start);
        self.queue.push_back(start);
        let mut reached = 0;
        while let Some(v) = self.queue.pop_front() {
            let d = self.dist[v as usize] as usize;
            if d >= max_hop {
                continue;
            }
            for &u in graph.incident(v) {
                if self.dist[u as usize] == u32::MAX {
                    self.dist[u as usize] = (d + 1) as u32;
                    self.touched.push(u);
                    self.queue.push_back(u);
                    reached = d + 1;
                    visit(u, d + 1);
                }
            }
        }
        reached
    }

    /// Farthest node from `start` (smallest index among ties) and its
    /// distance.
    pub fn farthest(&mut self, graph: &TypedGraph, start: u32) -> (u32, usize) {
        let mut best = (start, 0usize);
        self.run(graph, start, usize::MAX, |v, d| {
            if d > best.1 || (d == best.1 && v < best.0) {
                best = (v, d);
            }
        });
        best
    }
}
