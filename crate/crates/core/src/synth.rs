//! Synthetic labeled graphs with planted fraud rings.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::distrep::{write_labeled_edges, LabeledEdge};
use crate::error::{Error, Result};
use crate::features::DenseTable;
use crate::graph::{EdgeType, GraphBuilder, GraphKind, NodeType, TypedGraph};
use crate::labels::{Label, LabelTable};
use crate::nn::{seeded, Rng64};

/// Background devices are drawn from a pool this many times larger than the
/// expected number of device-use edges, so accidental sharing stays rare.
const DEVICE_POOL_FACTOR: f64 = 40.0;
/// Share of accounts acting as sellers in order graphs.
const SELLER_FRACTION: f64 = 0.2;
/// Buyers shared by the sellers of one collusion ring.
const COLLUSION_BUYERS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Motif {
    /// Ring members all use one shared device.
    DeviceHub,
    /// Ring members transact through one or two regular hub accounts.
    TransactionHub,
    /// Fraud sellers receive orders from a small shared set of buyers.
    BuyerSellerCollusion,
}

impl Motif {
    pub fn graph_kind(self) -> GraphKind {
        match self {
            Motif::DeviceHub => GraphKind::DeviceSharing,
            Motif::TransactionHub => GraphKind::Transaction,
            Motif::BuyerSellerCollusion => GraphKind::BuyerSeller,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_accounts: usize,
    pub mean_degree: f64,
    pub n_rings: usize,
    pub ring_size: usize,
    pub motif: Motif,
    pub feature_dim: usize,
    pub fraud_feature_shift: f64,
    pub label_flip_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_accounts: 10_000,
            mean_degree: 4.0,
            n_rings: 20,
            ring_size: 15,
            motif: Motif::DeviceHub,
            feature_dim: 50,
            fraud_feature_shift: 0.5,
            label_flip_rate: 0.1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ring_size < 2 {
            return Err(Error::usage("ring_size must be at least 2"));
        }
        if self.n_rings * self.ring_size > self.n_accounts {
            return Err(Error::usage("rings need more accounts than n_accounts"));
        }
        if !(0.0..0.5).contains(&self.label_flip_rate) {
            return Err(Error::usage("label_flip_rate must be in [0, 0.5)"));
        }
        if !(self.mean_degree.is_finite() && self.mean_degree >= 0.0) || !self.fraud_feature_shift.is_finite() {
            return Err(Error::usage("mean_degree must be finite and nonnegative, shift finite"));
        }
        if self.feature_dim == 0 {
            return Err(Error::usage("feature_dim must be positive"));
        }
        if self.motif == Motif::BuyerSellerCollusion
            && self.n_accounts < self.n_rings * self.ring_size + COLLUSION_BUYERS + 1
        {
            return Err(Error::usage("not enough accounts for collusion buyers"));
        }
        if self.motif == Motif::TransactionHub && self.n_accounts < self.n_rings * self.ring_size + 2 {
            return Err(Error::usage("not enough regular accounts to act as hubs"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub graph: TypedGraph,
    /// Observed labels, with some fraud hidden as regular.
    pub labels: LabelTable,
    /// Labels before flipping; for evaluation only.
    pub ground_truth: LabelTable,
    /// One row per account.
    pub features: DenseTable,
    /// Ring index per fraud account, in ring order.
    pub rings: Vec<Vec<String>>,
    /// Per-order fraud flags for order graphs, buyer first.
    pub edge_labels: Option<Vec<LabeledEdge>>,
}

/// Paths written by [`SynthDataset::write_to`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthFiles {
    pub nodes: PathBuf,
    pub edges: PathBuf,
    pub features: PathBuf,
    pub labels: PathBuf,
    pub ground_truth: PathBuf,
    pub edge_labels: Option<PathBuf>,
}

impl SynthDataset {
    pub fn write_to(&self, dir: &Path) -> Result<SynthFiles> {
        std::fs::create_dir_all(dir)?;
        let files = SynthFiles {
            nodes: dir.join("nodes.tsv"),
            edges: dir.join("edges.tsv"),
            features: dir.join("features.csv"),
            labels: dir.join("labels.tsv"),
            ground_truth: dir.join("ground_truth.tsv"),
            edge_labels: self.edge_labels.as_ref().map(|_| dir.join("edge_labels.tsv")),
        };
        let create = |p: &Path| -> Result<BufWriter<File>> { Ok(BufWriter::new(File::create(p)?)) };
        self.graph.write_tsv(create(&files.nodes)?, create(&files.edges)?)?;
        self.features.write_csv(create(&files.features)?)?;
        self.labels.write_tsv(create(&files.labels)?)?;
        self.ground_truth.write_tsv(create(&files.ground_truth)?)?;
        if let (Some(edges), Some(path)) = (&self.edge_labels, &files.edge_labels) {
            write_labeled_edges(edges, create(path)?)?;
        }
        Ok(files)
    }
}

fn digits(n: usize) -> usize {
    n.max(1).saturating_sub(1).to_string().len()
}

fn poisson(rng: &mut Rng64, mean: f64) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive mean").sample(rng) as usize
}

/// Builds a dataset with planted rings; fully determined by `config.seed`.
pub fn generate(config: &SynthConfig) -> Result<SynthDataset> {
    config.validate()?;
    let mut rng = seeded(config.seed);
    let n = config.n_accounts;
    let width = digits(n);
    let ids: Vec<String> = (0..n).map(|i| format!("acct_{i:0width$}")).collect();
    let n_fraud = config.n_rings * config.ring_size;
    let fraud_idx = sample(&mut rng, n, n_fraud).into_vec();
    let mut is_fraud = vec![false; n];
    for &i in &fraud_idx {
        is_fraud[i] = true;
    }
    let rings: Vec<Vec<usize>> = fraud_idx.chunks(config.ring_size).map(<[usize]>::to_vec).collect();

    let kind = config.motif.graph_kind();
    let mut b = GraphBuilder::with_capacity(kind, n, (n as f64 * config.mean_degree) as usize);
    for id in &ids {
        b.add_node(id, NodeType::Account)?;
    }
    let mut edge_labels = None;
    match config.motif {
        Motif::DeviceHub => plant_device_hub(config, &ids, &rings, &mut rng, &mut b)?,
        Motif::TransactionHub => plant_transaction_hub(config, &ids, &rings, &is_fraud, &mut rng, &mut b)?,
        Motif::BuyerSellerCollusion => {
            edge_labels = Some(plant_collusion(config, &ids, &rings, &is_fraud, &mut rng, &mut b)?);
        }
    }
    let graph = b.finish();

    let shifted = config.feature_dim.div_ceil(2);
    let mut values = Array2::<f64>::zeros((n, config.feature_dim));
    for (i, mut row) in values.rows_mut().into_iter().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *x = if is_fraud[i] && j < shifted { z + config.fraud_feature_shift } else { z };
        }
    }
    let features = DenseTable::with_prefix(ids.clone(), "f", values)?;

    let truth_of = |i: usize| if is_fraud[i] { Label::HighRisk } else { Label::NoObservableRisk };
    let ground_truth: LabelTable = (0..n).map(|i| (ids[i].clone(), truth_of(i))).collect();
    let n_flip = (config.label_flip_rate * n_fraud as f64).round() as usize;
    let mut labels = ground_truth.clone();
    for k in sample(&mut rng, n_fraud, n_flip) {
        labels.set(ids[fraud_idx[k]].clone(), Label::NoObservableRisk);
    }
    Ok(SynthDataset {
        config: config.clone(),
        graph,
        labels,
        ground_truth,
        features,
        rings: rings.iter().map(|r| r.iter().map(|&i| ids[i].clone()).collect()).collect(),
        edge_labels,
    })
}

fn plant_device_hub(
    config: &SynthConfig,
    ids: &[String],
    rings: &[Vec<usize>],
    rng: &mut Rng64,
    b: &mut GraphBuilder,
) -> Result<()> {
    let pool = ((ids.len() as f64 * config.mean_degree * DEVICE_POOL_FACTOR).ceil() as usize).max(1);
    let width = digits(pool);
    let mut devices = BTreeSet::new();
    for id in ids {
        devices.clear();
        for _ in 0..poisson(rng, config.mean_degree) {
            devices.insert(rng.random_range(0..pool));
        }
        for d in &devices {
            b.add_edge(id, &format!("dev_{d:0width$}"), EdgeType::DeviceUse, 1.0)?;
        }
    }
    let rw = digits(rings.len());
    for (r, members) in rings.iter().enumerate() {
        let hub = format!("hub_dev_{r:0rw$}");
        b.add_node(&hub, NodeType::Device)?;
        for &m in members {
            b.add_edge(&ids[m], &hub, EdgeType::DeviceUse, 1.0)?;
        }
    }
    Ok(())
}

fn random_pair(rng: &mut Rng64, n: usize) -> (usize, usize) {
    let u = rng.random_range(0..n);
    let mut v = rng.random_range(0..n - 1);
    if v >= u {
        v += 1;
    }
    (u, v)
}

fn plant_transaction_hub(
    config: &SynthConfig,
    ids: &[String],
    rings: &[Vec<usize>],
    is_fraud: &[bool],
    rng: &mut Rng64,
    b: &mut GraphBuilder,
) -> Result<()> {
    let n = ids.len();
    let m = (n as f64 * config.mean_degree / 2.0).round() as usize;
    for _ in 0..m {
        let (u, v) = random_pair(rng, n);
        b.add_edge(&ids[u], &ids[v], EdgeType::Transaction, 1.0)?;
    }
    let regular: Vec<usize> = (0..n).filter(|&i| !is_fraud[i]).collect();
    for members in rings {
        let n_hubs = rng.random_range(1..=2);
        let hubs = sample(rng, regular.len(), n_hubs).into_vec();
        for (k, &mi) in members.iter().enumerate() {
            for &h in &hubs {
                let hub = &ids[regular[h]];
                if k % 2 == 0 {
                    b.add_edge(&ids[mi], hub, EdgeType::Transaction, 1.0)?;
                } else {
                    b.add_edge(hub, &ids[mi], EdgeType::Transaction, 1.0)?;
                }
            }
        }
        for _ in 0..members.len() / 3 {
            let (a, c) = random_pair(rng, members.len());
            b.add_edge(&ids[members[a]], &ids[members[c]], EdgeType::Transaction, 1.0)?;
        }
    }
    Ok(())
}

fn plant_collusion(
    config: &SynthConfig,
    ids: &[String],
    rings: &[Vec<usize>],
    is_fraud: &[bool],
    rng: &mut Rng64,
    b: &mut GraphBuilder,
) -> Result<Vec<LabeledEdge>> {
    let n = ids.len();
    let n_fraud = rings.iter().map(Vec::len).sum::<usize>();
    let regular: Vec<usize> = (0..n).filter(|&i| !is_fraud[i]).collect();
    let n_sellers =
        ((SELLER_FRACTION * n as f64).round() as usize).max(n_fraud + 1).min(n - COLLUSION_BUYERS) - n_fraud;
    let mut is_seller = is_fraud.to_vec();
    let mut regular_sellers = Vec::with_capacity(n_sellers);
    for k in sample(rng, regular.len(), n_sellers) {
        is_seller[regular[k]] = true;
        regular_sellers.push(regular[k]);
    }
    regular_sellers.sort_unstable();
    let buyers: Vec<usize> = (0..n).filter(|&i| !is_seller[i]).collect();
    let mut edges = Vec::new();
    let mut order = |b: &mut GraphBuilder, buyer: usize, seller: usize, fraud: bool| -> Result<()> {
        b.add_edge(&ids[buyer], &ids[seller], EdgeType::Order, 1.0)?;
        edges.push(LabeledEdge { buyer: ids[buyer].clone(), seller: ids[seller].clone(), label: fraud });
        Ok(())
    };
    let m = (n as f64 * config.mean_degree / 2.0).round() as usize;
    for _ in 0..m {
        let buyer = buyers[rng.random_range(0..buyers.len())];
        let seller = regular_sellers[rng.random_range(0..regular_sellers.len())];
        order(b, buyer, seller, false)?;
    }
    for members in rings {
        let shared = sample(rng, buyers.len(), COLLUSION_BUYERS.min(buyers.len())).into_vec();
        for &s in members {
            for &k in &shared {
                order(b, buyers[k], s, true)?;
            }
        }
    }
    edges.sort();
    Ok(edges)
}

/// Two-or-more-block planted partition over accounts: `intra_degree` and
/// `inter_degree` are the expected per-node degrees within and across
/// blocks. Returns the graph and each node's block, in graph order.
pub fn planted_partition(
    n: usize,
    blocks: usize,
    intra_degree: f64,
    inter_degree: f64,
    seed: u64,
) -> Result<(TypedGraph, Vec<usize>)> {
    if blocks < 2 || n < 2 * blocks {
        return Err(Error::usage("planted partition needs at least two blocks of two nodes"));
    }
    if !(intra_degree >= 0.0 && inter_degree >= 0.0) {
        return Err(Error::usage("degrees must be nonnegative"));
    }
    let mut rng = seeded(seed);
    let width = digits(n);
    let ids: Vec<String> = (0..n).map(|i| format!("node_{i:0width$}")).collect();
    let block_of = |i: usize| i * blocks / n;
    let members: Vec<Vec<usize>> = (0..blocks).map(|k| (0..n).filter(|&i| block_of(i) == k).collect()).collect();
    let mut b = GraphBuilder::new(GraphKind::Friendship);
    for id in &ids {
        b.add_node(id, NodeType::Account)?;
    }
    for block in &members {
        let m = (block.len() as f64 * intra_degree / 2.0).round() as usize;
        for _ in 0..m {
            let (u, v) = random_pair(&mut rng, block.len());
            b.add_edge(&ids[block[u]], &ids[block[v]], EdgeType::Friendship, 1.0)?;
        }
    }
    let m = (n as f64 * inter_degree / 2.0).round() as usize;
    let mut added = 0;
    while added < m {
        let (u, v) = random_pair(&mut rng, n);
        if block_of(u) != block_of(v) {
            b.add_edge(&ids[u], &ids[v], EdgeType::Friendship, 1.0)?;
            added += 1;
        }
    }
    let graph = b.finish();
    // ids are zero-padded, so graph order equals generation order
    let assignment = (0..n).map(block_of).collect();
    Ok((graph, assignment))
}
