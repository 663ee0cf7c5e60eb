//! Truncated random walks and skip-gram with negative sampling.

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};

use ndarray::Array2;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::EmbeddingMatrix;
use crate::graph::TypedGraph;
use crate::nn::{bce_with_logit, seeded, sigmoid, sigmoid_and_bce};

/// Start nodes per independently seeded walk shard.
const WALK_SHARD: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeepWalkConfig {
    pub walks_per_node: usize,
    pub walk_length: usize,
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Training threads. Output is reproducible only with one worker.
    pub workers: usize,
}

impl Default for DeepWalkConfig {
    fn default() -> Self {
        Self {
            walks_per_node: 10,
            walk_length: 40,
            dim: 32,
            window: 5,
            negatives: 5,
            epochs: 1,
            lr: 0.025,
            seed: 0,
            workers: 1,
        }
    }
}

/// Walks over node indices of a graph, stored back to back.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WalkCorpus {
    ids: Vec<String>,
    walks: Vec<u32>,
    pub walk_length: usize,
    pub walks_per_node: usize,
    pub seed: u64,
}

impl WalkCorpus {
    /// Corpus from explicit walks over `ids`; every walk must have `walk_length` entries.
    pub fn from_walks(ids: Vec<String>, walks: &[Vec<u32>]) -> Result<Self> {
        let walk_length = walks.first().map_or(0, Vec::len);
        if walks.iter().any(|w| w.len() != walk_length) {
            return Err(Error::usage("all walks must have the same length"));
        }
        if walks.iter().flatten().any(|&v| v as usize >= ids.len()) {
            return Err(Error::usage("walk refers to a node outside the id list"));
        }
        Ok(Self { ids, walks: walks.concat(), walk_length, walks_per_node: 0, seed: 0 })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.walks.len().checked_div(self.walk_length).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn walk(&self, i: usize) -> &[u32] {
        &self.walks[i * self.walk_length..(i + 1) * self.walk_length]
    }

    pub fn walks(&self) -> impl Iterator<Item = &[u32]> {
        self.walks.chunks_exact(self.walk_length.max(1))
    }

    /// Walk as node ids.
    pub fn walk_ids(&self, i: usize) -> Vec<&str> {
        self.walk(i).iter().map(|&v| self.ids[v as usize].as_str()).collect()
    }
}

/// `walks_per_node` passes over all nodes, each in a freshly shuffled order;
/// every step moves to a uniformly chosen distinct neighbor.
pub fn sample_walks(graph: &TypedGraph, walks_per_node: usize, walk_length: usize, seed: u64) -> Result<WalkCorpus> {
    if walk_length < 2 {
        return Err(Error::usage("walk_length must be at least 2"));
    }
    let adj = graph.simple_adjacency();
    let n = graph.node_count();
    if let Some(v) = (0..n as u32).find(|&v| adj.neighbors(v).is_empty()) {
        return Err(Error::Contract(format!(
            "node `{}` has no neighbors; remove isolated nodes before sampling walks",
            graph.node_id(v)
        )));
    }
    let mut walks = vec![0u32; n * walks_per_node * walk_length];
    let mut order: Vec<u32> = (0..n as u32).collect();
    let mut order_rng = seeded(seed);
    let shards_per_pass = n.div_ceil(WALK_SHARD);
    for (pass, pass_out) in walks.chunks_mut((n * walk_length).max(1)).enumerate().take(walks_per_node) {
        order.shuffle(&mut order_rng);
        pass_out.par_chunks_mut(WALK_SHARD * walk_length).zip(order.par_chunks(WALK_SHARD)).enumerate().for_each(
            |(shard, (out, starts))| {
                let mut rng = seeded(seed ^ (pass * shards_per_pass + shard) as u64);
                for (walk, &start) in out.chunks_exact_mut(walk_length).zip(starts) {
                    let mut v = start;
                    walk[0] = v;
                    for slot in &mut walk[1..] {
                        let nb = adj.neighbors(v);
                        v = nb[rng.random_range(0..nb.len())];
                        *slot = v;
                    }
                }
            },
        );
    }
    Ok(WalkCorpus { ids: graph.ids().to_vec(), walks, walk_length, walks_per_node, seed })
}

/// `-ln s(f.g_pos) - sum_n ln s(-f.g_n)`.
pub fn pair_loss(f: &[f64], positive: &[f64], negatives: &[&[f64]]) -> f64 {
    bce_with_logit(dot(f, positive), 1.0) + negatives.iter().map(|g| bce_with_logit(dot(f, g), 0.0)).sum::<f64>()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairGradient {
    pub f: Vec<f64>,
    pub positive: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

/// Gradient of [`pair_loss`] with respect to every vector involved.
pub fn pair_gradient(f: &[f64], positive: &[f64], negatives: &[&[f64]]) -> PairGradient {
    let mut gf = vec![0.0; f.len()];
    let c = sigmoid(dot(f, positive)) - 1.0;
    axpy(&mut gf, c, positive);
    let pos = f.iter().map(|x| c * x).collect();
    let negs = negatives
        .iter()
        .map(|g| {
            let c = sigmoid(dot(f, g));
            axpy(&mut gf, c, g);
            f.iter().map(|x| c * x).collect()
        })
        .collect();
    PairGradient { f: gf, positive: pos, negatives: negs }
}

/// Four interleaved partial sums, so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (y, x) in y.iter_mut().zip(x) {
        *y += a * x;
    }
}

/// Shared parameter matrix for lock-free updates; relaxed loads and stores
/// of bit-cast f64 values.
struct SharedMatrix {
    dim: usize,
    cells: Vec<AtomicU64>,
}

impl SharedMatrix {
    fn new(rows: usize, dim: usize, mut init: impl FnMut() -> f64) -> Self {
        Self { dim, cells: (0..rows * dim).map(|_| AtomicU64::new(init().to_bits())).collect() }
    }

    fn load(&self, row: u32, out: &mut [f64]) {
        let base = row as usize * self.dim;
        for (o, c) in out.iter_mut().zip(&self.cells[base..base + self.dim]) {
            *o = f64::from_bits(c.load(Ordering::Relaxed));
        }
    }

    fn store(&self, row: u32, values: &[f64]) {
        let base = row as usize * self.dim;
        for (v, c) in values.iter().zip(&self.cells[base..base + self.dim]) {
            c.store(v.to_bits(), Ordering::Relaxed);
        }
    }

    fn into_array(self, rows: usize) -> Array2<f64> {
        let data = self.cells.into_iter().map(|c| f64::from_bits(c.into_inner())).collect();
        Array2::from_shape_vec((rows, self.dim), data).expect("shape")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SgnsModel {
    pub embeddings: EmbeddingMatrix,
    /// Mean pair loss per epoch, measured during the updates.
    pub epoch_losses: Vec<f64>,
}

struct Trainer<'a> {
    corpus: &'a WalkCorpus,
    config: &'a DeepWalkConfig,
    input: SharedMatrix,
    context: SharedMatrix,
    noise: WeightedAliasIndex<f64>,
    processed: AtomicUsize,
    total: usize,
}

impl Trainer<'_> {
    fn lr(&self) -> f64 {
        let done = self.processed.load(Ordering::Relaxed) as f64 / self.total as f64;
        let lr = self.config.lr;
        (lr - (lr - lr / 100.0) * done).max(lr / 100.0)
    }

    /// Trains on walks `range` and returns (loss sum, pair count).
    fn run_shard(&self, range: std::ops::Range<usize>, seed: u64) -> (f64, usize) {
        let d = self.config.dim;
        let mut rng = seeded(seed);
        let (mut f, mut g, mut grad_f) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
        let (mut loss, mut pairs) = (0.0, 0usize);
        let window = self.config.window;
        for w in range {
            let walk = self.corpus.walk(w);
            let lr = self.lr();
            for (i, &u) in walk.iter().enumerate() {
                self.input.load(u, &mut f);
                let lo = i.saturating_sub(window);
                let hi = (i + window + 1).min(walk.len());
                for (j, &c) in walk.iter().enumerate().take(hi).skip(lo) {
                    if j == i {
                        continue;
                    }
                    grad_f.fill(0.0);
                    let step = |target: u32, label: f64, g: &mut [f64], grad_f: &mut [f64]| {
                        self.context.load(target, g);
                        let z = dot(&f, g);
                        let (s, loss) = sigmoid_and_bce(z, label);
                        let coeff = s - label;
                        axpy(grad_f, coeff, g);
                        axpy(g, -lr * coeff, &f);
                        self.context.store(target, g);
                        loss
                    };
                    loss += step(c, 1.0, &mut g, &mut grad_f);
                    for _ in 0..self.config.negatives {
                        let n = self.noise.sample(&mut rng) as u32;
                        if n != c {
                            loss += step(n, 0.0, &mut g, &mut grad_f);
                        }
                    }
                    axpy(&mut f, -lr, &grad_f);
                    pairs += 1;
                }
                self.input.store(u, &f);
            }
            self.processed.fetch_add(1, Ordering::Relaxed);
        }
        (loss, pairs)
    }
}

/// Skip-gram with negative sampling over `corpus`. Only the input vectors are
/// returned; noise words follow corpus frequency raised to 0.75 and the
/// learning rate decays linearly to a hundredth of its start value.
pub fn train_sgns(corpus: &WalkCorpus, config: &DeepWalkConfig) -> Result<SgnsModel> {
    if corpus.is_empty() {
        return Err(Error::usage("cannot train on an empty walk corpus"));
    }
    if config.dim == 0 || config.window == 0 || config.negatives == 0 || config.epochs == 0 || config.workers == 0 {
        return Err(Error::usage("dim, window, negatives, epochs and workers must all be at least 1"));
    }
    if !config.lr.is_finite() || config.lr <= 0.0 {
        return Err(Error::usage("learning rate must be positive"));
    }
    let n = corpus.ids().len();
    let mut counts = vec![0u64; n];
    for &v in &corpus.walks {
        counts[v as usize] += 1;
    }
    let weights: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(0.75)).collect();
    let noise = WeightedAliasIndex::new(weights).map_err(|e| Error::usage(format!("noise distribution: {e}")))?;
    let mut init_rng = seeded(config.seed);
    let bound = 0.5 / config.dim as f64;
    let trainer = Trainer {
        corpus,
        config,
        input: SharedMatrix::new(n, config.dim, || init_rng.random_range(-bound..bound)),
        context: SharedMatrix::new(n, config.dim, || 0.0),
        noise,
        processed: AtomicUsize::new(0),
        total: corpus.len() * config.epochs,
    };
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let walks = corpus.len();
    let workers = config.workers.min(walks);
    for epoch in 0..config.epochs {
        let per = walks.div_ceil(workers);
        let results: Vec<(f64, usize)> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..workers)
                .map(|k| {
                    let range = k * per..((k + 1) * per).min(walks);
                    let seed = config.seed ^ ((epoch as u64) << 32) ^ (k as u64 + 1);
                    let t = &trainer;
                    s.spawn(move || t.run_shard(range, seed))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("sgns worker panicked")).collect()
        });
        let (loss, pairs) = results.iter().fold((0.0, 0), |(l, p), (a, b)| (l + a, p + b));
        epoch_losses.push(loss / pairs.max(1) as f64);
    }
    let values = trainer.input.into_array(n);
    Ok(SgnsModel { embeddings: EmbeddingMatrix::with_prefix(corpus.ids().to_vec(), "v", values)?, epoch_losses })
}

/// Walk sampling followed by skip-gram training.
pub fn deepwalk(graph: &TypedGraph, config: &DeepWalkConfig) -> Result<SgnsModel> {
    let corpus = sample_walks(graph, config.walks_per_node, config.walk_length, config.seed)?;
    train_sgns(&corpus, config)
}
