//! Second-order gradient boosting of regression trees on logistic loss,
//! with exact greedy splits over presorted feature columns.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::DenseTable;
use crate::nn::{bce_with_logit, seeded, sigmoid};

pub const FOREST_FORMAT_VERSION: u32 = 1;
const MIN_GAIN: f64 = 1e-12;
const NONE: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GbdtConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub row_subsample: f64,
    pub feature_subsample: f64,
    pub lr: f64,
    /// L2 penalty on leaf values.
    pub lambda: f64,
    /// Minimum hessian sum per child.
    pub min_child_weight: f64,
    pub seed: u64,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        Self {
            n_trees: 500,
            max_depth: 5,
            row_subsample: 0.6,
            feature_subsample: 0.7,
            lr: 0.009,
            lambda: 1.0,
            min_child_weight: 0.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    /// Rows with `x[feature] < threshold` go left; missing values follow `default_left`.
    Split {
        feature: usize,
        threshold: f64,
        default_left: bool,
        left: usize,
        right: usize,
        gain: f64,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Root at index 0.
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict_row(&self, x: ArrayView1<f64>) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split { feature, threshold, default_left, left, right, .. } => {
                    let v = x[feature];
                    let go_left = if v.is_nan() { default_left } else { v < threshold };
                    i = if go_left { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaves(&self) -> impl Iterator<Item = f64> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            TreeNode::Leaf { value } => Some(*value),
            TreeNode::Split { .. } => None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoostedForest {
    pub version: u32,
    pub feature_names: Vec<String>,
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
    /// Total split gain per feature.
    pub feature_importance: Vec<f64>,
    /// Mean logistic loss on the training rows after each tree.
    pub train_loss: Vec<f64>,
}

impl BoostedForest {
    pub fn predict_logit_row(&self, x: ArrayView1<f64>) -> f64 {
        self.base_score + self.learning_rate * self.trees.iter().map(|t| t.predict_row(x)).sum::<f64>()
    }

    /// Scores for a matrix whose columns follow `feature_names`.
    pub fn predict_matrix(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.feature_names.len() {
            return Err(Error::usage(format!(
                "forest expects {} features, got {}",
                self.feature_names.len(),
                x.ncols()
            )));
        }
        Ok((0..x.nrows()).into_par_iter().map(|i| sigmoid(self.predict_logit_row(x.row(i)))).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let forest: BoostedForest = serde_json::from_str(text)?;
        if forest.version != FOREST_FORMAT_VERSION {
            return Err(Error::schema(format!("unsupported forest format version {}", forest.version)));
        }
        let f = forest.feature_names.len();
        if forest.feature_importance.len() != f {
            return Err(Error::schema("feature importance length does not match feature count"));
        }
        for tree in &forest.trees {
            let n = tree.nodes.len();
            if n == 0 {
                return Err(Error::schema("empty tree"));
            }
            for node in &tree.nodes {
                if let TreeNode::Split { feature, left, right, .. } = *node {
                    if feature >= f || left >= n || right >= n {
                        return Err(Error::schema("tree node refers outside the forest"));
                    }
                }
            }
        }
        Ok(forest)
    }
}

#[derive(Clone, Copy, Default)]
struct Stats {
    g: f64,
    h: f64,
    count: usize,
}

impl Stats {
    fn add(&mut self, g: f64, h: f64) {
        self.g += g;
        self.h += h;
        self.count += 1;
    }

    fn minus(&self, o: &Stats) -> Stats {
        Stats { g: self.g - o.g, h: self.h - o.h, count: self.count - o.count }
    }

    fn score(&self, lambda: f64) -> f64 {
        self.g * self.g / (self.h + lambda)
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
    default_left: bool,
    left: Stats,
    right: Stats,
}

struct Grower<'a> {
    x: ArrayView2<'a, f64>,
    /// Per feature, non-missing rows ordered by value then row index.
    sorted: &'a [Vec<u32>],
    grad: &'a [f64],
    hess: &'a [f64],
    config: &'a GbdtConfig,
}

impl Grower<'_> {
    /// Best split per frontier slot for one feature.
    fn scan_feature(&self, feature: usize, slot_of: &[u32], totals: &[Stats]) -> Vec<Option<Candidate>> {
        let k = totals.len();
        let mut acc = vec![Stats::default(); k];
        let mut last = vec![f64::NAN; k];
        let mut best: Vec<Option<Candidate>> = vec![None; k];
        let mut present = vec![Stats::default(); k];
        for &r in &self.sorted[feature] {
            let s = slot_of[r as usize];
            if s != NONE {
                present[s as usize].add(self.grad[r as usize], self.hess[r as usize]);
            }
        }
        let lambda = self.config.lambda;
        for &r in &self.sorted[feature] {
            let s = slot_of[r as usize];
            if s == NONE {
                continue;
            }
            let s = s as usize;
            let v = self.x[[r as usize, feature]];
            let prev = last[s];
            if !prev.is_nan() && v > prev {
                let total = totals[s];
                let missing = total.minus(&present[s]);
                let parent = total.score(lambda);
                let directions: &[bool] = if missing.count == 0 { &[true] } else { &[true, false] };
                for &default_left in directions {
                    let left = if default_left && missing.count > 0 {
                        let mut l = acc[s];
                        l.g += missing.g;
                        l.h += missing.h;
                        l.count += missing.count;
                        l
                    } else {
                        acc[s]
                    };
                    let right = total.minus(&left);
                    if left.count == 0 || right.count == 0 {
                        continue;
                    }
                    if left.h < self.config.min_child_weight || right.h < self.config.min_child_weight {
                        continue;
                    }
                    let gain = 0.5 * (left.score(lambda) + right.score(lambda) - parent);
                    if gain > MIN_GAIN && best[s].is_none_or(|b| gain > b.gain) {
                        let mut threshold = 0.5 * (prev + v);
                        if threshold <= prev {
                            threshold = v;
                        }
                        best[s] = Some(Candidate { gain, feature, threshold, default_left, left, right });
                    }
                }
            }
            acc[s].add(self.grad[r as usize], self.hess[r as usize]);
            last[s] = v;
        }
        best
    }

    fn grow(&self, rows: &[u32], features: &[usize], importance: &mut [f64]) -> Tree {
        let n = self.x.nrows();
        let lambda = self.config.lambda;
        let mut slot_of = vec![NONE; n];
        let mut root = Stats::default();
        for &r in rows {
            slot_of[r as usize] = 0;
            root.add(self.grad[r as usize], self.hess[r as usize]);
        }
        let leaf = |s: &Stats| TreeNode::Leaf { value: -s.g / (s.h + lambda) };
        let mut nodes = vec![leaf(&root)];
        // (node index, stats) per frontier slot
        let mut frontier = vec![(0usize, root)];
        for _ in 0..self.config.max_depth {
            if frontier.is_empty() {
                break;
            }
            let totals: Vec<Stats> = frontier.iter().map(|f| f.1).collect();
            let per_feature: Vec<Vec<Option<Candidate>>> =
                features.par_iter().map(|&f| self.scan_feature(f, &slot_of, &totals)).collect();
            let mut best: Vec<Option<Candidate>> = vec![None; frontier.len()];
            for cands in &per_feature {
                for (b, c) in best.iter_mut().zip(cands) {
                    if let Some(c) = c {
                        if b.is_none_or(|b| c.gain > b.gain || (c.gain == b.gain && c.feature < b.feature)) {
                            *b = Some(*c);
                        }
                    }
                }
            }
            let mut next = Vec::new();
            let mut remap = vec![NONE; frontier.len() * 2];
            for (s, cand) in best.iter().enumerate() {
                let Some(c) = cand else { continue };
                let (l, r) = (nodes.len(), nodes.len() + 1);
                nodes.push(leaf(&c.left));
                nodes.push(leaf(&c.right));
                nodes[frontier[s].0] = TreeNode::Split {
                    feature: c.feature,
                    threshold: c.threshold,
                    default_left: c.default_left,
                    left: l,
                    right: r,
                    gain: c.gain,
                };
                importance[c.feature] += c.gain;
                remap[2 * s] = next.len() as u32;
                next.push((l, c.left));
                remap[2 * s + 1] = next.len() as u32;
                next.push((r, c.right));
            }
            for &r in rows {
                let s = slot_of[r as usize];
                if s == NONE {
                    continue;
                }
                slot_of[r as usize] = match best[s as usize] {
                    None => NONE,
                    Some(c) => {
                        let v = self.x[[r as usize, c.feature]];
                        let go_left = if v.is_nan() { c.default_left } else { v < c.threshold };
                        remap[2 * s as usize + usize::from(!go_left)]
                    }
                };
            }
            frontier = next;
        }
        Tree { nodes }
    }
}

fn presort(x: ArrayView2<f64>) -> Vec<Vec<u32>> {
    (0..x.ncols())
        .into_par_iter()
        .map(|f| {
            let col = x.column(f);
            let mut rows: Vec<u32> = (0..x.nrows() as u32).filter(|&r| !col[r as usize].is_nan()).collect();
            rows.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
            rows
        })
        .collect()
}

fn validate(config: &GbdtConfig) -> Result<()> {
    let rate_ok = |r: f64| r > 0.0 && r <= 1.0;
    if !rate_ok(config.row_subsample) || !rate_ok(config.feature_subsample) {
        return Err(Error::usage("subsample rates must be in (0, 1]"));
    }
    let finite_nonneg = |x: f64| x.is_finite() && x >= 0.0;
    if !finite_nonneg(config.lr)
        || config.lr == 0.0
        || config.max_depth == 0
        || !finite_nonneg(config.lambda)
        || !finite_nonneg(config.min_child_weight)
    {
        return Err(Error::usage("lr and max_depth must be positive, lambda and min_child_weight nonnegative"));
    }
    Ok(())
}

/// Trains on rows already in canonical order.
pub fn gbdt_train_matrix(
    x: ArrayView2<f64>,
    labels: &[bool],
    feature_names: Vec<String>,
    config: &GbdtConfig,
) -> Result<BoostedForest> {
    validate(config)?;
    let n = x.nrows();
    if labels.len() != n {
        return Err(Error::usage(format!("{n} rows but {} labels", labels.len())));
    }
    if feature_names.len() != x.ncols() {
        return Err(Error::usage("feature name count does not match column count"));
    }
    let pos = labels.iter().filter(|&&y| y).count();
    if pos == 0 || pos == n {
        return Err(Error::usage("gbdt training needs both classes"));
    }
    let rate = pos as f64 / n as f64;
    let base_score = (rate / (1.0 - rate)).ln();
    let y: Vec<f64> = labels.iter().map(|&b| f64::from(u8::from(b))).collect();
    let mut logits = vec![base_score; n];
    let sorted = presort(x);
    let f = x.ncols();
    let n_rows = ((config.row_subsample * n as f64).round() as usize).clamp(1, n);
    let n_feats = ((config.feature_subsample * f as f64).ceil() as usize).clamp(1, f.max(1));
    let mut rng = seeded(config.seed);
    let mut importance = vec![0.0; f];
    let mut trees = Vec::with_capacity(config.n_trees);
    let mut train_loss = Vec::with_capacity(config.n_trees);
    let (mut grad, mut hess) = (vec![0.0; n], vec![0.0; n]);
    for _ in 0..config.n_trees {
        for i in 0..n {
            let p = sigmoid(logits[i]);
            grad[i] = p - y[i];
            hess[i] = p * (1.0 - p);
        }
        let mut rows: Vec<u32> = sample(&mut rng, n, n_rows).into_iter().map(|r| r as u32).collect();
        rows.sort_unstable();
        let mut features = if f == 0 { Vec::new() } else { sample(&mut rng, f, n_feats).into_vec() };
        features.sort_unstable();
        let grower = Grower { x, sorted: &sorted, grad: &grad, hess: &hess, config };
        let tree = grower.grow(&rows, &features, &mut importance);
        for (i, l) in logits.iter_mut().enumerate() {
            *l += config.lr * tree.predict_row(x.row(i));
        }
        train_loss.push(logits.iter().zip(&y).map(|(&z, &y)| bce_with_logit(z, y)).sum::<f64>() / n as f64);
        trees.push(tree);
    }
    Ok(BoostedForest {
        version: FOREST_FORMAT_VERSION,
        feature_names,
        base_score,
        learning_rate: config.lr,
        trees,
        feature_importance: importance,
        train_loss,
    })
}

/// Trains on `table` with one label per row. Rows are first sorted by id, so
/// the result does not depend on input row order.
pub fn gbdt_train(table: &DenseTable, labels: &[bool], config: &GbdtConfig) -> Result<BoostedForest> {
    if labels.len() != table.row_count() {
        return Err(Error::usage(format!("{} rows but {} labels", table.row_count(), labels.len())));
    }
    let mut order: Vec<usize> = (0..table.row_count()).collect();
    order.sort_by(|&a, &b| table.ids()[a].cmp(&table.ids()[b]));
    let x: Array2<f64> = table.values().select(ndarray::Axis(0), &order);
    let y: Vec<bool> = order.iter().map(|&i| labels[i]).collect();
    gbdt_train_matrix(x.view(), &y, table.names().to_vec(), config)
}

/// Scores per row of `table`, whose columns must match the training schema.
pub fn gbdt_predict(forest: &BoostedForest, table: &DenseTable) -> Result<Vec<f64>> {
    if table.names() != forest.feature_names.as_slice() {
        return Err(Error::usage("feature columns do not match the forest's training schema"));
    }
    forest.predict_matrix(table.values().view())
}
