//! Message-passing node classifier. Each layer computes
//! `h_v <- tanh(W * AGG over N(v) and v of h_u)` with either a plain sum or
//! breadth attention (`alpha_u = softmax_u(w . tanh(W_s h_v + W_d h_u))`),
//! followed by a sigmoid head on the last layer.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::DenseTable;
use crate::graph::{Adjacency, TypedGraph};
use crate::nn::{bce_with_logit, clipped_step, seeded, sigmoid, uniform_matrix, uniform_vector, Params};
use crate::sampling::TrainingSet;

pub const GNN_FORMAT_VERSION: u32 = 1;
pub const GRADIENT_CLIP: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    Sum,
    GeniePathBreadth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GnnConfig {
    pub aggregator: Aggregator,
    pub layers: usize,
    pub hidden_dim: usize,
    /// Attention width; the hidden width when absent.
    pub attention_dim: Option<usize>,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for GnnConfig {
    fn default() -> Self {
        Self {
            aggregator: Aggregator::GeniePathBreadth,
            layers: 2,
            hidden_dim: 32,
            attention_dim: None,
            epochs: 300,
            lr: 0.5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attention {
    /// attention x in
    pub w_self: Array2<f64>,
    /// attention x in
    pub w_neighbor: Array2<f64>,
    pub w: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GnnLayer {
    /// out x in, no bias.
    pub weight: Array2<f64>,
    pub attention: Option<Attention>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GnnModel {
    pub version: u32,
    pub aggregator: Aggregator,
    pub feature_names: Vec<String>,
    pub layers: Vec<GnnLayer>,
    pub head: Array1<f64>,
    pub bias: f64,
    /// Training loss before each update.
    pub loss_history: Vec<f64>,
}

impl Params for GnnModel {
    fn visit(&self, f: &mut dyn FnMut(f64)) {
        for l in &self.layers {
            l.weight.iter().for_each(|&x| f(x));
            if let Some(a) = &l.attention {
                a.w_self.iter().for_each(|&x| f(x));
                a.w_neighbor.iter().for_each(|&x| f(x));
                a.w.iter().for_each(|&x| f(x));
            }
        }
        self.head.iter().for_each(|&x| f(x));
        f(self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut f64)) {
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(&mut *f);
            if let Some(a) = &mut l.attention {
                a.w_self.iter_mut().for_each(&mut *f);
                a.w_neighbor.iter_mut().for_each(&mut *f);
                a.w.iter_mut().for_each(&mut *f);
            }
        }
        self.head.iter_mut().for_each(&mut *f);
        f(&mut self.bias);
    }
}

impl GnnModel {
    /// Uniform `±1/sqrt(fan_in)` initialization.
    pub fn new(feature_names: Vec<String>, config: &GnnConfig) -> Result<Self> {
        if config.layers < 1 {
            return Err(Error::usage("a GNN needs at least one layer"));
        }
        if config.hidden_dim == 0 || config.attention_dim == Some(0) {
            return Err(Error::usage("hidden and attention widths must be positive"));
        }
        let mut rng = seeded(config.seed);
        let att = config.attention_dim.unwrap_or(config.hidden_dim);
        let mut layers = Vec::with_capacity(config.layers);
        let mut din = feature_names.len();
        for _ in 0..config.layers {
            let weight = uniform_matrix(&mut rng, config.hidden_dim, din, din);
            let attention = (config.aggregator == Aggregator::GeniePathBreadth).then(|| Attention {
                w_self: uniform_matrix(&mut rng, att, din, din),
                w_neighbor: uniform_matrix(&mut rng, att, din, din),
                w: uniform_vector(&mut rng, att, att),
            });
            layers.push(GnnLayer { weight, attention });
            din = config.hidden_dim;
        }
        Ok(Self {
            version: GNN_FORMAT_VERSION,
            aggregator: config.aggregator,
            feature_names,
            head: uniform_vector(&mut rng, config.hidden_dim, config.hidden_dim),
            layers,
            bias: 0.0,
            loss_history: Vec::new(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.feature_names.len()
    }

    fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        g.loss_history.clear();
        g.visit_mut(&mut |x| *x = 0.0);
        g
    }

    fn check_shapes(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::schema("model has no layers"));
        }
        let mut din = self.input_dim();
        for (k, l) in self.layers.iter().enumerate() {
            if l.weight.ncols() != din {
                return Err(Error::schema(format!(
                    "layer {k} expects {} inputs, previous width is {din}",
                    l.weight.ncols()
                )));
            }
            match (&l.attention, self.aggregator) {
                (None, Aggregator::Sum) => {}
                (Some(a), Aggregator::GeniePathBreadth) => {
                    let att = a.w.len();
                    if a.w_self.dim() != (att, din) || a.w_neighbor.dim() != (att, din) {
                        return Err(Error::schema(format!("layer {k} attention shapes are inconsistent")));
                    }
                }
                _ => return Err(Error::schema(format!("layer {k} attention does not match the aggregator"))),
            }
            din = l.weight.nrows();
        }
        if self.head.len() != din {
            return Err(Error::schema("head width does not match the last layer"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: GnnModel = serde_json::from_str(text)?;
        if model.version != GNN_FORMAT_VERSION {
            return Err(Error::schema(format!("unsupported GNN format version {}", model.version)));
        }
        model.check_shapes()?;
        Ok(model)
    }
}

fn matvec(w: ArrayView2<f64>, x: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(w.rows()) {
        *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Breadth attention over `h_self` and its neighbors. Returns the aggregate
/// and the attention weights, self first.
pub fn geniepath_breadth_aggregate(
    h_self: ArrayView1<f64>,
    neighbors: &[ArrayView1<f64>],
    attention: &Attention,
) -> Result<(Array1<f64>, Vec<f64>)> {
    let d = h_self.len();
    if neighbors.iter().any(|h| h.len() != d) || attention.w_self.ncols() != d || attention.w_neighbor.ncols() != d {
        return Err(Error::usage("attention inputs have mismatched dimensions"));
    }
    let q = attention.w_self.dot(&h_self);
    let members: Vec<ArrayView1<f64>> = std::iter::once(h_self).chain(neighbors.iter().copied()).collect();
    let scores: Vec<f64> = members
        .iter()
        .map(|h| {
            let a = (&q + &attention.w_neighbor.dot(h)).mapv(f64::tanh);
            attention.w.dot(&a)
        })
        .collect();
    let alpha = softmax(&scores);
    let mut out = Array1::zeros(d);
    for (h, &a) in members.iter().zip(&alpha) {
        out.scaled_add(a, h);
    }
    Ok((out, alpha))
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Per-layer forward quantities kept for the backward pass.
struct LayerCache {
    /// aggregated inputs, n x in
    m: Array2<f64>,
    /// outputs, n x out
    h: Array2<f64>,
    /// `W_s h_v` and `W_d h_v`, n x attention
    q: Option<Array2<f64>>,
    p: Option<Array2<f64>>,
    /// attention weights per node, self first, then neighbors
    alpha: Vec<f64>,
}

/// A graph with node inputs aligned to its node order, ready for forward
/// and backward passes.
pub struct GnnProblem {
    adj: Adjacency,
    x: Array2<f64>,
    feature_names: Vec<String>,
    train: Vec<u32>,
    targets: Vec<f64>,
}

impl GnnProblem {
    /// Feature rows are matched to nodes by id; nodes without a row (such as
    /// devices) get zero inputs.
    pub fn new(graph: &TypedGraph, features: &DenseTable, training_set: Option<&TrainingSet>) -> Result<Self> {
        let mut train = Vec::new();
        let mut targets = Vec::new();
        if let Some(ts) = training_set {
            for (id, y) in ts.examples() {
                train.push(graph.require(id)?);
                targets.push(f64::from(u8::from(y)));
            }
        }
        Ok(Self {
            adj: graph.simple_adjacency(),
            x: features.aligned(graph.ids(), 0.0),
            feature_names: features.names().to_vec(),
            train,
            targets,
        })
    }

    fn alpha_base(&self, v: usize) -> usize {
        v + self.adj.offset(v as u32)
    }

    fn forward(&self, model: &GnnModel) -> Result<Vec<LayerCache>> {
        if model.feature_names != self.feature_names {
            return Err(Error::usage("feature columns do not match the model's training schema"));
        }
        let n = self.x.nrows();
        let mut caches: Vec<LayerCache> = Vec::with_capacity(model.layers.len());
        for layer in &model.layers {
            let input = caches.last().map_or(self.x.view(), |c| c.h.view());
            let din = input.ncols();
            let dout = layer.weight.nrows();
            let mut m = Array2::zeros((n, din));
            let mut h = Array2::zeros((n, dout));
            let (mut q, mut p, mut alpha) = (None, None, Vec::new());
            match &layer.attention {
                None => {
                    for v in 0..n {
                        let mut row = m.row_mut(v);
                        let row = row.as_slice_mut().expect("contiguous");
                        row.copy_from_slice(input.row(v).as_slice().expect("contiguous"));
                        for &u in self.adj.neighbors(v as u32) {
                            for (a, b) in row.iter_mut().zip(input.row(u as usize)) {
                                *a += b;
                            }
                        }
                    }
                }
                Some(att) => {
                    let a_dim = att.w.len();
                    let mut qm = Array2::zeros((n, a_dim));
                    let mut pm = Array2::zeros((n, a_dim));
                    for v in 0..n {
                        let x = input.row(v);
                        let x = x.as_slice().expect("contiguous");
                        matvec(att.w_self.view(), x, qm.row_mut(v).as_slice_mut().expect("contiguous"));
                        matvec(att.w_neighbor.view(), x, pm.row_mut(v).as_slice_mut().expect("contiguous"));
                    }
                    alpha = vec![0.0; n + self.adj.entry_count()];
                    let w = att.w.as_slice().expect("contiguous");
                    let mut scores = Vec::new();
                    let mut tmp = vec![0.0; a_dim];
                    for v in 0..n {
                        let qv = qm.row(v);
                        let qv = qv.as_slice().expect("contiguous");
                        scores.clear();
                        for u in std::iter::once(v as u32).chain(self.adj.neighbors(v as u32).iter().copied()) {
                            let pu = pm.row(u as usize);
                            for ((t, a), b) in tmp.iter_mut().zip(qv).zip(pu.as_slice().expect("contiguous")) {
                                *t = (a + b).tanh();
                            }
                            scores.push(dot(w, &tmp));
                        }
                        let weights = softmax(&scores);
                        let base = self.alpha_base(v);
                        alpha[base..base + weights.len()].copy_from_slice(&weights);
                        let mut row = m.row_mut(v);
                        let row = row.as_slice_mut().expect("contiguous");
                        for (u, &a) in
                            std::iter::once(v as u32).chain(self.adj.neighbors(v as u32).iter().copied()).zip(&weights)
                        {
                            for (r, b) in row.iter_mut().zip(input.row(u as usize)) {
                                *r += a * b;
                            }
                        }
                    }
                    q = Some(qm);
                    p = Some(pm);
                }
            }
            for v in 0..n {
                let mut out = h.row_mut(v);
                let out = out.as_slice_mut().expect("contiguous");
                matvec(layer.weight.view(), m.row(v).as_slice().expect("contiguous"), out);
                out.iter_mut().for_each(|z| *z = z.tanh());
            }
            caches.push(LayerCache { m, h, q, p, alpha });
        }
        Ok(caches)
    }

    fn logit(model: &GnnModel, caches: &[LayerCache], v: usize) -> f64 {
        let h = caches.last().expect("at least one layer").h.row(v);
        dot(model.head.as_slice().expect("contiguous"), h.as_slice().expect("contiguous")) + model.bias
    }

    /// Scores for every node in graph order.
    pub fn predict_all(&self, model: &GnnModel) -> Result<Vec<f64>> {
        let caches = self.forward(model)?;
        Ok((0..self.x.nrows()).map(|v| sigmoid(Self::logit(model, &caches, v))).collect())
    }

    /// Last-layer hidden states for every node.
    pub fn hidden_states(&self, model: &GnnModel) -> Result<Array2<f64>> {
        Ok(self.forward(model)?.pop().expect("at least one layer").h)
    }

    /// Mean binary cross-entropy over the training set.
    pub fn loss(&self, model: &GnnModel) -> Result<f64> {
        let caches = self.forward(model)?;
        Ok(self.loss_from(model, &caches))
    }

    fn loss_from(&self, model: &GnnModel, caches: &[LayerCache]) -> f64 {
        let total: f64 = self
            .train
            .iter()
            .zip(&self.targets)
            .map(|(&v, &y)| bce_with_logit(Self::logit(model, caches, v as usize), y))
            .sum();
        total / self.train.len().max(1) as f64
    }

    pub fn loss_and_gradient(&self, model: &GnnModel) -> Result<(f64, GnnModel)> {
        if self.train.is_empty() {
            return Err(Error::usage("training set is empty"));
        }
        let caches = self.forward(model)?;
        let loss = self.loss_from(model, &caches);
        let mut grad = model.zeros_like();
        let n = self.x.nrows();
        let k_last = caches.len() - 1;
        let mut d_h = Array2::<f64>::zeros(caches[k_last].h.dim());
        let scale = 1.0 / self.train.len() as f64;
        for (&v, &y) in self.train.iter().zip(&self.targets) {
            let v = v as usize;
            let dz = (sigmoid(Self::logit(model, &caches, v)) - y) * scale;
            grad.head.scaled_add(dz, &caches[k_last].h.row(v));
            grad.bias += dz;
            d_h.row_mut(v).scaled_add(dz, &model.head);
        }
        for k in (0..caches.len()).rev() {
            let layer = &model.layers[k];
            let cache = &caches[k];
            let input = if k == 0 { self.x.view() } else { caches[k - 1].h.view() };
            let din = input.ncols();
            // through tanh and the linear map
            let mut d_pre = d_h;
            d_pre.zip_mut_with(&cache.h, |d, h| *d *= 1.0 - h * h);
            let gw = &mut grad.layers[k].weight;
            let mut d_m = Array2::<f64>::zeros((n, din));
            for v in 0..n {
                let dp = d_pre.row(v);
                if dp.iter().all(|&x| x == 0.0) {
                    continue;
                }
                let mv = cache.m.row(v);
                for (i, &g) in dp.iter().enumerate() {
                    if g != 0.0 {
                        gw.row_mut(i).scaled_add(g, &mv);
                        d_m.row_mut(v).scaled_add(g, &layer.weight.row(i));
                    }
                }
            }
            if k == 0 {
                // input features carry no parameters
                if let (Some(att), Some(gatt)) = (&layer.attention, &mut grad.layers[k].attention) {
                    self.attention_backward(att, gatt, cache, input, &d_m, None);
                }
                break;
            }
            let mut d_in = Array2::<f64>::zeros((n, din));
            match &layer.attention {
                None => {
                    for v in 0..n {
                        let dm = d_m.row(v);
                        d_in.row_mut(v).scaled_add(1.0, &dm);
                        for &u in self.adj.neighbors(v as u32) {
                            d_in.row_mut(u as usize).scaled_add(1.0, &dm);
                        }
                    }
                }
                Some(att) => {
                    let gatt = grad.layers[k].attention.as_mut().expect("gradient mirrors model");
                    self.attention_backward(att, gatt, cache, input, &d_m, Some(&mut d_in));
                }
            }
            d_h = d_in;
        }
        Ok((loss, grad))
    }

    /// Backward pass of the attention aggregate for one layer, accumulating
    /// parameter gradients and, when requested, input gradients.
    fn attention_backward(
        &self,
        att: &Attention,
        gatt: &mut Attention,
        cache: &LayerCache,
        input: ArrayView2<f64>,
        d_m: &Array2<f64>,
        mut d_in: Option<&mut Array2<f64>>,
    ) {
        let n = input.nrows();
        let a_dim = att.w.len();
        let q = cache.q.as_ref().expect("attention cache");
        let p = cache.p.as_ref().expect("attention cache");
        let mut d_q = Array2::<f64>::zeros((n, a_dim));
        let mut d_p = Array2::<f64>::zeros((n, a_dim));
        let mut d_alpha = Vec::new();
        let mut a_vec = vec![0.0; a_dim];
        for v in 0..n {
            let dm = d_m.row(v);
            if dm.iter().all(|&x| x == 0.0) {
                continue;
            }
            let members: Vec<u32> =
                std::iter::once(v as u32).chain(self.adj.neighbors(v as u32).iter().copied()).collect();
            let base = self.alpha_base(v);
            let alpha = &cache.alpha[base..base + members.len()];
            d_alpha.clear();
            for (&u, &a) in members.iter().zip(alpha) {
                let hu = input.row(u as usize);
                d_alpha.push(dm.dot(&hu));
                if let Some(d_in) = d_in.as_deref_mut() {
                    d_in.row_mut(u as usize).scaled_add(a, &dm);
                }
            }
            let mean: f64 = alpha.iter().zip(&d_alpha).map(|(a, d)| a * d).sum();
            for ((&u, &a), &da) in members.iter().zip(alpha).zip(&d_alpha) {
                let d_score = a * (da - mean);
                if d_score == 0.0 {
                    continue;
                }
                for (j, t) in a_vec.iter_mut().enumerate() {
                    *t = (q[[v, j]] + p[[u as usize, j]]).tanh();
                }
                for j in 0..a_dim {
                    gatt.w[j] += d_score * a_vec[j];
                    let d_pre = d_score * att.w[j] * (1.0 - a_vec[j] * a_vec[j]);
                    d_q[[v, j]] += d_pre;
                    d_p[[u as usize, j]] += d_pre;
                }
            }
        }
        for v in 0..n {
            let (dq, dp) = (d_q.row(v), d_p.row(v));
            let hv = input.row(v);
            for j in 0..a_dim {
                if dq[j] != 0.0 {
                    gatt.w_self.row_mut(j).scaled_add(dq[j], &hv);
                    if let Some(d_in) = d_in.as_deref_mut() {
                        d_in.row_mut(v).scaled_add(dq[j], &att.w_self.row(j));
                    }
                }
                if dp[j] != 0.0 {
                    gatt.w_neighbor.row_mut(j).scaled_add(dp[j], &hv);
                    if let Some(d_in) = d_in.as_deref_mut() {
                        d_in.row_mut(v).scaled_add(dp[j], &att.w_neighbor.row(j));
                    }
                }
            }
        }
    }
}

/// Full-batch gradient descent on the mean cross-entropy of the training
/// set, with global-norm gradient clipping.
pub fn gnn_train(
    graph: &TypedGraph,
    features: &DenseTable,
    training_set: &TrainingSet,
    config: &GnnConfig,
) -> Result<GnnModel> {
    if !config.lr.is_finite() || config.lr <= 0.0 {
        return Err(Error::usage("learning rate must be positive"));
    }
    let mut model = GnnModel::new(features.names().to_vec(), config)?;
    let problem = GnnProblem::new(graph, features, Some(training_set))?;
    for _ in 0..config.epochs {
        let (loss, grad) = problem.loss_and_gradient(&model)?;
        model.loss_history.push(loss);
        clipped_step(&mut model, &grad, config.lr, Some(GRADIENT_CLIP));
    }
    Ok(model)
}

/// Scores for `nodes`, in that order.
pub fn gnn_predict(model: &GnnModel, graph: &TypedGraph, features: &DenseTable, nodes: &[String]) -> Result<Vec<f64>> {
    let idx: Vec<u32> = nodes.iter().map(|id| graph.require(id)).collect::<Result<_>>()?;
    let all = GnnProblem::new(graph, features, None)?.predict_all(model)?;
    Ok(idx.into_iter().map(|v| all[v as usize]).collect())
}
