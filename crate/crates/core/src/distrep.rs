//! Edge classifier over (buyer, seller) pairs. The endpoint embeddings are
//! dropout-regularized and summed, the endpoint attributes are concatenated
//! and projected through `tanh(W_att x)`, and both parts feed a tanh MLP
//! with a sigmoid output. Embeddings are inputs, not trained.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{DenseTable, EmbeddingMatrix};
use crate::nn::{bce_with_logit, clipped_step, seeded, sigmoid, uniform_matrix, uniform_vector, Params, Rng64};

pub const DISTREP_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistRepConfig {
    pub hidden: Vec<usize>,
    pub attr_dim: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for DistRepConfig {
    fn default() -> Self {
        Self { hidden: vec![64, 32], attr_dim: 32, dropout: 0.1, epochs: 30, batch_size: 32, lr: 0.05, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// out x in
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistRepModel {
    pub version: u32,
    pub embedding_dim: usize,
    pub feature_names: Vec<String>,
    pub dropout: f64,
    /// attr_dim x 2*feature_dim, no bias
    pub w_att: Array2<f64>,
    pub hidden: Vec<Dense>,
    pub output: Array1<f64>,
    pub output_bias: f64,
    /// Mean training loss per epoch.
    pub loss_history: Vec<f64>,
}

impl Params for DistRepModel {
    fn visit(&self, f: &mut dyn FnMut(f64)) {
        self.w_att.iter().for_each(|&x| f(x));
        for l in &self.hidden {
            l.weight.iter().for_each(|&x| f(x));
            l.bias.iter().for_each(|&x| f(x));
        }
        self.output.iter().for_each(|&x| f(x));
        f(self.output_bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut f64)) {
        self.w_att.iter_mut().for_each(&mut *f);
        for l in &mut self.hidden {
            l.weight.iter_mut().for_each(&mut *f);
            l.bias.iter_mut().for_each(&mut *f);
        }
        self.output.iter_mut().for_each(&mut *f);
        f(&mut self.output_bias);
    }
}

/// One edge's inputs. Slot `u` is the buyer, slot `v` the seller.
#[derive(Clone, Copy, Debug)]
pub struct EdgeInput<'a> {
    pub emb_u: ArrayView1<'a, f64>,
    pub emb_v: ArrayView1<'a, f64>,
    pub feat_u: ArrayView1<'a, f64>,
    pub feat_v: ArrayView1<'a, f64>,
}

/// Inverted-dropout multipliers: 0 for dropped entries, `1/(1-p)` otherwise.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMasks {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl DropoutMasks {
    pub fn identity(d: usize) -> Self {
        Self { u: vec![1.0; d], v: vec![1.0; d] }
    }

    /// Draws the `u` entries then the `v` entries; an entry is kept when the
    /// uniform draw is at least `p`.
    pub fn draw(rng: &mut Rng64, d: usize, p: f64) -> Self {
        let keep = 1.0 / (1.0 - p);
        let mut one = || (0..d).map(|_| if rng.random::<f64>() >= p { keep } else { 0.0 }).collect();
        let u = one();
        let v = one();
        Self { u, v }
    }
}

struct Trace {
    c: Vec<f64>,
    h_att: Vec<f64>,
    /// MLP activations, input first
    acts: Vec<Array1<f64>>,
    z: f64,
}

impl DistRepModel {
    pub fn new(embedding_dim: usize, feature_names: Vec<String>, config: &DistRepConfig) -> Result<Self> {
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::usage("dropout must be in [0, 1)"));
        }
        if config.attr_dim == 0 || config.hidden.contains(&0) {
            return Err(Error::usage("layer widths must be positive"));
        }
        let mut rng = seeded(config.seed);
        let two_f = 2 * feature_names.len();
        let w_att = uniform_matrix(&mut rng, config.attr_dim, two_f, two_f);
        let mut din = embedding_dim + config.attr_dim;
        let mut hidden = Vec::new();
        for &w in &config.hidden {
            hidden.push(Dense { weight: uniform_matrix(&mut rng, w, din, din), bias: Array1::zeros(w) });
            din = w;
        }
        Ok(Self {
            version: DISTREP_FORMAT_VERSION,
            embedding_dim,
            feature_names,
            dropout: config.dropout,
            w_att,
            hidden,
            output: uniform_vector(&mut rng, din, din),
            output_bias: 0.0,
            loss_history: Vec::new(),
        })
    }

    fn check_input(&self, x: &EdgeInput) -> Result<()> {
        let d = self.embedding_dim;
        let f = self.feature_names.len();
        if x.emb_u.len() != d || x.emb_v.len() != d || x.feat_u.len() != f || x.feat_v.len() != f {
            return Err(Error::usage(format!(
                "edge input dimensions do not match the model (embedding {d}, features {f})"
            )));
        }
        Ok(())
    }

    fn trace(&self, x: &EdgeInput, masks: &DropoutMasks) -> Trace {
        let c: Vec<f64> = x.feat_u.iter().chain(x.feat_v.iter()).copied().collect();
        let h_att: Vec<f64> =
            self.w_att.rows().into_iter().map(|r| r.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>().tanh()).collect();
        let mut input = Vec::with_capacity(self.embedding_dim + h_att.len());
        for k in 0..self.embedding_dim {
            input.push(masks.u[k] * x.emb_u[k] + masks.v[k] * x.emb_v[k]);
        }
        input.extend_from_slice(&h_att);
        let mut acts = vec![Array1::from(input)];
        for l in &self.hidden {
            let a = (l.weight.dot(acts.last().expect("input")) + &l.bias).mapv(f64::tanh);
            acts.push(a);
        }
        let z = self.output.dot(acts.last().expect("input")) + self.output_bias;
        Trace { c, h_att, acts, z }
    }

    /// Fraud probability for one edge. With `train_mode`, dropout masks are
    /// drawn from a generator seeded with `seed`.
    pub fn forward(&self, x: &EdgeInput, train_mode: bool, seed: u64) -> Result<f64> {
        self.check_input(x)?;
        let masks = if train_mode && self.dropout > 0.0 {
            DropoutMasks::draw(&mut seeded(seed), self.embedding_dim, self.dropout)
        } else {
            DropoutMasks::identity(self.embedding_dim)
        };
        Ok(sigmoid(self.trace(x, &masks).z))
    }

    pub fn loss_with_masks(&self, x: &EdgeInput, masks: &DropoutMasks, y: bool) -> f64 {
        bce_with_logit(self.trace(x, masks).z, f64::from(u8::from(y)))
    }

    /// Loss and its gradient for one edge under fixed dropout masks.
    pub fn gradient_with_masks(&self, x: &EdgeInput, masks: &DropoutMasks, y: bool) -> (f64, DistRepModel) {
        let mut grad = self.zeros_like();
        let loss = self.accumulate_gradient(x, masks, y, 1.0, &mut grad);
        (loss, grad)
    }

    fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        g.loss_history.clear();
        g.visit_mut(&mut |x| *x = 0.0);
        g
    }

    fn accumulate_gradient(
        &self,
        x: &EdgeInput,
        masks: &DropoutMasks,
        y: bool,
        scale: f64,
        grad: &mut DistRepModel,
    ) -> f64 {
        let t = self.trace(x, masks);
        let target = f64::from(u8::from(y));
        let dz = (sigmoid(t.z) - target) * scale;
        let last = t.acts.last().expect("input");
        grad.output.scaled_add(dz, last);
        grad.output_bias += dz;
        let mut d_act = &self.output * dz;
        for (k, l) in self.hidden.iter().enumerate().rev() {
            let a = &t.acts[k + 1];
            let d_pre = Array1::from_shape_fn(a.len(), |i| d_act[i] * (1.0 - a[i] * a[i]));
            let below = &t.acts[k];
            let g = &mut grad.hidden[k];
            for (i, &dp) in d_pre.iter().enumerate() {
                g.weight.row_mut(i).scaled_add(dp, below);
            }
            g.bias += &d_pre;
            d_act = l.weight.t().dot(&d_pre);
        }
        let d = self.embedding_dim;
        for (i, &h) in t.h_att.iter().enumerate() {
            let dp = d_act[d + i] * (1.0 - h * h);
            if dp != 0.0 {
                for (g, &c) in grad.w_att.row_mut(i).iter_mut().zip(&t.c) {
                    *g += dp * c;
                }
            }
        }
        bce_with_logit(t.z, target)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: DistRepModel = serde_json::from_str(text)?;
        if m.version != DISTREP_FORMAT_VERSION {
            return Err(Error::schema(format!("unsupported DistRep format version {}", m.version)));
        }
        if m.w_att.ncols() != 2 * m.feature_names.len() {
            return Err(Error::schema("attribute projection does not match the feature count"));
        }
        let mut din = m.embedding_dim + m.w_att.nrows();
        for l in &m.hidden {
            if l.weight.ncols() != din || l.bias.len() != l.weight.nrows() {
                return Err(Error::schema("hidden layer shapes are inconsistent"));
            }
            din = l.weight.nrows();
        }
        if m.output.len() != din {
            return Err(Error::schema("output layer width does not match"));
        }
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabeledEdge {
    pub buyer: String,
    pub seller: String,
    pub label: bool,
}

/// Reads `buyer<TAB>seller<TAB>label` rows with label 1 (fraud) or 0.
pub fn read_labeled_edges<R: BufRead>(reader: R) -> Result<Vec<LabeledEdge>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.is_empty() || trimmed.starts_with('#') || (line_no == 1 && trimmed.starts_with("buyer\t")) {
            continue;
        }
        let cols: Vec<&str> = trimmed.split('\t').collect();
        let [buyer, seller, label] = cols[..] else {
            return Err(Error::parse(line_no, "expected buyer, seller and label columns"));
        };
        let label = match label.trim() {
            "1" => true,
            "0" => false,
            other => return Err(Error::parse(line_no, format!("label must be 0 or 1, got `{other}`"))),
        };
        out.push(LabeledEdge { buyer: buyer.to_string(), seller: seller.to_string(), label });
    }
    Ok(out)
}

pub fn write_labeled_edges<W: Write>(edges: &[LabeledEdge], mut w: W) -> Result<()> {
    writeln!(w, "buyer\tseller\tlabel")?;
    for e in edges {
        writeln!(w, "{}\t{}\t{}", e.buyer, e.seller, u8::from(e.label))?;
    }
    Ok(())
}

/// Resolves edge endpoints to embedding and feature rows.
struct Lookup<'a> {
    embeddings: &'a EmbeddingMatrix,
    features: &'a DenseTable,
    emb_index: HashMap<&'a str, usize>,
    feat_index: HashMap<&'a str, usize>,
}

impl<'a> Lookup<'a> {
    fn new(embeddings: &'a EmbeddingMatrix, features: &'a DenseTable) -> Self {
        Self { embeddings, features, emb_index: embeddings.index(), feat_index: features.index() }
    }

    fn input(&self, buyer: &str, seller: &str) -> Result<EdgeInput<'a>> {
        Ok(EdgeInput {
            emb_u: self.embeddings.row_of(&self.emb_index, buyer)?,
            emb_v: self.embeddings.row_of(&self.emb_index, seller)?,
            feat_u: self.features.row_of(&self.feat_index, buyer)?,
            feat_v: self.features.row_of(&self.feat_index, seller)?,
        })
    }
}

/// Minibatch SGD on edge cross-entropy with embedding dropout.
pub fn distrep_train(
    embeddings: &EmbeddingMatrix,
    features: &DenseTable,
    edges: &[LabeledEdge],
    config: &DistRepConfig,
) -> Result<DistRepModel> {
    if !config.lr.is_finite() || config.lr <= 0.0 || config.batch_size == 0 {
        return Err(Error::usage("learning rate and batch size must be positive"));
    }
    if edges.is_empty() {
        return Err(Error::usage("no labeled edges to train on"));
    }
    let lookup = Lookup::new(embeddings, features);
    let inputs: Vec<EdgeInput> = edges.iter().map(|e| lookup.input(&e.buyer, &e.seller)).collect::<Result<_>>()?;
    let mut model = DistRepModel::new(embeddings.dim(), features.names().to_vec(), config)?;
    let mut rng = seeded(config.seed ^ 0xd157_4e90);
    let mut order: Vec<usize> = (0..edges.len()).collect();
    let mut grad = model.zeros_like();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            grad.visit_mut(&mut |x| *x = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let masks = if model.dropout > 0.0 {
                    DropoutMasks::draw(&mut rng, model.embedding_dim, model.dropout)
                } else {
                    DropoutMasks::identity(model.embedding_dim)
                };
                total += model.accumulate_gradient(&inputs[i], &masks, edges[i].label, scale, &mut grad);
            }
            clipped_step(&mut model, &grad, config.lr, None);
        }
        model.loss_history.push(total / edges.len() as f64);
    }
    Ok(model)
}

/// Eval-mode scores for `(buyer, seller)` pairs.
pub fn distrep_score(
    model: &DistRepModel,
    embeddings: &EmbeddingMatrix,
    features: &DenseTable,
    pairs: &[(String, String)],
) -> Result<Vec<f64>> {
    if features.names() != model.feature_names.as_slice() {
        return Err(Error::usage("feature columns do not match the model's training schema"));
    }
    let lookup = Lookup::new(embeddings, features);
    pairs.iter().map(|(b, s)| model.forward(&lookup.input(b, s)?, false, 0)).collect()
}
