use ndarray::{Array1, Array2, ArrayView1, Zip};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::table::{DenseTable, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::nn::{seeded, uniform_matrix, uniform_vector, Params};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DaeConfig {
    pub hidden_dim: usize,
    /// Probability of zeroing each input cell during training.
    pub corruption_rate: f64,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for DaeConfig {
    fn default() -> Self {
        Self { hidden_dim: 32, corruption_rate: 0.2, epochs: 30, lr: 0.01, seed: 0 }
    }
}

/// Single-hidden-layer autoencoder weights: `tanh` encoder, linear decoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DaeWeights {
    /// hidden x input
    pub encoder: Array2<f64>,
    pub encoder_bias: Array1<f64>,
    /// input x hidden
    pub decoder: Array2<f64>,
    pub decoder_bias: Array1<f64>,
}

pub type DaeGradient = DaeWeights;

impl Params for DaeWeights {
    fn visit(&self, f: &mut dyn FnMut(f64)) {
        for a in [
            self.encoder.view().into_dyn(),
            self.encoder_bias.view().into_dyn(),
            self.decoder.view().into_dyn(),
            self.decoder_bias.view().into_dyn(),
        ] {
            a.iter().for_each(|&x| f(x));
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut f64)) {
        self.encoder.iter_mut().for_each(&mut *f);
        self.encoder_bias.iter_mut().for_each(&mut *f);
        self.decoder.iter_mut().for_each(&mut *f);
        self.decoder_bias.iter_mut().for_each(&mut *f);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DaeModel {
    pub weights: DaeWeights,
    pub corruption_rate: f64,
    /// Clean-input reconstruction MSE before training.
    pub initial_loss: f64,
    /// Clean-input reconstruction MSE after each epoch.
    pub loss_history: Vec<f64>,
}

impl DaeModel {
    /// Randomly initialized, untrained model.
    pub fn new(input_dim: usize, hidden_dim: usize, corruption_rate: f64, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let weights = DaeWeights {
            encoder: uniform_matrix(&mut rng, hidden_dim, input_dim, input_dim),
            encoder_bias: uniform_vector(&mut rng, hidden_dim, input_dim),
            decoder: uniform_matrix(&mut rng, input_dim, hidden_dim, hidden_dim),
            decoder_bias: uniform_vector(&mut rng, input_dim, hidden_dim),
        };
        Self { weights, corruption_rate, initial_loss: f64::NAN, loss_history: Vec::new() }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.encoder.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.weights.encoder.nrows()
    }

    fn encode_row(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let mut z = self.weights.encoder.dot(&x) + &self.weights.encoder_bias;
        z.mapv_inplace(f64::tanh);
        z
    }

    /// Mean squared reconstruction error of `clean` from `corrupted`.
    pub fn loss(&self, clean: ArrayView1<f64>, corrupted: ArrayView1<f64>) -> f64 {
        let z = self.encode_row(corrupted);
        let recon = self.weights.decoder.dot(&z) + &self.weights.decoder_bias;
        recon.iter().zip(clean).map(|(r, c)| (r - c) * (r - c)).sum::<f64>() / clean.len() as f64
    }

    /// Loss and analytic gradient for one example.
    pub fn loss_and_gradient(&self, clean: ArrayView1<f64>, corrupted: ArrayView1<f64>) -> (f64, DaeGradient) {
        let w = &self.weights;
        let n = clean.len() as f64;
        let z = self.encode_row(corrupted);
        let recon = w.decoder.dot(&z) + &w.decoder_bias;
        let diff = &recon - &clean;
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
        let d_recon = diff * (2.0 / n);
        let d_z = w.decoder.t().dot(&d_recon);
        let d_pre = Zip::from(&d_z).and(&z).map_collect(|dz, z| dz * (1.0 - z * z));
        let outer =
            |a: &Array1<f64>, b: ArrayView1<f64>| Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j]);
        let grad = DaeWeights {
            encoder: outer(&d_pre, corrupted),
            encoder_bias: d_pre,
            decoder: outer(&d_recon, z.view()),
            decoder_bias: d_recon,
        };
        (loss, grad)
    }

    /// Mean clean reconstruction error over all rows.
    pub fn reconstruction_mse(&self, values: &Array2<f64>) -> f64 {
        let total: f64 = values.rows().into_iter().map(|r| self.loss(r, r)).sum();
        total / values.nrows().max(1) as f64
    }
}

/// Trains a denoising autoencoder with per-row SGD on masked inputs. After
/// every epoch the clean reconstruction error is measured; an epoch that
/// raises it is rolled back and the learning rate halved, so the recorded
/// loss never increases.
pub fn dae_train(table: &DenseTable, config: &DaeConfig) -> Result<DaeModel> {
    if config.hidden_dim == 0 {
        return Err(Error::usage("hidden_dim must be positive"));
    }
    if !config.lr.is_finite() || config.lr <= 0.0 {
        return Err(Error::usage("learning rate must be positive"));
    }
    if !(0.0..1.0).contains(&config.corruption_rate) {
        return Err(Error::usage("corruption rate must be in [0, 1)"));
    }
    if table.row_count() == 0 || table.dim() == 0 {
        return Err(Error::usage("DAE training needs a non-empty table"));
    }
    let values = table.values();
    let mut model = DaeModel::new(table.dim(), config.hidden_dim, config.corruption_rate, config.seed);
    let mut rng = seeded(config.seed ^ 0x5eed_dae0);
    let mut lr = config.lr;
    let mut prev = model.reconstruction_mse(values);
    model.initial_loss = prev;
    let mut order: Vec<usize> = (0..values.nrows()).collect();
    let mut corrupted = Array1::zeros(values.ncols());
    for _ in 0..config.epochs {
        let snapshot = model.weights.clone();
        order.shuffle(&mut rng);
        for &i in &order {
            let clean = values.row(i);
            for (c, &x) in corrupted.iter_mut().zip(clean) {
                *c = if rng.random::<f64>() < config.corruption_rate { 0.0 } else { x };
            }
            let (_, grad) = model.loss_and_gradient(clean, corrupted.view());
            crate::nn::clipped_step(&mut model.weights, &grad, lr, None);
        }
        let current = model.reconstruction_mse(values);
        if current > prev || !current.is_finite() {
            model.weights = snapshot;
            lr *= 0.5;
        } else {
            prev = current;
        }
        model.loss_history.push(prev);
    }
    Ok(model)
}

/// Encoder activations (`tanh(W x + b)`) per row, without corruption.
pub fn dae_encode(model: &DaeModel, table: &DenseTable) -> Result<EmbeddingMatrix> {
    if table.dim() != model.input_dim() {
        return Err(Error::usage(format!(
            "DAE expects {} input columns, table has {}",
            model.input_dim(),
            table.dim()
        )));
    }
    let mut out = Array2::zeros((table.row_count(), model.hidden_dim()));
    for (i, row) in table.values().rows().into_iter().enumerate() {
        out.row_mut(i).assign(&model.encode_row(row));
    }
    DenseTable::with_prefix(table.ids().to_vec(), "dae", out)
}
