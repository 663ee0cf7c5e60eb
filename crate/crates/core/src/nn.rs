//! Small numeric helpers shared by the neural models.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rng64 = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng64 {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of logit `z` against `y` in {0, 1}.
pub fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - y * z + (-z.abs()).exp().ln_1p()
}

/// `(sigmoid(z), bce_with_logit(z, y))` sharing one exponential; equal to
/// the separate calls bit for bit.
pub fn sigmoid_and_bce(z: f64, y: f64) -> (f64, f64) {
    let e = (-z.abs()).exp();
    let s = if z >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
    (s, z.max(0.0) - y * z + e.ln_1p())
}

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn uniform_matrix(rng: &mut Rng64, rows: usize, cols: usize, fan_in: usize) -> Array2<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound))
}

pub fn uniform_vector(rng: &mut Rng64, len: usize, fan_in: usize) -> Array1<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Array1::from_shape_simple_fn(len, || rng.random_range(-bound..=bound))
}

/// Models whose parameters can be walked in a fixed order. The same order
/// is used for gradients, so flat vectors of a model and of its gradient
/// line up.
pub trait Params {
    fn visit(&self, f: &mut dyn FnMut(f64));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut f64));

    fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit(&mut |x| out.push(x));
        out
    }

    fn assign_flat(&mut self, values: &[f64]) {
        let mut it = values.iter();
        self.visit_mut(&mut |x| *x = *it.next().expect("flat vector too short"));
        assert!(it.next().is_none(), "flat vector too long");
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_| n += 1);
        n
    }
}

/// Global-norm clipping followed by a plain gradient step.
pub fn clipped_step<P: Params>(params: &mut P, grad: &P, lr: f64, max_norm: Option<f64>) {
    let g = grad.flat();
    let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    let factor = match max_norm {
        Some(m) if norm > m => m / norm,
        _ => 1.0,
    };
    let mut it = g.into_iter();
    params.visit_mut(&mut |x| *x -= lr * factor * it.next().unwrap());
}
