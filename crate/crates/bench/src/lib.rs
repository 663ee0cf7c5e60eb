//! Fixtures shared by the benchmarks. Every fixture is a pure function of
//! its arguments.

use fraudgraph_core::nn::seeded;
use fraudgraph_core::synth::{generate, SynthConfig, SynthDataset};
use fraudgraph_core::{DenseTable, IsolationPolicy, TypedGraph};
use ndarray::Array2;
use rand::Rng;

/// Scores with a mild positive shift and roughly 5% positives.
pub fn scored_labels(n: usize, seed: u64) -> (Vec<f64>, Vec<bool>) {
    let mut rng = seeded(seed);
    (0..n)
        .map(|_| {
            let y = rng.random_bool(0.05);
            let s = rng.random_range(0.0..1.0) + if y { 0.3 } else { 0.0 };
            (s, y)
        })
        .unzip()
}

/// Uniform features with labels driven by the first and last columns.
pub fn labeled_table(n: usize, f: usize, seed: u64) -> (DenseTable, Vec<bool>) {
    let mut rng = seeded(seed);
    let x = Array2::from_shape_fn((n, f), |_| rng.random_range(-1.0..1.0));
    let y = (0..n).map(|i| x[[i, 0]] - x[[i, f - 1]] + rng.random_range(-0.5..0.5) > 0.0).collect();
    let ids = (0..n).map(|i| format!("r{i:07}")).collect();
    (DenseTable::with_prefix(ids, "x", x).expect("fixture shape"), y)
}

/// A device-sharing dataset with unshared accounts already removed.
pub fn device_hub(n_accounts: usize, seed: u64) -> (SynthDataset, TypedGraph) {
    let data = generate(&SynthConfig { n_accounts, seed, ..Default::default() }).expect("fixture config");
    let graph = data.graph.remove_isolated(IsolationPolicy::NoSharedDevice).expect("fixture graph");
    (data, graph)
}
