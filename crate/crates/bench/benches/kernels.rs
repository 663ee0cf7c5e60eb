use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use fraudgraph_bench::{device_hub, labeled_table, scored_labels};
use fraudgraph_core::deepwalk::{sample_walks, train_sgns, DeepWalkConfig};
use fraudgraph_core::eval::auc;
use fraudgraph_core::gbdt::{gbdt_predict, gbdt_train, GbdtConfig};
use fraudgraph_core::gnn::{gnn_train, Aggregator, GnnConfig, GnnModel, GnnProblem};
use fraudgraph_core::graph_stats::label_aggregation_eta;
use fraudgraph_core::sampling::TrainingSet;
use fraudgraph_core::synth::planted_partition;
use fraudgraph_core::DenseTable;

fn eval(c: &mut Criterion) {
    let (s, y) = scored_labels(100_000, 1);
    c.bench_function("auc_100k", |b| b.iter(|| auc(black_box(&s), black_box(&y)).unwrap()));
}

fn boosting(c: &mut Criterion) {
    let (x, y) = labeled_table(5_000, 16, 2);
    let cfg = GbdtConfig { n_trees: 20, seed: 2, ..Default::default() };
    let forest = gbdt_train(&x, &y, &cfg).unwrap();
    let mut g = c.benchmark_group("gbdt");
    g.sample_size(10);
    g.bench_function("train_5k_x16_20_trees", |b| b.iter(|| gbdt_train(black_box(&x), &y, &cfg).unwrap()));
    g.bench_function("predict_5k", |b| b.iter(|| gbdt_predict(&forest, black_box(&x)).unwrap()));
    g.finish();
}

fn graph_kernels(c: &mut Criterion) {
    let (data, graph) = device_hub(20_000, 3);
    let cfg = DeepWalkConfig { walks_per_node: 2, seed: 3, ..Default::default() };
    let labels = data.labels.restricted_to(&graph);
    let corpus = sample_walks(&graph, cfg.walks_per_node, cfg.walk_length, cfg.seed).unwrap();
    let mut g = c.benchmark_group("graph");
    g.sample_size(10);
    g.bench_function("eta_two_hops", |b| b.iter(|| label_aggregation_eta(black_box(&graph), &labels, 2).unwrap()));
    g.bench_function("random_walks", |b| b.iter(|| sample_walks(black_box(&graph), 2, 40, 3).unwrap()));
    g.bench_function("sgns_epoch", |b| b.iter(|| train_sgns(black_box(&corpus), &cfg).unwrap()));
    g.finish();
}

fn message_passing(c: &mut Criterion) {
    let (graph, blocks) = planted_partition(2_000, 4, 0.01, 0.001, 4).unwrap();
    let (x, _) = labeled_table(2_000, 8, 4);
    let features = DenseTable::new(graph.ids().to_vec(), x.names().to_vec(), x.values().clone()).unwrap();
    let (mut positives, mut negatives): (Vec<String>, Vec<String>) = (Vec::new(), Vec::new());
    for (id, &b) in graph.ids().iter().zip(&blocks).step_by(4) {
        if b == 0 {
            positives.push(id.clone());
        } else {
            negatives.push(id.clone());
        }
    }
    positives.sort();
    negatives.sort();
    let ts = TrainingSet { positives, negatives, sample_rate: 1.0, seed: 0 };

    let mut g = c.benchmark_group("gnn");
    g.sample_size(10);
    for aggregator in [Aggregator::Sum, Aggregator::GeniePathBreadth] {
        let cfg = GnnConfig { aggregator, epochs: 2, seed: 4, ..Default::default() };
        let model = GnnModel::new(features.names().to_vec(), &cfg).unwrap();
        let problem = GnnProblem::new(&graph, &features, None).unwrap();
        g.bench_function(format!("{aggregator:?}_predict_all"), |b| {
            b.iter(|| problem.predict_all(black_box(&model)).unwrap())
        });
        g.bench_function(format!("{aggregator:?}_train_2_epochs"), |b| {
            b.iter_batched(
                || cfg.clone(),
                |cfg| gnn_train(&graph, &features, &ts, &cfg).unwrap(),
                BatchSize::SmallInput,
            )
        });
    }
    g.finish();
}

criterion_group!(benches, eval, boosting, graph_kernels, message_passing);
criterion_main!(benches);
