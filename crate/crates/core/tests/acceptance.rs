//! Acceptance gate. Each criterion runs at its stated tolerance and budget
//! and prints one PASS or FAIL line; the process exits nonzero if any fail.
//!
//! `ACCEPTANCE_ONLY=3,7` restricts the run to the listed criteria.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use fraudgraph_core::deepwalk::{deepwalk, pair_gradient, pair_loss, DeepWalkConfig};
use fraudgraph_core::distrep::{DistRepConfig, DistRepModel, DropoutMasks, EdgeInput};
use fraudgraph_core::eval::{auc, detection_expansion, pr_curve, recall_at_precision};
use fraudgraph_core::features::{dae_train, psi, psi_from_fractions, DaeConfig, DaeModel, DenseTable};
use fraudgraph_core::gbdt::{gbdt_predict, gbdt_train, GbdtConfig};
use fraudgraph_core::gnn::{gnn_train, Aggregator, GnnConfig, GnnModel, GnnProblem};
use fraudgraph_core::graph::GraphBuilder;
use fraudgraph_core::graph_stats::label_aggregation_eta;
use fraudgraph_core::nn::{seeded, Params};
use fraudgraph_core::pipeline::{
    run_pipeline, stratified_split, InputPaths, Manifest, PipelineConfig, Stage, StageToggles,
};
use fraudgraph_core::sampling::{sample_training_set, TrainingSet};
use fraudgraph_core::synth::{generate, planted_partition, Motif, SynthConfig};
use fraudgraph_core::{EdgeType, GraphKind, IsolationPolicy, Label, LabelTable, NodeType, TypedGraph};
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

const CAPACITY_CHILD: &str = "FRAUDGRAPH_CAPACITY_CHILD";

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

type Criterion = (u32, &'static str, Option<Duration>, fn() -> Outcome);

fn main() -> ExitCode {
    if std::env::var_os(CAPACITY_CHILD).is_some() {
        capacity_child();
        return ExitCode::SUCCESS;
    }
    let only: Option<BTreeSet<u32>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let secs = Duration::from_secs;
    let criteria: [Criterion; 10] = [
        (1, "metric oracles", Some(secs(10)), metric_oracles),
        (2, "gradient correctness", Some(secs(60)), gradients),
        (3, "label aggregation direction", Some(secs(30)), eta_direction),
        (4, "embedding separation", Some(secs(120)), embedding_separation),
        (5, "graph-signal lift", Some(secs(300)), graph_signal_lift),
        (6, "feature-augmentation monotonicity", None, augmentation),
        (7, "collusion edge detection", Some(secs(180)), collusion),
        (8, "preprocessing exactness", None, preprocessing),
        (9, "determinism", None, determinism),
        (10, "desk-scale capacity", None, capacity),
    ];
    let mut failed = 0;
    for (n, name, budget, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run))
            .unwrap_or_else(|e| Outcome::new(false, format!("panicked: {}", panic_message(&e))));
        let took = start.elapsed();
        let in_budget = budget.is_none_or(|b| took <= b);
        let pass = outcome.pass && in_budget;
        let budget_text = budget.map_or(String::new(), |b| format!(", budget {}s", b.as_secs()));
        println!(
            "acceptance {n:>2} {:<4} {name}: {} [{:.1}s{budget_text}]",
            if pass { "PASS" } else { "FAIL" },
            outcome.detail,
            took.as_secs_f64()
        );
        if !pass {
            failed += 1;
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}

fn panic_message(e: &Box<dyn std::any::Any + Send>) -> String {
    e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()
}

// ---------------------------------------------------------------- oracles

fn brute_auc(s: &[f64], y: &[bool]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if y[i] && !y[j] {
                pairs += 1.0;
                num += if s[i] > s[j] {
                    1.0
                } else if s[i] == s[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / pairs
}

/// Precision and recall of `score >= t` for every distinct score, highest
/// first.
fn sweep(s: &[f64], y: &[bool]) -> Vec<(f64, f64, f64)> {
    let mut ts: Vec<f64> = s.to_vec();
    ts.sort_by(|a, b| b.total_cmp(a));
    ts.dedup();
    let pos = y.iter().filter(|&&v| v).count();
    ts.into_iter()
        .map(|t| {
            let tp = s.iter().zip(y).filter(|(x, &l)| **x >= t && l).count();
            let flagged = s.iter().filter(|x| **x >= t).count();
            (t, tp as f64 / flagged as f64, tp as f64 / pos as f64)
        })
        .collect()
}

fn metric_oracles() -> Outcome {
    let mut rng = seeded(2024);
    let mut worst_auc = 0.0f64;
    let mut curve_mismatch = 0;
    for k in 0..1000 {
        // Coarse scores on half the instances force ties.
        let levels = if k % 2 == 0 { 7 } else { 1 << 20 };
        let s: Vec<f64> = (0..50).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let mut y: Vec<bool> = (0..50).map(|_| rng.random_bool(0.3)).collect();
        y[0] = true;
        y[1] = false;
        worst_auc = worst_auc.max((auc(&s, &y).unwrap() - brute_auc(&s, &y)).abs());
        let want = sweep(&s, &y);
        let got: Vec<(f64, f64, f64)> =
            pr_curve(&s, &y).unwrap().iter().map(|p| (p.threshold, p.precision, p.recall)).collect();
        if got != want {
            curve_mismatch += 1;
        }
        for target in [0.5, 0.8, 0.9, 1.0] {
            let best = want.iter().filter(|p| p.1 >= target).map(|p| p.2).fold(0.0, f64::max);
            if recall_at_precision(&s, &y, target).unwrap() != best {
                curve_mismatch += 1;
            }
        }
    }
    let mut de_ok = true;
    for (tp, fp, fn_) in [(10usize, 0usize, 5usize), (30, 25, 20), (0, 10, 10), (7, 3, 0), (1, 1000, 1)] {
        let hand = (fp + tp + fn_) as f64 / (tp + fn_) as f64;
        de_ok &= detection_expansion(tp, fp, fn_).unwrap() == hand;
    }
    de_ok &= (1..30).all(|tp| (0..30).all(|fn_| tp + fn_ == 0 || detection_expansion(tp, 0, fn_).unwrap() == 1.0));
    let hand_psi = |r: &[f64], c: &[f64], eps: f64| {
        let rs: f64 = r.iter().map(|x| x + eps).sum();
        let cs: f64 = c.iter().map(|x| x + eps).sum();
        r.iter()
            .zip(c)
            .map(|(r, c)| {
                let (r, c) = ((r + eps) / rs, (c + eps) / cs);
                (c - r) * (c / r).ln()
            })
            .sum::<f64>()
    };
    let two_bin = psi_from_fractions(&[0.5, 0.5], &[0.9, 0.1], 1e-4).unwrap();
    let mut psi_ok =
        (two_bin - 0.8789).abs() < 1e-3 && (two_bin - hand_psi(&[0.5, 0.5], &[0.9, 0.1], 1e-4)).abs() < 1e-12;
    let skewed = psi_from_fractions(&[1.0, 0.0], &[0.5, 0.5], 1e-4).unwrap();
    psi_ok &= skewed.is_finite() && skewed > 0.0 && (skewed - hand_psi(&[1.0, 0.0], &[0.5, 0.5], 1e-4)).abs() < 1e-12;
    let mut worst_self_psi = 0.0f64;
    for _ in 0..50 {
        let a: Vec<f64> = (0..200).map(|_| StandardNormal.sample(&mut rng)).collect();
        let b: Vec<f64> = a.iter().map(|x: &f64| x * 1.5 + 0.3).collect();
        worst_self_psi = worst_self_psi.max(psi(&a, &a, 10).unwrap().psi.abs());
        let e = psi(&a, &b, 10).unwrap();
        // Entries report smoothed fractions, so the formula applies with eps 0.
        psi_ok &= (e.psi - hand_psi(&e.ref_fracs, &e.cur_fracs, 0.0)).abs() < 1e-12;
    }
    psi_ok &= worst_self_psi <= 1e-9;
    Outcome::new(
        worst_auc <= 1e-12 && curve_mismatch == 0 && de_ok && psi_ok,
        format!(
            "max |auc - brute| {worst_auc:.1e}, curve/recall mismatches {curve_mismatch}, DE ok {de_ok}, PSI ok {psi_ok} (max psi(a,a) {worst_self_psi:.1e})"
        ),
    )
}

// -------------------------------------------------------------- gradients

/// Fourth-order central differences.
fn numeric_gradient(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let h = 1e-3;
    let mut w = x.to_vec();
    (0..x.len())
        .map(|i| {
            let mut at = |d: f64| {
                w[i] = x[i] + d;
                let v = f(&w);
                w[i] = x[i];
                v
            };
            (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h)
        })
        .collect()
}

fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic.iter().zip(numeric).map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-8)).fold(0.0, f64::max)
}

fn normal_vec(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * Distribution::<f64>::sample(&StandardNormal, rng)).collect()
}

fn sgns_error(seed: u64) -> f64 {
    let mut rng = seeded(seed);
    let (d, k) = (4, 3);
    let f = normal_vec(&mut rng, d, 0.7);
    let pos = normal_vec(&mut rng, d, 0.7);
    let negs: Vec<Vec<f64>> = (0..k).map(|_| normal_vec(&mut rng, d, 0.7)).collect();
    let g = pair_gradient(&f, &pos, &negs.iter().map(Vec::as_slice).collect::<Vec<_>>());
    let mut x = [f.clone(), pos.clone()].concat();
    negs.iter().for_each(|v| x.extend(v));
    let numeric = numeric_gradient(&x, |w| {
        let negs: Vec<&[f64]> = (0..k).map(|j| &w[(2 + j) * d..(3 + j) * d]).collect();
        pair_loss(&w[..d], &w[d..2 * d], &negs)
    });
    let mut analytic = [g.f, g.positive].concat();
    g.negatives.iter().for_each(|v| analytic.extend(v));
    relative_error(&analytic, &numeric)
}

fn dae_error(seed: u64) -> f64 {
    let mut rng = seeded(seed);
    let m = DaeModel::new(5, 3, 0.3, seed);
    let clean = Array1::from(normal_vec(&mut rng, 5, 1.0));
    let mut corrupted = clean.clone();
    corrupted[seed as usize % 5] = 0.0;
    let (_, g) = m.loss_and_gradient(clean.view(), corrupted.view());
    let mut probe = m.clone();
    let numeric = numeric_gradient(&m.weights.flat(), |w| {
        probe.weights.assign_flat(w);
        probe.loss(clean.view(), corrupted.view())
    });
    relative_error(&g.flat(), &numeric)
}

fn small_graph(seed: u64) -> TypedGraph {
    let mut rng = seeded(seed);
    let mut b = GraphBuilder::new(GraphKind::Friendship);
    let n = 7;
    for i in 0..n {
        b.add_edge(&format!("n{i}"), &format!("n{}", (i + 1) % n), EdgeType::Friendship, 1.0).unwrap();
    }
    for _ in 0..4 {
        let (u, v) = (rng.random_range(0..n), rng.random_range(0..n));
        if u != v {
            b.add_edge(&format!("n{u}"), &format!("n{v}"), EdgeType::Friendship, 1.0).unwrap();
        }
    }
    b.finish()
}

fn gnn_error(seed: u64, aggregator: Aggregator) -> f64 {
    let g = small_graph(seed);
    let mut rng = seeded(seed + 1000);
    let x = Array2::from_shape_vec((7, 3), normal_vec(&mut rng, 21, 1.0)).unwrap();
    let table = DenseTable::with_prefix(g.ids().to_vec(), "x", x).unwrap();
    let ts = TrainingSet {
        positives: vec!["n0".to_string(), "n3".to_string()],
        negatives: vec!["n1".to_string(), "n5".to_string(), "n6".to_string()],
        sample_rate: 1.0,
        seed: 0,
    };
    let cfg = GnnConfig { aggregator, layers: 2, hidden_dim: 4, attention_dim: Some(3), seed, ..Default::default() };
    let mut model = GnnModel::new(table.names().to_vec(), &cfg).unwrap();
    // Move away from the zero-bias point so the head bias gradient is generic.
    model.bias = 0.2;
    let problem = GnnProblem::new(&g, &table, Some(&ts)).unwrap();
    let (_, grad) = problem.loss_and_gradient(&model).unwrap();
    let mut probe = model.clone();
    let numeric = numeric_gradient(&model.flat(), |w| {
        probe.assign_flat(w);
        problem.loss(&probe).unwrap()
    });
    relative_error(&grad.flat(), &numeric)
}

fn distrep_error(seed: u64) -> f64 {
    let cfg = DistRepConfig { hidden: vec![5, 3], attr_dim: 3, dropout: 0.3, seed, ..Default::default() };
    let m = DistRepModel::new(4, vec!["a".into(), "b".into()], &cfg).unwrap();
    let mut rng = seeded(seed + 77);
    let (eu, ev) = (Array1::from(normal_vec(&mut rng, 4, 1.0)), Array1::from(normal_vec(&mut rng, 4, 1.0)));
    let (fu, fv) = (Array1::from(normal_vec(&mut rng, 2, 1.0)), Array1::from(normal_vec(&mut rng, 2, 1.0)));
    let x = EdgeInput { emb_u: eu.view(), emb_v: ev.view(), feat_u: fu.view(), feat_v: fv.view() };
    let masks = DropoutMasks::draw(&mut rng, 4, 0.3);
    let y = seed % 2 == 1;
    let (_, g) = m.gradient_with_masks(&x, &masks, y);
    let mut probe = m.clone();
    let numeric = numeric_gradient(&m.flat(), |w| {
        probe.assign_flat(w);
        probe.loss_with_masks(&x, &masks, y)
    });
    relative_error(&g.flat(), &numeric)
}

fn gradients() -> Outcome {
    let seeds = 0..20u64;
    let worst = |f: &dyn Fn(u64) -> f64| seeds.clone().map(f).fold(0.0, f64::max);
    let results = [
        ("sgns", worst(&sgns_error)),
        ("dae", worst(&dae_error)),
        ("gnn-sum", worst(&|s| gnn_error(s, Aggregator::Sum))),
        ("gnn-geniepath", worst(&|s| gnn_error(s, Aggregator::GeniePathBreadth))),
        ("distrep", worst(&distrep_error)),
    ];
    let pass = results.iter().all(|r| r.1 <= 1e-4);
    let detail = results.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    Outcome::new(pass, format!("max relative error over 20 instances: {detail}"))
}

// -------------------------------------------------------------------- eta

fn eta_direction() -> Outcome {
    let data = generate(&SynthConfig { label_flip_rate: 0.0, seed: 11, ..Default::default() }).unwrap();
    let eta = label_aggregation_eta(&data.graph, &data.labels, 2).unwrap().eta;
    let mut entries: Vec<(String, Label)> = data.labels.iter().map(|(k, l)| (k.to_string(), l)).collect();
    let mut shuffled: Vec<Label> = entries.iter().map(|e| e.1).collect();
    shuffled.shuffle(&mut seeded(12));
    for (e, l) in entries.iter_mut().zip(shuffled) {
        e.1 = l;
    }
    let permuted: LabelTable = entries.into_iter().collect();
    let eta_perm = label_aggregation_eta(&data.graph, &permuted, 2).unwrap().eta;
    let base = data.labels.count(Label::HighRisk) as f64 / data.labels.len() as f64;
    Outcome::new(
        eta >= 0.6 && eta_perm <= base + 0.05,
        format!("eta {eta:.4} (need >= 0.6), permuted eta {eta_perm:.4} (need <= {:.4})", base + 0.05),
    )
}

// ------------------------------------------------------------- embeddings

fn embedding_separation() -> Outcome {
    let (graph, blocks) = planted_partition(1000, 2, 8.0, 0.5, 5).unwrap();
    let emb = deepwalk(&graph, &DeepWalkConfig { dim: 32, seed: 6, ..Default::default() }).unwrap().embeddings;
    let keyed: Vec<(String, bool)> = graph.ids().iter().cloned().zip(blocks.iter().map(|&b| b == 1)).collect();
    let split = stratified_split(&keyed, 0.2, 7).unwrap();
    let block_of = |ids: &[String]| -> Vec<bool> {
        ids.iter().map(|id| blocks[graph.require(id).unwrap() as usize] == 1).collect()
    };
    let cfg = GbdtConfig { n_trees: 100, lr: 0.1, ..Default::default() };
    let forest = gbdt_train(&emb.select(&split.train).unwrap(), &block_of(&split.train), &cfg).unwrap();
    let scores = gbdt_predict(&forest, &emb.select(&split.test).unwrap()).unwrap();
    let a = auc(&scores, &block_of(&split.test)).unwrap();
    Outcome::new(a >= 0.95, format!("gbdt probe test AUC {a:.4} on block membership (need >= 0.95)"))
}

// ------------------------------------------------------- pipeline studies

/// Fraud-ring dataset whose raw features carry only a weak signal.
fn weak_signal_synth(seed: u64) -> SynthConfig {
    SynthConfig { n_accounts: 2000, n_rings: 8, ring_size: 15, fraud_feature_shift: 0.2, seed, ..Default::default() }
}

fn dataset_config(dir: &Path, synth: &SynthConfig) -> PipelineConfig {
    let data = generate(synth).unwrap();
    let files = data.write_to(dir).unwrap();
    PipelineConfig {
        inputs: InputPaths {
            nodes: Some(files.nodes),
            edges: files.edges,
            features: Some(files.features),
            labels: Some(files.labels),
            eval_labels: Some(files.ground_truth),
            edge_labels: files.edge_labels,
        },
        graph_kind: synth.motif.graph_kind(),
        stages: StageToggles { eta: false, structural: false, dae: false, deepwalk: false, ..Default::default() },
        ..Default::default()
    }
    .with_seed(synth.seed)
}

fn test_auc(cfg: &PipelineConfig, out: &Path) -> f64 {
    run_pipeline(cfg, out, Stage::Evaluate).unwrap().metrics.unwrap().auc
}

fn graph_signal_lift() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut pass = true;
    let mut rows = Vec::new();
    for seed in 1..=3 {
        let dir = tmp.path().join(format!("s{seed}"));
        let raw = dataset_config(&dir.join("data"), &weak_signal_synth(seed));
        let mut gnn = raw.clone();
        gnn.stages.gbdt = false;
        gnn.stages.gnn = true;
        let (a_raw, a_gnn) = (test_auc(&raw, &dir.join("raw")), test_auc(&gnn, &dir.join("gnn")));
        pass &= a_raw <= 0.85 && a_gnn - a_raw >= 0.05;
        rows.push(format!("seed {seed}: raw gbdt {a_raw:.4}, gnn {a_gnn:.4}"));
    }
    Outcome::new(pass, format!("{} (need raw <= 0.85 and lift >= 0.05)", rows.join("; ")))
}

fn augmentation() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut lifts = Vec::new();
    let mut no_harm = true;
    let mut rows = Vec::new();
    for seed in 1..=5 {
        let dir = tmp.path().join(format!("s{seed}"));
        let raw = dataset_config(&dir.join("data"), &weak_signal_synth(seed));
        let mut dw = raw.clone();
        dw.stages.deepwalk = true;
        let (a_raw, a_dw) = (test_auc(&raw, &dir.join("raw")), test_auc(&dw, &dir.join("dw")));
        no_harm &= a_dw >= a_raw - 0.01;
        lifts.push(a_dw - a_raw);
        rows.push(format!("{a_raw:.3}->{a_dw:.3}"));
    }
    lifts.sort_by(f64::total_cmp);
    let median = lifts[2];
    Outcome::new(
        no_harm && median >= 0.02,
        format!(
            "gbdt raw->raw+DW AUC per seed [{}], median lift {median:.4} (need no-harm and >= 0.02)",
            rows.join(", ")
        ),
    )
}

fn collusion() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let synth = SynthConfig {
        n_accounts: 2000,
        n_rings: 5,
        ring_size: 10,
        motif: Motif::BuyerSellerCollusion,
        seed: 21,
        ..Default::default()
    };
    let mut cfg = dataset_config(&tmp.path().join("data"), &synth);
    cfg.stages =
        StageToggles { eta: false, structural: false, dae: false, gbdt: false, distrep: true, ..Default::default() };
    cfg.eval.target_precisions = vec![0.8];
    let m = run_pipeline(&cfg, &tmp.path().join("run"), Stage::Evaluate).unwrap().metrics.unwrap();
    let recall = m.recall_at_precision[0].recall;
    Outcome::new(
        recall >= 0.8,
        format!(
            "held-out edges: recall {recall:.4} at precision >= 0.8 ({} fraud / {} regular)",
            m.positives, m.negatives
        ),
    )
}

// ---------------------------------------------------------- preprocessing

/// Accounts in sharing groups, plus `isolates` accounts without edges and
/// `loners` accounts whose devices nobody else uses.
fn planted_isolation(seed: u64, isolates: usize, loners: usize) -> (TypedGraph, BTreeSet<String>, BTreeSet<String>) {
    let mut rng = seeded(seed);
    let mut b = GraphBuilder::new(GraphKind::DeviceSharing);
    let mut next = 0;
    for d in 0..40 {
        let size = rng.random_range(2..=4);
        for _ in 0..size {
            b.add_edge(&format!("a{next:04}"), &format!("shared{d}"), EdgeType::DeviceUse, 1.0).unwrap();
            // Some sharing accounts also own a private device.
            if rng.random_bool(0.3) {
                b.add_edge(&format!("a{next:04}"), &format!("own{next}"), EdgeType::DeviceUse, 1.0).unwrap();
            }
            next += 1;
        }
    }
    let mut zero = BTreeSet::new();
    for i in 0..isolates {
        let id = format!("iso{i:03}");
        b.add_node(&id, NodeType::Account).unwrap();
        zero.insert(id);
    }
    let mut lonely = zero.clone();
    for i in 0..loners {
        let id = format!("lone{i:03}");
        for k in 0..rng.random_range(1..=3) {
            let dev = format!("lonedev{i}_{k}");
            b.add_edge(&id, &dev, EdgeType::DeviceUse, 1.0).unwrap();
            lonely.insert(dev);
        }
        lonely.insert(id);
    }
    (b.finish(), zero, lonely)
}

fn removed(before: &TypedGraph, after: &TypedGraph) -> BTreeSet<String> {
    let kept: BTreeSet<&String> = after.ids().iter().collect();
    before.ids().iter().filter(|id| !kept.contains(id)).cloned().collect()
}

fn private_devices(g: &TypedGraph) -> BTreeSet<String> {
    (0..g.node_count() as u32)
        .filter(|&v| g.node_type(v) == NodeType::Device && g.node_id(v).starts_with("own"))
        .map(|v| g.node_id(v).to_string())
        .collect()
}

fn preprocessing() -> Outcome {
    let mut failures = Vec::new();
    for seed in 0..10 {
        let (k_iso, k_lone) = (seed as usize + 1, 2 * seed as usize + 3);
        let (g, zero, lonely) = planted_isolation(seed, k_iso, k_lone);
        let z = g.remove_isolated(IsolationPolicy::ZeroDegree).unwrap();
        if removed(&g, &z) != zero {
            failures.push(format!("seed {seed}: zero-degree removal differs"));
        }
        let s = g.remove_isolated(IsolationPolicy::NoSharedDevice).unwrap();
        // Private devices of sharing accounts go too: no other account uses them.
        let mut want = lonely.clone();
        want.extend(private_devices(&g));
        if removed(&g, &s) != want {
            failures.push(format!("seed {seed}: no-shared-device removal differs"));
        }
        if z.remove_isolated(IsolationPolicy::ZeroDegree).unwrap() != z
            || s.remove_isolated(IsolationPolicy::NoSharedDevice).unwrap() != s
        {
            failures.push(format!("seed {seed}: not idempotent"));
        }
    }
    let pass = failures.is_empty();
    let detail = if pass {
        "10 planted graphs: exact removal sets under both policies, idempotent".to_string()
    } else {
        failures.join("; ")
    };
    Outcome::new(pass, detail)
}

// ------------------------------------------------------------ determinism

fn determinism() -> Outcome {
    let mut checks: Vec<(&str, bool)> = Vec::new();
    for motif in [Motif::DeviceHub, Motif::TransactionHub, Motif::BuyerSellerCollusion] {
        let cfg = SynthConfig { n_accounts: 1500, n_rings: 4, ring_size: 10, motif, seed: 3, ..Default::default() };
        checks.push(("generate", generate(&cfg).unwrap() == generate(&cfg).unwrap()));
    }
    let data = generate(&weak_signal_synth(4)).unwrap();
    let dw_cfg = DeepWalkConfig { walks_per_node: 4, walk_length: 20, seed: 9, ..Default::default() };
    let g = data.graph.remove_isolated(IsolationPolicy::ZeroDegree).unwrap();
    checks.push(("deepwalk", deepwalk(&g, &dw_cfg).unwrap() == deepwalk(&g, &dw_cfg).unwrap()));
    let dae_cfg = DaeConfig { epochs: 3, seed: 2, ..Default::default() };
    checks.push(("dae", dae_train(&data.features, &dae_cfg).unwrap() == dae_train(&data.features, &dae_cfg).unwrap()));
    let ts = sample_training_set(&data.labels, 0.25, 5).unwrap();
    checks.push(("sample", ts == sample_training_set(&data.labels, 0.25, 5).unwrap()));
    let mut ids: Vec<(String, bool)> = ts.examples().map(|(k, y)| (k.clone(), y)).collect();
    ids.sort();
    let (ids, y): (Vec<String>, Vec<bool>) = ids.into_iter().unzip();
    let x = data.features.select(&ids).unwrap();
    let gb = GbdtConfig { n_trees: 30, seed: 8, ..Default::default() };
    checks.push((
        "gbdt",
        gbdt_train(&x, &y, &gb).unwrap().to_json().unwrap() == gbdt_train(&x, &y, &gb).unwrap().to_json().unwrap(),
    ));
    let gc = GnnConfig { epochs: 5, seed: 1, ..Default::default() };
    let gnn = || gnn_train(&data.graph, &data.features, &ts, &gc).unwrap().to_json().unwrap();
    checks.push(("gnn", gnn() == gnn()));

    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = dataset_config(&tmp.path().join("data"), &weak_signal_synth(4));
    cfg.stages = StageToggles::default();
    cfg.deepwalk.walks_per_node = 4;
    cfg.dae.epochs = 3;
    cfg.gbdt.n_trees = 50;
    let a = run_pipeline(&cfg, &tmp.path().join("a"), Stage::Evaluate).unwrap();
    let b = run_pipeline(&cfg, &tmp.path().join("b"), Stage::Evaluate).unwrap();
    checks.push(("manifest", a.manifest == b.manifest && Manifest::read(&a.out_dir).unwrap() == a.manifest));
    let again = fraudgraph_core::pipeline::evaluate_scores_file(&a.out_dir.join("scores.tsv"), &cfg.eval).unwrap();
    checks.push(("re-evaluate", Some(again) == a.metrics));
    let bad: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    Outcome::new(
        bad.is_empty(),
        if bad.is_empty() {
            format!(
                "{} repeated operations bit-identical, {} manifest artifacts match",
                checks.len(),
                a.manifest.artifacts.len()
            )
        } else {
            format!("differs: {}", bad.join(", "))
        },
    )
}

// --------------------------------------------------------------- capacity

const CAPACITY_SECS: u64 = 30 * 60;
const CAPACITY_KB: u64 = 8 * 1024 * 1024;

fn peak_rss_kb() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    status.lines().find(|l| l.starts_with("VmHWM:"))?.split_whitespace().nth(1)?.parse().ok()
}

/// Runs in a fresh process so the peak resident size covers only this run.
fn capacity_child() {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let synth = SynthConfig { n_accounts: 1_000_000, seed: 31, ..Default::default() };
    let mut cfg = dataset_config(&tmp.path().join("data"), &synth);
    cfg.preprocess = Some(IsolationPolicy::NoSharedDevice);
    cfg.stages = StageToggles { eta: true, structural: false, dae: false, deepwalk: true, ..Default::default() };
    cfg.deepwalk = DeepWalkConfig {
        walks_per_node: 10,
        walk_length: 40,
        dim: 32,
        epochs: 1,
        seed: cfg.deepwalk.seed,
        ..Default::default()
    };
    cfg.gbdt.n_trees = 50;
    let report = run_pipeline(&cfg, &tmp.path().join("run"), Stage::Evaluate).unwrap();
    let auc = report.metrics.map_or(f64::NAN, |m| m.auc);
    println!("capacity {} {} {auc}", start.elapsed().as_secs_f64(), peak_rss_kb().unwrap_or(u64::MAX));
}

fn capacity() -> Outcome {
    let out = Command::new(std::env::current_exe().unwrap()).env(CAPACITY_CHILD, "1").output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    let Some(line) = stdout.lines().find(|l| l.starts_with("capacity ")) else {
        return Outcome::new(
            false,
            format!("child failed: {}", String::from_utf8_lossy(&out.stderr).lines().last().unwrap_or("")),
        );
    };
    let f: Vec<&str> = line.split_whitespace().collect();
    let (secs, kb, auc): (f64, u64, f64) = (f[1].parse().unwrap(), f[2].parse().unwrap(), f[3].parse().unwrap());
    Outcome::new(
        secs < CAPACITY_SECS as f64 && kb < CAPACITY_KB,
        format!(
            "1M-account DeviceHub through DeepWalk and gbdt: {:.1} min, peak RSS {:.2} GB, test AUC {auc:.4} (need < 30 min, < 8 GB)",
            secs / 60.0,
            kb as f64 / 1048576.0
        ),
    )
}
