use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fraudgraph_core::eval::EvalConfig;
use fraudgraph_core::pipeline::{
    evaluate_scores_file, run_pipeline, InputPaths, Manifest, PipelineConfig, Stage, StageToggles, METRICS_FILE,
    SCORES_FILE,
};
use fraudgraph_core::synth::{generate, Motif, SynthConfig};

#[derive(Parser)]
#[command(name = "fraudgraph", version, about = "Graph-based fraud detection pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and a pipeline config for it.
    Synthgen(Common),
    /// Load the graph and inputs.
    BuildGraph(Common),
    /// Run through isolated-node removal.
    Preprocess(Common),
    /// Run through label aggregation and structural features.
    GraphStats(Common),
    /// Run through feature transforms and concatenation.
    Featurize(Common),
    /// Run through DeepWalk embeddings.
    Deepwalk(Common),
    /// Run through classifier training.
    Train(Common),
    /// Run through scoring of the held-out split.
    Predict(Common),
    /// Recompute metrics from the scores in an existing run directory.
    Evaluate(Common),
    /// Run the full pipeline.
    Run(Common),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (stage, result) = dispatch(cli.command);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Core errors already include their causes and pipeline stage
            // errors carry their own tag.
            if matches!(e.downcast_ref(), Some(fraudgraph_core::Error::Stage { .. })) {
                eprintln!("error: {e}");
            } else {
                eprintln!("error: stage `{stage}` failed: {e}");
            }
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> (&'static str, anyhow::Result<()>) {
    match command {
        Command::Synthgen(c) => ("synthgen", synthgen(&c)),
        Command::Evaluate(c) => ("evaluate", reevaluate(&c)),
        Command::BuildGraph(c) => ("config", run(&c, Stage::Build)),
        Command::Preprocess(c) => ("config", run(&c, Stage::Preprocess)),
        Command::GraphStats(c) => ("config", run(&c, Stage::GraphStats)),
        Command::Featurize(c) => ("config", run(&c, Stage::Concat)),
        Command::Deepwalk(c) => ("config", run(&c, Stage::Deepwalk)),
        Command::Train(c) => ("config", run(&c, Stage::Train)),
        Command::Predict(c) => ("config", run(&c, Stage::Predict)),
        Command::Run(c) => ("config", run(&c, Stage::Evaluate)),
    }
}

fn load_pipeline_config(c: &Common) -> anyhow::Result<PipelineConfig> {
    let cfg = match &c.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let seed = c.seed.unwrap_or(cfg.seed);
    Ok(cfg.with_seed(seed))
}

fn run(c: &Common, until: Stage) -> anyhow::Result<()> {
    let cfg = load_pipeline_config(c)?;
    let report = run_pipeline(&cfg, &c.out, until)?;
    if let Some(m) = &report.metrics {
        println!("auc\t{}", m.auc);
        for r in &m.recall_at_precision {
            println!("recall@precision {}\t{}", r.precision, r.recall);
        }
        println!("best_f1\t{}", m.best_f1);
        println!("detection_expansion\t{}", m.detection_expansion);
    }
    println!("manifest\t{}", c.out.join(fraudgraph_core::pipeline::MANIFEST_FILE).display());
    Ok(())
}

fn reevaluate(c: &Common) -> anyhow::Result<()> {
    let eval = match &c.config {
        Some(p) => PipelineConfig::load(p)?.eval,
        None => EvalConfig::default(),
    };
    let metrics = evaluate_scores_file(&c.out.join(SCORES_FILE), &eval)?;
    let path = c.out.join(METRICS_FILE);
    metrics.write_json(BufWriter::new(File::create(&path)?))?;
    println!("auc\t{}", metrics.auc);
    if let Ok(manifest) = Manifest::read(&c.out) {
        let recorded = manifest.artifacts.iter().find(|a| a.path == METRICS_FILE).and_then(|a| a.sha256.clone());
        let now = fraudgraph_core::pipeline::file_sha256(&path)?;
        println!("matches_manifest\t{}", recorded.as_deref() == Some(now.as_str()));
    }
    Ok(())
}

fn synthgen(c: &Common) -> anyhow::Result<()> {
    let mut cfg: SynthConfig = match &c.config {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => SynthConfig::default(),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    let data = generate(&cfg)?;
    let files = data.write_to(&c.out)?;
    let pipeline = pipeline_template(&cfg, files.edge_labels.is_some());
    let path = c.out.join("pipeline.json");
    serde_json::to_writer_pretty(BufWriter::new(File::create(&path)?), &pipeline)?;
    println!("nodes\t{}", data.graph.node_count());
    println!("edges\t{}", data.graph.edge_count());
    println!("pipeline_config\t{}", path.display());
    Ok(())
}

/// A pipeline config for a generated dataset, with paths relative to it.
fn pipeline_template(cfg: &SynthConfig, has_edge_labels: bool) -> PipelineConfig {
    let rel = |s: &str| Path::new(s).to_path_buf();
    let collusion = cfg.motif == Motif::BuyerSellerCollusion;
    PipelineConfig {
        inputs: InputPaths {
            nodes: Some(rel("nodes.tsv")),
            edges: rel("edges.tsv"),
            features: Some(rel("features.csv")),
            labels: Some(rel("labels.tsv")),
            eval_labels: Some(rel("ground_truth.tsv")),
            edge_labels: has_edge_labels.then(|| rel("edge_labels.tsv")),
        },
        graph_kind: cfg.motif.graph_kind(),
        stages: StageToggles { gbdt: !collusion, distrep: collusion, ..Default::default() },
        seed: cfg.seed,
        ..Default::default()
    }
}
