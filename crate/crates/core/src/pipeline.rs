//! End-to-end orchestration: graph, preprocessing, graph statistics, feature
//! learning, one classifier head, and evaluation, with every artifact
//! checksummed in a manifest.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::deepwalk::{deepwalk, DeepWalkConfig};
use crate::distrep::{distrep_score, distrep_train, read_labeled_edges, DistRepConfig, DistRepModel, LabeledEdge};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalConfig, MetricsBundle};
use crate::features::{
    dae_encode, dae_train, fit_transform_basic, ColumnData, DaeConfig, DenseTable, FeatureTable, TransformConfig,
};
use crate::gbdt::{gbdt_predict, gbdt_train, BoostedForest, GbdtConfig};
use crate::gnn::{gnn_predict, gnn_train, GnnConfig, GnnModel};
use crate::graph::{GraphKind, IsolationPolicy, NodeType, TypedGraph};
use crate::graph_stats::{label_aggregation_eta, structural_features, DEFAULT_ECCENTRICITY_CAP};
use crate::labels::{Label, LabelTable};
use crate::nn::seeded;
use crate::sampling::{sample_keys, DEFAULT_SAMPLE_RATE};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SCORES_FILE: &str = "scores.tsv";
pub const METRICS_FILE: &str = "metrics.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Build,
    Preprocess,
    GraphStats,
    Featurize,
    Deepwalk,
    Concat,
    Split,
    Train,
    Predict,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::Build,
        Stage::Preprocess,
        Stage::GraphStats,
        Stage::Featurize,
        Stage::Deepwalk,
        Stage::Concat,
        Stage::Split,
        Stage::Train,
        Stage::Predict,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Build => "build",
            Stage::Preprocess => "preprocess",
            Stage::GraphStats => "graph-stats",
            Stage::Featurize => "featurize",
            Stage::Deepwalk => "deepwalk",
            Stage::Concat => "concat",
            Stage::Split => "split",
            Stage::Train => "train",
            Stage::Predict => "predict",
            Stage::Evaluate => "evaluate",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputPaths {
    #[serde(default)]
    pub nodes: Option<PathBuf>,
    pub edges: PathBuf,
    #[serde(default)]
    pub features: Option<PathBuf>,
    /// Observed node labels; required by node heads.
    #[serde(default)]
    pub labels: Option<PathBuf>,
    /// Labels to score test nodes against; `labels` when absent.
    #[serde(default)]
    pub eval_labels: Option<PathBuf>,
    /// Labeled buyer-seller edges; required by the distrep head.
    #[serde(default)]
    pub edge_labels: Option<PathBuf>,
}

impl InputPaths {
    /// Makes relative paths relative to `base`.
    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.edges);
        for p in [&mut self.nodes, &mut self.features, &mut self.labels, &mut self.eval_labels, &mut self.edge_labels]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageToggles {
    pub eta: bool,
    pub structural: bool,
    pub dae: bool,
    pub deepwalk: bool,
    pub gnn: bool,
    pub distrep: bool,
    pub gbdt: bool,
    pub evaluate: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        Self {
            eta: true,
            structural: true,
            dae: true,
            deepwalk: true,
            gnn: false,
            distrep: false,
            gbdt: true,
            evaluate: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Gbdt,
    Gnn,
    Distrep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum SplitConfig {
    /// Seeded per-class holdout.
    Stratified { test_fraction: f64 },
    /// The latest `test_fraction` of labeled rows by a numeric feature
    /// column, which is then dropped from the features.
    Time { column: String, test_fraction: f64 },
}

impl SplitConfig {
    pub fn test_fraction(&self) -> f64 {
        match self {
            SplitConfig::Stratified { test_fraction } | SplitConfig::Time { test_fraction, .. } => *test_fraction,
        }
    }
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig::Stratified { test_fraction: 0.2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub inputs: InputPaths,
    pub graph_kind: GraphKind,
    /// `null` skips preprocessing; DeepWalk then requires a graph without
    /// zero-degree nodes.
    pub preprocess: Option<IsolationPolicy>,
    pub stages: StageToggles,
    pub transform: TransformConfig,
    pub eta_max_hop: usize,
    pub eccentricity_cap: usize,
    pub dae: DaeConfig,
    pub deepwalk: DeepWalkConfig,
    pub gnn: GnnConfig,
    pub distrep: DistRepConfig,
    pub gbdt: GbdtConfig,
    pub eval: EvalConfig,
    pub sample_rate: f64,
    pub split: SplitConfig,
    /// Stage seeds are derived from this and override the stage sections.
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            inputs: InputPaths::default(),
            graph_kind: GraphKind::DeviceSharing,
            preprocess: Some(IsolationPolicy::ZeroDegree),
            stages: StageToggles::default(),
            transform: TransformConfig::default(),
            eta_max_hop: 2,
            eccentricity_cap: DEFAULT_ECCENTRICITY_CAP,
            dae: DaeConfig::default(),
            deepwalk: DeepWalkConfig::default(),
            gnn: GnnConfig::default(),
            distrep: DistRepConfig::default(),
            gbdt: GbdtConfig::default(),
            eval: EvalConfig::default(),
            sample_rate: DEFAULT_SAMPLE_RATE,
            split: SplitConfig::default(),
            seed: 0,
        }
    }
}

fn derive_seed(seed: u64, salt: u64) -> u64 {
    seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Reads a config file, resolving input paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_json(&std::fs::read_to_string(path)?)?;
        cfg.inputs.resolve(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Copies derived seeds into every stage section.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.dae.seed = derive_seed(seed, 1);
        self.deepwalk.seed = derive_seed(seed, 2);
        self.gnn.seed = derive_seed(seed, 3);
        self.distrep.seed = derive_seed(seed, 4);
        self.gbdt.seed = derive_seed(seed, 5);
        self
    }

    fn split_seed(&self) -> u64 {
        derive_seed(self.seed, 6)
    }

    fn sample_seed(&self) -> u64 {
        derive_seed(self.seed, 7)
    }

    /// The single enabled classifier head.
    pub fn head(&self) -> Result<Head> {
        let s = &self.stages;
        match (s.gbdt, s.gnn, s.distrep) {
            (true, false, false) => Ok(Head::Gbdt),
            (false, true, false) => Ok(Head::Gnn),
            (false, false, true) => Ok(Head::Distrep),
            _ => Err(Error::usage("exactly one classifier head (gnn, distrep, gbdt) must be enabled")),
        }
    }

    /// Checks everything that can be checked before any stage runs.
    pub fn validate(&self) -> Result<()> {
        let head = self.head()?;
        let frac = self.split.test_fraction();
        if !(frac > 0.0 && frac < 1.0) {
            return Err(Error::usage("test_fraction must be in (0, 1)"));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate <= 1.0) {
            return Err(Error::usage("sample_rate must be in (0, 1]"));
        }
        if self.eccentricity_cap == 0 {
            return Err(Error::usage("eccentricity_cap must be positive"));
        }
        let i = &self.inputs;
        if i.edges.as_os_str().is_empty() {
            return Err(Error::usage("inputs.edges is required"));
        }
        match head {
            Head::Gbdt | Head::Gnn if i.labels.is_none() => {
                return Err(Error::usage("node heads need inputs.labels"));
            }
            Head::Distrep if i.edge_labels.is_none() => {
                return Err(Error::usage("the distrep head needs inputs.edge_labels"));
            }
            Head::Distrep if !self.stages.deepwalk => {
                return Err(Error::usage("the distrep head needs deepwalk embeddings"));
            }
            _ => {}
        }
        if matches!(self.split, SplitConfig::Time { .. }) && (i.features.is_none() || head == Head::Distrep) {
            return Err(Error::usage("a time split needs node features and a node head"));
        }
        let paths = [
            Some(&i.edges),
            i.nodes.as_ref(),
            i.features.as_ref(),
            i.labels.as_ref(),
            i.eval_labels.as_ref(),
            i.edge_labels.as_ref(),
        ];
        for p in paths.into_iter().flatten() {
            if !p.is_file() {
                return Err(Error::usage(format!("input file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        Ok(hex(&Sha256::digest(serde_json::to_vec(self)?)))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let mut f = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex(&hasher.finalize()))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    /// Relative to the output directory.
    pub path: String,
    pub stage: Stage,
    pub sha256: Option<String>,
    /// False for files left behind by a failed stage.
    pub valid: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state")]
pub enum RunStatus {
    Complete { through: Stage },
    Failed { stage: Stage, error: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub status: RunStatus,
    pub completed_stages: Vec<Stage>,
    pub artifacts: Vec<ArtifactRecord>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(BufReader::new(File::open(dir.join(MANIFEST_FILE))?))?)
    }

    /// Artifact checksums keyed by path, for comparing runs.
    pub fn checksums(&self) -> BTreeMap<&str, Option<&str>> {
        self.artifacts.iter().map(|a| (a.path.as_str(), a.sha256.as_deref())).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
    pub metrics: Option<MetricsBundle>,
}

/// Held-out protocol result. Both sides are sorted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split<K> {
    pub train: Vec<K>,
    pub test: Vec<K>,
}

/// Per class, holds out `round(test_fraction * n)` keys, clamped so that a
/// class with at least two members lands on both sides.
pub fn stratified_split<K: Clone + Ord>(entries: &[(K, bool)], test_fraction: f64, seed: u64) -> Result<Split<K>> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::usage("test_fraction must be in (0, 1)"));
    }
    let mut rng = seeded(seed);
    let mut split = Split { train: Vec::new(), test: Vec::new() };
    for class in [true, false] {
        let mut keys: Vec<K> = entries.iter().filter(|e| e.1 == class).map(|e| e.0.clone()).collect();
        keys.sort();
        keys.shuffle(&mut rng);
        let n = keys.len();
        let mut n_test = (test_fraction * n as f64).round() as usize;
        if n >= 2 {
            n_test = n_test.clamp(1, n - 1);
        }
        let rest = keys.split_off(n_test);
        split.test.extend(keys);
        split.train.extend(rest);
    }
    split.train.sort();
    split.test.sort();
    Ok(split)
}

/// Holds out the `ceil(test_fraction * n)` latest keys; ties broken by key.
pub fn time_split<K: Clone + Ord>(entries: &[(K, f64)], test_fraction: f64) -> Result<Split<K>> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::usage("test_fraction must be in (0, 1)"));
    }
    if entries.iter().any(|e| !e.1.is_finite()) {
        return Err(Error::Data("time column has missing or non-finite values".into()));
    }
    let mut sorted: Vec<&(K, f64)> = entries.iter().collect();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    let n_test = (test_fraction * entries.len() as f64).ceil() as usize;
    let cut = entries.len() - n_test.min(entries.len());
    let mut split = Split {
        train: sorted[..cut].iter().map(|e| e.0.clone()).collect(),
        test: sorted[cut..].iter().map(|e| e.0.clone()).collect(),
    };
    split.train.sort();
    split.test.sort();
    Ok(split)
}

/// Rescores an existing run directory from its score file.
pub fn evaluate_scores_file(path: &Path, config: &EvalConfig) -> Result<MetricsBundle> {
    let (scores, labels) = read_scores(BufReader::new(File::open(path)?))?;
    evaluate(&scores, &labels, config)
}

fn read_scores<R: BufRead>(reader: R) -> Result<(Vec<f64>, Vec<bool>)> {
    let mut lines = reader.lines();
    let header = lines.next().ok_or_else(|| Error::parse(1, "empty score file"))??;
    let cols: Vec<&str> = header.split('\t').collect();
    let find = |name: &str| {
        cols.iter().position(|c| *c == name).ok_or_else(|| Error::parse(1, format!("missing `{name}` column")))
    };
    let (si, li) = (find("score")?, find("label")?);
    let (mut scores, mut labels) = (Vec::new(), Vec::new());
    for (k, line) in lines.enumerate() {
        let line = line?;
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != cols.len() {
            return Err(Error::parse(k + 2, "wrong number of fields"));
        }
        scores.push(f[si].parse().map_err(|_| Error::parse(k + 2, "bad score"))?);
        labels.push(match f[li] {
            "1" => true,
            "0" => false,
            _ => return Err(Error::parse(k + 2, "label must be 0 or 1")),
        });
    }
    Ok((scores, labels))
}

fn prefixed(table: &DenseTable, prefix: &str) -> Result<DenseTable> {
    let names = table.names().iter().map(|n| format!("{prefix}{n}")).collect();
    DenseTable::new(table.ids().to_vec(), names, table.values().clone())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

enum Model {
    Gbdt(BoostedForest),
    Gnn(GnnModel),
    Distrep(DistRepModel),
}

struct Scored {
    keys: Vec<String>,
    header: &'static str,
    scores: Vec<f64>,
    labels: Vec<bool>,
}

/// Pipeline state threaded through the stages.
struct Run<'a> {
    cfg: &'a PipelineConfig,
    head: Head,
    out: &'a Path,
    artifacts: Vec<ArtifactRecord>,
    completed: Vec<Stage>,
    graph: Option<TypedGraph>,
    labels: Option<LabelTable>,
    eval_labels: Option<LabelTable>,
    features: Option<FeatureTable>,
    times: HashMap<String, f64>,
    edge_labels: Vec<LabeledEdge>,
    /// Accounts of the processed graph; the scored population.
    accounts: Vec<String>,
    structural: Option<DenseTable>,
    raw: Option<DenseTable>,
    dae: Option<DenseTable>,
    embeddings: Option<DenseTable>,
    node_features: Option<DenseTable>,
    split: Option<Split<String>>,
    model: Option<Model>,
    scored: Option<Scored>,
    metrics: Option<MetricsBundle>,
}

impl<'a> Run<'a> {
    /// Records `name` before it is written, so a failure leaves it marked.
    fn register(&mut self, stage: Stage, name: &str) -> PathBuf {
        self.artifacts.push(ArtifactRecord { path: name.to_string(), stage, sha256: None, valid: false });
        self.out.join(name)
    }

    fn write(&mut self, stage: Stage, name: &str, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        self.register(stage, name);
        let mut w = BufWriter::new(File::create(self.out.join(name))?);
        body(&mut w)?;
        w.flush()?;
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, stage: Stage, name: &str, value: &T) -> Result<()> {
        self.write(stage, name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            Ok(writeln!(w)?)
        })
    }

    fn seal(&mut self, valid: bool) -> Result<()> {
        for a in self.artifacts.iter_mut().filter(|a| a.sha256.is_none()) {
            let path = self.out.join(&a.path);
            a.sha256 = if path.exists() { Some(file_sha256(&path)?) } else { None };
            a.valid = valid;
        }
        Ok(())
    }

    fn graph(&self) -> &TypedGraph {
        self.graph.as_ref().expect("graph is built first")
    }

    fn build(&mut self) -> Result<()> {
        let i = &self.cfg.inputs;
        let nodes = i.nodes.as_deref().map(open).transpose()?;
        let graph = TypedGraph::read_tsv(self.cfg.graph_kind, nodes, open(&i.edges)?)?;
        if let Some(p) = &i.labels {
            self.labels = Some(LabelTable::read_tsv(open(p)?)?);
        }
        if let Some(p) = &i.eval_labels {
            self.eval_labels = Some(LabelTable::read_tsv(open(p)?)?);
        }
        if let Some(p) = &i.features {
            let mut table = FeatureTable::read_csv(open(p)?)?;
            if let SplitConfig::Time { column, .. } = &self.cfg.split {
                table = self.take_time_column(table, column)?;
            }
            self.features = Some(table);
        }
        if let Some(p) = &i.edge_labels {
            self.edge_labels = read_labeled_edges(open(p)?)?;
        }
        let summary = graph_summary(&graph);
        self.graph = Some(graph);
        self.write_json(Stage::Build, "graph_summary.json", &summary)
    }

    fn take_time_column(&mut self, table: FeatureTable, column: &str) -> Result<FeatureTable> {
        let ids = table.ids().to_vec();
        let (time, rest): (Vec<_>, Vec<_>) = table.columns().iter().cloned().partition(|c| c.name == column);
        let Some(time) = time.into_iter().next() else {
            return Err(Error::usage(format!("time column `{column}` not in features")));
        };
        let ColumnData::Numeric(values) = time.data else {
            return Err(Error::usage(format!("time column `{column}` is not numeric")));
        };
        self.times = ids.iter().cloned().zip(values.into_iter().map(|v| v.unwrap_or(f64::NAN))).collect();
        FeatureTable::new(ids, rest)
    }

    fn preprocess(&mut self) -> Result<()> {
        let Some(policy) = self.cfg.preprocess else {
            return Ok(());
        };
        let before = self.graph().node_count();
        let graph = self.graph().remove_isolated(policy)?;
        log::info!("preprocess: {} of {before} nodes kept", graph.node_count());
        let nodes = self.register(Stage::Preprocess, "preprocessed_nodes.tsv");
        let edges = self.register(Stage::Preprocess, "preprocessed_edges.tsv");
        graph.write_tsv(BufWriter::new(File::create(nodes)?), BufWriter::new(File::create(edges)?))?;
        self.graph = Some(graph);
        Ok(())
    }

    fn graph_stats(&mut self) -> Result<()> {
        let graph = self.graph.take().expect("graph is built first");
        self.accounts = (0..graph.node_count() as u32)
            .filter(|&v| graph.node_type(v) == NodeType::Account)
            .map(|v| graph.node_id(v).to_string())
            .collect();
        let result = (|| {
            if let (true, Some(labels)) = (self.cfg.stages.eta, &self.labels) {
                let report = label_aggregation_eta(&graph, &labels.restricted_to(&graph), self.cfg.eta_max_hop)?;
                log::info!("eta = {:.4}", report.eta);
                self.write(Stage::GraphStats, "eta.csv", |w| report.write_csv(w))?;
            }
            if self.cfg.stages.structural {
                let s = structural_features(&graph, self.cfg.eccentricity_cap)?;
                self.write(Stage::GraphStats, "structural.csv", |w| s.write_csv(w))?;
                self.structural = Some(prefixed(&s.to_table(), "graph_")?);
            }
            Ok(())
        })();
        self.graph = Some(graph);
        result
    }

    fn featurize(&mut self) -> Result<()> {
        let Some(table) = &self.features else {
            return Ok(());
        };
        let (dense, fitted) = fit_transform_basic(table, &self.cfg.transform)?;
        let raw = DenseTable::new(self.accounts.clone(), dense.names().to_vec(), dense.aligned(&self.accounts, 0.0))?;
        self.write_json(Stage::Featurize, "transform.json", &fitted)?;
        self.write(Stage::Featurize, "features_raw.csv", |w| raw.write_csv(w))?;
        if self.cfg.stages.dae && raw.dim() > 0 {
            let model = dae_train(&raw, &self.cfg.dae)?;
            let encoded = dae_encode(&model, &raw)?;
            self.write_json(Stage::Featurize, "dae_model.json", &model)?;
            self.write(Stage::Featurize, "features_dae.csv", |w| encoded.write_csv(w))?;
            self.dae = Some(encoded);
        }
        self.raw = Some(raw);
        Ok(())
    }

    fn deepwalk(&mut self) -> Result<()> {
        if !self.cfg.stages.deepwalk {
            return Ok(());
        }
        let model = deepwalk(self.graph(), &self.cfg.deepwalk)?;
        let emb = prefixed(&model.embeddings, "dw_")?;
        self.write(Stage::Deepwalk, "embeddings.csv", |w| emb.write_csv(w))?;
        self.embeddings = Some(emb);
        Ok(())
    }

    /// Raw, DAE, DeepWalk and structural columns side by side, one row per
    /// account. The distrep head takes embeddings separately.
    fn concat(&mut self) -> Result<()> {
        let mut parts: Vec<&DenseTable> = [&self.raw, &self.dae].into_iter().flatten().collect();
        if self.head != Head::Distrep {
            parts.extend(&self.embeddings);
        }
        parts.extend(&self.structural);
        let mut table =
            DenseTable::new(self.accounts.clone(), Vec::new(), ndarray::Array2::zeros((self.accounts.len(), 0)))?;
        for p in parts {
            let aligned = DenseTable::new(self.accounts.clone(), p.names().to_vec(), p.aligned(&self.accounts, 0.0))?;
            table = table.join(&aligned, None)?;
        }
        if table.dim() == 0 {
            return Err(Error::usage("no node features: give inputs.features or enable a feature stage"));
        }
        self.write(Stage::Concat, "features_concat.csv", |w| table.write_csv(w))?;
        self.node_features = Some(table);
        Ok(())
    }

    fn split(&mut self) -> Result<()> {
        let frac = self.cfg.split.test_fraction();
        if self.head == Head::Distrep {
            let keyed: Vec<(usize, bool)> = self.edge_labels.iter().enumerate().map(|(i, e)| (i, e.label)).collect();
            let s = stratified_split(&keyed, frac, self.cfg.split_seed())?;
            let edges = &self.edge_labels;
            let key = |i: &usize| format!("{}\t{}", edges[*i].buyer, edges[*i].seller);
            let mut split = Split { train: s.train.iter().map(key).collect(), test: s.test.iter().map(key).collect() };
            split.train.sort();
            split.test.sort();
            return self.store_split(split, "buyer\tseller");
        }
        let labels = self.labels.as_ref().expect("validated");
        let known: HashSet<&str> = self.accounts.iter().map(String::as_str).collect();
        let labeled: Vec<(String, Label)> = labels
            .iter()
            .filter(|(id, l)| *l != Label::Unlabeled && known.contains(id))
            .map(|(id, l)| (id.to_string(), l))
            .collect();
        let split = match &self.cfg.split {
            SplitConfig::Stratified { .. } => {
                let keyed: Vec<(String, bool)> =
                    labeled.into_iter().map(|(id, l)| (id, l == Label::HighRisk)).collect();
                stratified_split(&keyed, frac, self.cfg.split_seed())?
            }
            SplitConfig::Time { .. } => {
                let keyed: Vec<(String, f64)> = labeled
                    .into_iter()
                    .map(|(id, _)| {
                        let t = self.times.get(&id).copied().unwrap_or(f64::NAN);
                        (id, t)
                    })
                    .collect();
                time_split(&keyed, frac)?
            }
        };
        self.store_split(split, "node_id")
    }

    fn store_split(&mut self, split: Split<String>, header: &str) -> Result<()> {
        if split.train.is_empty() || split.test.is_empty() {
            return Err(Error::Data("too few labeled examples to hold out a test split".into()));
        }
        self.write(Stage::Split, "split.tsv", |w| {
            writeln!(w, "{header}\tsplit")?;
            for k in &split.train {
                writeln!(w, "{k}\ttrain")?;
            }
            for k in &split.test {
                writeln!(w, "{k}\ttest")?;
            }
            Ok(())
        })?;
        self.split = Some(split);
        Ok(())
    }

    fn train(&mut self) -> Result<()> {
        let train_keys = self.split.as_ref().expect("split precedes train").train.clone();
        let features = self.node_features.as_ref().expect("concat precedes train");
        let model = match self.head {
            Head::Distrep => {
                let train: HashSet<&str> = train_keys.iter().map(String::as_str).collect();
                let edges: Vec<LabeledEdge> = self
                    .edge_labels
                    .iter()
                    .filter(|e| train.contains(format!("{}\t{}", e.buyer, e.seller).as_str()))
                    .cloned()
                    .collect();
                let emb = self.embeddings.as_ref().expect("validated");
                Model::Distrep(distrep_train(emb, features, &edges, &self.cfg.distrep)?)
            }
            Head::Gbdt | Head::Gnn => {
                let labels = self.labels.as_ref().expect("validated");
                let ts = sample_keys(
                    train_keys.iter().map(|id| (id.clone(), labels.get(id))),
                    self.cfg.sample_rate,
                    self.cfg.sample_seed(),
                )?;
                self.write_json(Stage::Train, "training_set.json", &ts)?;
                let features = self.node_features.as_ref().expect("concat precedes train");
                if self.head == Head::Gbdt {
                    let mut ids: Vec<(String, bool)> = ts.examples().map(|(k, y)| (k.clone(), y)).collect();
                    ids.sort();
                    let (ids, y): (Vec<String>, Vec<bool>) = ids.into_iter().unzip();
                    Model::Gbdt(gbdt_train(&features.select(&ids)?, &y, &self.cfg.gbdt)?)
                } else {
                    Model::Gnn(gnn_train(self.graph(), features, &ts, &self.cfg.gnn)?)
                }
            }
        };
        let json = match &model {
            Model::Gbdt(m) => m.to_json()?,
            Model::Gnn(m) => m.to_json()?,
            Model::Distrep(m) => m.to_json()?,
        };
        self.write(Stage::Train, "model.json", |w| Ok(w.write_all(json.as_bytes())?))?;
        self.model = Some(model);
        Ok(())
    }

    fn predict(&mut self) -> Result<()> {
        let split = self.split.as_ref().expect("split precedes predict");
        let features = self.node_features.as_ref().expect("concat precedes predict");
        let keys = split.test.clone();
        let scored = match self.model.as_ref().expect("train precedes predict") {
            Model::Distrep(m) => {
                let label: HashMap<String, bool> =
                    self.edge_labels.iter().map(|e| (format!("{}\t{}", e.buyer, e.seller), e.label)).collect();
                let pairs: Vec<(String, String)> = keys
                    .iter()
                    .map(|k| {
                        let (b, s) = k.split_once('\t').expect("edge keys hold a tab");
                        (b.to_string(), s.to_string())
                    })
                    .collect();
                let emb = self.embeddings.as_ref().expect("validated");
                Scored {
                    scores: distrep_score(m, emb, features, &pairs)?,
                    labels: keys.iter().map(|k| label[k]).collect(),
                    header: "buyer\tseller",
                    keys,
                }
            }
            model => {
                let truth = self.eval_labels.as_ref().or(self.labels.as_ref()).expect("validated");
                let scores = match model {
                    Model::Gbdt(m) => gbdt_predict(m, &features.select(&keys)?)?,
                    Model::Gnn(m) => gnn_predict(m, self.graph(), features, &keys)?,
                    Model::Distrep(_) => unreachable!(),
                };
                Scored {
                    scores,
                    labels: keys.iter().map(|k| truth.get(k) == Label::HighRisk).collect(),
                    header: "node_id",
                    keys,
                }
            }
        };
        self.write(Stage::Predict, SCORES_FILE, |w| {
            writeln!(w, "{}\tscore\tlabel", scored.header)?;
            for ((k, s), y) in scored.keys.iter().zip(&scored.scores).zip(&scored.labels) {
                writeln!(w, "{k}\t{s}\t{}", u8::from(*y))?;
            }
            Ok(())
        })?;
        self.scored = Some(scored);
        Ok(())
    }

    fn evaluate(&mut self) -> Result<()> {
        if !self.cfg.stages.evaluate {
            return Ok(());
        }
        let s = self.scored.as_ref().expect("predict precedes evaluate");
        let metrics = evaluate(&s.scores, &s.labels, &self.cfg.eval)?;
        self.write(Stage::Evaluate, METRICS_FILE, |w| metrics.write_json(w))?;
        self.write(Stage::Evaluate, "pr_curve.csv", |w| metrics.write_pr_csv(w))?;
        self.metrics = Some(metrics);
        Ok(())
    }

    fn execute(&mut self, stage: Stage) -> Result<()> {
        match stage {
            Stage::Build => self.build(),
            Stage::Preprocess => self.preprocess(),
            Stage::GraphStats => self.graph_stats(),
            Stage::Featurize => self.featurize(),
            Stage::Deepwalk => self.deepwalk(),
            Stage::Concat => self.concat(),
            Stage::Split => self.split(),
            Stage::Train => self.train(),
            Stage::Predict => self.predict(),
            Stage::Evaluate => self.evaluate(),
        }
    }

    fn manifest(&self, status: RunStatus) -> Result<Manifest> {
        Ok(Manifest {
            version: MANIFEST_VERSION,
            config_hash: self.cfg.hash()?,
            seed: self.cfg.seed,
            status,
            completed_stages: self.completed.clone(),
            artifacts: self.artifacts.clone(),
        })
    }
}

#[derive(Serialize)]
struct GraphSummary {
    kind: GraphKind,
    nodes: usize,
    accounts: usize,
    devices: usize,
    edges: usize,
}

fn graph_summary(g: &TypedGraph) -> GraphSummary {
    let accounts = (0..g.node_count() as u32).filter(|&v| g.node_type(v) == NodeType::Account).count();
    GraphSummary {
        kind: g.kind(),
        nodes: g.node_count(),
        accounts,
        devices: g.node_count() - accounts,
        edges: g.edge_count(),
    }
}

fn write_manifest(out: &Path, manifest: &Manifest) -> Result<()> {
    let mut w = BufWriter::new(File::create(out.join(MANIFEST_FILE))?);
    serde_json::to_writer_pretty(&mut w, manifest)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Runs stages in order through `until`, writing artifacts and the
/// manifest under `out_dir`. The config is validated before any stage runs;
/// a stage failure is returned tagged with the stage name after the
/// manifest records it.
pub fn run_pipeline(config: &PipelineConfig, out_dir: &Path, until: Stage) -> Result<RunReport> {
    config.validate()?;
    let head = config.head()?;
    std::fs::create_dir_all(out_dir)?;
    let mut run = Run {
        cfg: config,
        head,
        out: out_dir,
        artifacts: Vec::new(),
        completed: Vec::new(),
        graph: None,
        labels: None,
        eval_labels: None,
        features: None,
        times: HashMap::new(),
        edge_labels: Vec::new(),
        accounts: Vec::new(),
        structural: None,
        raw: None,
        dae: None,
        embeddings: None,
        node_features: None,
        split: None,
        model: None,
        scored: None,
        metrics: None,
    };
    for stage in Stage::ALL.into_iter().filter(|&s| s <= until) {
        log::info!("stage {}", stage.name());
        if let Err(e) = run.execute(stage) {
            let e = e.in_stage(stage.name());
            run.seal(false)?;
            let manifest = run.manifest(RunStatus::Failed { stage, error: e.to_string() })?;
            write_manifest(out_dir, &manifest)?;
            return Err(e);
        }
        run.seal(true)?;
        run.completed.push(stage);
    }
    let manifest = run.manifest(RunStatus::Complete { through: until })?;
    write_manifest(out_dir, &manifest)?;
    Ok(RunReport { out_dir: out_dir.to_path_buf(), manifest, metrics: run.metrics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_heads_rejected() {
        let mut cfg = PipelineConfig::default();
        cfg.stages.gnn = true;
        assert!(matches!(cfg.validate(), Err(Error::Usage(m)) if m.contains("exactly one")));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(PipelineConfig::from_json(r#"{"seed": 1, "sede": 2}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"gbdt": {"n_tree": 5}}"#).is_err());
        assert!(
            PipelineConfig::from_json(r#"{"split": {"kind": "stratified", "test_fraction": 0.3, "x": 1}}"#).is_err()
        );
        let cfg =
            PipelineConfig::from_json(r#"{"split": {"kind": "time", "column": "t", "test_fraction": 0.3}}"#).unwrap();
        assert_eq!(cfg.split.test_fraction(), 0.3);
    }

    #[test]
    fn seeds_propagate() {
        let a = PipelineConfig::default().with_seed(7);
        let b = PipelineConfig::default().with_seed(8);
        assert_ne!(a.gbdt.seed, b.gbdt.seed);
        assert_ne!(a.gbdt.seed, a.deepwalk.seed);
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
        assert_eq!(a.hash().unwrap(), PipelineConfig::default().with_seed(7).hash().unwrap());
    }

    #[test]
    fn time_split_holds_out_latest() {
        let e: Vec<(&str, f64)> = vec![("a", 3.0), ("b", 1.0), ("c", 2.0), ("d", 3.0), ("e", 0.0)];
        let s = time_split(&e, 0.4).unwrap();
        assert_eq!(s.test, vec!["a", "d"]);
        assert_eq!(s.train, vec!["b", "c", "e"]);
    }

    #[test]
    fn score_file_round_trip() {
        let text = "node_id\tscore\tlabel\na\t0.1\t0\nb\t0.30000000000000004\t1\n";
        let (s, y) = read_scores(text.as_bytes()).unwrap();
        assert_eq!(s, vec![0.1, 0.30000000000000004]);
        assert_eq!(y, vec![false, true]);
        assert!(read_scores("node_id\tscore\tlabel\na\t0.1\t2\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn stratified_split_keeps_classes_on_both_sides(pos in 0usize..40, neg in 0usize..200, frac in 0.05f64..0.95, seed: u64) {
            let entries: Vec<(usize, bool)> = (0..pos + neg).map(|i| (i, i < pos)).collect();
            let s = stratified_split(&entries, frac, seed).unwrap();
            prop_assert_eq!(s.train.len() + s.test.len(), pos + neg);
            let pos_test = s.test.iter().filter(|&&i| i < pos).count();
            if pos >= 5 {
                prop_assert!(pos_test >= 1 && pos_test < pos);
            }
            prop_assert!(s.test.iter().all(|k| s.train.binary_search(k).is_err()));
            prop_assert_eq!(s, stratified_split(&entries, frac, seed).unwrap());
        }
    }
}
