//! Single experiment runs.
//!
//! A run builds the task sequence for one seed, trains task by task, writes a
//! model checkpoint and a progress file after every task, and fills column
//! `j` of the performance matrix by reloading checkpoint `j` from disk. An
//! interrupted run resumes from its latest progress file.

pub mod aggregate;
pub mod sweep;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{featurize_ibm, generate_synthetic, load_elliptic, load_ibm_hismall, EllipticDataset, IbmDataset, Pattern, SyntheticSpec};
use crate::error::{Error, Result};
use crate::graph::normalize_adjacency;
use crate::metrics::{score, PerformanceMatrix, ScoredSet};
use crate::model::{Architecture, GcnModel, GraphInputs, TaskMode};
use crate::optim::AdamState;
use crate::rngs::{stream, Purpose};
use crate::strategy::{Learner, StrategyConfig, StrategyState, TaskContext, TaskReport};
use crate::tasks::{elliptic_schedule, ibm_schedule, IbmScheduleOptions, NegativePlacement, Ordering, SplitPolicy, TaskSequence};
use crate::tensor::Matrix;

pub use aggregate::{aggregate, AggregateSummary};
pub use sweep::{expand_sweep, run_sweep, Grid, SweepConfig, SweepSummary};

fn seven() -> usize {
    7
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetConfig {
    Elliptic {
        features: PathBuf,
        edgelist: PathBuf,
        classes: PathBuf,
        /// Number of tasks: 7 or 49.
        #[serde(default = "seven")]
        granularity: usize,
    },
    Ibm {
        transactions: PathBuf,
        patterns: PathBuf,
        #[serde(default)]
        ordering: Ordering,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pattern_subset: Option<Vec<Pattern>>,
        #[serde(default)]
        negatives: NegativePlacement,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_negatives: Option<usize>,
    },
    Synthetic {
        spec: SyntheticSpec,
        #[serde(default)]
        ordering: Ordering,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pattern_subset: Option<Vec<Pattern>>,
        #[serde(default)]
        negatives: NegativePlacement,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_negatives: Option<usize>,
    },
}

impl DatasetConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            DatasetConfig::Elliptic { .. } => "elliptic",
            DatasetConfig::Ibm { .. } => "ibm",
            DatasetConfig::Synthetic { .. } => "synthetic",
        }
    }

    /// Ordering name or `g<granularity>`.
    pub fn variant(&self) -> String {
        match self {
            DatasetConfig::Elliptic { granularity, .. } => format!("g{granularity}"),
            DatasetConfig::Ibm { ordering, .. } | DatasetConfig::Synthetic { ordering, .. } => ordering.name().to_string(),
        }
    }

    pub fn ordering(&self) -> Option<Ordering> {
        match self {
            DatasetConfig::Elliptic { .. } => None,
            DatasetConfig::Ibm { ordering, .. } | DatasetConfig::Synthetic { ordering, .. } => Some(*ordering),
        }
    }

    pub fn granularity(&self) -> Option<usize> {
        match self {
            DatasetConfig::Elliptic { granularity, .. } => Some(*granularity),
            _ => None,
        }
    }

    fn schedule_options(&self, split: SplitPolicy) -> Option<IbmScheduleOptions> {
        match self {
            DatasetConfig::Elliptic { .. } => None,
            DatasetConfig::Ibm {
                ordering,
                pattern_subset,
                negatives,
                max_negatives,
                ..
            } => Some(IbmScheduleOptions {
                ordering: *ordering,
                patterns: pattern_subset.clone(),
                negatives: *negatives,
                max_negatives: *max_negatives,
                split,
            }),
            // without a subset, the generated motifs form the sequence
            DatasetConfig::Synthetic {
                spec,
                ordering,
                pattern_subset,
                negatives,
                max_negatives,
            } => Some(IbmScheduleOptions {
                ordering: *ordering,
                patterns: pattern_subset
                    .clone()
                    .or_else(|| Some(spec.patterns.iter().filter(|p| p.instances > 0).map(|p| p.kind).collect())),
                negatives: *negatives,
                max_negatives: *max_negatives,
                split,
            }),
        }
    }

    /// Identifies the underlying data independently of task options.
    pub fn source_key(&self) -> String {
        match self {
            DatasetConfig::Elliptic {
                features,
                edgelist,
                classes,
                ..
            } => format!("elliptic:{}:{}:{}", features.display(), edgelist.display(), classes.display()),
            DatasetConfig::Ibm {
                transactions, patterns, ..
            } => format!("ibm:{}:{}", transactions.display(), patterns.display()),
            DatasetConfig::Synthetic { spec, .. } => format!("synthetic:{}", serde_json::to_string(spec).unwrap_or_default()),
        }
    }

    /// Makes relative file paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match self {
            DatasetConfig::Elliptic {
                features,
                edgelist,
                classes,
                ..
            } => {
                fix(features);
                fix(edgelist);
                fix(classes);
            }
            DatasetConfig::Ibm {
                transactions, patterns, ..
            } => {
                fix(transactions);
                fix(patterns);
            }
            DatasetConfig::Synthetic { .. } => {}
        }
    }
}

fn default_layers() -> usize {
    2
}
fn default_hidden() -> usize {
    128
}
fn default_dropout() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: default_layers(),
            hidden: default_hidden(),
            dropout: default_dropout(),
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    pub strategy: StrategyConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub scored_set: ScoredSet,
    #[serde(default)]
    pub split: SplitPolicy,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: ExperimentConfig = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = ExperimentConfig::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        c.dataset.resolve_paths(base);
        if c.out_dir.is_relative() {
            c.out_dir = base.join(&c.out_dir);
        }
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.strategy.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        if let Some(g) = self.dataset.granularity() {
            if g != 7 && g != 49 {
                return Err(Error::Config(format!("elliptic granularity must be 7 or 49, got {g}")));
            }
        }
        let f = self.split.train_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Config(format!("train fraction must lie in (0, 1), got {f}")));
        }
        if !(0.0..1.0).contains(&self.model.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.model.dropout)));
        }
        if self.model.layers == 0 || self.model.hidden == 0 {
            return Err(Error::Config("model layers and hidden width must be positive".into()));
        }
        Ok(())
    }

    pub fn run_id(&self, seed: u64) -> String {
        let base = format!(
            "{}-{}-{}-l{}-h{}-e{}-s{}",
            self.dataset.kind(),
            self.strategy.method,
            self.dataset.variant(),
            self.model.layers,
            self.model.hidden,
            self.strategy.epochs,
            seed
        );
        match &self.name {
            Some(n) => format!("{n}-{base}"),
            None => base,
        }
    }

    /// Hash of everything that determines a run's results.
    pub fn fingerprint(&self, seed: u64) -> String {
        let mut c = self.clone();
        c.seeds = vec![seed];
        c.strategy = c.strategy.resolved();
        c.out_dir = PathBuf::new();
        c.name = None;
        sha256_hex(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Dataset loaded once and shared by the runs that use it.
#[derive(Debug, Clone)]
pub enum LoadedData {
    Transactions(Arc<IbmDataset>),
    Elliptic(Arc<EllipticDataset>),
}

pub fn load_dataset(cfg: &DatasetConfig) -> Result<LoadedData> {
    Ok(match cfg {
        DatasetConfig::Elliptic {
            features,
            edgelist,
            classes,
            ..
        } => LoadedData::Elliptic(Arc::new(load_elliptic(features, edgelist, classes)?)),
        DatasetConfig::Ibm {
            transactions, patterns, ..
        } => LoadedData::Transactions(Arc::new(load_ibm_hismall(transactions, patterns)?)),
        DatasetConfig::Synthetic { spec, .. } => LoadedData::Transactions(Arc::new(generate_synthetic(spec)?.dataset)),
    })
}

/// Everything a run trains and evaluates on.
pub struct Prepared {
    pub seq: TaskSequence,
    pub adjacency: crate::graph::NormalizedAdjacency,
    pub node_features: Matrix,
    pub edges: Vec<(usize, usize)>,
    pub edge_features: Option<Matrix>,
    pub architecture: Architecture,
}

impl Prepared {
    pub fn inputs(&self) -> GraphInputs<'_> {
        GraphInputs {
            adj: &self.adjacency,
            x: &self.node_features,
            edges: &self.edges,
            edge_features: self.edge_features.as_ref(),
        }
    }
}

pub fn prepare(config: &ExperimentConfig, seed: u64, data: &LoadedData) -> Result<Prepared> {
    let mut rng = stream(seed, Purpose::Schedule, 0);
    let m = config.model;
    match (data, &config.dataset) {
        (LoadedData::Elliptic(ds), DatasetConfig::Elliptic { granularity, .. }) => {
            let seq = elliptic_schedule(ds, *granularity, config.split, &mut rng)?;
            Ok(Prepared {
                seq,
                adjacency: normalize_adjacency(&ds.graph)?,
                node_features: ds.features.values().clone(),
                edges: ds.graph.edges().to_vec(),
                edge_features: None,
                architecture: Architecture {
                    layer_count: m.layers,
                    hidden_dim: m.hidden,
                    input_dim: ds.features.dim(),
                    edge_feature_dim: 0,
                    mode: TaskMode::NodeBinary,
                    dropout: m.dropout,
                },
            })
        }
        (LoadedData::Transactions(ds), DatasetConfig::Ibm { .. } | DatasetConfig::Synthetic { .. }) => {
            let opts = config.dataset.schedule_options(config.split).expect("pattern dataset");
            let seq = ibm_schedule(ds, &opts, &mut rng)?;
            let feats = featurize_ibm(ds, &seq.train_union(seq.len() - 1))?;
            let edge_dim = feats.edges.dim();
            let node_dim = feats.nodes.dim();
            Ok(Prepared {
                seq,
                adjacency: normalize_adjacency(&ds.graph)?,
                node_features: feats.nodes.into_inner(),
                edges: ds.graph.edges().to_vec(),
                edge_features: Some(feats.edges.into_inner()),
                architecture: Architecture {
                    layer_count: m.layers,
                    hidden_dim: m.hidden,
                    input_dim: node_dim,
                    edge_feature_dim: edge_dim,
                    mode: TaskMode::EdgeMulticlass,
                    dropout: m.dropout,
                },
            })
        }
        _ => Err(Error::Config("loaded data does not match the dataset kind".into())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointInfo {
    /// One-based task index.
    pub task: usize,
    pub file: String,
    pub sha256: String,
}

pub const RESULTS_FORMAT: &str = "amlcgl-results";
pub const PROGRESS_FORMAT: &str = "amlcgl-progress";
pub const RECORD_VERSION: u32 = 1;

/// Results of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub format: String,
    pub version: u32,
    pub run_id: String,
    pub dataset: String,
    pub ordering: Option<Ordering>,
    pub granularity: Option<usize>,
    pub negatives: Option<NegativePlacement>,
    pub architecture: Architecture,
    pub strategy: StrategyConfig,
    pub seed: u64,
    pub scored_set: ScoredSet,
    pub split: SplitPolicy,
    pub class_names: Vec<String>,
    pub tasks: usize,
    /// `matrix[i][j]`: score on task `i` after task `j`; `None` above the
    /// diagonal.
    pub matrix: Vec<Vec<Option<f64>>>,
    pub ap: f64,
    /// Absent for single-task runs.
    pub af: Option<f64>,
    pub fin: f64,
    pub checkpoints: Vec<CheckpointInfo>,
    pub reports: Vec<TaskReport>,
    pub gem_fallbacks: usize,
    pub config_sha256: String,
    pub started_at: String,
    pub wall_clock_secs: f64,
}

impl RunRecord {
    pub fn performance_matrix(&self) -> Result<PerformanceMatrix> {
        let mut pm = PerformanceMatrix::new(self.tasks);
        for (i, row) in self.matrix.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if let Some(v) = v {
                    pm.fill(i, j, *v)?;
                }
            }
        }
        Ok(pm)
    }

    pub fn method(&self) -> crate::strategy::Method {
        self.strategy.method
    }

    pub fn variant(&self) -> String {
        match (self.ordering, self.granularity) {
            (Some(o), _) => o.name().to_string(),
            (None, Some(g)) => format!("g{g}"),
            _ => String::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let r: RunRecord = serde_json::from_slice(&bytes)?;
        if r.format != RESULTS_FORMAT || r.version != RECORD_VERSION {
            return Err(Error::Checkpoint(format!("{} is not a v{RECORD_VERSION} results record", path.display())));
        }
        Ok(r)
    }

    pub const CSV_HEADER: [&'static str; 16] = [
        "run_id",
        "dataset",
        "method",
        "ordering",
        "granularity",
        "layers",
        "width",
        "epochs",
        "seed",
        "tasks",
        "ap",
        "af",
        "fin",
        "scored_set",
        "negatives",
        "gem_fallbacks",
    ];

    pub fn csv_row(&self) -> Vec<String> {
        vec![
            self.run_id.clone(),
            self.dataset.clone(),
            self.method().to_string(),
            self.ordering.map(|o| o.to_string()).unwrap_or_default(),
            self.granularity.map(|g| g.to_string()).unwrap_or_default(),
            self.architecture.layer_count.to_string(),
            self.architecture.hidden_dim.to_string(),
            self.strategy.epochs.to_string(),
            self.seed.to_string(),
            self.tasks.to_string(),
            self.ap.to_string(),
            self.af.map(|v| v.to_string()).unwrap_or_default(),
            self.fin.to_string(),
            match self.scored_set {
                ScoredSet::AllClasses => "all-classes".into(),
                ScoredSet::PositiveClasses => "positive-classes".into(),
            },
            match self.negatives {
                Some(NegativePlacement::FirstTask) => "first-task".into(),
                Some(NegativePlacement::AllTasks) => "all-tasks".into(),
                None => String::new(),
            },
            self.gem_fallbacks.to_string(),
        ]
    }
}

/// State written after every task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Progress {
    format: String,
    version: u32,
    config_sha256: String,
    /// Zero-based index of the last finished task.
    task: usize,
    model_file: String,
    model_sha256: String,
    optimizer: AdamState,
    strategy: StrategyState,
    reports: Vec<TaskReport>,
    /// `columns[j][i]` = score on task `i` after task `j`.
    columns: Vec<Vec<f64>>,
    checkpoints: Vec<CheckpointInfo>,
}

fn model_file(t: usize) -> String {
    format!("task_{:03}.model.json", t + 1)
}

fn progress_file(t: usize) -> String {
    format!("task_{:03}.progress.json", t + 1)
}

/// Loads the model checkpoint and checks it against its recorded hash.
pub fn load_verified_model(path: &Path, sha256: &str) -> Result<GcnModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let got = sha256_hex(&bytes);
    if got != sha256 {
        return Err(Error::Checkpoint(format!("{} hash {got} differs from recorded {sha256}", path.display())));
    }
    let ck = serde_json::from_slice(&bytes)?;
    GcnModel::from_checkpoint(&ck)
}

/// Micro-F1 of `model` on `ids`.
pub fn evaluate(model: &GcnModel, inputs: &GraphInputs<'_>, seq: &TaskSequence, ids: &[usize], set: ScoredSet) -> Result<f64> {
    let pred = model.predict(inputs, ids)?;
    score(&pred, &seq.labels_of(ids), set)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn find_progress(dir: &Path, fingerprint: &str, k: usize) -> Option<Progress> {
    for t in (0..k).rev() {
        let path = dir.join(progress_file(t));
        let Ok(bytes) = fs::read(&path) else { continue };
        match serde_json::from_slice::<Progress>(&bytes) {
            Ok(p) if p.format == PROGRESS_FORMAT && p.version == RECORD_VERSION && p.config_sha256 == fingerprint && p.task == t => {
                return Some(p)
            }
            Ok(_) => log::warn!("ignoring progress file {} from another configuration", path.display()),
            Err(e) => log::warn!("ignoring unreadable progress file {}: {e}", path.display()),
        }
    }
    None
}

/// Loads the dataset and runs every seed of `config`.
pub fn run_all(config: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    config.validate()?;
    let data = load_dataset(&config.dataset)?;
    config.seeds.iter().map(|&s| run_experiment(config, s, &data)).collect()
}

/// Runs one seed. Existing progress for the same configuration is resumed;
/// an existing complete record is returned as is.
pub fn run_experiment(config: &ExperimentConfig, seed: u64, data: &LoadedData) -> Result<RunRecord> {
    config.validate()?;
    let started = Instant::now();
    let started_at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
    let run_id = config.run_id(seed);
    let dir = config.out_dir.join(&run_id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let fingerprint = config.fingerprint(seed);
    let results_path = dir.join("results.json");
    if let Ok(existing) = RunRecord::load(&results_path) {
        if existing.config_sha256 == fingerprint {
            info!("{run_id}: complete record found, skipping");
            return Ok(existing);
        }
    }

    let prep = prepare(config, seed, data)?;
    let seq = &prep.seq;
    let k = seq.len();
    seq.write_manifest(&dir.join("manifest.txt"), seed)?;
    let inputs = prep.inputs();
    let ctx = TaskContext { inputs, seq, seed };
    let strategy = config.strategy.resolved();

    let (mut learner, mut reports, mut columns, mut checkpoints, start) = match find_progress(&dir, &fingerprint, k) {
        Some(p) => {
            let model = load_verified_model(&dir.join(&p.model_file), &p.model_sha256)?;
            info!("{run_id}: resuming after task {}", p.task + 1);
            let learner = Learner {
                config: strategy.clone(),
                model,
                optimizer: p.optimizer,
                state: p.strategy,
            };
            (learner, p.reports, p.columns, p.checkpoints, p.task + 1)
        }
        None => {
            let model = GcnModel::init(prep.architecture, seq.classes_through(0), &mut stream(seed, Purpose::Init, 0))?;
            (Learner::new(model, strategy.clone())?, Vec::new(), Vec::new(), Vec::new(), 0)
        }
    };

    for t in start..k {
        let report = learner.train_task(&ctx, t)?;
        info!("{run_id}: task {}/{k} loss {:.6}", t + 1, report.losses.last().copied().unwrap_or(f64::NAN));
        reports.push(report);

        let mfile = model_file(t);
        let bytes = serde_json::to_vec(&learner.model.to_checkpoint())?;
        let sha = sha256_hex(&bytes);
        write_atomic(&dir.join(&mfile), &bytes)?;
        info!("{run_id}: checkpoint {mfile} sha256 {sha}");
        checkpoints.push(CheckpointInfo {
            task: t + 1,
            file: mfile.clone(),
            sha256: sha.clone(),
        });

        let frozen = load_verified_model(&dir.join(&mfile), &sha)?;
        let mut column = Vec::with_capacity(t + 1);
        for i in 0..=t {
            column.push(evaluate(&frozen, &inputs, seq, &seq.tasks[i].test, config.scored_set)?);
        }
        columns.push(column);

        let progress = Progress {
            format: PROGRESS_FORMAT.into(),
            version: RECORD_VERSION,
            config_sha256: fingerprint.clone(),
            task: t,
            model_file: mfile,
            model_sha256: sha,
            optimizer: learner.optimizer.clone(),
            strategy: learner.state.clone(),
            reports: reports.clone(),
            columns: columns.clone(),
            checkpoints: checkpoints.clone(),
        };
        write_atomic(&dir.join(progress_file(t)), &serde_json::to_vec(&progress)?)?;
    }

    let mut pm = PerformanceMatrix::new(k);
    for (j, col) in columns.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            pm.fill(i, j, v)?;
        }
    }
    let ap = pm.average_performance()?;
    let af = if k > 1 { Some(pm.average_forgetting()?) } else { None };
    let last = checkpoints.last().ok_or(Error::Empty("run without tasks"))?;
    let final_model = load_verified_model(&dir.join(&last.file), &last.sha256)?;
    let fin = evaluate(&final_model, &inputs, seq, &seq.pooled_test(), config.scored_set)?;

    let record = RunRecord {
        format: RESULTS_FORMAT.into(),
        version: RECORD_VERSION,
        run_id,
        dataset: config.dataset.kind().into(),
        ordering: config.dataset.ordering(),
        granularity: config.dataset.granularity(),
        negatives: match &config.dataset {
            DatasetConfig::Ibm { negatives, .. } | DatasetConfig::Synthetic { negatives, .. } => Some(*negatives),
            DatasetConfig::Elliptic { .. } => None,
        },
        architecture: prep.architecture,
        strategy,
        seed,
        scored_set: config.scored_set,
        split: config.split,
        class_names: seq.class_names.clone(),
        tasks: k,
        matrix: (0..k).map(|i| (0..k).map(|j| pm.get(i, j)).collect()).collect(),
        ap,
        af,
        fin,
        gem_fallbacks: reports.iter().map(|r| r.gem_fallbacks).sum(),
        checkpoints,
        reports,
        config_sha256: fingerprint,
        started_at,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    write_record(&dir, &record)?;
    Ok(record)
}

/// Writes `results.json`, `results.csv` and `heatmap.csv` into `dir`.
pub fn write_record(dir: &Path, record: &RunRecord) -> Result<()> {
    write_atomic(&dir.join("results.json"), &serde_json::to_vec_pretty(record)?)?;
    let csv_path = dir.join("results.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(RunRecord::CSV_HEADER)?;
    w.write_record(record.csv_row())?;
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    let heat_path = dir.join("heatmap.csv");
    let mut h = csv::Writer::from_path(&heat_path)?;
    h.write_record(["i", "j", "value"])?;
    for (i, row) in record.matrix.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if let Some(v) = v {
                h.write_record([(i + 1).to_string(), (j + 1).to_string(), v.to_string()])?;
            }
        }
    }
    h.flush().map_err(|e| Error::io(&heat_path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
name = "demo"
seeds = [1, 2]
out_dir = "out"

[dataset]
kind = "synthetic"
ordering = "frequent-to-rare"

[dataset.spec]
seed = 3
background_nodes = 50
background_edges = 200
patterns = [{ kind = "fan-in", instances = 2, size = 3 }]

[model]
layers = 1
hidden = 8

[strategy]
method = "gem"
epochs = 2
gem_memory = 10
"#;

    #[test]
    fn parses_documented_keys() {
        let c = ExperimentConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(c.seeds, vec![1, 2]);
        assert_eq!(c.model.dropout, 0.5);
        assert_eq!(c.dataset.ordering(), Some(Ordering::FrequentToRare));
        assert_eq!(c.run_id(1), "demo-synthetic-gem-frequent-to-rare-l1-h8-e2-s1");
        assert_eq!(c.scored_set, ScoredSet::AllClasses);
    }

    #[test]
    fn rejects_unknown_and_invalid_keys() {
        assert!(ExperimentConfig::from_toml(&SAMPLE.replace("hidden = 8", "hiden = 8")).is_err());
        assert!(ExperimentConfig::from_toml(&SAMPLE.replace("epochs = 2", "epochs = 0")).is_err());
        let elliptic = r#"
strategy = { method = "bare" }
[dataset]
kind = "elliptic"
features = "f.csv"
edgelist = "e.csv"
classes = "c.csv"
granularity = 5
"#;
        assert!(ExperimentConfig::from_toml(elliptic).is_err());
    }

    #[test]
    fn fingerprint_ignores_output_location() {
        let a = ExperimentConfig::from_toml(SAMPLE).unwrap();
        let mut b = a.clone();
        b.out_dir = PathBuf::from("elsewhere");
        assert_eq!(a.fingerprint(1), b.fingerprint(1));
        assert_ne!(a.fingerprint(1), a.fingerprint(2));
        b.strategy.lambda = Some(a.strategy.lambda());
        assert_eq!(a.fingerprint(1), b.fingerprint(1));
    }
}
