use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::metrics::MetricReport;
use super::seeds::{scenario_seed, training_seed};
use crate::data::{PreparedDataset, Subset};
use crate::error::{Error, Result};
use crate::models::{ModelConfig, ModelState, Pretraining, DEFAULT_FILTERS};
use crate::par::{self, Execution};
use crate::scenarios::{apply_scenario, DataScenario, GRADE_GRID, PERCENT_GRID};
use crate::trainers::{finetune_supervised, pretrain, write_history, TrainConfig, TrainOutcome};

/// Replications per cell unless configured otherwise.
pub const DEFAULT_REPLICATIONS: usize = 10;

impl Pretraining {
    pub const ALL: [Pretraining; 4] = [
        Pretraining::None,
        Pretraining::Autoencoder,
        Pretraining::Rbm,
        Pretraining::SelfSupervised,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pretraining::None => "none",
            Pretraining::Autoencoder => "ae",
            Pretraining::Rbm => "rbm",
            Pretraining::SelfSupervised => "self",
        }
    }
}

impl fmt::Display for Pretraining {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pretraining {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "baseline" | "random" => Ok(Pretraining::None),
            "ae" | "autoencoder" => Ok(Pretraining::Autoencoder),
            "rbm" => Ok(Pretraining::Rbm),
            "self" | "self-supervised" | "siamese" => Ok(Pretraining::SelfSupervised),
            other => Err(Error::Config(format!("unknown method `{other}` (expected none, ae, rbm or self)"))),
        }
    }
}

/// Identity of one experiment run. The baseline has no grade.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellSpec {
    pub subset: Subset,
    pub method: Pretraining,
    pub percent: u32,
    pub grade: Option<u32>,
    pub replication: usize,
}

impl CellSpec {
    pub fn key(&self) -> String {
        let grade = self.grade.map_or_else(|| "-".to_string(), |g| g.to_string());
        format!("{}/{}/p{}/g{}/r{}", self.subset, self.method, self.percent, grade, self.replication)
    }
}

/// A rectangular grid of cells: each pre-training method at every (percent, grade),
/// the baseline at every percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub subsets: Vec<Subset>,
    pub methods: Vec<Pretraining>,
    pub percents: Vec<u32>,
    pub grades: Vec<u32>,
    pub replications: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            subsets: vec![Subset::FD001, Subset::FD002, Subset::FD003, Subset::FD004],
            methods: Pretraining::ALL.to_vec(),
            percents: PERCENT_GRID.to_vec(),
            grades: GRADE_GRID.to_vec(),
            replications: DEFAULT_REPLICATIONS,
        }
    }
}

impl GridSpec {
    pub fn cells(&self) -> Vec<CellSpec> {
        let mut out = Vec::new();
        for &subset in &self.subsets {
            for &method in &self.methods {
                let grades: Vec<Option<u32>> = if method == Pretraining::None {
                    vec![None]
                } else {
                    self.grades.iter().copied().map(Some).collect()
                };
                for &percent in &self.percents {
                    for &grade in &grades {
                        for replication in 0..self.replications {
                            out.push(CellSpec {
                                subset,
                                method,
                                percent,
                                grade,
                                replication,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Epoch budget override for one training stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochBudget {
    pub min_epochs: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

impl EpochBudget {
    pub fn apply(&self, mut cfg: TrainConfig) -> TrainConfig {
        cfg.min_epochs = self.min_epochs;
        cfg.max_epochs = self.max_epochs;
        cfg.patience = self.patience;
        cfg
    }
}

/// Everything besides the cell identity that determines a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub filters: usize,
    pub base_seed: u64,
    /// Overrides the pre-training epoch budget (RBM keeps its fixed budget).
    pub pretrain_epochs: Option<EpochBudget>,
    pub finetune_epochs: Option<EpochBudget>,
    /// Per-subset hyperparameters; defaults from the published tables when absent.
    pub supervised: BTreeMap<Subset, TrainConfig>,
    pub pretraining: BTreeMap<(Subset, Pretraining), TrainConfig>,
    /// Directory for per-cell training histories.
    pub history_dir: Option<PathBuf>,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            filters: DEFAULT_FILTERS,
            base_seed: 0,
            pretrain_epochs: None,
            finetune_epochs: None,
            supervised: BTreeMap::new(),
            pretraining: BTreeMap::new(),
            history_dir: None,
        }
    }
}

impl RunSettings {
    pub fn supervised_config(&self, subset: Subset, seed: u64) -> TrainConfig {
        let cfg = self
            .supervised
            .get(&subset)
            .cloned()
            .unwrap_or_else(|| TrainConfig::supervised(subset));
        let cfg = match &self.finetune_epochs {
            Some(b) => b.apply(cfg),
            None => cfg,
        };
        cfg.with_seed(seed)
    }

    pub fn pretraining_config(&self, subset: Subset, method: Pretraining, seed: u64) -> Option<TrainConfig> {
        let cfg = self
            .pretraining
            .get(&(subset, method))
            .cloned()
            .or_else(|| TrainConfig::pretraining(method, subset))?;
        let cfg = match (&self.pretrain_epochs, method) {
            (Some(b), m) if m != Pretraining::Rbm => b.apply(cfg),
            _ => cfg,
        };
        Some(cfg.with_seed(seed))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnginePrediction {
    pub engine_id: u32,
    pub truth: f64,
    pub prediction: f64,
}

/// Result of one cell; `error` is set instead of `metrics` when training failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentCell {
    pub spec: CellSpec,
    pub scenario_seed: u64,
    pub training_seed: u64,
    pub labeled_engines: Vec<u32>,
    pub metrics: Option<MetricReport>,
    pub predictions: Vec<EnginePrediction>,
    pub pretrain_best: Option<(usize, f64)>,
    pub finetune_best: Option<(usize, f64)>,
    pub history: Option<PathBuf>,
    pub seconds: f64,
    pub error: Option<String>,
}

/// Scenario split for a cell; identical for every method within a replication.
pub fn cell_scenario(spec: &CellSpec, settings: &RunSettings) -> Result<DataScenario> {
    let seed = scenario_seed(settings.base_seed, spec.subset, spec.percent, spec.replication);
    // Labeled engines do not depend on the grade; the baseline never uses the truncated part.
    let grade = spec.grade.unwrap_or(GRADE_GRID[GRADE_GRID.len() - 1]);
    DataScenario::custom(spec.percent, grade, seed)
}

/// Trained model and test predictions for one cell.
pub struct CellRun {
    pub pretrain: Option<TrainOutcome>,
    pub finetune: TrainOutcome,
    pub engine_ids: Vec<u32>,
    pub predictions: Vec<f64>,
    pub truths: Vec<f64>,
    pub labeled_engines: Vec<u32>,
}

/// Runs pre-training (if any) and fine-tuning for `spec` and predicts every test engine.
pub fn train_cell(spec: &CellSpec, data: &PreparedDataset, settings: &RunSettings) -> Result<CellRun> {
    if spec.subset != data.subset {
        return Err(Error::Config(format!("cell for {} given {} data", spec.subset, data.subset)));
    }
    let scenario = cell_scenario(spec, settings)?;
    let split = apply_scenario(&data.train, &scenario)?;
    let seed = training_seed(settings.base_seed, spec.subset, spec.percent, spec.grade, spec.replication);
    let arch = ModelConfig::new(data.window(), settings.filters, 0.0)?;
    let pre = match settings.pretraining_config(spec.subset, spec.method, seed) {
        Some(cfg) => pretrain(spec.method, &split, &data.validation, &arch, &cfg, data.rul_max())?,
        None => None,
    };
    let ft_cfg = settings.supervised_config(spec.subset, seed.wrapping_add(1));
    let finetune = finetune_supervised(
        pre.as_ref().map(|o| &o.state),
        &split.labeled,
        &data.validation,
        &arch,
        &ft_cfg,
        data.rul_max(),
    )?;
    let (engine_ids, frames, truths) = data.test_final_windows()?;
    let predictions = finetune.state.predict(&frames, Execution::default())?;
    Ok(CellRun {
        pretrain: pre,
        finetune,
        engine_ids,
        predictions,
        truths,
        labeled_engines: split.labeled.engine_ids(),
    })
}

fn write_histories(dir: &Path, spec: &CellSpec, run: &CellRun) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let stem = spec.key().replace('/', "_");
    if let Some(pre) = &run.pretrain {
        write_history(fs::File::create(dir.join(format!("{stem}.pretrain.jsonl")))?, &pre.history)?;
    }
    let path = dir.join(format!("{stem}.finetune.jsonl"));
    write_history(fs::File::create(&path)?, &run.finetune.history)?;
    Ok(path)
}

/// Runs one cell and records either its metrics or its error.
pub fn run_cell(spec: &CellSpec, data: &PreparedDataset, settings: &RunSettings) -> ExperimentCell {
    let start = Instant::now();
    let mut cell = ExperimentCell {
        spec: *spec,
        scenario_seed: scenario_seed(settings.base_seed, spec.subset, spec.percent, spec.replication),
        training_seed: training_seed(settings.base_seed, spec.subset, spec.percent, spec.grade, spec.replication),
        labeled_engines: Vec::new(),
        metrics: None,
        predictions: Vec::new(),
        pretrain_best: None,
        finetune_best: None,
        history: None,
        seconds: 0.0,
        error: None,
    };
    let outcome = train_cell(spec, data, settings).and_then(|run| {
        let metrics = MetricReport::new(&run.predictions, &run.truths)?;
        let history = match &settings.history_dir {
            Some(dir) => Some(write_histories(dir, spec, &run)?),
            None => None,
        };
        Ok((run, metrics, history))
    });
    match outcome {
        Ok((run, metrics, history)) => {
            cell.labeled_engines = run.labeled_engines;
            cell.pretrain_best = run.pretrain.as_ref().map(|o| (o.best_epoch, o.best_value));
            cell.finetune_best = Some((run.finetune.best_epoch, run.finetune.best_value));
            cell.predictions = run
                .engine_ids
                .iter()
                .zip(run.truths.iter().zip(&run.predictions))
                .map(|(&engine_id, (&truth, &prediction))| EnginePrediction {
                    engine_id,
                    truth,
                    prediction,
                })
                .collect();
            cell.metrics = Some(metrics);
            cell.history = history;
        }
        Err(e) => {
            log::warn!("cell {} failed: {e}", spec.key());
            cell.error = Some(e.to_string());
        }
    }
    cell.seconds = start.elapsed().as_secs_f64();
    cell
}

/// Reads completed cells from a JSON-lines file; a missing file yields none and an
/// unparsable trailing line (an interrupted write) is ignored.
pub fn load_results(path: &Path) -> Result<Vec<ExperimentCell>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path)?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let mut out = Vec::with_capacity(lines.len());
    for (k, line) in lines.iter().enumerate() {
        match serde_json::from_str(line) {
            Ok(c) => out.push(c),
            Err(e) if k + 1 == lines.len() => log::warn!("ignoring incomplete last record in {}: {e}", path.display()),
            Err(e) => {
                return Err(Error::Parse {
                    line: k + 1,
                    msg: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

/// Cuts an interrupted last record so that new records start on a fresh line.
fn drop_torn_tail(path: &Path) -> Result<()> {
    let Ok(bytes) = fs::read(path) else {
        return Ok(());
    };
    if bytes.is_empty() || bytes.ends_with(b"\n") {
        return Ok(());
    }
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |k| k + 1);
    OpenOptions::new().write(true).open(path)?.set_len(keep as u64)?;
    Ok(())
}

/// Runs every cell of `specs` that has no successful record in `results` yet,
/// appending each finished cell to the file. Returns all cells in `specs` order.
pub fn run_grid(
    specs: &[CellSpec],
    datasets: &BTreeMap<Subset, PreparedDataset>,
    settings: &RunSettings,
    results: &Path,
    workers: usize,
) -> Result<Vec<ExperimentCell>> {
    let mut done: BTreeMap<CellSpec, ExperimentCell> = load_results(results)?
        .into_iter()
        .filter(|c| c.error.is_none())
        .map(|c| (c.spec, c))
        .collect();
    let unique: BTreeSet<CellSpec> = specs.iter().copied().collect();
    let missing: Vec<CellSpec> = unique.into_iter().filter(|s| !done.contains_key(s)).collect();
    for s in &missing {
        if !datasets.contains_key(&s.subset) {
            return Err(Error::Config(format!("no prepared dataset for {}", s.subset)));
        }
    }
    log::info!("{} cells requested, {} already complete, {} to run", specs.len(), done.len(), missing.len());
    if let Some(parent) = results.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    drop_torn_tail(results)?;
    let file = Mutex::new(OpenOptions::new().create(true).append(true).open(results)?);
    let fresh: Vec<Result<ExperimentCell>> = par::with_workers(workers, || {
        par::map(Execution::Parallel, &missing, |spec| {
            let cell = run_cell(spec, &datasets[&spec.subset], settings);
            let line = serde_json::to_string(&cell)?;
            let mut f = file.lock().map_err(|_| Error::Config("results file lock poisoned".into()))?;
            writeln!(f, "{line}")?;
            f.flush()?;
            Ok(cell)
        })
    });
    for c in fresh {
        let c = c?;
        done.insert(c.spec, c);
    }
    Ok(specs.iter().filter_map(|s| done.get(s).cloned()).collect())
}

/// Loads a checkpoint if `init` names one; `random` (or `none`) means no pre-training.
pub fn load_init(init: &str) -> Result<Option<ModelState>> {
    match init {
        "random" | "none" => Ok(None),
        path => Ok(Some(ModelState::load(Path::new(path))?)),
    }
}
