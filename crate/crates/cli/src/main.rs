use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use siamrul::bench::{
    aggregate, export_embeddings, load_init, load_results, random_search, run_grid, to_csv, to_markdown,
    CellSpec, EpochBudget, ExperimentCell, GridSpec, RunSettings, SearchSpace,
};
use siamrul::data::{prepare, read_subset_dir, synthetic, DatasetConfig, PreparedDataset, Subset};
use siamrul::models::{ModelConfig, Pretraining, DEFAULT_FILTERS};
use siamrul::scenarios::apply_scenario;
use siamrul::trainers::{finetune_supervised, pretrain, write_history, TrainConfig, MAX_EPOCH_FACTOR};

#[derive(Parser)]
#[command(name = "siamrul", version, about = "Semi-supervised remaining-useful-lifetime estimation on CMAPSS")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic run-to-failure corpus in CMAPSS text format.
    Synth(SynthArgs),
    /// Select channels, split validation engines, scale, and save a dataset file.
    Prepare(PrepareArgs),
    /// Pre-train a feature extractor and save its checkpoint.
    Pretrain(PretrainArgs),
    /// Fine-tune on the labeled engines of a scenario and score the test engines.
    Finetune(FinetuneArgs),
    /// Run an experiment grid with resumable results.
    Experiment(ExperimentArgs),
    /// Random hyperparameter search.
    Search(SearchArgs),
    /// Aggregate result records into tables.
    Report(ReportArgs),
    /// Write extractor embeddings of every frame to CSV.
    ExportEmbeddings(ExportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value = "FD004")]
    subset: Subset,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 60)]
    train_engines: usize,
    #[arg(long, default_value_t = 30)]
    test_engines: usize,
    #[arg(long, default_value_t = 140)]
    min_len: usize,
    #[arg(long, default_value_t = 260)]
    max_len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PrepareArgs {
    #[arg(long)]
    subset: Subset,
    /// Directory holding train_FDxxx.txt, test_FDxxx.txt and RUL_FDxxx.txt.
    #[arg(long, env = "SIAMRUL_DATA_DIR")]
    data_dir: PathBuf,
    /// Output dataset file; defaults to <data-dir>/<subset>.dataset.json.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed of the validation split.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Clone)]
struct ScenarioArgs {
    /// Prepared dataset file from `prepare`.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 2)]
    percent: u32,
    #[arg(long, default_value_t = 90)]
    grade: u32,
    #[arg(long, default_value_t = 0)]
    replication: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_FILTERS)]
    filters: usize,
    /// Minimum epoch budget; the maximum follows at the default multiple.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
}

impl ScenarioArgs {
    fn budget(&self) -> Option<EpochBudget> {
        self.epochs.map(|min| EpochBudget {
            min_epochs: min,
            max_epochs: min * MAX_EPOCH_FACTOR,
            patience: self.patience.unwrap_or(siamrul::trainers::DEFAULT_PATIENCE),
        })
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PretrainMethod {
    #[value(name = "self")]
    SelfSupervised,
    Ae,
    Rbm,
}

impl From<PretrainMethod> for Pretraining {
    fn from(m: PretrainMethod) -> Self {
        match m {
            PretrainMethod::SelfSupervised => Pretraining::SelfSupervised,
            PretrainMethod::Ae => Pretraining::Autoencoder,
            PretrainMethod::Rbm => Pretraining::Rbm,
        }
    }
}

#[derive(Args)]
struct PretrainArgs {
    #[arg(long)]
    method: PretrainMethod,
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Training history as JSON lines.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct FinetuneArgs {
    /// Pre-trained checkpoint, or `random` for the baseline.
    #[arg(long, default_value = "random")]
    init: String,
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Fine-tuned checkpoint path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Result records (JSON lines) the scored run is appended to.
    #[arg(long)]
    results: PathBuf,
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// `default` or a JSON grid file.
    #[arg(long, default_value = "default")]
    grid: String,
    #[arg(long, env = "SIAMRUL_DATA_DIR")]
    data_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_FILTERS)]
    filters: usize,
    #[arg(long)]
    pretrain_epochs: Option<usize>,
    #[arg(long)]
    finetune_epochs: Option<usize>,
    #[arg(long, default_value_t = siamrul::trainers::DEFAULT_PATIENCE)]
    patience: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Stage {
    Supervised,
    Pretrain,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    stage: Stage,
    /// Pre-training method searched at stage `pretrain`.
    #[arg(long, default_value = "self")]
    method: PretrainMethod,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Training runs averaged per pre-training trial.
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_FILTERS)]
    filters: usize,
    #[arg(long)]
    epochs: Option<usize>,
    /// Trial log (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Result records from `experiment` or `finetune`.
    #[arg(long)]
    results: PathBuf,
    /// Aggregated table (CSV).
    #[arg(long)]
    out: PathBuf,
    /// Also write the tables as markdown to this path.
    #[arg(long)]
    markdown: Option<PathBuf>,
    /// Per-engine predictions (CSV), one scored row per test engine and run.
    #[arg(long)]
    engines: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Validation,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "validation")]
    split: Split,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Synth(a) => synth(a),
        Command::Prepare(a) => prepare_cmd(a),
        Command::Pretrain(a) => pretrain_cmd(a),
        Command::Finetune(a) => finetune_cmd(a),
        Command::Experiment(a) => experiment(a),
        Command::Search(a) => search(a),
        Command::Report(a) => report(a),
        Command::ExportEmbeddings(a) => export(a),
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = synthetic::SyntheticConfig {
        train_engines: a.train_engines,
        test_engines: a.test_engines,
        min_len: a.min_len,
        max_len: a.max_len,
        seed: a.seed,
        ..Default::default()
    };
    let corpus = synthetic::generate(a.subset, &cfg)?;
    synthetic::write_dir(&corpus, &a.out)?;
    println!("wrote {} train and {} test engines to {}", a.train_engines, a.test_engines, a.out.display());
    Ok(())
}

fn prepare_cmd(a: PrepareArgs) -> Result<()> {
    let (train, test) = read_subset_dir(&a.data_dir, a.subset)?;
    let mut cfg = DatasetConfig::for_subset(a.subset);
    cfg.split_seed = a.seed;
    let ds = prepare(&train, &test, cfg)?;
    let out = a
        .out
        .unwrap_or_else(|| a.data_dir.join(format!("{}.dataset.json", a.subset)));
    ds.save(&out)?;
    println!(
        "{}: {} train, {} validation, {} test engines -> {}",
        a.subset,
        ds.train.len(),
        ds.validation.len(),
        ds.test.len(),
        out.display()
    );
    Ok(())
}

fn load_dataset(path: &Path) -> Result<PreparedDataset> {
    PreparedDataset::load(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn settings(s: &ScenarioArgs) -> RunSettings {
    RunSettings {
        filters: s.filters,
        base_seed: s.seed,
        pretrain_epochs: s.budget(),
        finetune_epochs: s.budget(),
        ..RunSettings::default()
    }
}

fn cell(ds: &PreparedDataset, method: Pretraining, s: &ScenarioArgs) -> CellSpec {
    CellSpec {
        subset: ds.subset,
        method,
        percent: s.percent,
        grade: (method != Pretraining::None).then_some(s.grade),
        replication: s.replication,
    }
}

fn save_history(path: &Option<PathBuf>, history: &[siamrul::trainers::EpochRecord]) -> Result<()> {
    if let Some(p) = path {
        write_history(BufWriter::new(fs::File::create(p)?), history)?;
    }
    Ok(())
}

fn pretrain_cmd(a: PretrainArgs) -> Result<()> {
    let ds = load_dataset(&a.scenario.dataset)?;
    let method: Pretraining = a.method.into();
    let spec = cell(&ds, method, &a.scenario);
    let settings = settings(&a.scenario);
    let scenario = siamrul::bench::cell_scenario(&spec, &settings)?;
    let split = apply_scenario(&ds.train, &scenario)?;
    let seed = siamrul::bench::training_seed(settings.base_seed, spec.subset, spec.percent, spec.grade, spec.replication);
    let cfg = settings
        .pretraining_config(spec.subset, method, seed)
        .expect("pre-training methods have a configuration");
    let arch = ModelConfig::new(ds.window(), a.scenario.filters, 0.0)?;
    let out = pretrain(method, &split, &ds.validation, &arch, &cfg, ds.rul_max())?.expect("pre-training ran");
    out.state.save(&a.out)?;
    save_history(&a.history, &out.history)?;
    println!(
        "{method}: best {} {:.6} at epoch {} of {}; checkpoint {}",
        out.metric,
        out.best_value,
        out.best_epoch,
        out.history.len(),
        a.out.display()
    );
    Ok(())
}

fn finetune_cmd(a: FinetuneArgs) -> Result<()> {
    let ds = load_dataset(&a.scenario.dataset)?;
    let init = load_init(&a.init)?;
    let method = init.as_ref().map_or(Pretraining::None, |s| s.pretraining);
    let spec = cell(&ds, method, &a.scenario);
    let settings = settings(&a.scenario);
    let scenario = siamrul::bench::cell_scenario(&spec, &settings)?;
    let split = apply_scenario(&ds.train, &scenario)?;
    let seed = siamrul::bench::training_seed(settings.base_seed, spec.subset, spec.percent, spec.grade, spec.replication);
    let cfg = settings.supervised_config(spec.subset, seed.wrapping_add(1));
    let arch = ModelConfig::new(ds.window(), a.scenario.filters, 0.0)?;
    let start = std::time::Instant::now();
    let out = finetune_supervised(init.as_ref(), &split.labeled, &ds.validation, &arch, &cfg, ds.rul_max())?;
    let (ids, frames, truths) = ds.test_final_windows()?;
    let pred = out.state.predict(&frames, Default::default())?;
    let metrics = siamrul::bench::MetricReport::new(&pred, &truths)?;
    if let Some(p) = &a.out {
        out.state.save(p)?;
    }
    save_history(&a.history, &out.history)?;
    let record = ExperimentCell {
        spec,
        scenario_seed: scenario.seed,
        training_seed: seed,
        labeled_engines: split.labeled.engine_ids(),
        predictions: ids
            .iter()
            .zip(truths.iter().zip(&pred))
            .map(|(&engine_id, (&truth, &prediction))| siamrul::bench::EnginePrediction {
                engine_id,
                truth,
                prediction,
            })
            .collect(),
        metrics: Some(metrics.clone()),
        pretrain_best: None,
        finetune_best: Some((out.best_epoch, out.best_value)),
        history: a.history.clone(),
        seconds: start.elapsed().as_secs_f64(),
        error: None,
    };
    append_record(&a.results, &record)?;
    println!(
        "{method} {}% labeled: validation RMSE {:.3} at epoch {}; test RMSE {:.3}, score {:.3} over {} engines",
        spec.percent, out.best_value, out.best_epoch, metrics.rmse, metrics.rul_score, metrics.count
    );
    Ok(())
}

fn append_record(path: &Path, cell: &ExperimentCell) -> Result<()> {
    use std::io::Write;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{}", serde_json::to_string(cell)?)?;
    Ok(())
}

fn experiment(a: ExperimentArgs) -> Result<()> {
    let mut grid = if a.grid == "default" {
        GridSpec::default()
    } else {
        GridSpec::load(Path::new(&a.grid)).with_context(|| format!("reading grid {}", a.grid))?
    };
    if let Some(r) = a.replications {
        grid.replications = r;
    }
    let mut datasets = BTreeMap::new();
    for &subset in &grid.subsets {
        let (train, test) = read_subset_dir(&a.data_dir, subset)?;
        datasets.insert(subset, prepare(&train, &test, DatasetConfig::for_subset(subset))?);
    }
    let budget = |min: Option<usize>| {
        min.map(|m| EpochBudget {
            min_epochs: m,
            max_epochs: m * MAX_EPOCH_FACTOR,
            patience: a.patience,
        })
    };
    let settings = RunSettings {
        filters: a.filters,
        base_seed: a.seed,
        pretrain_epochs: budget(a.pretrain_epochs),
        finetune_epochs: budget(a.finetune_epochs),
        history_dir: Some(a.out.join("history")),
        ..RunSettings::default()
    };
    let specs = grid.cells();
    let results = a.out.join("results.jsonl");
    let cells = run_grid(&specs, &datasets, &settings, &results, a.workers)?;
    let failed = cells.iter().filter(|c| c.error.is_some()).count();
    let rows = aggregate(&cells);
    fs::write(a.out.join("summary.csv"), to_csv(&rows))?;
    println!("{} cells ({} failed); results in {}", cells.len(), failed, results.display());
    Ok(())
}

fn search(a: SearchArgs) -> Result<()> {
    let ds = load_dataset(&a.dataset)?;
    let subset = ds.subset;
    let budget = a.epochs.map(|m| EpochBudget {
        min_epochs: m,
        max_epochs: m * MAX_EPOCH_FACTOR,
        patience: siamrul::trainers::DEFAULT_PATIENCE,
    });
    let arch = ModelConfig::new(ds.window(), a.filters, 0.0)?;
    let result = match a.stage {
        Stage::Supervised => {
            let all = siamrul::scenarios::DataScenario::custom(100, 90, a.seed)?;
            let split = apply_scenario(&ds.train, &all)?;
            random_search(&SearchSpace::supervised(), a.trials, a.seed, |p| {
                let mut cfg = TrainConfig::supervised(subset).with_seed(a.seed);
                if let Some(b) = &budget {
                    cfg = b.apply(cfg);
                }
                cfg.learning_rate = p.learning_rate;
                cfg.dropout = p.dropout;
                cfg.batch_size = p.batch_size;
                Ok(finetune_supervised(None, &split.labeled, &ds.validation, &arch, &cfg, ds.rul_max())?.best_value)
            })?
        }
        Stage::Pretrain => {
            let method: Pretraining = a.method.into();
            let scenario = siamrul::scenarios::DataScenario::custom(2, 80, a.seed)?;
            let split = apply_scenario(&ds.train, &scenario)?;
            random_search(&SearchSpace::pretraining(), a.trials, a.seed, |p| {
                let mut total = 0.0;
                for r in 0..a.repeats.max(1) {
                    let mut cfg = TrainConfig::pretraining(method, subset)
                        .expect("pre-training method")
                        .with_seed(a.seed.wrapping_add(r as u64));
                    if let Some(b) = &budget {
                        cfg = b.apply(cfg);
                    }
                    cfg.learning_rate = p.learning_rate;
                    cfg.dropout = p.dropout;
                    cfg.batch_size = p.batch_size;
                    cfg.min_distance = p.min_distance.unwrap_or(cfg.min_distance);
                    let out = pretrain(method, &split, &ds.validation, &arch, &cfg, ds.rul_max())?
                        .expect("pre-training ran");
                    total += out.best_value;
                }
                Ok(total / a.repeats.max(1) as f64)
            })?
        }
    };
    fs::write(&a.out, serde_json::to_string_pretty(&result)?)?;
    println!(
        "best of {} trials: {:?} (objective {:.6})",
        result.trials.len(),
        result.best.params,
        result.best.objective.unwrap_or(f64::NAN)
    );
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let cells = load_results(&a.results)?;
    if cells.is_empty() {
        bail!("no result records in {}", a.results.display());
    }
    let rows = aggregate(&cells);
    fs::write(&a.out, to_csv(&rows))?;
    if let Some(md) = &a.markdown {
        fs::write(md, to_markdown(&rows))?;
    }
    if let Some(path) = &a.engines {
        let mut csv = String::from("subset,method,percent,grade,replication,engine,true_rul,predicted_rul,delta,score\n");
        for c in cells.iter().filter(|c| c.metrics.is_some()) {
            let s = c.spec;
            let grade = s.grade.map_or_else(String::new, |g| g.to_string());
            for p in &c.predictions {
                let delta = p.prediction - p.truth;
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{}\n",
                    s.subset,
                    s.method,
                    s.percent,
                    grade,
                    s.replication,
                    p.engine_id,
                    p.truth,
                    p.prediction,
                    delta,
                    siamrul::bench::rul_penalty(delta)
                ));
            }
        }
        fs::write(path, csv)?;
    }
    println!("{} groups from {} records -> {}", rows.len(), cells.len(), a.out.display());
    Ok(())
}

fn export(a: ExportArgs) -> Result<()> {
    let ds = load_dataset(&a.dataset)?;
    let state = siamrul::models::ModelState::load(&a.ckpt)?;
    let series = match a.split {
        Split::Train => &ds.train.series,
        Split::Validation => &ds.validation.series,
    };
    let file = BufWriter::new(fs::File::create(&a.out)?);
    let rows = export_embeddings(&state, series, ds.rul_max(), file)?;
    println!("{rows} rows -> {}", a.out.display());
    Ok(())
}
