//! Metrics, the experiment grid, aggregation, hyperparameter search and embedding export.

pub mod aggregate;
pub mod export;
pub mod grid;
pub mod metrics;
pub mod search;
pub mod seeds;

pub use aggregate::{aggregate, to_csv, to_markdown, AggregateRow, Summary};
pub use export::export_embeddings;
pub use grid::{
    cell_scenario, load_init, load_results, run_cell, run_grid, train_cell, CellRun, CellSpec, EnginePrediction,
    EpochBudget, ExperimentCell, GridSpec, RunSettings, DEFAULT_REPLICATIONS,
};
pub use metrics::{rmse_metric, rul_penalty, rul_score, MetricReport};
pub use search::{random_search, Dist, SearchResult, SearchSpace, Trial, TrialParams};
pub use seeds::{derive_seed, scenario_seed, training_seed};
