//! Optimization, evaluation and hyperparameter search.

pub mod adam;
pub mod data;
pub mod grid;
pub mod metrics;
pub mod trainer;

pub use adam::{adam_step, AdamState};
pub use data::{DataSplits, Dataset};
pub use grid::{grid_search, rank_trials, run_trial, GridSpace, Hyperparams, TrialResult, TrialStatus};
pub use metrics::{area_between, mae, rmse, Evaluation};
pub use trainer::{evaluate, predict, train, EpochRecord, TrainOutcome, TrainSpec};
