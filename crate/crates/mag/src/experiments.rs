//! Loading a run's inputs, parallel grid search and the ablation study.

use mag_core::train::{
    evaluate, rank_trials, run_trial, train, DataSplits, Evaluation, GridSpace, TrainOutcome, TrainSpec, TrialResult,
};
use mag_core::ModelConfig;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{AppError, Result};
use crate::groups::{leave_one_out, FeatureGroupMap, Leave, GROUP_NAMES};
use crate::table::{align_and_impute, load_table, FeatureTable, ImputationReport, Source};
use crate::windows::{make_windows, WindowedData};

/// Load and align the configured source files.
pub fn load_inputs(run: &RunConfig) -> Result<(FeatureTable, ImputationReport)> {
    let mut tables = vec![load_table(&run.stats, Source::Stats)?];
    if let Some(p) = &run.trends {
        tables.push(load_table(p, Source::Trends)?);
    }
    if let Some(p) = &run.news_emb {
        tables.push(load_table(p, Source::News)?);
    }
    align_and_impute(&tables)
}

pub fn load_groups(run: &RunConfig, table: &FeatureTable) -> Result<FeatureGroupMap> {
    let path = run
        .groups
        .as_ref()
        .ok_or_else(|| AppError::Config("`groups` must name a groups file".into()))?;
    let groups = FeatureGroupMap::load(path)?;
    groups.check_covers(table)?;
    Ok(groups)
}

pub fn windows(run: &RunConfig, table: &FeatureTable) -> Result<WindowedData> {
    make_windows(table, &run.target_column, run.model.lookback, run.model.horizon, &run.split)
}

/// Train every selected combination, in parallel, and rank them.
///
/// Each trial depends only on its own settings, so the ranking does not
/// depend on scheduling.
pub fn grid_search(space: &GridSpace, splits: &DataSplits, config: &ModelConfig, spec: &TrainSpec) -> Result<Vec<TrialResult>> {
    space.validate()?;
    let results = space
        .trial_indices()
        .into_par_iter()
        .map(|i| run_trial(i, space.combination(i), config, spec, splits))
        .collect();
    Ok(rank_trials(results))
}

/// One ablation setting.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub name: String,
    pub leave: Leave,
    pub use_attention: bool,
}

/// The full model, each statistics group left out in turn, then without
/// trends, without news and without the attention block.
pub fn ablation_conditions() -> Vec<Condition> {
    let c = |name: String, leave, use_attention| Condition {
        name,
        leave,
        use_attention,
    };
    let mut out = vec![c("full".into(), Leave::Nothing, true)];
    for g in GROUP_NAMES {
        out.push(c(format!("without_{g}"), Leave::Group(g.into()), true));
    }
    out.push(c("without_trends".into(), Leave::Trends, true));
    out.push(c("without_news".into(), Leave::News, true));
    out.push(c("without_attention".into(), Leave::Nothing, false));
    out
}

/// Result of training under one condition.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionRun {
    pub config: ModelConfig,
    pub data: WindowedData,
    pub outcome: TrainOutcome,
    /// On the test windows.
    pub evaluation: Evaluation,
}

pub fn run_condition(run: &RunConfig, table: &FeatureTable, groups: &FeatureGroupMap, condition: &Condition) -> Result<ConditionRun> {
    let reduced = leave_one_out(table, groups, &condition.leave)?;
    let data = windows(run, &reduced)?;
    let mut config = run.model_for(&data)?;
    config.use_attention &= condition.use_attention;
    let outcome = train(&config, &data.splits, &run.train)?;
    let evaluation = evaluate(&outcome.params, &config, &data.splits.test, &data.splits.scale)?;
    Ok(ConditionRun {
        config,
        data,
        outcome,
        evaluation,
    })
}

/// Test metrics for every condition of [`ablation_conditions`], in that order.
pub fn ablate(run: &RunConfig, table: &FeatureTable, groups: &FeatureGroupMap) -> Result<Vec<(String, Evaluation)>> {
    ablation_conditions()
        .par_iter()
        .map(|c| Ok((c.name.clone(), run_condition(run, table, groups, c)?.evaluation)))
        .collect()
}
