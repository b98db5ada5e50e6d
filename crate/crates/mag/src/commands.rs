//! The CLI commands. Each reads the configured inputs and writes its
//! artifacts under the output directory only.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use mag_core::train::{predict, train, Dataset, Evaluation};

use crate::artifacts::{write_history, write_metrics, write_predictions, write_ranking, ParamsFile};
use crate::config::RunConfig;
use crate::error::{AppError, Result};
use crate::experiments::{ablate, grid_search, load_groups, load_inputs, windows};
use crate::windows::WindowedData;

pub const PARAMS_FILE: &str = "params.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const EVALUATION_FILE: &str = "evaluation.csv";
pub const RANKING_FILE: &str = "grid_ranking.csv";
pub const ABLATION_FILE: &str = "ablation.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Fit,
    Validation,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fit" => Ok(Split::Fit),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(AppError::Config(format!("unknown split `{other}` (fit, validation, test)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Fit => "fit",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    fn select(self, data: &WindowedData) -> (&Dataset, &[NaiveDate]) {
        match self {
            Split::Fit => (&data.splits.fit, &data.fit_dates),
            Split::Validation => (&data.splits.validation, &data.validation_dates),
            Split::Test => (&data.splits.test, &data.test_dates),
        }
    }
}

/// `<split>_predictions.csv`
pub fn predictions_file(split: Split) -> String {
    format!("{}_predictions.csv", split.name())
}

fn out(run: &RunConfig, name: &str) -> PathBuf {
    run.output_dir.join(name)
}

/// Fit the model; writes the parameter file, the epoch history and the
/// validation predictions of the kept parameters.
pub fn train_command(run: &RunConfig) -> Result<Vec<String>> {
    let (table, _) = load_inputs(run)?;
    let data = windows(run, &table)?;
    let config = run.model_for(&data)?;
    let outcome = train(&config, &data.splits, &run.train)?;
    let echo = run.echo();
    ParamsFile::new(&echo, &config, data.splits.scale, outcome.best_epoch, &outcome.params).save(&out(run, PARAMS_FILE))?;
    write_history(&out(run, HISTORY_FILE), &echo, &outcome.history)?;
    let (set, dates) = Split::Validation.select(&data);
    let preds = predict(&outcome.params, &config, set, &data.splits.scale)?;
    write_predictions(
        &out(run, &predictions_file(Split::Validation)),
        &echo,
        dates,
        &set.raw_targets,
        &preds.denormalized,
    )?;
    Ok(vec![
        format!("epochs run: {}", outcome.history.len()),
        format!("best epoch: {}", outcome.best_epoch),
        format!("best validation rmse: {}", outcome.best_validation_rmse),
        format!("wrote {}", out(run, PARAMS_FILE).display()),
    ])
}

fn load_trained(run: &RunConfig, params: Option<&Path>) -> Result<(WindowedData, mag_core::ModelConfig, mag_core::ParameterSet)> {
    let (table, _) = load_inputs(run)?;
    let data = windows(run, &table)?;
    let config = run.model_for(&data)?;
    let path = params.map_or_else(|| out(run, PARAMS_FILE), Path::to_path_buf);
    let set = ParamsFile::load(&path)?.parameters_for(&config)?;
    Ok((data, config, set))
}

/// Predictions of a saved parameter file on one split.
pub fn predict_command(run: &RunConfig, split: Split, params: Option<&Path>) -> Result<Vec<String>> {
    let (data, config, set) = load_trained(run, params)?;
    let (windows, dates) = split.select(&data);
    let preds = predict(&set, &config, windows, &data.splits.scale)?;
    let path = out(run, &predictions_file(split));
    write_predictions(&path, &run.echo(), dates, &windows.raw_targets, &preds.denormalized)?;
    Ok(vec![format!("{} windows", windows.len()), format!("wrote {}", path.display())])
}

/// Test-split metrics of a saved parameter file.
pub fn evaluate_command(run: &RunConfig, params: Option<&Path>) -> Result<Vec<String>> {
    let (data, config, set) = load_trained(run, params)?;
    let test = &data.splits.test;
    let preds = predict(&set, &config, test, &data.splits.scale)?;
    let eval = Evaluation::from_series(preds.denormalized.clone(), test.raw_targets.clone())?;
    let echo = run.echo();
    write_predictions(
        &out(run, &predictions_file(Split::Test)),
        &echo,
        &data.test_dates,
        &test.raw_targets,
        &preds.denormalized,
    )?;
    write_metrics(&out(run, EVALUATION_FILE), &echo, &[("test".to_string(), eval.clone())])?;
    Ok(vec![
        format!("rmse: {}", eval.rmse),
        format!("mae: {}", eval.mae),
        format!("area between curves: {}", eval.area_between),
    ])
}

pub fn gridsearch_command(run: &RunConfig) -> Result<Vec<String>> {
    let (table, _) = load_inputs(run)?;
    let data = windows(run, &table)?;
    let config = run.model_for(&data)?;
    let ranked = grid_search(&run.grid, &data.splits, &config, &run.train)?;
    write_ranking(&out(run, RANKING_FILE), &run.echo(), &ranked)?;
    let mut lines = vec![format!("{} trials", ranked.len())];
    if let Some(best) = ranked.first() {
        let h = &best.hyperparams;
        lines.push(format!(
            "best: batch_size={} lr={} gru_units={} dropout={} num_heads={} head_size={} validation_rmse={}",
            h.batch_size, h.lr, h.gru_units, h.dropout, h.num_heads, h.head_size, best.validation_rmse
        ));
    }
    Ok(lines)
}

pub fn ablate_command(run: &RunConfig) -> Result<Vec<String>> {
    let (table, _) = load_inputs(run)?;
    let groups = load_groups(run, &table)?;
    let rows = ablate(run, &table, &groups)?;
    write_metrics(&out(run, ABLATION_FILE), &run.echo(), &rows)?;
    Ok(rows
        .iter()
        .map(|(c, e)| format!("{c}: rmse={} mae={} area={}", e.rmse, e.mae, e.area_between))
        .collect())
}
