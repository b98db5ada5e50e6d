//! Files written by the commands: the parameter file and CSV reports.
//!
//! Every CSV starts with the config echo as `# key = value` lines.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use mag_core::model::{build_model, TargetScale};
use mag_core::train::{EpochRecord, Evaluation, TrialResult, TrialStatus};
use mag_core::{Matrix, ModelConfig, ParameterSet};
use serde::{Deserialize, Serialize};

use crate::config::echo_header;
use crate::error::{AppError, Result};
use crate::table::DATE_FORMAT;

pub const PARAMS_FORMAT: &str = "mag-params-1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub format: String,
    pub config: BTreeMap<String, String>,
    pub model: ModelConfig,
    pub scale: TargetScale,
    pub best_epoch: usize,
    pub params: BTreeMap<String, Matrix>,
}

impl ParamsFile {
    pub fn new(echo: &[(String, String)], model: &ModelConfig, scale: TargetScale, best_epoch: usize, params: &ParameterSet) -> Self {
        ParamsFile {
            format: PARAMS_FORMAT.to_string(),
            config: echo.iter().cloned().collect(),
            model: model.clone(),
            scale,
            best_epoch,
            params: params.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("parameter file serializes");
        write_file(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        let file: ParamsFile = serde_json::from_str(&text)
            .map_err(|e| AppError::format(path, Some(e.line() as u64), e.to_string()))?;
        if file.format != PARAMS_FORMAT {
            return Err(AppError::format(path, None, format!("unknown format `{}`", file.format)));
        }
        Ok(file)
    }

    /// Parameters for `expected`; refuses files trained under another model configuration.
    pub fn parameters_for(&self, expected: &ModelConfig) -> Result<ParameterSet> {
        if &self.model != expected {
            let a = serde_json::to_value(&self.model).expect("config serializes");
            let b = serde_json::to_value(expected).expect("config serializes");
            let fields: Vec<String> = a
                .as_object()
                .into_iter()
                .flatten()
                .filter(|(k, v)| b.get(k.as_str()) != Some(v))
                .map(|(k, v)| format!("{k} (file {v}, run {})", b[k.as_str()]))
                .collect();
            return Err(AppError::Config(format!(
                "parameter file was trained with a different model configuration: {}",
                fields.join(", ")
            )));
        }
        let mut set = ParameterSet::new();
        for (name, m) in &self.params {
            if m.len() != m.rows() * m.cols() || !m.is_finite() {
                return Err(AppError::Config(format!("parameter `{name}` is malformed")));
            }
            set.insert(name.clone(), m.clone());
        }
        if !set.same_layout(&build_model(expected, 0)?) {
            return Err(AppError::Config("parameter names or shapes do not match the model".into()));
        }
        Ok(set)
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| AppError::io(path, e))
}

/// Header lines followed by CSV rows.
fn write_csv(path: &Path, echo: &[(String, String)], header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let mut out = echo_header(echo).into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        let csv_err = |e: csv::Error| AppError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(e),
        };
        w.write_record(header).map_err(csv_err)?;
        for row in rows {
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| AppError::io(path, e))?;
    }
    write_file(path, &out)
}

pub fn write_predictions(
    path: &Path,
    echo: &[(String, String)],
    dates: &[NaiveDate],
    actual: &[f64],
    predicted: &[f64],
) -> Result<()> {
    let rows = dates
        .iter()
        .zip(actual.iter().zip(predicted))
        .map(|(d, (a, p))| vec![d.format(DATE_FORMAT).to_string(), a.to_string(), p.to_string()])
        .collect();
    write_csv(path, echo, &["date", "actual", "predicted"], rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRows {
    pub dates: Vec<NaiveDate>,
    pub actual: Vec<f64>,
    pub predicted: Vec<f64>,
}

/// Read back a file written by [`write_predictions`].
pub fn read_predictions(path: &Path) -> Result<PredictionRows> {
    let file = File::open(path).map_err(|e| AppError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file);
    let mut out = PredictionRows {
        dates: Vec::new(),
        actual: Vec::new(),
        predicted: Vec::new(),
    };
    for record in reader.records() {
        let record = record.map_err(|e| AppError::format(path, e.position().map(|p| p.line()), e.to_string()))?;
        let line = record.position().map(|p| p.line());
        let bad = || AppError::format(path, line, "expected `date,actual,predicted`");
        let date = NaiveDate::parse_from_str(record.get(0).ok_or_else(bad)?, DATE_FORMAT).map_err(|_| bad())?;
        let actual: f64 = record.get(1).ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let predicted: f64 = record.get(2).ok_or_else(bad)?.parse().map_err(|_| bad())?;
        out.dates.push(date);
        out.actual.push(actual);
        out.predicted.push(predicted);
    }
    Ok(out)
}

pub fn write_metrics(path: &Path, echo: &[(String, String)], rows: &[(String, Evaluation)]) -> Result<()> {
    let rows = rows
        .iter()
        .map(|(c, e)| vec![c.clone(), e.rmse.to_string(), e.mae.to_string(), e.area_between.to_string()])
        .collect();
    write_csv(path, echo, &["condition", "rmse", "mae", "area"], rows)
}

pub fn write_history(path: &Path, echo: &[(String, String)], history: &[EpochRecord]) -> Result<()> {
    let rows = history
        .iter()
        .map(|h| vec![h.epoch.to_string(), h.train_loss.to_string(), h.validation_rmse.to_string()])
        .collect();
    write_csv(path, echo, &["epoch", "train_loss", "validation_rmse"], rows)
}

pub fn write_ranking(path: &Path, echo: &[(String, String)], ranked: &[TrialResult]) -> Result<()> {
    let rows = ranked
        .iter()
        .enumerate()
        .map(|(rank, t)| {
            let h = &t.hyperparams;
            let status = match &t.status {
                TrialStatus::Completed => "completed".to_string(),
                TrialStatus::Failed(msg) => format!("failed: {msg}"),
            };
            vec![
                (rank + 1).to_string(),
                t.index.to_string(),
                h.batch_size.to_string(),
                h.lr.to_string(),
                h.gru_units.to_string(),
                h.dropout.to_string(),
                h.num_heads.to_string(),
                h.head_size.to_string(),
                t.validation_rmse.to_string(),
                t.best_epoch.to_string(),
                status,
            ]
        })
        .collect();
    write_csv(
        path,
        echo,
        &[
            "rank",
            "trial",
            "batch_size",
            "lr",
            "gru_units",
            "dropout",
            "num_heads",
            "head_size",
            "validation_rmse",
            "best_epoch",
            "status",
        ],
        rows,
    )
}

/// Plain-text lines, used for the self-test report.
pub fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut out = Vec::new();
    for l in lines {
        writeln!(out, "{l}").expect("writing to memory");
    }
    write_file(path, &out)
}
