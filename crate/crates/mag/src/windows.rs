//! Sliding windows, the chronological split and z-normalization.

use chrono::{Days, NaiveDate};
use mag_core::model::TargetScale;
use mag_core::train::{DataSplits, Dataset};
use mag_core::{MagError, SequenceBatch};
use serde::Serialize;

use crate::error::{AppError, Result};
use crate::table::{FeatureTable, Source};

/// Standard deviations below this are replaced by 1.
pub const MIN_STD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    /// Share of windows used for fitting and validation; the rest are test.
    pub train_fraction: f64,
    /// Share of the training windows, taken from their end, held for validation.
    pub validation_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.9,
            validation_fraction: 0.1,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("train_fraction", self.train_fraction),
            ("validation_fraction", self.validation_fraction),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(AppError::Config(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        Ok(())
    }

    /// `(fit, validation, test)` window counts.
    pub fn counts(&self, windows: usize) -> (usize, usize, usize) {
        let train = (windows as f64 * self.train_fraction).round() as usize;
        let validation = (train as f64 * self.validation_fraction).round() as usize;
        (train - validation, validation, windows - train)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnStats {
    pub name: String,
    pub mean: f64,
    pub std: f64,
}

/// Windows of one table, split and normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedData {
    pub splits: DataSplits,
    /// Last day of each window, per split.
    pub fit_dates: Vec<NaiveDate>,
    pub validation_dates: Vec<NaiveDate>,
    pub test_dates: Vec<NaiveDate>,
    /// Input column statistics in table order (stats, trends, news).
    pub feature_stats: Vec<ColumnStats>,
    pub news_dim: usize,
    pub trends_dim: usize,
    pub stats_dim: usize,
    pub lookback: usize,
    pub horizon: usize,
    /// Normalization reads nothing from table days at or after this index.
    pub train_days: usize,
}

impl WindowedData {
    pub fn target_date(&self, window_end: NaiveDate) -> NaiveDate {
        window_end + Days::new(self.horizon as u64)
    }

    pub fn window_count(&self) -> usize {
        self.splits.fit.len() + self.splits.validation.len() + self.splits.test.len()
    }
}

fn population_stats(values: &[f64]) -> (f64, f64) {
    let seen: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
    if seen.is_empty() {
        return (0.0, 1.0);
    }
    let n = seen.len() as f64;
    let mean = seen.iter().sum::<f64>() / n;
    let var = seen.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std < MIN_STD { 1.0 } else { std })
}

/// Build every window of `lookback` days whose target lies `horizon` days past
/// its last day, then split chronologically.
///
/// Window `i` covers days `i..i + lookback` and targets day
/// `i + lookback - 1 + horizon`. Feature statistics use only the days covered
/// by training windows and target statistics only the training targets.
pub fn make_windows(
    table: &FeatureTable,
    target_column: &str,
    lookback: usize,
    horizon: usize,
    split: &SplitSpec,
) -> Result<WindowedData> {
    split.validate()?;
    if lookback == 0 || horizon == 0 {
        return Err(AppError::Config("lookback and horizon must be >= 1".into()));
    }
    let days = table.len();
    if days < lookback + horizon + 1 {
        return Err(AppError::Config(format!(
            "{days} days cannot hold windows of lookback {lookback} and horizon {horizon} (need at least {})",
            lookback + horizon + 1
        )));
    }
    let target = table
        .column(target_column)
        .ok_or_else(|| AppError::Config(format!("target column `{target_column}` not found")))?;
    let n = days - lookback - horizon + 1;
    let (n_fit, n_val, n_test) = split.counts(n);
    if n_fit == 0 || n_test == 0 {
        return Err(AppError::Config(format!(
            "{n} windows leave {n_fit} for fitting and {n_test} for testing; both must be >= 1"
        )));
    }
    let n_train = n_fit + n_val;
    let feature_days = n_train - 1 + lookback;

    let raw_targets: Vec<f64> = (0..n).map(|i| target.values[i + lookback - 1 + horizon]).collect();
    if let Some(i) = raw_targets.iter().position(|v| !v.is_finite()) {
        return Err(AppError::Model(MagError::Data(format!(
            "target `{target_column}` has no value on {}",
            table.dates[i + lookback - 1 + horizon]
        ))));
    }
    let (t_mean, t_std) = population_stats(&raw_targets[..n_train]);
    let scale = TargetScale { mean: t_mean, std: t_std };

    let mut feature_stats = Vec::with_capacity(table.columns.len());
    let mut normalized: Vec<Vec<f64>> = Vec::with_capacity(table.columns.len());
    for c in &table.columns {
        let (mean, std) = population_stats(&c.values[..feature_days]);
        feature_stats.push(ColumnStats {
            name: c.name.clone(),
            mean,
            std,
        });
        normalized.push(
            c.values
                .iter()
                .map(|&v| if v.is_nan() { 0.0 } else { (v - mean) / std })
                .collect(),
        );
    }

    let news_cols: Vec<usize> = (0..table.columns.len()).filter(|&j| table.columns[j].source == Source::News).collect();
    let other_cols: Vec<usize> = (0..table.columns.len()).filter(|&j| table.columns[j].source != Source::News).collect();
    let gather = |cols: &[usize], start: usize, end: usize| -> Result<SequenceBatch> {
        let mut data = Vec::with_capacity((end - start) * lookback * cols.len());
        for i in start..end {
            for day in i..i + lookback {
                data.extend(cols.iter().map(|&j| normalized[j][day]));
            }
        }
        Ok(SequenceBatch::new(end - start, lookback, cols.len(), data)?)
    };
    let dataset = |start: usize, end: usize| -> Result<Dataset> {
        Ok(Dataset::new(
            gather(&news_cols, start, end)?,
            gather(&other_cols, start, end)?,
            raw_targets[start..end].iter().map(|&v| scale.normalize(v)).collect(),
            raw_targets[start..end].to_vec(),
        )?)
    };
    let end_dates = |start: usize, end: usize| -> Vec<NaiveDate> { (start..end).map(|i| table.dates[i + lookback - 1]).collect() };

    Ok(WindowedData {
        splits: DataSplits {
            fit: dataset(0, n_fit)?,
            validation: dataset(n_fit, n_train)?,
            test: dataset(n_train, n)?,
            scale,
        },
        fit_dates: end_dates(0, n_fit),
        validation_dates: end_dates(n_fit, n_train),
        test_dates: end_dates(n_train, n),
        feature_stats,
        news_dim: news_cols.len(),
        trends_dim: table.width(Source::Trends),
        stats_dim: table.width(Source::Stats),
        lookback,
        horizon,
        train_days: n_train - 1 + lookback + horizon,
    })
}
