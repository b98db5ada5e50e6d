//! Mini-batch training with early stopping on validation RMSE.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{MagError, Result};
use crate::model::{self, ForecastOutput, ModelConfig, ParameterSet, TargetScale};
use crate::rng;
use crate::train::adam::{adam_step, AdamState};
use crate::train::data::{DataSplits, Dataset};
use crate::train::metrics::{self, Evaluation};

/// Optimization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    /// Stop once this many consecutive epochs pass without a new best validation RMSE.
    pub patience: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            batch_size: 64,
            lr: 0.01,
            epochs: 200,
            patience: 20,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(MagError::Config("batch_size must be >= 1".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(MagError::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(MagError::Config("epochs must be >= 1".into()));
        }
        if self.patience > self.epochs {
            return Err(MagError::Config(format!(
                "patience {} exceeds epochs {}",
                self.patience, self.epochs
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(MagError::Config("optimizer needs beta1, beta2 in [0, 1) and epsilon > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean training MSE over the epoch's batches (normalized units).
    pub train_loss: f64,
    /// Validation RMSE in target units.
    pub validation_rmse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation RMSE.
    pub params: ParameterSet,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_validation_rmse: f64,
}

const PREDICT_CHUNK: usize = 256;

/// Inference over a whole dataset.
pub fn predict(params: &ParameterSet, config: &ModelConfig, data: &Dataset, scale: &TargetScale) -> Result<ForecastOutput> {
    let mut preds = Vec::with_capacity(data.len());
    let mut start = 0;
    while start < data.len() {
        let end = (start + PREDICT_CHUNK).min(data.len());
        let chunk = data.range(start, end);
        preds.extend(model::forward(params, config, &chunk.news, &chunk.other, false, 0)?);
        start = end;
    }
    Ok(ForecastOutput::from_normalized(preds, scale))
}

/// Metrics of denormalized predictions against the raw targets.
pub fn evaluate(params: &ParameterSet, config: &ModelConfig, data: &Dataset, scale: &TargetScale) -> Result<Evaluation> {
    let out = predict(params, config, data, scale)?;
    Evaluation::from_series(out.denormalized, data.raw_targets.clone())
}

fn monitor_rmse(params: &ParameterSet, config: &ModelConfig, data: &Dataset, scale: &TargetScale) -> Result<f64> {
    let out = predict(params, config, data, scale)?;
    metrics::rmse(&out.denormalized, &data.raw_targets)
}

/// Train from a fresh seeded initialization.
///
/// Each epoch shuffles the fit windows with a seeded generator, runs Adam over
/// mini-batches of MSE, then scores the validation windows (the fit windows
/// when there is no validation split). The best-scoring parameters are kept.
pub fn train(config: &ModelConfig, splits: &DataSplits, spec: &TrainSpec) -> Result<TrainOutcome> {
    config.validate()?;
    spec.validate()?;
    if splits.fit.is_empty() {
        return Err(MagError::Data("no training windows".into()));
    }
    let monitor = if splits.validation.is_empty() {
        &splits.fit
    } else {
        &splits.validation
    };

    let mut params = model::build_model(config, config.seed)?;
    let mut state = AdamState::new(&params);
    let mut order: Vec<usize> = (0..splits.fit.len()).collect();
    let mut shuffle_rng = rng::seeded(spec.seed, rng::streams::SHUFFLE);

    let mut history = Vec::new();
    let mut best = (f64::INFINITY, 0usize, params.clone());
    let mut since_best = 0usize;

    for epoch in 1..=spec.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(spec.batch_size).enumerate() {
            let batch = splits.fit.select(chunk);
            let drop_seed = rng::mix(spec.seed, ((epoch as u64) << 32) | b as u64);
            let (loss, grads) = model::loss_and_grads(&params, config, &batch.news, &batch.other, &batch.targets, drop_seed)
                .map_err(|e| e.at(Some(epoch), Some(b)))?;
            adam_step(&mut params, &grads, &mut state, spec).map_err(|e| e.at(Some(epoch), Some(b)))?;
            loss_sum += loss;
            batches += 1;
        }
        let validation_rmse = monitor_rmse(&params, config, monitor, &splits.scale).map_err(|e| e.at(Some(epoch), None))?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            validation_rmse,
        });
        if validation_rmse < best.0 {
            best = (validation_rmse, epoch, params.clone());
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= spec.patience {
            break;
        }
    }

    Ok(TrainOutcome {
        params: best.2,
        history,
        best_epoch: best.1,
        best_validation_rmse: best.0,
    })
}
