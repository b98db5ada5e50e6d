//! Exhaustive (optionally subsampled) search over the six tuned hyperparameters.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{MagError, Result};
use crate::model::ModelConfig;
use crate::rng;
use crate::train::data::DataSplits;
use crate::train::trainer::{train, TrainSpec};

/// One point of the search space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub batch_size: usize,
    pub lr: f64,
    pub gru_units: usize,
    pub dropout: f64,
    pub num_heads: usize,
    pub head_size: usize,
}

impl Hyperparams {
    pub fn apply(&self, config: &ModelConfig, spec: &TrainSpec) -> (ModelConfig, TrainSpec) {
        let config = ModelConfig {
            gru_units: self.gru_units,
            dropout: self.dropout,
            num_heads: self.num_heads,
            head_size: self.head_size,
            ..config.clone()
        };
        let spec = TrainSpec {
            batch_size: self.batch_size,
            lr: self.lr,
            ..spec.clone()
        };
        (config, spec)
    }
}

/// Candidate lists; combinations are enumerated with `batch_size` varying
/// slowest and `head_size` fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpace {
    pub batch_size: Vec<usize>,
    pub lr: Vec<f64>,
    pub gru_units: Vec<usize>,
    pub dropout: Vec<f64>,
    pub num_heads: Vec<usize>,
    pub head_size: Vec<usize>,
    /// Train only this many combinations, drawn without replacement.
    pub max_trials: Option<usize>,
    pub seed: u64,
}

impl Default for GridSpace {
    fn default() -> Self {
        GridSpace {
            batch_size: vec![16, 32, 64, 128],
            lr: vec![0.001, 0.01, 0.1],
            gru_units: vec![10, 50, 100, 150],
            dropout: vec![0.2, 0.5],
            num_heads: vec![2, 4, 5, 8],
            head_size: vec![2, 4, 6, 8, 128, 256],
            max_trials: None,
            seed: 0,
        }
    }
}

impl GridSpace {
    /// Single-point space.
    pub fn singleton(h: Hyperparams) -> Self {
        GridSpace {
            batch_size: vec![h.batch_size],
            lr: vec![h.lr],
            gru_units: vec![h.gru_units],
            dropout: vec![h.dropout],
            num_heads: vec![h.num_heads],
            head_size: vec![h.head_size],
            max_trials: None,
            seed: 0,
        }
    }

    fn radices(&self) -> [usize; 6] {
        [
            self.batch_size.len(),
            self.lr.len(),
            self.gru_units.len(),
            self.dropout.len(),
            self.num_heads.len(),
            self.head_size.len(),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let names = ["batch_size", "lr", "gru_units", "dropout", "num_heads", "head_size"];
        for (name, n) in names.iter().zip(self.radices()) {
            if n == 0 {
                return Err(MagError::Config(format!("grid list `{name}` is empty")));
            }
        }
        if self.max_trials == Some(0) {
            return Err(MagError::Config("max_trials must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of combinations.
    pub fn size(&self) -> usize {
        self.radices().iter().product()
    }

    /// Combination number `index` in declaration order.
    pub fn combination(&self, mut index: usize) -> Hyperparams {
        let r = self.radices();
        let mut digits = [0usize; 6];
        for k in (0..6).rev() {
            digits[k] = index % r[k];
            index /= r[k];
        }
        Hyperparams {
            batch_size: self.batch_size[digits[0]],
            lr: self.lr[digits[1]],
            gru_units: self.gru_units[digits[2]],
            dropout: self.dropout[digits[3]],
            num_heads: self.num_heads[digits[4]],
            head_size: self.head_size[digits[5]],
        }
    }

    /// Combination indices to train, ascending. All of them unless
    /// `max_trials` is smaller than the space, in which case a seeded sample.
    pub fn trial_indices(&self) -> Vec<usize> {
        let size = self.size();
        match self.max_trials {
            Some(k) if k < size => {
                let mut rng = rng::seeded(self.seed, rng::streams::GRID);
                let mut picked = index::sample(&mut rng, size, k).into_vec();
                picked.sort_unstable();
                picked
            }
            _ => (0..size).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TrialStatus {
    Completed,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    /// Combination index within the space.
    pub index: usize,
    pub hyperparams: Hyperparams,
    /// `+∞` for failed trials.
    pub validation_rmse: f64,
    pub best_epoch: usize,
    pub status: TrialStatus,
}

/// Train one combination; training failures become a failed trial.
pub fn run_trial(index: usize, hyperparams: Hyperparams, config: &ModelConfig, spec: &TrainSpec, splits: &DataSplits) -> TrialResult {
    let (config, spec) = hyperparams.apply(config, spec);
    match train(&config, splits, &spec) {
        Ok(outcome) => TrialResult {
            index,
            hyperparams,
            validation_rmse: outcome.best_validation_rmse,
            best_epoch: outcome.best_epoch,
            status: TrialStatus::Completed,
        },
        Err(e) => TrialResult {
            index,
            hyperparams,
            validation_rmse: f64::INFINITY,
            best_epoch: 0,
            status: TrialStatus::Failed(e.to_string()),
        },
    }
}

/// Order by validation RMSE ascending; ties (and failures) by combination index.
pub fn rank_trials(mut results: Vec<TrialResult>) -> Vec<TrialResult> {
    results.sort_by(|a, b| {
        a.validation_rmse
            .total_cmp(&b.validation_rmse)
            .then(a.index.cmp(&b.index))
    });
    results
}

/// Train every selected combination in turn and rank them.
pub fn grid_search(space: &GridSpace, splits: &DataSplits, config: &ModelConfig, spec: &TrainSpec) -> Result<Vec<TrialResult>> {
    space.validate()?;
    let results = space
        .trial_indices()
        .into_iter()
        .map(|i| run_trial(i, space.combination(i), config, spec, splits))
        .collect();
    Ok(rank_trials(results))
}
