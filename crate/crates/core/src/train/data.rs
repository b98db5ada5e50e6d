use alloc::format;
use alloc::vec::Vec;

use crate::error::{MagError, Result};
use crate::model::TargetScale;
use crate::tensor::SequenceBatch;

/// Windows paired with their targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `windows x lookback x news_dim`.
    pub news: SequenceBatch,
    /// `windows x lookback x (trends_dim + stats_dim)`.
    pub other: SequenceBatch,
    /// Normalized targets.
    pub targets: Vec<f64>,
    /// Targets in original units, read straight from the source table.
    pub raw_targets: Vec<f64>,
}

impl Dataset {
    pub fn new(news: SequenceBatch, other: SequenceBatch, targets: Vec<f64>, raw_targets: Vec<f64>) -> Result<Self> {
        let n = other.batch();
        if news.batch() != n || news.steps() != other.steps() {
            return Err(MagError::Data(format!(
                "news windows {}x{} do not align with other windows {}x{}",
                news.batch(),
                news.steps(),
                n,
                other.steps()
            )));
        }
        if targets.len() != n || raw_targets.len() != n {
            return Err(MagError::Data(format!(
                "{n} windows but {} targets / {} raw targets",
                targets.len(),
                raw_targets.len()
            )));
        }
        if targets.iter().chain(&raw_targets).any(|v| !v.is_finite()) {
            return Err(MagError::Data("targets must be finite".into()));
        }
        Ok(Dataset {
            news,
            other,
            targets,
            raw_targets,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.other.steps()
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            news: self.news.select(indices),
            other: self.other.select(indices),
            targets: indices.iter().map(|&i| self.targets[i]).collect(),
            raw_targets: indices.iter().map(|&i| self.raw_targets[i]).collect(),
        }
    }

    pub fn range(&self, start: usize, end: usize) -> Dataset {
        let idx: Vec<usize> = (start..end).collect();
        self.select(&idx)
    }
}

/// Chronological fit / validation / test partition sharing one target scale.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSplits {
    pub fit: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    pub scale: TargetScale,
}
