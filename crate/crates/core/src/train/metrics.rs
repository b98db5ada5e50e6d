//! Error metrics on denormalized series.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{MagError, Result};

fn check(pred: &[f64], truth: &[f64], min_len: usize) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(MagError::Data(format!(
            "metric inputs differ in length: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.len() < min_len {
        return Err(MagError::Data(format!("metric needs at least {min_len} points, got {}", pred.len())));
    }
    Ok(())
}

/// `sqrt(Σ |pred − true|² / N)`.
pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth, 1)?;
    let sum: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(libm::sqrt(sum / pred.len() as f64))
}

/// `Σ |pred − true| / N`.
pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth, 1)?;
    let sum: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum();
    Ok(sum / pred.len() as f64)
}

/// Trapezoidal integral of `|pred − true|` over unit-spaced days.
pub fn area_between(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth, 2)?;
    let gaps: Vec<f64> = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).collect();
    Ok(gaps.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum())
}

/// Metrics plus the series they were computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub rmse: f64,
    pub mae: f64,
    pub area_between: f64,
    pub predicted: Vec<f64>,
    pub actual: Vec<f64>,
}

impl Evaluation {
    pub fn from_series(predicted: Vec<f64>, actual: Vec<f64>) -> Result<Self> {
        Ok(Evaluation {
            rmse: rmse(&predicted, &actual)?,
            mae: mae(&predicted, &actual)?,
            area_between: area_between(&predicted, &actual)?,
            predicted,
            actual,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction() {
        let v = [1.0, 5.0, -2.0];
        assert_eq!(rmse(&v, &v).unwrap(), 0.0);
        assert_eq!(mae(&v, &v).unwrap(), 0.0);
        assert_eq!(area_between(&v, &v).unwrap(), 0.0);
    }

    #[test]
    fn constant_unit_error() {
        let p = [2.0, 3.0, 4.0, 5.0];
        let t = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(rmse(&p, &t).unwrap(), 1.0);
        assert_eq!(mae(&p, &t).unwrap(), 1.0);
    }

    #[test]
    fn hand_evaluated_pair() {
        assert!((rmse(&[0.0, 2.0], &[0.0, 0.0]).unwrap() - libm::sqrt(2.0)).abs() < 1e-12);
        assert!((mae(&[0.0, 2.0], &[0.0, 0.0]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trapezoid_cases() {
        assert_eq!(area_between(&[1.0, 1.0, 1.0], &[0.0, 0.0, 0.0]).unwrap(), 2.0);
        assert_eq!(area_between(&[0.0, 1.0, 0.0], &[0.0, 0.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn length_errors() {
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(mae(&[], &[]).is_err());
        assert!(area_between(&[1.0], &[1.0]).is_err());
        assert!(area_between(&[1.0, 2.0], &[1.0]).is_err());
    }
}
