use alloc::format;

use rand::Rng;

use crate::error::{MagError, Result};
use crate::rng;
use crate::tape::{GradTape, Var};
use crate::tensor::Matrix;

pub(crate) fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(MagError::Config(format!("dropout rate must lie in [0, 1), got {rate}")));
    }
    Ok(())
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, else `1 / (1 − rate)`.
pub fn dropout_mask(rows: usize, cols: usize, rate: f64, seed: u64) -> Result<Matrix> {
    check_rate(rate)?;
    let keep = 1.0 / (1.0 - rate);
    let mut rng = rng::seeded(seed, rng::streams::DROPOUT);
    let mut m = Matrix::zeros(rows, cols);
    for v in m.data_mut() {
        *v = if rng.gen::<f64>() < rate { 0.0 } else { keep };
    }
    Ok(m)
}

/// Inverted dropout. Outside training, or at rate 0, returns `x` unchanged.
pub fn dropout(x: &Matrix, rate: f64, training: bool, seed: u64) -> Result<Matrix> {
    check_rate(rate)?;
    if !training || rate == 0.0 {
        return Ok(x.clone());
    }
    x.hadamard(&dropout_mask(x.rows(), x.cols(), rate, seed)?)
}

/// Tape form of [`dropout`]; the identity case records nothing.
pub fn apply_dropout(tape: &mut GradTape, x: Var, rate: f64, training: bool, seed: u64) -> Result<Var> {
    check_rate(rate)?;
    if !training || rate == 0.0 {
        return Ok(x);
    }
    let (rows, cols) = tape.value(x).shape();
    let mask = tape.leaf(dropout_mask(rows, cols, rate, seed)?);
    tape.hadamard(x, mask)
}
