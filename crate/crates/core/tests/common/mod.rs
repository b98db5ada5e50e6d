#![allow(dead_code)]

use mag_core::model::ModelConfig;
use mag_core::rng;
use mag_core::tape::{GradTape, Var};
use mag_core::tensor::{Matrix, SequenceBatch};
use mag_core::Result;
use rand::Rng;

pub fn random_matrix(rows: usize, cols: usize, scale: f64, seed: u64) -> Matrix {
    let mut rng = rng::seeded(seed, 99);
    let data = (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect();
    Matrix::new(rows, cols, data).unwrap()
}

pub fn random_sequence(batch: usize, steps: usize, features: usize, seed: u64) -> SequenceBatch {
    let m = random_matrix(batch * steps, features, 1.0, seed);
    SequenceBatch::from_matrix(m, batch, steps).unwrap()
}

/// Reduce any recorded matrix to a scalar MSE through a fixed projection, so
/// every entry of `y` influences the loss.
pub fn scalar_loss(tape: &mut GradTape, y: Var, seed: u64) -> Result<Var> {
    let (rows, cols) = tape.value(y).shape();
    let proj = tape.leaf(random_matrix(cols, 1, 1.0, seed ^ 0x5151));
    let z = tape.matmul(y, proj)?;
    let targets: Vec<f64> = random_matrix(rows, 1, 1.0, seed ^ 0x7777).into_data();
    tape.mse(z, &targets)
}

/// Run `build` on leaves holding `params`, returning loss and per-leaf gradients.
pub fn tape_objective(
    params: &[Matrix],
    seed: u64,
    build: impl FnOnce(&mut GradTape, &[Var]) -> Result<Var>,
) -> Result<(f64, Vec<Matrix>)> {
    let mut tape = GradTape::new();
    let leaves: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let y = build(&mut tape, &leaves)?;
    let loss = scalar_loss(&mut tape, y, seed)?;
    let value = tape.value(loss).data()[0];
    let mut grads = tape.backward(loss)?;
    let out = leaves
        .iter()
        .zip(params)
        .map(|(&v, p)| grads.take_or_zeros(v, p.shape()))
        .collect();
    Ok((value, out))
}

pub fn toy_config() -> ModelConfig {
    ModelConfig {
        news_dim: 6,
        news_hidden: vec![5, 3],
        trends_dim: 2,
        stats_dim: 3,
        lookback: 2,
        horizon: 3,
        gru_units: 4,
        num_heads: 2,
        head_size: 3,
        dropout: 0.2,
        use_attention: true,
        use_positional_encoding: true,
        norm_then_add: false,
        seed: 21,
    }
}
