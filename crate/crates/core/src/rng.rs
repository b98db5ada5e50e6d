//! Seeded randomness. All stochastic choices (initialization, dropout masks,
//! shuffling, grid subsampling) draw from ChaCha streams derived from a base
//! seed, so results depend only on the seed and never on scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Matrix;

/// Stream identifiers keep independent consumers of one base seed apart.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const DROPOUT: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const GRID: u64 = 4;
}

/// ChaCha8 generator for `(seed, stream)`.
pub fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let limit = libm::sqrt(6.0 / (rows + cols).max(1) as f64);
    let mut m = Matrix::zeros(rows, cols);
    for v in m.data_mut() {
        *v = rng.gen_range(-limit..limit);
    }
    m
}

/// Mix a base seed with a counter into a new seed.
pub fn mix(seed: u64, counter: u64) -> u64 {
    let mut rng = seeded(seed, counter);
    rng.gen()
}
