use crate::error::{MagError, Result};
use crate::tape::{GradTape, Var};
use crate::tensor::Matrix;

/// Sinusoidal table: `(p, 2i) = sin(p / 10000^(2i/dim))`, `(p, 2i+1) = cos(·)`.
pub fn positional_encoding(steps: usize, dim: usize) -> Matrix {
    let mut m = Matrix::zeros(steps, dim);
    for p in 0..steps {
        for c in 0..dim {
            let pair = (c / 2 * 2) as f64;
            let angle = p as f64 / libm::pow(10_000.0, pair / dim as f64);
            let v = if c % 2 == 0 { libm::sin(angle) } else { libm::cos(angle) };
            m.set(p, c, v);
        }
    }
    m
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositionalEncoding {
    table: Matrix,
}

impl PositionalEncoding {
    pub fn new(max_steps: usize, dim: usize) -> Self {
        PositionalEncoding {
            table: positional_encoding(max_steps, dim),
        }
    }

    pub fn max_steps(&self) -> usize {
        self.table.rows()
    }

    pub fn dim(&self) -> usize {
        self.table.cols()
    }

    pub fn table(&self) -> &Matrix {
        &self.table
    }

    /// Add the encoding of steps `0..steps` to every sequence of a
    /// `(batch * steps) x dim` matrix.
    pub fn apply(&self, tape: &mut GradTape, x: Var, batch: usize, steps: usize) -> Result<Var> {
        let dim = self.dim();
        if steps > self.max_steps() || tape.value(x).shape() != (batch * steps, dim) {
            return Err(MagError::shape(
                "positional_encoding",
                tape.value(x).shape(),
                (batch * steps.min(self.max_steps()), dim),
            ));
        }
        let mut tiled = Matrix::zeros(batch * steps, dim);
        for b in 0..batch {
            let start = b * steps * dim;
            tiled.data_mut()[start..start + steps * dim].copy_from_slice(&self.table.data()[..steps * dim]);
        }
        let pe = tape.leaf(tiled);
        tape.add(x, pe)
    }
}
