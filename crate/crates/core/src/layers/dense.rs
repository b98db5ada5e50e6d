use serde::{Deserialize, Serialize};

use crate::error::{MagError, Result};
use crate::rng;
use crate::tape::{GradTape, Var};
use crate::tensor::{Matrix, Unary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Linear,
}

/// Fully connected layer `activation(x·W + b)` with `W: in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Matrix,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weight: Matrix, bias: Matrix, activation: Activation) -> Result<Self> {
        if bias.shape() != (1, weight.cols()) {
            return Err(MagError::shape("DenseLayer bias", weight.shape(), bias.shape()));
        }
        Ok(DenseLayer {
            weight,
            bias,
            activation,
        })
    }

    pub fn glorot(input: usize, output: usize, activation: Activation, rng: &mut rand_chacha::ChaCha8Rng) -> Self {
        DenseLayer {
            weight: rng::glorot_uniform(input, output, rng),
            bias: Matrix::zeros(1, output),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut tape = GradTape::new();
        let vars = self.bind(&mut tape);
        let xv = tape.leaf(x.clone());
        let y = vars.apply(&mut tape, xv)?;
        Ok(tape.value(y).clone())
    }

    pub fn bind(&self, tape: &mut GradTape) -> DenseVars {
        DenseVars {
            weight: tape.leaf(self.weight.clone()),
            bias: tape.leaf(self.bias.clone()),
            activation: self.activation,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DenseVars {
    pub weight: Var,
    pub bias: Var,
    pub activation: Activation,
}

impl DenseVars {
    pub fn apply(&self, tape: &mut GradTape, x: Var) -> Result<Var> {
        if tape.value(x).cols() != tape.value(self.weight).rows() {
            return Err(MagError::shape("dense", tape.value(x).shape(), tape.value(self.weight).shape()));
        }
        let z = tape.matmul(x, self.weight)?;
        let z = tape.add_row(z, self.bias)?;
        Ok(match self.activation {
            Activation::Relu => tape.unary(z, Unary::Relu),
            Activation::Linear => z,
        })
    }
}
