//! Gated recurrent unit.
//!
//! With row-vector inputs `x_t` (`batch x input`) and state `h` (`batch x units`):
//!
//! ```text
//! U_t = σ(x_t·Wxu + h_{t-1}·Whu + bu)             update gate
//! R_t = σ(x_t·Wxr + h_{t-1}·Whr + br)             reset gate
//! C_t = tanh(x_t·Wxc + R_t ⊙ (h_{t-1}·Whc) + bc)  memory content
//! h_t = U_t ⊙ h_{t-1} + (1 − U_t) ⊙ C_t
//! ```
//!
//! `U_t` is the carry gate: at saturation the previous state passes through.

use alloc::format;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::error::{MagError, Result};
use crate::rng;
use crate::tape::{GradTape, Var};
use crate::tensor::{Matrix, SequenceBatch, Unary};

#[derive(Debug, Clone, PartialEq)]
pub struct GruCell {
    pub w_xu: Matrix,
    pub w_hu: Matrix,
    pub w_xr: Matrix,
    pub w_hr: Matrix,
    pub w_xc: Matrix,
    pub w_hc: Matrix,
    pub b_u: Matrix,
    pub b_r: Matrix,
    pub b_c: Matrix,
}

/// What [`GruCell::forward`] returns.
#[derive(Debug, Clone, PartialEq)]
pub enum GruOutput {
    /// Every hidden state, `batch x steps x units`.
    Sequence(SequenceBatch),
    /// The final hidden state, `batch x units`.
    Final(Matrix),
}

impl GruCell {
    pub fn zeros(input_dim: usize, units: usize) -> Self {
        GruCell {
            w_xu: Matrix::zeros(input_dim, units),
            w_hu: Matrix::zeros(units, units),
            w_xr: Matrix::zeros(input_dim, units),
            w_hr: Matrix::zeros(units, units),
            w_xc: Matrix::zeros(input_dim, units),
            w_hc: Matrix::zeros(units, units),
            b_u: Matrix::zeros(1, units),
            b_r: Matrix::zeros(1, units),
            b_c: Matrix::zeros(1, units),
        }
    }

    pub fn glorot(input_dim: usize, units: usize, rng: &mut ChaCha8Rng) -> Self {
        GruCell {
            w_xu: rng::glorot_uniform(input_dim, units, rng),
            w_hu: rng::glorot_uniform(units, units, rng),
            w_xr: rng::glorot_uniform(input_dim, units, rng),
            w_hr: rng::glorot_uniform(units, units, rng),
            w_xc: rng::glorot_uniform(input_dim, units, rng),
            w_hc: rng::glorot_uniform(units, units, rng),
            b_u: Matrix::zeros(1, units),
            b_r: Matrix::zeros(1, units),
            b_c: Matrix::zeros(1, units),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_xu.rows()
    }

    pub fn units(&self) -> usize {
        self.w_hu.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let (i, u) = (self.input_dim(), self.units());
        for (name, m, shape) in [
            ("w_xu", &self.w_xu, (i, u)),
            ("w_xr", &self.w_xr, (i, u)),
            ("w_xc", &self.w_xc, (i, u)),
            ("w_hu", &self.w_hu, (u, u)),
            ("w_hr", &self.w_hr, (u, u)),
            ("w_hc", &self.w_hc, (u, u)),
            ("b_u", &self.b_u, (1, u)),
            ("b_r", &self.b_r, (1, u)),
            ("b_c", &self.b_c, (1, u)),
        ] {
            if m.shape() != shape {
                return Err(MagError::Shape {
                    op: "GruCell",
                    left: format!("{name} {}x{}", m.rows(), m.cols()),
                    right: format!("{}x{}", shape.0, shape.1),
                });
            }
        }
        Ok(())
    }

    pub fn bind(&self, tape: &mut GradTape) -> GruVars {
        GruVars {
            w_xu: tape.leaf(self.w_xu.clone()),
            w_hu: tape.leaf(self.w_hu.clone()),
            w_xr: tape.leaf(self.w_xr.clone()),
            w_hr: tape.leaf(self.w_hr.clone()),
            w_xc: tape.leaf(self.w_xc.clone()),
            w_hc: tape.leaf(self.w_hc.clone()),
            b_u: tape.leaf(self.b_u.clone()),
            b_r: tape.leaf(self.b_r.clone()),
            b_c: tape.leaf(self.b_c.clone()),
        }
    }

    /// One recurrence step.
    pub fn step(&self, x_t: &Matrix, h_prev: &Matrix) -> Result<Matrix> {
        self.validate()?;
        let mut tape = GradTape::new();
        let vars = self.bind(&mut tape);
        let x = tape.leaf(x_t.clone());
        let h = tape.leaf(h_prev.clone());
        let out = vars.step(&mut tape, x, h)?;
        Ok(tape.value(out).clone())
    }

    /// Run over all steps from a zero initial state.
    pub fn forward(&self, x: &SequenceBatch, return_sequence: bool) -> Result<GruOutput> {
        self.validate()?;
        let mut tape = GradTape::new();
        let vars = self.bind(&mut tape);
        let xv = tape.leaf(x.to_matrix());
        let out = vars.run(&mut tape, xv, x.batch(), x.steps(), return_sequence)?;
        let value = tape.value(out).clone();
        Ok(if return_sequence {
            GruOutput::Sequence(SequenceBatch::from_matrix(value, x.batch(), x.steps())?)
        } else {
            GruOutput::Final(value)
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    pub w_xu: Var,
    pub w_hu: Var,
    pub w_xr: Var,
    pub w_hr: Var,
    pub w_xc: Var,
    pub w_hc: Var,
    pub b_u: Var,
    pub b_r: Var,
    pub b_c: Var,
}

impl GruVars {
    fn units(&self, tape: &GradTape) -> usize {
        tape.value(self.w_hu).rows()
    }

    /// One step from raw input `x_t`.
    pub fn step(&self, tape: &mut GradTape, x_t: Var, h_prev: Var) -> Result<Var> {
        let xu = tape.matmul(x_t, self.w_xu)?;
        let xr = tape.matmul(x_t, self.w_xr)?;
        let xc = tape.matmul(x_t, self.w_xc)?;
        self.step_projected(tape, (xu, xr, xc), h_prev)
    }

    /// One step given the input-side products `(x_t·Wxu, x_t·Wxr, x_t·Wxc)`.
    fn step_projected(&self, tape: &mut GradTape, (xu, xr, xc): (Var, Var, Var), h_prev: Var) -> Result<Var> {
        let hu = tape.matmul(h_prev, self.w_hu)?;
        let u = tape.add(xu, hu)?;
        let u = tape.add_row(u, self.b_u)?;
        let u = tape.unary(u, Unary::Sigmoid);

        let hr = tape.matmul(h_prev, self.w_hr)?;
        let r = tape.add(xr, hr)?;
        let r = tape.add_row(r, self.b_r)?;
        let r = tape.unary(r, Unary::Sigmoid);

        let hc = tape.matmul(h_prev, self.w_hc)?;
        let gated = tape.hadamard(r, hc)?;
        let c = tape.add(xc, gated)?;
        let c = tape.add_row(c, self.b_c)?;
        let c = tape.unary(c, Unary::Tanh);

        let carry = tape.hadamard(u, h_prev)?;
        let one_minus_u = tape.one_minus(u);
        let fresh = tape.hadamard(one_minus_u, c)?;
        tape.add(carry, fresh)
    }

    /// Unroll over a `(batch * steps) x input` sequence matrix from `h_0 = 0`.
    ///
    /// Returns the stacked hidden states (`(batch * steps) x units`) or only the
    /// final state (`batch x units`).
    pub fn run(&self, tape: &mut GradTape, x: Var, batch: usize, steps: usize, return_sequence: bool) -> Result<Var> {
        let input_dim = tape.value(self.w_xu).rows();
        if tape.value(x).shape() != (batch * steps, input_dim) {
            return Err(MagError::shape("gru input", tape.value(x).shape(), (batch * steps, input_dim)));
        }
        let units = self.units(tape);
        // Input-side products for every step at once; row b*steps+t matches
        // what a per-step product would give bit for bit.
        let xu_all = tape.matmul(x, self.w_xu)?;
        let xr_all = tape.matmul(x, self.w_xr)?;
        let xc_all = tape.matmul(x, self.w_xc)?;
        let mut h = tape.leaf(Matrix::zeros(batch, units));
        let mut states = Vec::with_capacity(steps);
        for t in 0..steps {
            let xu = tape.gather_step(xu_all, steps, t)?;
            let xr = tape.gather_step(xr_all, steps, t)?;
            let xc = tape.gather_step(xc_all, steps, t)?;
            h = self.step_projected(tape, (xu, xr, xc), h)?;
            states.push(h);
        }
        if return_sequence {
            tape.stack_steps(&states)
        } else {
            Ok(h)
        }
    }
}
