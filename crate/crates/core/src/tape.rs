//! Gradient tape.
//!
//! Each kernel call made through [`GradTape`] appends one node holding its
//! output and the handles of its operands. [`GradTape::backward`] walks the
//! nodes once, newest first, applying each kernel's analytic backward pass.
//! The tape is rebuilt for every forward pass; the graph of the model is fixed
//! so there is no expression simplification or graph reuse.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{MagError, Result};
use crate::tensor::{self, LayerNormCache, Matrix, Unary};

/// Handle to a value recorded on a [`GradTape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    AttendValues(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Hadamard(Var, Var),
    OneMinus(Var),
    Scale(Var, f64),
    Unary(Var, Unary),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        cache: LayerNormCache,
        bias: Var,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    GatherStep {
        x: Var,
        steps: usize,
        t: usize,
    },
    StackSteps(Vec<Var>),
    MeanSquaredError {
        pred: Var,
        targets: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

/// Ordered record of forward kernel calls.
#[derive(Debug, Default)]
pub struct GradTape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every recorded value.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    visited: Vec<usize>,
}

impl Gradients {
    /// Gradient for `var`, or `None` when the loss does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Matrix> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Take the gradient for `var`, substituting zeros of `shape` when absent.
    pub fn take_or_zeros(&mut self, var: Var, shape: (usize, usize)) -> Matrix {
        self.grads
            .get_mut(var.0)
            .and_then(Option::take)
            .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }

    /// Node indices in the order the backward pass processed them.
    pub fn visit_order(&self) -> &[usize] {
        &self.visited
    }
}

impl GradTape {
    pub fn new() -> Self {
        GradTape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Record an input or parameter.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::matmul_bt(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMulBt(a, b)))
    }

    /// `weights · values` with a key-order-invariant reduction.
    pub fn attend_values(&mut self, weights: Var, values: Var) -> Result<Var> {
        let v = tensor::matmul_key_invariant(self.value(weights), self.value(values))?;
        Ok(self.push(v, Op::AttendValues(weights, values)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    /// Broadcast-add a `1 x n` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let v = self.value(x).add_row(self.value(row))?;
        Ok(self.push(v, Op::AddRow(x, row)))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(v, Op::Hadamard(a, b)))
    }

    /// `1 − x`.
    pub fn one_minus(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| 1.0 - e);
        self.push(v, Op::OneMinus(x))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let v = self.value(x).scale(s);
        self.push(v, Op::Scale(x, s))
    }

    pub fn unary(&mut self, x: Var, kind: Unary) -> Var {
        let v = tensor::unary(self.value(x), kind);
        self.push(v, Op::Unary(x, kind))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let v = tensor::softmax_rows(self.value(x));
        self.push(v, Op::SoftmaxRows(x))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (v, cache) = tensor::layer_norm(self.value(x), self.value(gain), self.value(bias), eps)?;
        Ok(self.push(v, Op::LayerNorm { x, gain, cache, bias }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map_or(0, |&p| self.value(p).rows());
        let mut cols = 0;
        for &p in parts {
            let m = self.value(p);
            if m.rows() != rows {
                return Err(MagError::shape("concat_cols", (rows, cols), m.shape()));
            }
            cols += m.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let v = Matrix::new(rows, cols, data)?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts.first().map_or(0, |&p| self.value(p).cols());
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            if m.cols() != cols {
                return Err(MagError::shape("concat_rows", (rows, cols), m.shape()));
            }
            data.extend_from_slice(m.data());
            rows += m.rows();
        }
        let v = Matrix::new(rows, cols, data)?;
        Ok(self.push(v, Op::ConcatRows(parts.to_vec())))
    }

    /// Rows `start..start + len` of `x`.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let m = self.value(x);
        if start + len > m.rows() {
            return Err(MagError::shape("slice_rows", m.shape(), (start + len, m.cols())));
        }
        let cols = m.cols();
        let v = Matrix::new(len, cols, m.data()[start * cols..(start + len) * cols].to_vec())?;
        Ok(self.push(v, Op::SliceRows { x, start }))
    }

    /// From a `(batch * steps) x f` sequence matrix, the `batch x f` slice at step `t`.
    pub fn gather_step(&mut self, x: Var, steps: usize, t: usize) -> Result<Var> {
        let m = self.value(x);
        if steps == 0 || t >= steps || !m.rows().is_multiple_of(steps) {
            return Err(MagError::shape("gather_step", m.shape(), (steps, t)));
        }
        let batch = m.rows() / steps;
        let cols = m.cols();
        let mut data = Vec::with_capacity(batch * cols);
        for b in 0..batch {
            data.extend_from_slice(m.row(b * steps + t));
        }
        let v = Matrix::new(batch, cols, data)?;
        Ok(self.push(v, Op::GatherStep { x, steps, t }))
    }

    /// Inverse of [`GradTape::gather_step`]: interleave per-step `batch x f`
    /// matrices into one `(batch * steps) x f` sequence matrix.
    pub fn stack_steps(&mut self, parts: &[Var]) -> Result<Var> {
        let steps = parts.len();
        let (batch, cols) = parts.first().map_or((0, 0), |&p| self.value(p).shape());
        for &p in parts {
            if self.value(p).shape() != (batch, cols) {
                return Err(MagError::shape("stack_steps", (batch, cols), self.value(p).shape()));
            }
        }
        let mut data = Vec::with_capacity(batch * steps * cols);
        for b in 0..batch {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(b));
            }
        }
        let v = Matrix::new(batch * steps, cols, data)?;
        Ok(self.push(v, Op::StackSteps(parts.to_vec())))
    }

    /// Mean squared error of an `n x 1` prediction against `targets`, as a `1 x 1` value.
    pub fn mse(&mut self, pred: Var, targets: &[f64]) -> Result<Var> {
        let p = self.value(pred);
        if p.cols() != 1 || p.rows() != targets.len() || targets.is_empty() {
            return Err(MagError::shape("mse", p.shape(), (targets.len(), 1)));
        }
        let n = targets.len() as f64;
        let loss = p.data().iter().zip(targets).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
        let v = Matrix::new(1, 1, vec![loss])?;
        Ok(self.push(
            v,
            Op::MeanSquaredError {
                pred,
                targets: targets.to_vec(),
            },
        ))
    }

    /// Backpropagate from the scalar `loss`, visiting every node at or below
    /// it exactly once, newest first.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            return Err(MagError::shape("backward", self.value(loss).shape(), (1, 1)));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut visited = Vec::with_capacity(loss.0 + 1);
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));
        for idx in (0..=loss.0).rev() {
            visited.push(idx);
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let da = tensor::matmul_bt(&g, self.value(*b))?;
                    let db = tensor::matmul_at(self.value(*a), &g)?;
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::MatMulBt(a, b) => {
                    // y = a bᵀ: da = g b, db = gᵀ a
                    let da = tensor::matmul(&g, self.value(*b))?;
                    let db = tensor::matmul_at(&g, self.value(*a))?;
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::AttendValues(w, v) => {
                    let dw = tensor::matmul_bt(&g, self.value(*v))?;
                    let dv = tensor::matmul_at(self.value(*w), &g)?;
                    accumulate(&mut grads, *w, dw)?;
                    accumulate(&mut grads, *v, dv)?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g)?;
                }
                Op::AddRow(x, row) => {
                    accumulate(&mut grads, *row, g.sum_rows())?;
                    accumulate(&mut grads, *x, g)?;
                }
                Op::Hadamard(a, b) => {
                    let da = g.hadamard(self.value(*b))?;
                    let db = g.hadamard(self.value(*a))?;
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::OneMinus(x) => accumulate(&mut grads, *x, g.scale(-1.0))?,
                Op::Scale(x, s) => accumulate(&mut grads, *x, g.scale(*s))?,
                Op::Unary(x, kind) => {
                    let dx = tensor::unary_backward(*kind, self.value(*x), &node.value, &g);
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::SoftmaxRows(x) => {
                    accumulate(&mut grads, *x, tensor::softmax_rows_backward(&node.value, &g))?;
                }
                Op::LayerNorm { x, gain, cache, bias } => {
                    let (dx, dg, db) = tensor::layer_norm_backward(cache, self.value(*gain), &g);
                    accumulate(&mut grads, *x, dx)?;
                    accumulate(&mut grads, *gain, dg)?;
                    accumulate(&mut grads, *bias, db)?;
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (rows, cols) = self.value(p).shape();
                        let mut piece = Vec::with_capacity(rows * cols);
                        for r in 0..rows {
                            piece.extend_from_slice(&g.row(r)[offset..offset + cols]);
                        }
                        accumulate(&mut grads, p, Matrix::new(rows, cols, piece)?)?;
                        offset += cols;
                    }
                }
                Op::ConcatRows(parts) => {
                    let cols = g.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let rows = self.value(p).rows();
                        let piece = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                        accumulate(&mut grads, p, Matrix::new(rows, cols, piece)?)?;
                        offset += rows;
                    }
                }
                Op::SliceRows { x, start } => {
                    let (rows, cols) = self.value(*x).shape();
                    let mut dx = Matrix::zeros(rows, cols);
                    let s = start * cols;
                    dx.data_mut()[s..s + g.len()].copy_from_slice(g.data());
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::GatherStep { x, steps, t } => {
                    let (rows, cols) = self.value(*x).shape();
                    let mut dx = Matrix::zeros(rows, cols);
                    for b in 0..g.rows() {
                        let r = b * steps + t;
                        dx.data_mut()[r * cols..(r + 1) * cols].copy_from_slice(g.row(b));
                    }
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::StackSteps(parts) => {
                    let steps = parts.len();
                    for (t, &p) in parts.iter().enumerate() {
                        let (batch, cols) = self.value(p).shape();
                        let mut piece = Vec::with_capacity(batch * cols);
                        for b in 0..batch {
                            piece.extend_from_slice(g.row(b * steps + t));
                        }
                        accumulate(&mut grads, p, Matrix::new(batch, cols, piece)?)?;
                    }
                }
                Op::MeanSquaredError { pred, targets } => {
                    let p = self.value(*pred);
                    let n = targets.len() as f64;
                    let scale = g.data()[0] * 2.0 / n;
                    let data = p.data().iter().zip(targets).map(|(a, b)| scale * (a - b)).collect();
                    accumulate(&mut grads, *pred, Matrix::new(p.rows(), 1, data)?)?;
                }
            }
        }
        Ok(Gradients { grads, visited })
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}
