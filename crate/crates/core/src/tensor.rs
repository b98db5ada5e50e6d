//! Dense row-major matrices, batched sequences and the kernels the layers are
//! built from. Every kernel with a backward contract has its analytic
//! gradient here as well; [`crate::tape`] wires them together.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{MagError, Result};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(MagError::shape("Matrix::new", (rows, cols), (data.len(), 1)));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Build from a slice of equally long rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(MagError::shape("Matrix::from_rows", (1, cols), (1, r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// A `1 x n` matrix.
    pub fn row_vector(values: &[f64]) -> Self {
        Matrix {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_with(&self, other: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(MagError::shape(op, self.shape(), other.shape()));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(MagError::shape("add_assign", self.shape(), other.shape()));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Add a `1 x cols` row to every row.
    pub fn add_row(&self, row: &Matrix) -> Result<Matrix> {
        if row.rows != 1 || row.cols != self.cols {
            return Err(MagError::shape("add_row", self.shape(), row.shape()));
        }
        let mut out = self.clone();
        for chunk in out.data.chunks_mut(self.cols.max(1)) {
            for (a, b) in chunk.iter_mut().zip(&row.data) {
                *a += b;
            }
        }
        Ok(out)
    }

    /// Column sums as a `1 x cols` row.
    pub fn sum_rows(&self) -> Matrix {
        let mut out = Matrix::zeros(1, self.cols);
        for r in 0..self.rows {
            for (acc, v) in out.data.iter_mut().zip(self.row(r)) {
                *acc += v;
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `a · b`. Backward: `dA = G·Bᵀ`, `dB = Aᵀ·G`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(MagError::shape("matmul", a.shape(), b.shape()));
    }
    let (n, k, m) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let out_row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a.data[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let b_row = &b.data[p * m..(p + 1) * m];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
    Ok(Matrix { rows: n, cols: m, data: out })
}

/// `a · bᵀ` without materializing the transpose.
pub fn matmul_bt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(MagError::shape("matmul_bt", a.shape(), b.shape()));
    }
    let (n, k, m) = (a.rows, a.cols, b.rows);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let ar = &a.data[i * k..(i + 1) * k];
        for j in 0..m {
            let br = &b.data[j * k..(j + 1) * k];
            out[i * m + j] = ar.iter().zip(br).map(|(x, y)| x * y).sum();
        }
    }
    Ok(Matrix { rows: n, cols: m, data: out })
}

/// `aᵀ · b` without materializing the transpose.
pub fn matmul_at(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(MagError::shape("matmul_at", a.shape(), b.shape()));
    }
    let (k, n, m) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; n * m];
    for p in 0..k {
        let ar = &a.data[p * n..(p + 1) * n];
        let br = &b.data[p * m..(p + 1) * m];
        for (i, &av) in ar.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[i * m..(i + 1) * m];
            for (o, &bv) in out_row.iter_mut().zip(br) {
                *o += av * bv;
            }
        }
    }
    Ok(Matrix { rows: n, cols: m, data: out })
}

/// Sum of `terms` that does not depend on their order.
///
/// Terms are summed in ascending total order, so any permutation of the same
/// multiset yields the same bits.
pub fn order_invariant_sum(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(|a, b| a.total_cmp(b));
    terms.iter().sum()
}

/// `w · v` where the reduction over the shared (key) axis is order invariant.
///
/// Attention uses this for the weighted sum over keys so that permuting the
/// timesteps permutes the output bit for bit.
pub fn matmul_key_invariant(w: &Matrix, v: &Matrix) -> Result<Matrix> {
    if w.cols != v.rows {
        return Err(MagError::shape("matmul_key_invariant", w.shape(), v.shape()));
    }
    let (n, k, m) = (w.rows, w.cols, v.cols);
    let mut out = vec![0.0; n * m];
    let mut terms = vec![0.0; k];
    for i in 0..n {
        for j in 0..m {
            for (p, t) in terms.iter_mut().enumerate() {
                *t = w.data[i * k + p] * v.data[p * m + j];
            }
            out[i * m + j] = order_invariant_sum(&mut terms);
        }
    }
    Ok(Matrix { rows: n, cols: m, data: out })
}

/// Row-wise softmax, stabilized by subtracting each row's maximum.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    let cols = m.cols;
    if cols == 0 {
        return out;
    }
    let mut scratch = vec![0.0; cols];
    for row in out.data.chunks_mut(cols) {
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        for v in row.iter_mut() {
            *v = libm::exp(*v - max);
        }
        scratch.copy_from_slice(row);
        let total = order_invariant_sum(&mut scratch);
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

/// Backward of [`softmax_rows`] given its output `s`: `dz = s ⊙ (g − Σ g⊙s)`.
pub fn softmax_rows_backward(s: &Matrix, grad: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(s.rows, s.cols);
    for r in 0..s.rows {
        let sr = s.row(r);
        let gr = grad.row(r);
        let dot: f64 = sr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for c in 0..s.cols {
            out.data[r * s.cols + c] = sr[c] * (gr[c] - dot);
        }
    }
    out
}

/// Default epsilon for [`layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Per-row statistics kept by [`layer_norm`] for its backward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub normalized: Matrix,
    pub inv_std: Vec<f64>,
}

/// Row-wise standardization followed by the affine map `gain ⊙ x̂ + bias`.
pub fn layer_norm(x: &Matrix, gain: &Matrix, bias: &Matrix, eps: f64) -> Result<(Matrix, LayerNormCache)> {
    if gain.shape() != (1, x.cols) {
        return Err(MagError::shape("layer_norm gain", x.shape(), gain.shape()));
    }
    if bias.shape() != (1, x.cols) {
        return Err(MagError::shape("layer_norm bias", x.shape(), bias.shape()));
    }
    if !(eps > 0.0) {
        return Err(MagError::Config(alloc::format!("layer_norm epsilon must be > 0, got {eps}")));
    }
    let n = x.cols as f64;
    let mut normalized = Matrix::zeros(x.rows, x.cols);
    let mut out = Matrix::zeros(x.rows, x.cols);
    let mut inv_std = Vec::with_capacity(x.rows);
    for r in 0..x.rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / libm::sqrt(var + eps);
        inv_std.push(inv);
        for c in 0..x.cols {
            let xh = (row[c] - mean) * inv;
            normalized.data[r * x.cols + c] = xh;
            out.data[r * x.cols + c] = gain.data[c] * xh + bias.data[c];
        }
    }
    Ok((out, LayerNormCache { normalized, inv_std }))
}

/// Gradients of [`layer_norm`] with respect to `(x, gain, bias)`.
pub fn layer_norm_backward(cache: &LayerNormCache, gain: &Matrix, grad: &Matrix) -> (Matrix, Matrix, Matrix) {
    let (rows, cols) = grad.shape();
    let n = cols as f64;
    let mut dx = Matrix::zeros(rows, cols);
    let mut dgain = Matrix::zeros(1, cols);
    let mut dbias = Matrix::zeros(1, cols);
    let mut dxhat = vec![0.0; cols];
    for r in 0..rows {
        let g = grad.row(r);
        let xh = cache.normalized.row(r);
        for c in 0..cols {
            dgain.data[c] += g[c] * xh[c];
            dbias.data[c] += g[c];
            dxhat[c] = g[c] * gain.data[c];
        }
        let sum_d: f64 = dxhat.iter().sum();
        let sum_dx: f64 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum();
        let inv = cache.inv_std[r];
        for c in 0..cols {
            dx.data[r * cols + c] = inv / n * (n * dxhat[c] - sum_d - xh[c] * sum_dx);
        }
    }
    (dx, dgain, dbias)
}

/// Pointwise nonlinearities with analytic derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Unary {
    Sigmoid,
    Tanh,
    Relu,
}

/// Pointwise binary kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binary {
    Add,
    Hadamard,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

impl Unary {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Sigmoid => sigmoid(x),
            Unary::Tanh => libm::tanh(x),
            Unary::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through input `x` and output `y`.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Tanh => 1.0 - y * y,
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

pub fn unary(x: &Matrix, kind: Unary) -> Matrix {
    x.map(|v| kind.apply(v))
}

pub fn unary_backward(kind: Unary, x: &Matrix, y: &Matrix, grad: &Matrix) -> Matrix {
    let data = x
        .data
        .iter()
        .zip(&y.data)
        .zip(&grad.data)
        .map(|((&xv, &yv), &g)| g * kind.derivative(xv, yv))
        .collect();
    Matrix {
        rows: x.rows,
        cols: x.cols,
        data,
    }
}

pub fn binary(a: &Matrix, b: &Matrix, kind: Binary) -> Result<Matrix> {
    match kind {
        Binary::Add => a.add(b),
        Binary::Hadamard => a.hadamard(b),
    }
}

/// Gradients of a binary kernel with respect to both operands.
pub fn binary_backward(kind: Binary, a: &Matrix, b: &Matrix, grad: &Matrix) -> Result<(Matrix, Matrix)> {
    match kind {
        Binary::Add => Ok((grad.clone(), grad.clone())),
        Binary::Hadamard => Ok((grad.hadamard(b)?, grad.hadamard(a)?)),
    }
}

/// A batch of equally long sequences, `batch x steps x features`, stored
/// batch-major so that element `(b, t, f)` sits at `(b * steps + t) * features + f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceBatch {
    batch: usize,
    steps: usize,
    features: usize,
    data: Vec<f64>,
}

impl SequenceBatch {
    pub fn new(batch: usize, steps: usize, features: usize, data: Vec<f64>) -> Result<Self> {
        if steps == 0 {
            return Err(MagError::Data("sequence batch needs at least one step".into()));
        }
        if data.len() != batch * steps * features {
            return Err(MagError::shape(
                "SequenceBatch::new",
                (batch * steps, features),
                (data.len(), 1),
            ));
        }
        Ok(SequenceBatch {
            batch,
            steps,
            features,
            data,
        })
    }

    pub fn zeros(batch: usize, steps: usize, features: usize) -> Self {
        SequenceBatch {
            batch,
            steps: steps.max(1),
            features,
            data: vec![0.0; batch * steps.max(1) * features],
        }
    }

    /// Reinterpret a `(batch * steps) x features` matrix.
    pub fn from_matrix(m: Matrix, batch: usize, steps: usize) -> Result<Self> {
        if m.rows != batch * steps {
            return Err(MagError::shape("SequenceBatch::from_matrix", m.shape(), (batch * steps, m.cols)));
        }
        SequenceBatch::new(batch, steps, m.cols, m.data)
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, b: usize, t: usize, f: usize) -> f64 {
        self.data[(b * self.steps + t) * self.features + f]
    }

    /// Flatten into a `(batch * steps) x features` matrix; row `b * steps + t`.
    pub fn to_matrix(&self) -> Matrix {
        Matrix {
            rows: self.batch * self.steps,
            cols: self.features,
            data: self.data.clone(),
        }
    }

    /// The `steps x features` sequence of one batch element.
    pub fn sample(&self, b: usize) -> Matrix {
        let len = self.steps * self.features;
        Matrix {
            rows: self.steps,
            cols: self.features,
            data: self.data[b * len..(b + 1) * len].to_vec(),
        }
    }

    /// Gather the given batch elements, in order.
    pub fn select(&self, indices: &[usize]) -> SequenceBatch {
        let len = self.steps * self.features;
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            data.extend_from_slice(&self.data[i * len..(i + 1) * len]);
        }
        SequenceBatch {
            batch: indices.len(),
            steps: self.steps,
            features: self.features,
            data,
        }
    }

    /// Keep only the first `steps` timesteps.
    pub fn truncate_steps(&self, steps: usize) -> Result<SequenceBatch> {
        if steps == 0 || steps > self.steps {
            return Err(MagError::Data(alloc::format!(
                "cannot truncate {} steps to {steps}",
                self.steps
            )));
        }
        let mut data = Vec::with_capacity(self.batch * steps * self.features);
        for b in 0..self.batch {
            let start = b * self.steps * self.features;
            data.extend_from_slice(&self.data[start..start + steps * self.features]);
        }
        Ok(SequenceBatch {
            batch: self.batch,
            steps,
            features: self.features,
            data,
        })
    }

    /// Reorder timesteps: output step `t` is input step `perm[t]`.
    pub fn permute_steps(&self, perm: &[usize]) -> Result<SequenceBatch> {
        if perm.len() != self.steps {
            return Err(MagError::Data("permutation length differs from step count".into()));
        }
        let mut data = Vec::with_capacity(self.data.len());
        for b in 0..self.batch {
            for &src in perm {
                let start = (b * self.steps + src) * self.features;
                data.extend_from_slice(&self.data[start..start + self.features]);
            }
        }
        Ok(SequenceBatch {
            batch: self.batch,
            steps: self.steps,
            features: self.features,
            data,
        })
    }
}
