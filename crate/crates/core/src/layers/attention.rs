//! Scaled dot-product and multi-head self-attention over the timesteps of a window.

use alloc::format;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MagError, Result};
use crate::rng;
use crate::tape::{GradTape, Var};
use crate::tensor::{Matrix, SequenceBatch, LAYER_NORM_EPS};

/// Result of one attention evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    pub output: Matrix,
    /// Row `i` holds the softmax weights query `i` assigns to each key.
    pub weights: Matrix,
}

/// `softmax(Q·Kᵀ / sqrt(dim_k)) · V` for one sequence.
pub fn scaled_dot_product_attention(q: &Matrix, k: &Matrix, v: &Matrix) -> Result<AttentionOutput> {
    let mut tape = GradTape::new();
    let (qv, kv, vv) = (tape.leaf(q.clone()), tape.leaf(k.clone()), tape.leaf(v.clone()));
    let (out, weights) = attend(&mut tape, qv, kv, vv)?;
    Ok(AttentionOutput {
        output: tape.value(out).clone(),
        weights: tape.value(weights).clone(),
    })
}

/// Tape form of [`scaled_dot_product_attention`]; returns `(output, weights)`.
pub fn attend(tape: &mut GradTape, q: Var, k: Var, v: Var) -> Result<(Var, Var)> {
    let (qs, ks, vs) = (tape.value(q).shape(), tape.value(k).shape(), tape.value(v).shape());
    if qs.1 != ks.1 {
        return Err(MagError::shape("attention Q/K", qs, ks));
    }
    if ks.0 != vs.0 {
        return Err(MagError::shape("attention K/V", ks, vs));
    }
    let dim_k = ks.1.max(1) as f64;
    let scores = tape.matmul_bt(q, k)?;
    let scores = tape.scale(scores, 1.0 / libm::sqrt(dim_k));
    let weights = tape.softmax_rows(scores);
    let out = tape.attend_values(weights, v)?;
    Ok((out, weights))
}

/// Where the layer normalization sits relative to the residual connection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResidualNorm {
    /// `layer_norm(x + MHA(x))`.
    AddThenNorm,
    /// `x + layer_norm(MHA(x))`.
    NormThenAdd,
    /// `x + MHA(x)`; no normalization.
    AddOnly,
}

/// Per-head projections, each `features x head_size`, without bias.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionHead {
    pub query: Matrix,
    pub key: Matrix,
    pub value: Matrix,
}

/// Multi-head self-attention block with residual connection and normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention {
    pub heads: Vec<AttentionHead>,
    /// `(num_heads * head_size) x features`.
    pub output_weight: Matrix,
    pub output_bias: Matrix,
    pub norm_gain: Matrix,
    pub norm_bias: Matrix,
    pub residual: ResidualNorm,
}

impl MultiHeadAttention {
    pub fn new(
        heads: Vec<AttentionHead>,
        output_weight: Matrix,
        output_bias: Matrix,
        norm_gain: Matrix,
        norm_bias: Matrix,
        residual: ResidualNorm,
    ) -> Result<Self> {
        let mha = MultiHeadAttention {
            heads,
            output_weight,
            output_bias,
            norm_gain,
            norm_bias,
            residual,
        };
        mha.validate()?;
        Ok(mha)
    }

    pub fn glorot(features: usize, num_heads: usize, head_size: usize, residual: ResidualNorm, rng: &mut ChaCha8Rng) -> Result<Self> {
        let heads = (0..num_heads)
            .map(|_| AttentionHead {
                query: rng::glorot_uniform(features, head_size, rng),
                key: rng::glorot_uniform(features, head_size, rng),
                value: rng::glorot_uniform(features, head_size, rng),
            })
            .collect();
        MultiHeadAttention::new(
            heads,
            rng::glorot_uniform(num_heads * head_size, features, rng),
            Matrix::zeros(1, features),
            Matrix::filled(1, features, 1.0),
            Matrix::zeros(1, features),
            residual,
        )
    }

    pub fn features(&self) -> usize {
        self.output_weight.cols()
    }

    pub fn head_size(&self) -> usize {
        self.heads.first().map_or(0, |h| h.query.cols())
    }

    fn validate(&self) -> Result<()> {
        let h = self.heads.len();
        if h == 0 {
            return Err(MagError::Config("multi-head attention needs at least one head".into()));
        }
        let features = self.features();
        let d = self.head_size();
        if d == 0 {
            return Err(MagError::Config("attention head_size must be >= 1".into()));
        }
        for (i, head) in self.heads.iter().enumerate() {
            for (name, m) in [("query", &head.query), ("key", &head.key), ("value", &head.value)] {
                if m.shape() != (features, d) {
                    return Err(MagError::Config(format!(
                        "head {i} {name} projection is {}x{}, expected {features}x{d}",
                        m.rows(),
                        m.cols()
                    )));
                }
            }
        }
        if self.output_weight.rows() != h * d {
            return Err(MagError::Config(format!(
                "output projection has {} rows but num_heads * head_size = {}",
                self.output_weight.rows(),
                h * d
            )));
        }
        for (name, m) in [("output bias", &self.output_bias), ("norm gain", &self.norm_gain), ("norm bias", &self.norm_bias)] {
            if m.shape() != (1, features) {
                return Err(MagError::Config(format!("{name} must be 1x{features}")));
            }
        }
        Ok(())
    }

    pub fn bind(&self, tape: &mut GradTape) -> MhaVars {
        MhaVars {
            heads: self
                .heads
                .iter()
                .map(|h| HeadVars {
                    query: tape.leaf(h.query.clone()),
                    key: tape.leaf(h.key.clone()),
                    value: tape.leaf(h.value.clone()),
                })
                .collect(),
            output_weight: tape.leaf(self.output_weight.clone()),
            output_bias: tape.leaf(self.output_bias.clone()),
            norm_gain: tape.leaf(self.norm_gain.clone()),
            norm_bias: tape.leaf(self.norm_bias.clone()),
            residual: self.residual,
        }
    }

    pub fn forward(&self, x: &SequenceBatch) -> Result<SequenceBatch> {
        Ok(self.forward_with_weights(x)?.0)
    }

    /// Forward pass that also returns the attention weights, indexed
    /// `[sample * num_heads + head]`, each `steps x steps`.
    pub fn forward_with_weights(&self, x: &SequenceBatch) -> Result<(SequenceBatch, Vec<Matrix>)> {
        let mut tape = GradTape::new();
        let vars = self.bind(&mut tape);
        let xv = tape.leaf(x.to_matrix());
        let trace = vars.apply(&mut tape, xv, x.batch(), x.steps())?;
        let weights = trace.weights.iter().map(|&w| tape.value(w).clone()).collect();
        let out = SequenceBatch::from_matrix(tape.value(trace.output).clone(), x.batch(), x.steps())?;
        Ok((out, weights))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub query: Var,
    pub key: Var,
    pub value: Var,
}

#[derive(Debug, Clone)]
pub struct MhaVars {
    pub heads: Vec<HeadVars>,
    pub output_weight: Var,
    pub output_bias: Var,
    pub norm_gain: Var,
    pub norm_bias: Var,
    pub residual: ResidualNorm,
}

/// Handles produced by [`MhaVars::apply`].
#[derive(Debug, Clone)]
pub struct MhaTrace {
    pub output: Var,
    /// Attention weights indexed `[sample * num_heads + head]`.
    pub weights: Vec<Var>,
}

impl MhaVars {
    /// Self-attention over the steps of each sample of a `(batch * steps) x F` matrix.
    pub fn apply(&self, tape: &mut GradTape, x: Var, batch: usize, steps: usize) -> Result<MhaTrace> {
        let features = tape.value(self.output_weight).cols();
        if tape.value(x).shape() != (batch * steps, features) {
            return Err(MagError::shape("multi-head attention input", tape.value(x).shape(), (batch * steps, features)));
        }
        let h = self.heads.len();
        let mut weights = Vec::with_capacity(batch * h);
        let mut projected = Vec::with_capacity(h);
        for head in &self.heads {
            projected.push((
                tape.matmul(x, head.query)?,
                tape.matmul(x, head.key)?,
                tape.matmul(x, head.value)?,
            ));
        }
        let mut per_sample = Vec::with_capacity(batch);
        for b in 0..batch {
            let mut head_outputs = Vec::with_capacity(h);
            for &(q, k, v) in &projected {
                let qb = tape.slice_rows(q, b * steps, steps)?;
                let kb = tape.slice_rows(k, b * steps, steps)?;
                let vb = tape.slice_rows(v, b * steps, steps)?;
                let (out, w) = attend(tape, qb, kb, vb)?;
                head_outputs.push(out);
                weights.push(w);
            }
            per_sample.push(tape.concat_cols(&head_outputs)?);
        }
        let concat = tape.concat_rows(&per_sample)?;
        let mixed = tape.matmul(concat, self.output_weight)?;
        let mixed = tape.add_row(mixed, self.output_bias)?;
        let output = match self.residual {
            ResidualNorm::AddThenNorm => {
                let sum = tape.add(x, mixed)?;
                tape.layer_norm(sum, self.norm_gain, self.norm_bias, LAYER_NORM_EPS)?
            }
            ResidualNorm::NormThenAdd => {
                let normed = tape.layer_norm(mixed, self.norm_gain, self.norm_bias, LAYER_NORM_EPS)?;
                tape.add(x, normed)?
            }
            ResidualNorm::AddOnly => tape.add(x, mixed)?,
        };
        Ok(MhaTrace { output, weights })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn single_timestep_returns_value_row() {
        let q = Matrix::row_vector(&[0.3, -1.2]);
        let k = Matrix::row_vector(&[2.0, 0.5]);
        let v = Matrix::row_vector(&[4.0, -5.0, 6.0]);
        let a = scaled_dot_product_attention(&q, &k, &v).unwrap();
        assert_eq!(a.weights.data(), &[1.0]);
        assert_eq!(a.output, v);
    }

    #[test]
    fn equal_scores_average_values() {
        let q = Matrix::zeros(2, 2);
        let k = Matrix::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let v = Matrix::new(3, 2, vec![1.0, 10.0, 2.0, 20.0, 6.0, 60.0]).unwrap();
        let a = scaled_dot_product_attention(&q, &k, &v).unwrap();
        for r in 0..2 {
            assert!((a.output.get(r, 0) - 3.0).abs() < 1e-12);
            assert!((a.output.get(r, 1) - 30.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatched_key_width() {
        let r = scaled_dot_product_attention(&Matrix::zeros(2, 3), &Matrix::zeros(2, 2), &Matrix::zeros(2, 2));
        assert!(matches!(r, Err(MagError::Shape { .. })));
    }

    #[test]
    fn output_projection_mismatch_is_config_error() {
        let head = AttentionHead {
            query: Matrix::zeros(4, 2),
            key: Matrix::zeros(4, 2),
            value: Matrix::zeros(4, 2),
        };
        let r = MultiHeadAttention::new(
            vec![head],
            Matrix::zeros(3, 4),
            Matrix::zeros(1, 4),
            Matrix::filled(1, 4, 1.0),
            Matrix::zeros(1, 4),
            ResidualNorm::AddThenNorm,
        );
        assert!(matches!(r, Err(MagError::Config(_))));
    }

    #[test]
    fn identity_projections_reduce_to_attention_plus_input() {
        let f = 3;
        let head = AttentionHead {
            query: Matrix::identity(f),
            key: Matrix::identity(f),
            value: Matrix::identity(f),
        };
        let mha = MultiHeadAttention::new(
            vec![head],
            Matrix::identity(f),
            Matrix::zeros(1, f),
            Matrix::filled(1, f, 1.0),
            Matrix::zeros(1, f),
            ResidualNorm::AddOnly,
        )
        .unwrap();
        let x = SequenceBatch::new(1, 4, f, (0..12).map(|v| (v as f64 * 0.37).sin()).collect()).unwrap();
        let y = mha.forward(&x).unwrap();
        let xm = x.sample(0);
        let expected = scaled_dot_product_attention(&xm, &xm, &xm).unwrap().output.add(&xm).unwrap();
        for (a, b) in y.data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn shape_is_preserved() {
        let mut rng = rng::seeded(3, 0);
        let mha = MultiHeadAttention::glorot(8, 2, 3, ResidualNorm::AddThenNorm, &mut rng).unwrap();
        let x = SequenceBatch::new(2, 5, 8, (0..80).map(|v| (v as f64).cos()).collect()).unwrap();
        let (y, w) = mha.forward_with_weights(&x).unwrap();
        assert_eq!((y.batch(), y.steps(), y.features()), (2, 5, 8));
        assert_eq!(w.len(), 4);
        assert!(w.iter().all(|m| m.shape() == (5, 5)));
    }
}
