//! The assembled forecaster.
//!
//! Per window of `L` days:
//!
//! ```text
//! news (L x news_dim) ─► dense(relu) ─► … ─► dense(relu) ─┐
//!                                                         ├─ concat ─► [+ positional] ─► [attention]
//! stats ⧺ trends (L x other_dim) ─────────────────────────┘
//!     ─► GRU (sequence) ─► dropout ─► GRU (final state) ─► dense(1, linear)
//! ```

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{MagError, Result};
use crate::layers::attention::{HeadVars, MhaTrace, MhaVars, ResidualNorm};
use crate::layers::dense::{Activation, DenseVars};
use crate::layers::dropout::{apply_dropout, check_rate};
use crate::layers::gru::GruVars;
use crate::layers::positional::PositionalEncoding;
use crate::rng;
use crate::tape::{GradTape, Var};
use crate::tensor::{Matrix, SequenceBatch};

/// Architecture and regularization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Width of the day-wise news encoding; 0 removes the news branch.
    pub news_dim: usize,
    pub news_hidden: Vec<usize>,
    pub trends_dim: usize,
    pub stats_dim: usize,
    /// Window length in days.
    pub lookback: usize,
    /// Days between the last window day and the target day.
    pub horizon: usize,
    pub gru_units: usize,
    pub num_heads: usize,
    pub head_size: usize,
    pub dropout: f64,
    pub use_attention: bool,
    pub use_positional_encoding: bool,
    pub norm_then_add: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            news_dim: 768,
            news_hidden: vec![156, 32],
            trends_dim: 13,
            stats_dim: 0,
            lookback: 7,
            horizon: 3,
            gru_units: 100,
            num_heads: 6,
            head_size: 128,
            dropout: 0.2,
            use_attention: true,
            use_positional_encoding: true,
            norm_then_add: false,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Width of the news branch output (0 when the branch is absent).
    pub fn news_branch_width(&self) -> usize {
        if self.news_dim == 0 {
            0
        } else {
            self.news_hidden.last().copied().unwrap_or(0)
        }
    }

    /// Width of the non-news input (stats followed by trends).
    pub fn other_dim(&self) -> usize {
        self.trends_dim + self.stats_dim
    }

    /// Feature width seen by the attention block and the first GRU.
    pub fn feature_dim(&self) -> usize {
        self.news_branch_width() + self.other_dim()
    }

    pub fn residual(&self) -> ResidualNorm {
        if self.norm_then_add {
            ResidualNorm::NormThenAdd
        } else {
            ResidualNorm::AddThenNorm
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(MagError::Config(msg));
        if self.lookback == 0 {
            return fail("lookback must be >= 1".into());
        }
        if self.horizon == 0 {
            return fail("horizon must be >= 1".into());
        }
        if self.gru_units == 0 {
            return fail("gru_units must be >= 1".into());
        }
        if self.use_attention && self.num_heads == 0 {
            return fail("num_heads must be >= 1".into());
        }
        if self.use_attention && self.head_size == 0 {
            return fail("head_size must be >= 1".into());
        }
        if check_rate(self.dropout).is_err() {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.news_dim > 0 && self.news_hidden.is_empty() {
            return fail("news_hidden must list at least one layer when news_dim > 0".into());
        }
        if self.news_hidden.contains(&0) {
            return fail("news_hidden widths must be >= 1".into());
        }
        if self.feature_dim() == 0 {
            return fail("feature width news_hidden.last + trends_dim + stats_dim must be >= 1".into());
        }
        Ok(())
    }
}

/// All trainable arrays, keyed by stable dotted names. Vectors are `1 x n`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParameterSet {
    arrays: BTreeMap<String, Matrix>,
}

impl ParameterSet {
    pub fn new() -> Self {
        ParameterSet::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) {
        self.arrays.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.arrays.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.arrays.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.arrays.contains_key(name)
    }

    /// Iterate in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.arrays.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Matrix)> {
        self.arrays.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.arrays.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.arrays.values().map(Matrix::len).sum()
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> ParameterSet {
        ParameterSet {
            arrays: self
                .arrays
                .iter()
                .map(|(k, v)| (k.clone(), Matrix::zeros(v.rows(), v.cols())))
                .collect(),
        }
    }

    /// Arrays in name order.
    pub fn to_vec(&self) -> Vec<Matrix> {
        self.arrays.values().cloned().collect()
    }

    /// Rebuild from arrays given in the name order of `self`.
    pub fn with_values(&self, values: &[Matrix]) -> Result<ParameterSet> {
        if values.len() != self.arrays.len() {
            return Err(MagError::Data(format!("expected {} arrays, got {}", self.arrays.len(), values.len())));
        }
        let mut out = BTreeMap::new();
        for ((name, old), new) in self.arrays.iter().zip(values) {
            if old.shape() != new.shape() {
                return Err(MagError::shape("ParameterSet::with_values", old.shape(), new.shape()));
            }
            out.insert(name.clone(), new.clone());
        }
        Ok(ParameterSet { arrays: out })
    }

    /// True when both sets have the same names with the same shapes.
    pub fn same_layout(&self, other: &ParameterSet) -> bool {
        self.arrays.len() == other.arrays.len()
            && self
                .arrays
                .iter()
                .zip(&other.arrays)
                .all(|((a, x), (b, y))| a == b && x.shape() == y.shape())
    }
}

fn news_dense_name(i: usize, part: &str) -> String {
    format!("news.dense{i}.{part}")
}

fn head_name(i: usize, part: &str) -> String {
    format!("attention.head{i}.{part}")
}

const GRU_PARTS: [&str; 9] = ["w_xu", "w_hu", "w_xr", "w_hr", "w_xc", "w_hc", "b_u", "b_r", "b_c"];

/// Seeded initialization of every parameter the configuration calls for.
///
/// Weights are Glorot-uniform, biases zero, normalization gains one.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<ParameterSet> {
    config.validate()?;
    let mut rng = rng::seeded(seed, rng::streams::INIT);
    let mut params = ParameterSet::new();

    if config.news_dim > 0 {
        let mut width = config.news_dim;
        for (i, &out) in config.news_hidden.iter().enumerate() {
            params.insert(news_dense_name(i, "weight"), rng::glorot_uniform(width, out, &mut rng));
            params.insert(news_dense_name(i, "bias"), Matrix::zeros(1, out));
            width = out;
        }
    }

    let f = config.feature_dim();
    if config.use_attention {
        let d = config.head_size;
        for i in 0..config.num_heads {
            for part in ["query", "key", "value"] {
                params.insert(head_name(i, part), rng::glorot_uniform(f, d, &mut rng));
            }
        }
        params.insert("attention.output.weight", rng::glorot_uniform(config.num_heads * d, f, &mut rng));
        params.insert("attention.output.bias", Matrix::zeros(1, f));
        params.insert("attention.norm.gain", Matrix::filled(1, f, 1.0));
        params.insert("attention.norm.bias", Matrix::zeros(1, f));
    }

    let u = config.gru_units;
    for (layer, input) in [("gru1", f), ("gru2", u)] {
        for part in GRU_PARTS {
            let m = match part {
                "w_xu" | "w_xr" | "w_xc" => rng::glorot_uniform(input, u, &mut rng),
                "w_hu" | "w_hr" | "w_hc" => rng::glorot_uniform(u, u, &mut rng),
                _ => Matrix::zeros(1, u),
            };
            params.insert(format!("{layer}.{part}"), m);
        }
    }

    params.insert("output.weight", rng::glorot_uniform(u, 1, &mut rng));
    params.insert("output.bias", Matrix::zeros(1, 1));
    Ok(params)
}

/// Tape handles of a bound parameter set.
struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    fn bind(params: &ParameterSet, tape: &mut GradTape) -> Bound {
        Bound {
            vars: params.iter().map(|(k, v)| (k.to_string(), tape.leaf(v.clone()))).collect(),
        }
    }

    fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| MagError::Config(format!("parameter set lacks `{name}`")))
    }

    fn gru(&self, layer: &str) -> Result<GruVars> {
        let v = |p: &str| self.var(&format!("{layer}.{p}"));
        Ok(GruVars {
            w_xu: v("w_xu")?,
            w_hu: v("w_hu")?,
            w_xr: v("w_xr")?,
            w_hr: v("w_hr")?,
            w_xc: v("w_xc")?,
            w_hc: v("w_hc")?,
            b_u: v("b_u")?,
            b_r: v("b_r")?,
            b_c: v("b_c")?,
        })
    }

    fn attention(&self, config: &ModelConfig) -> Result<MhaVars> {
        let heads = (0..config.num_heads)
            .map(|i| {
                Ok(HeadVars {
                    query: self.var(&head_name(i, "query"))?,
                    key: self.var(&head_name(i, "key"))?,
                    value: self.var(&head_name(i, "value"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MhaVars {
            heads,
            output_weight: self.var("attention.output.weight")?,
            output_bias: self.var("attention.output.bias")?,
            norm_gain: self.var("attention.norm.gain")?,
            norm_bias: self.var("attention.norm.bias")?,
            residual: config.residual(),
        })
    }
}

// Dropout sites; each gets its own mask seed.
const SITE_NEWS: u64 = 0;
const SITE_GRU1: u64 = 100;

/// Handles of interest after recording one forward pass.
pub struct ForwardTrace {
    pub tape: GradTape,
    pub prediction: Var,
    pub attention: Option<MhaTrace>,
    vars: BTreeMap<String, Var>,
}

impl ForwardTrace {
    /// Attention weights of every (sample, head), `steps x steps` each.
    pub fn attention_weights(&self) -> Vec<Matrix> {
        self.attention
            .as_ref()
            .map(|t| t.weights.iter().map(|&w| self.tape.value(w).clone()).collect())
            .unwrap_or_default()
    }
}

fn check_inputs(config: &ModelConfig, news: &SequenceBatch, other: &SequenceBatch) -> Result<()> {
    if news.features() != config.news_dim {
        return Err(MagError::Shape {
            op: "forward: news input",
            left: format!("{} features", news.features()),
            right: format!("news_dim {}", config.news_dim),
        });
    }
    if other.features() != config.other_dim() {
        return Err(MagError::Shape {
            op: "forward: trends+stats input",
            left: format!("{} features", other.features()),
            right: format!("trends_dim + stats_dim = {}", config.other_dim()),
        });
    }
    if news.batch() != other.batch() || news.steps() != other.steps() {
        return Err(MagError::Shape {
            op: "forward: input alignment",
            left: format!("news {}x{}", news.batch(), news.steps()),
            right: format!("other {}x{}", other.batch(), other.steps()),
        });
    }
    if news.batch() == 0 {
        return Err(MagError::Data("forward needs at least one window".into()));
    }
    Ok(())
}

/// Record a forward pass on a fresh tape.
pub fn trace_forward(
    params: &ParameterSet,
    config: &ModelConfig,
    news: &SequenceBatch,
    other: &SequenceBatch,
    training: bool,
    seed: u64,
) -> Result<ForwardTrace> {
    config.validate()?;
    check_inputs(config, news, other)?;
    let (batch, steps) = (other.batch(), other.steps());
    let mut tape = GradTape::new();
    let bound = Bound::bind(params, &mut tape);
    let drop_seed = |site: u64| rng::mix(seed, site);

    let mut parts = Vec::with_capacity(2);
    if config.news_dim > 0 {
        let mut h = tape.leaf(news.to_matrix());
        for i in 0..config.news_hidden.len() {
            let layer = DenseVars {
                weight: bound.var(&news_dense_name(i, "weight"))?,
                bias: bound.var(&news_dense_name(i, "bias"))?,
                activation: Activation::Relu,
            };
            h = layer.apply(&mut tape, h)?;
            h = apply_dropout(&mut tape, h, config.dropout, training, drop_seed(SITE_NEWS + i as u64))?;
        }
        parts.push(h);
    }
    if config.other_dim() > 0 {
        parts.push(tape.leaf(other.to_matrix()));
    }
    let mut x = if parts.len() == 1 { parts[0] } else { tape.concat_cols(&parts)? };

    if config.use_positional_encoding {
        x = PositionalEncoding::new(steps, config.feature_dim()).apply(&mut tape, x, batch, steps)?;
    }

    let mut attention = None;
    if config.use_attention {
        let trace = bound.attention(config)?.apply(&mut tape, x, batch, steps)?;
        x = trace.output;
        attention = Some(trace);
    }

    let seq = bound.gru("gru1")?.run(&mut tape, x, batch, steps, true)?;
    let seq = apply_dropout(&mut tape, seq, config.dropout, training, drop_seed(SITE_GRU1))?;
    let last = bound.gru("gru2")?.run(&mut tape, seq, batch, steps, false)?;

    let head = DenseVars {
        weight: bound.var("output.weight")?,
        bias: bound.var("output.bias")?,
        activation: Activation::Linear,
    };
    let prediction = head.apply(&mut tape, last)?;
    Ok(ForwardTrace {
        tape,
        prediction,
        attention,
        vars: bound.vars,
    })
}

/// One scalar prediction (normalized target units) per window.
pub fn forward(
    params: &ParameterSet,
    config: &ModelConfig,
    news: &SequenceBatch,
    other: &SequenceBatch,
    training: bool,
    seed: u64,
) -> Result<Vec<f64>> {
    let trace = trace_forward(params, config, news, other, training, seed)?;
    let preds = trace.tape.value(trace.prediction).data().to_vec();
    if preds.iter().any(|v| !v.is_finite()) {
        return Err(MagError::numeric("forward prediction"));
    }
    Ok(preds)
}

/// Mean squared error over the batch and its gradient for every parameter.
///
/// Dropout is active, with masks drawn from `seed`.
pub fn loss_and_grads(
    params: &ParameterSet,
    config: &ModelConfig,
    news: &SequenceBatch,
    other: &SequenceBatch,
    targets: &[f64],
    seed: u64,
) -> Result<(f64, ParameterSet)> {
    if targets.len() != other.batch() {
        return Err(MagError::Data(format!(
            "{} targets for a batch of {}",
            targets.len(),
            other.batch()
        )));
    }
    let mut trace = trace_forward(params, config, news, other, true, seed)?;
    let loss_var = trace.tape.mse(trace.prediction, targets)?;
    let loss = trace.tape.value(loss_var).data()[0];
    if !loss.is_finite() {
        return Err(MagError::numeric("training loss"));
    }
    let mut grads = trace.tape.backward(loss_var)?;
    let mut out = ParameterSet::new();
    for (name, value) in params.iter() {
        let var = trace.vars.remove(name).expect("every parameter is bound");
        out.insert(name, grads.take_or_zeros(var, value.shape()));
    }
    if out.iter().any(|(_, g)| !g.is_finite()) {
        return Err(MagError::numeric("gradient"));
    }
    Ok((loss, out))
}

/// Mean and standard deviation used to z-normalize the target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScale {
    pub mean: f64,
    pub std: f64,
}

impl TargetScale {
    pub const IDENTITY: TargetScale = TargetScale { mean: 0.0, std: 1.0 };

    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

/// Model predictions, normalized and in target units.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastOutput {
    pub predictions: Vec<f64>,
    pub denormalized: Vec<f64>,
}

impl ForecastOutput {
    pub fn from_normalized(predictions: Vec<f64>, scale: &TargetScale) -> Self {
        let denormalized = predictions.iter().map(|&p| scale.denormalize(p)).collect();
        ForecastOutput {
            predictions,
            denormalized,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ModelConfig {
        ModelConfig {
            news_dim: 6,
            news_hidden: vec![5, 3],
            trends_dim: 2,
            stats_dim: 3,
            lookback: 4,
            horizon: 3,
            gru_units: 4,
            num_heads: 2,
            head_size: 3,
            dropout: 0.2,
            seed: 5,
            ..ModelConfig::default()
        }
    }

    fn inputs(config: &ModelConfig, batch: usize) -> (SequenceBatch, SequenceBatch) {
        let l = config.lookback;
        let news = (0..batch * l * config.news_dim).map(|i| ((i as f64) * 0.37).sin()).collect();
        let other = (0..batch * l * config.other_dim()).map(|i| ((i as f64) * 0.11).cos()).collect();
        (
            SequenceBatch::new(batch, l, config.news_dim, news).unwrap(),
            SequenceBatch::new(batch, l, config.other_dim(), other).unwrap(),
        )
    }

    #[test]
    fn feature_width_follows_wiring() {
        let cfg = ModelConfig {
            news_hidden: vec![156, 32],
            trends_dim: 13,
            stats_dim: 50,
            ..ModelConfig::default()
        };
        assert_eq!(cfg.feature_dim(), 95);
    }

    #[test]
    fn same_seed_same_parameters() {
        let cfg = ModelConfig::default();
        assert_eq!(build_model(&cfg, 7).unwrap(), build_model(&cfg, 7).unwrap());
        assert_ne!(build_model(&cfg, 7).unwrap(), build_model(&cfg, 8).unwrap());
    }

    #[test]
    fn residual_constraint_holds() {
        let cfg = small_config();
        let p = build_model(&cfg, 1).unwrap();
        let w_o = p.get("attention.output.weight").unwrap();
        assert_eq!(w_o.shape(), (cfg.num_heads * cfg.head_size, cfg.feature_dim()));
    }

    #[test]
    fn no_attention_means_no_attention_weights() {
        let cfg = ModelConfig {
            use_attention: false,
            ..small_config()
        };
        let p = build_model(&cfg, 1).unwrap();
        assert!(p.names().all(|n| !n.starts_with("attention.")));
    }

    #[test]
    fn invalid_config_names_constraint() {
        let cfg = ModelConfig {
            dropout: 1.0,
            ..small_config()
        };
        let err = build_model(&cfg, 0).unwrap_err();
        assert!(format!("{err}").contains("dropout"));
    }

    #[test]
    fn one_prediction_per_window() {
        let cfg = small_config();
        let p = build_model(&cfg, 2).unwrap();
        let (news, other) = inputs(&cfg, 4);
        assert_eq!(forward(&p, &cfg, &news, &other, false, 0).unwrap().len(), 4);
    }

    #[test]
    fn zero_network_predicts_output_bias() {
        let cfg = small_config();
        let mut p = build_model(&cfg, 2).unwrap().zeros_like();
        p.get_mut("attention.norm.gain").unwrap().data_mut().fill(1.0);
        p.insert("output.bias", Matrix::filled(1, 1, 0.625));
        let (news, other) = inputs(&cfg, 3);
        let preds = forward(&p, &cfg, &news, &other, false, 0).unwrap();
        assert!(preds.iter().all(|&v| v == 0.625));
    }

    #[test]
    fn stage_named_on_bad_input() {
        let cfg = small_config();
        let p = build_model(&cfg, 2).unwrap();
        let (_, other) = inputs(&cfg, 2);
        let bad_news = SequenceBatch::zeros(2, cfg.lookback, cfg.news_dim + 1);
        let err = forward(&p, &cfg, &bad_news, &other, false, 0).unwrap_err();
        assert!(format!("{err}").contains("news input"));
    }

    #[test]
    fn perfect_predictions_zero_loss() {
        let cfg = ModelConfig {
            dropout: 0.0,
            ..small_config()
        };
        let p = build_model(&cfg, 3).unwrap();
        let (news, other) = inputs(&cfg, 3);
        let preds = forward(&p, &cfg, &news, &other, true, 0).unwrap();
        let (loss, grads) = loss_and_grads(&p, &cfg, &news, &other, &preds, 0).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grads.get("output.bias").unwrap().data(), &[0.0]);
    }

    #[test]
    fn targets_length_checked() {
        let cfg = small_config();
        let p = build_model(&cfg, 3).unwrap();
        let (news, other) = inputs(&cfg, 3);
        assert!(loss_and_grads(&p, &cfg, &news, &other, &[0.0; 2], 0).is_err());
    }
}
