//! Analytic gradients against central finite differences.

mod common;

use common::{random_matrix, random_sequence, tape_objective, toy_config};
use mag_core::gradcheck::{grad_check, DEFAULT_EPS};
use mag_core::layers::{Activation, DenseVars, GruCell, MultiHeadAttention, ResidualNorm};
use mag_core::layers::attention::attend;
use mag_core::model::{build_model, loss_and_grads, ModelConfig};
use mag_core::rng;
use mag_core::tensor::{Matrix, Unary, LAYER_NORM_EPS};

const LAYER_TOL: f64 = 1e-4;
const MODEL_TOL: f64 = 1e-3;

#[test]
fn matmul_gradients() {
    let params = [random_matrix(3, 4, 1.0, 1), random_matrix(4, 2, 1.0, 2)];
    let err = grad_check(|p| tape_objective(p, 3, |t, v| t.matmul(v[0], v[1])), &params, DEFAULT_EPS).unwrap();
    assert!(err < LAYER_TOL, "{err}");
}

#[test]
fn transposed_matmul_gradients() {
    let params = [random_matrix(3, 4, 1.0, 4), random_matrix(5, 4, 1.0, 5)];
    let err = grad_check(|p| tape_objective(p, 6, |t, v| t.matmul_bt(v[0], v[1])), &params, DEFAULT_EPS).unwrap();
    assert!(err < LAYER_TOL, "{err}");
}

#[test]
fn dense_layer_gradients() {
    for (act, seed) in [(Activation::Relu, 10), (Activation::Linear, 11)] {
        let params = [
            random_matrix(5, 3, 1.0, seed),
            random_matrix(3, 4, 1.0, seed + 1),
            random_matrix(1, 4, 0.5, seed + 2),
        ];
        let err = grad_check(
            |p| {
                tape_objective(p, seed, |t, v| {
                    DenseVars {
                        weight: v[1],
                        bias: v[2],
                        activation: act,
                    }
                    .apply(t, v[0])
                })
            },
            &params,
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(err < LAYER_TOL, "{act:?}: {err}");
    }
}

#[test]
fn layer_norm_gradients() {
    let params = [
        random_matrix(2, 5, 2.0, 20),
        random_matrix(1, 5, 1.5, 21),
        random_matrix(1, 5, 1.0, 22),
    ];
    let err = grad_check(
        |p| tape_objective(p, 23, |t, v| t.layer_norm(v[0], v[1], v[2], LAYER_NORM_EPS)),
        &params,
        DEFAULT_EPS,
    )
    .unwrap();
    assert!(err < LAYER_TOL, "{err}");
}

#[test]
fn softmax_and_pointwise_gradients() {
    let params = [random_matrix(3, 4, 2.0, 30), random_matrix(3, 4, 2.0, 31)];
    let err = grad_check(
        |p| {
            tape_objective(p, 32, |t, v| {
                let s = t.softmax_rows(v[0]);
                let a = t.unary(v[1], Unary::Sigmoid);
                let b = t.unary(v[0], Unary::Tanh);
                let h = t.hadamard(a, b)?;
                let sum = t.add(s, h)?;
                let one = t.one_minus(sum);
                Ok(t.scale(one, 0.7))
            })
        },
        &params,
        DEFAULT_EPS,
    )
    .unwrap();
    assert!(err < LAYER_TOL, "{err}");
}

#[test]
fn scaled_dot_product_attention_gradients() {
    let params = [
        random_matrix(4, 3, 1.0, 40),
        random_matrix(5, 3, 1.0, 41),
        random_matrix(5, 2, 1.0, 42),
    ];
    let err = grad_check(|p| tape_objective(p, 43, |t, v| Ok(attend(t, v[0], v[1], v[2])?.0)), &params, DEFAULT_EPS).unwrap();
    assert!(err < LAYER_TOL, "{err}");
}

fn mha_params(mha: &MultiHeadAttention) -> Vec<Matrix> {
    let mut out = Vec::new();
    for h in &mha.heads {
        out.extend([h.query.clone(), h.key.clone(), h.value.clone()]);
    }
    out.extend([
        mha.output_weight.clone(),
        mha.output_bias.clone(),
        mha.norm_gain.clone(),
        mha.norm_bias.clone(),
    ]);
    out
}

#[test]
fn multi_head_attention_gradients_every_head() {
    for residual in [ResidualNorm::AddThenNorm, ResidualNorm::NormThenAdd, ResidualNorm::AddOnly] {
        let mut r = rng::seeded(50, 0);
        let mut mha = MultiHeadAttention::glorot(6, 3, 2, residual, &mut r).unwrap();
        mha.output_bias = random_matrix(1, 6, 0.3, 51);
        mha.norm_bias = random_matrix(1, 6, 0.3, 52);
        let x = random_sequence(2, 4, 6, 53).to_matrix();
        let mut params = vec![x];
        params.extend(mha_params(&mha));
        let heads = mha.heads.len();
        let err = grad_check(
            |p| {
                tape_objective(p, 54, |t, v| {
                    let vars = mag_core::layers::MhaVars {
                        heads: (0..heads)
                            .map(|i| mag_core::layers::attention::HeadVars {
                                query: v[1 + 3 * i],
                                key: v[2 + 3 * i],
                                value: v[3 + 3 * i],
                            })
                            .collect(),
                        output_weight: v[1 + 3 * heads],
                        output_bias: v[2 + 3 * heads],
                        norm_gain: v[3 + 3 * heads],
                        norm_bias: v[4 + 3 * heads],
                        residual,
                    };
                    Ok(vars.apply(t, v[0], 2, 4)?.output)
                })
            },
            &params,
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(err < LAYER_TOL, "{residual:?}: {err}");
    }
}

fn gru_params(cell: &GruCell) -> Vec<Matrix> {
    vec![
        cell.w_xu.clone(),
        cell.w_hu.clone(),
        cell.w_xr.clone(),
        cell.w_hr.clone(),
        cell.w_xc.clone(),
        cell.w_hc.clone(),
        cell.b_u.clone(),
        cell.b_r.clone(),
        cell.b_c.clone(),
    ]
}

fn gru_vars(v: &[mag_core::Var]) -> mag_core::layers::GruVars {
    mag_core::layers::GruVars {
        w_xu: v[0],
        w_hu: v[1],
        w_xr: v[2],
        w_hr: v[3],
        w_xc: v[4],
        w_hc: v[5],
        b_u: v[6],
        b_r: v[7],
        b_c: v[8],
    }
}

fn random_cell(input: usize, units: usize, seed: u64) -> GruCell {
    let mut r = rng::seeded(seed, 0);
    let mut cell = GruCell::glorot(input, units, &mut r);
    cell.b_u = random_matrix(1, units, 0.5, seed + 1);
    cell.b_r = random_matrix(1, units, 0.5, seed + 2);
    cell.b_c = random_matrix(1, units, 0.5, seed + 3);
    cell
}

#[test]
fn gru_cell_step_gradients() {
    let cell = random_cell(3, 4, 60);
    let mut params = gru_params(&cell);
    params.push(random_matrix(2, 3, 1.0, 61));
    params.push(random_matrix(2, 4, 0.8, 62));
    let err = grad_check(|p| tape_objective(p, 63, |t, v| gru_vars(v).step(t, v[9], v[10])), &params, DEFAULT_EPS).unwrap();
    assert!(err < LAYER_TOL, "{err}");
}

#[test]
fn gru_bptt_gradients() {
    let cell = random_cell(3, 4, 70);
    let mut params = gru_params(&cell);
    params.push(random_sequence(2, 4, 3, 71).to_matrix());
    for return_sequence in [true, false] {
        let err = grad_check(
            |p| tape_objective(p, 72, |t, v| gru_vars(v).run(t, v[9], 2, 4, return_sequence)),
            &params,
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(err < MODEL_TOL, "return_sequence={return_sequence}: {err}");
    }
}

fn model_check(config: &ModelConfig, batch: usize) -> f64 {
    let mut params = build_model(config, 5).unwrap();
    // Zero biases put dead-ReLU rows exactly on the kink, where central
    // differences are meaningless.
    for (i, (name, value)) in params.iter_mut().enumerate() {
        if name.ends_with("bias") {
            *value = random_matrix(1, value.cols(), 0.3, 200 + i as u64);
        }
    }
    let news = random_sequence(batch, config.lookback, config.news_dim, 80);
    let other = random_sequence(batch, config.lookback, config.other_dim(), 81);
    let targets: Vec<f64> = (0..batch).map(|i| 0.3 - 0.4 * i as f64).collect();
    grad_check(
        |p| {
            let set = params.with_values(p)?;
            let (loss, grads) = loss_and_grads(&set, config, &news, &other, &targets, 99)?;
            Ok((loss, grads.to_vec()))
        },
        &params.to_vec(),
        DEFAULT_EPS,
    )
    .unwrap()
}

#[test]
fn full_model_gradients_on_toy_batch() {
    let err = model_check(&toy_config(), 2);
    assert!(err < MODEL_TOL, "{err}");
}

#[test]
fn full_model_gradient_variants() {
    let base = toy_config();
    for cfg in [
        ModelConfig { use_attention: false, ..base.clone() },
        ModelConfig { norm_then_add: true, ..base.clone() },
        ModelConfig { news_dim: 0, use_positional_encoding: false, ..base.clone() },
        ModelConfig { trends_dim: 0, dropout: 0.0, lookback: 3, ..base.clone() },
    ] {
        let err = model_check(&cfg, 2);
        assert!(err < MODEL_TOL, "{cfg:?}: {err}");
    }
}

