//! Built-in checks: gradients, known-answer values, metrics and the data
//! pipeline on the synthetic fixture.

use std::path::Path;

use mag_core::gradcheck::{grad_check, DEFAULT_EPS};
use mag_core::layers::{scaled_dot_product_attention, GruCell, GruOutput, MultiHeadAttention, ResidualNorm};
use mag_core::model::{build_model, loss_and_grads};
use mag_core::rng;
use mag_core::tape::{GradTape, Var};
use mag_core::tensor::LAYER_NORM_EPS;
use mag_core::train::{mae, rmse};
use mag_core::{Matrix, ModelConfig, Result as CoreResult, SequenceBatch};
use rand::Rng;

use crate::artifacts::write_lines;
use crate::config::RunConfig;
use crate::error::Result;
use crate::experiments::{load_inputs, windows};
use crate::fixture::{planted_fixture, write_fixture, FixtureSpec, FIXTURE_SETTINGS};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name,
            passed,
            detail: detail.into(),
        }
    }

    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut r = rng::seeded(seed, 99);
    Matrix::new(rows, cols, (0..rows * cols).map(|_| r.gen_range(-1.0..1.0)).collect()).expect("sized")
}

/// Loss `mean((y·p - t)^2)` of a recorded output `y` with fixed `p`, `t`.
fn objective(params: &[Matrix], build: impl FnOnce(&mut GradTape, &[Var]) -> CoreResult<Var>) -> CoreResult<(f64, Vec<Matrix>)> {
    let mut tape = GradTape::new();
    let leaves: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let y = build(&mut tape, &leaves)?;
    let (rows, cols) = tape.value(y).shape();
    let proj = tape.leaf(random(cols, 1, 5));
    let z = tape.matmul(y, proj)?;
    let loss = tape.mse(z, random(rows, 1, 6).data())?;
    let value = tape.value(loss).data()[0];
    let mut grads = tape.backward(loss)?;
    Ok((value, leaves.iter().zip(params).map(|(&v, p)| grads.take_or_zeros(v, p.shape())).collect()))
}

/// Finite-difference checks of the layer and model gradients.
pub fn gradient_checks() -> CoreResult<Vec<Check>> {
    let tol = |name, err: f64, limit| Check::new(name, err < limit, format!("max relative error {err:.3e} (limit {limit:.0e})"));
    let mut out = Vec::new();

    let p = [random(3, 4, 1), random(4, 2, 2), random(1, 2, 3)];
    let err = grad_check(
        |p| {
            objective(p, |t, v| {
                let y = t.matmul(v[0], v[1])?;
                t.add_row(y, v[2])
            })
        },
        &p,
        DEFAULT_EPS,
    )?;
    out.push(tol("gradient: dense", err, 1e-4));

    let p = [random(3, 5, 4), random(1, 5, 5), random(1, 5, 6)];
    let err = grad_check(|p| objective(p, |t, v| t.layer_norm(v[0], v[1], v[2], LAYER_NORM_EPS)), &p, DEFAULT_EPS)?;
    out.push(tol("gradient: layer norm", err, 1e-4));

    let mut r = rng::seeded(7, 0);
    let mha = MultiHeadAttention::glorot(4, 2, 3, ResidualNorm::AddThenNorm, &mut r)?;
    let mut p = vec![random(6, 4, 8)];
    for h in &mha.heads {
        p.extend([h.query.clone(), h.key.clone(), h.value.clone()]);
    }
    p.extend([mha.output_weight.clone(), mha.output_bias.clone(), mha.norm_gain.clone(), mha.norm_bias.clone()]);
    let err = grad_check(
        |p| {
            objective(p, |t, v| {
                let vars = mag_core::layers::MhaVars {
                    heads: (0..2)
                        .map(|i| mag_core::layers::attention::HeadVars {
                            query: v[1 + 3 * i],
                            key: v[2 + 3 * i],
                            value: v[3 + 3 * i],
                        })
                        .collect(),
                    output_weight: v[7],
                    output_bias: v[8],
                    norm_gain: v[9],
                    norm_bias: v[10],
                    residual: ResidualNorm::AddThenNorm,
                };
                Ok(vars.apply(t, v[0], 2, 3)?.output)
            })
        },
        &p,
        DEFAULT_EPS,
    )?;
    out.push(tol("gradient: multi-head attention", err, 1e-4));

    let cell = GruCell::glorot(3, 4, &mut r);
    let p = vec![
        cell.w_xu, cell.w_hu, cell.w_xr, cell.w_hr, cell.w_xc, cell.w_hc, random(1, 4, 9), random(1, 4, 10), random(1, 4, 11),
        random(8, 3, 12),
    ];
    let err = grad_check(
        |p| {
            objective(p, |t, v| {
                let vars = mag_core::layers::GruVars {
                    w_xu: v[0],
                    w_hu: v[1],
                    w_xr: v[2],
                    w_hr: v[3],
                    w_xc: v[4],
                    w_hc: v[5],
                    b_u: v[6],
                    b_r: v[7],
                    b_c: v[8],
                };
                vars.run(t, v[9], 2, 4, true)
            })
        },
        &p,
        DEFAULT_EPS,
    )?;
    out.push(tol("gradient: GRU through time", err, 1e-4));

    let config = ModelConfig {
        news_dim: 5,
        news_hidden: vec![4, 3],
        trends_dim: 2,
        stats_dim: 2,
        lookback: 3,
        horizon: 3,
        gru_units: 4,
        num_heads: 2,
        head_size: 3,
        dropout: 0.2,
        seed: 3,
        ..ModelConfig::default()
    };
    let mut params = build_model(&config, 1)?;
    for (i, (name, value)) in params.iter_mut().enumerate() {
        if name.ends_with("bias") {
            *value = random(1, value.cols(), 100 + i as u64).scale(0.3);
        }
    }
    let news = SequenceBatch::from_matrix(random(6, 5, 13), 2, 3)?;
    let other = SequenceBatch::from_matrix(random(6, 4, 14), 2, 3)?;
    let err = grad_check(
        |p| {
            let set = params.with_values(p)?;
            let (loss, g) = loss_and_grads(&set, &config, &news, &other, &[0.4, -0.3], 5)?;
            Ok((loss, g.to_vec()))
        },
        &params.to_vec(),
        DEFAULT_EPS,
    )?;
    out.push(tol("gradient: full model", err, 1e-3));
    Ok(out)
}

pub fn oracle_checks() -> CoreResult<Vec<Check>> {
    let close = |got: &[f64], want: &[f64]| got.iter().zip(want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let mut out = Vec::new();

    let i2 = Matrix::identity(2);
    let att = scaled_dot_product_attention(&i2, &i2, &i2)?;
    let (hi, lo) = (0.669_761_549_326_656_925_62, 0.330_238_450_673_343_074_38);
    let err = close(att.output.data(), &[hi, lo, lo, hi]);
    out.push(Check::new("oracle: attention", err <= 1e-10, format!("max abs error {err:.3e}")));

    let m = |rows: &[&[f64]]| Matrix::from_rows(rows);
    let cell = GruCell {
        w_xu: m(&[&[0.5, -0.25, 0.125], &[-0.75, 0.375, 0.625]])?,
        w_hu: m(&[&[0.25, 0.5, -0.5], &[-0.125, 0.25, 0.75], &[0.375, -0.625, 0.125]])?,
        w_xr: m(&[&[-0.375, 0.875, 0.25], &[0.5, -0.5, 0.125]])?,
        w_hr: m(&[&[0.125, -0.25, 0.5], &[0.625, 0.125, -0.375], &[-0.5, 0.25, 0.25]])?,
        w_xc: m(&[&[0.75, 0.125, -0.625], &[0.25, -0.875, 0.5]])?,
        w_hc: m(&[&[-0.25, 0.5, 0.375], &[0.125, -0.75, 0.25], &[0.5, 0.375, -0.125]])?,
        b_u: Matrix::row_vector(&[0.1, -0.2, 0.05]),
        b_r: Matrix::row_vector(&[-0.1, 0.15, 0.0]),
        b_c: Matrix::row_vector(&[0.05, 0.0, -0.1]),
    };
    let x = SequenceBatch::new(1, 3, 2, vec![1.0, -0.5, 0.25, 0.75, -1.25, 0.5])?;
    let GruOutput::Final(h) = cell.forward(&x, false)? else { unreachable!("final state requested") };
    let want = [-0.431_260_912_686_617_969_86, -0.226_394_569_812_734_144_41, 0.274_151_899_323_023_055_62];
    let err = close(h.data(), &want);
    out.push(Check::new("oracle: GRU three steps", err <= 1e-10, format!("max abs error {err:.3e}")));

    let (r, a) = (rmse(&[0.0, 2.0], &[0.0, 0.0])?, mae(&[0.0, 2.0], &[0.0, 0.0])?);
    let ok = (r - 2f64.sqrt()).abs() <= 1e-12 && (a - 1.0).abs() <= 1e-12;
    out.push(Check::new("metrics: rmse and mae", ok, format!("rmse {r}, mae {a}")));
    Ok(out)
}

/// Window count and target audit on a 120-day fixture written into `dir`.
pub fn pipeline_checks(dir: &Path) -> Result<Vec<Check>> {
    let fixture = planted_fixture(&FixtureSpec {
        days: 120,
        ..FixtureSpec::default()
    });
    let conf = write_fixture(dir, &fixture, FIXTURE_SETTINGS)?;
    let run = RunConfig::load(&conf, &[])?;
    let (table, _) = load_inputs(&run)?;
    let data = windows(&run, &table)?;
    let count = data.window_count();
    let mut out = vec![Check::new("pipeline: window count", count == 111, format!("{count} windows from 120 days"))];

    let target = table.column(&run.target_column).expect("fixture has the target");
    let mut mismatches = 0;
    for (dates, set) in [
        (&data.fit_dates, &data.splits.fit),
        (&data.validation_dates, &data.splits.validation),
        (&data.test_dates, &data.splits.test),
    ] {
        for (d, &raw) in dates.iter().zip(&set.raw_targets) {
            let i = table.index_of(data.target_date(*d)).expect("target inside the table");
            if target.values[i].to_bits() != raw.to_bits() {
                mismatches += 1;
            }
        }
    }
    out.push(Check::new("pipeline: target audit", mismatches == 0, format!("{mismatches} mismatched targets")));
    Ok(out)
}

/// Run every check, writing the fixture and `selftest.txt` into `dir`.
pub fn selftest(dir: &Path) -> Result<Vec<Check>> {
    let mut checks = gradient_checks()?;
    checks.extend(oracle_checks()?);
    checks.extend(pipeline_checks(dir)?);
    write_lines(&dir.join("selftest.txt"), &checks.iter().map(Check::line).collect::<Vec<_>>())?;
    Ok(checks)
}
