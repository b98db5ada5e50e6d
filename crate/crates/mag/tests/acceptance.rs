//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.
//!
//! The end-to-end and grid criteria train on the 800-day fixture and take a
//! few minutes on one core.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use mag::commands::{gridsearch_command, train_command, HISTORY_FILE, PARAMS_FILE, RANKING_FILE};
use mag::config::RunConfig;
use mag::experiments::{ablation_conditions, load_groups, load_inputs, run_condition, windows};
use mag::fixture::{planted_fixture, write_fixture, FixtureSpec, FIXTURE_SETTINGS};
use mag::selftest::{gradient_checks, oracle_checks, pipeline_checks, Check};
use mag::windows::make_windows;
use mag_core::layers::{MultiHeadAttention, ResidualNorm};
use mag_core::train::{mae, rmse};
use mag_core::{rng, SequenceBatch};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn all_pass(checks: &[Check]) -> Outcome {
    let detail = checks.iter().map(|c| format!("{} ({})", c.name, c.detail)).collect::<Vec<_>>().join("; ");
    ensure(checks.iter().all(|c| c.passed), detail)
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let checks = gradient_checks().map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    all_pass(&checks)?;
    ensure(
        elapsed < Duration::from_secs(60),
        format!("{} gradient checks in {:.2?} (limit 60 s)", checks.len(), elapsed),
    )
}

fn oracles() -> Outcome {
    all_pass(&oracle_checks().map_err(|e| e.to_string())?)
}

fn metrics() -> Outcome {
    let r = rmse(&[0.0, 2.0], &[0.0, 0.0]).unwrap();
    let a = mae(&[0.0, 2.0], &[0.0, 0.0]).unwrap();
    ensure((r - 2f64.sqrt()).abs() <= 1e-12 && (a - 1.0).abs() <= 1e-12, format!("rmse {r}, mae {a}"))?;
    let mut g = rng::seeded(2024, 0);
    let mut violations = 0;
    for _ in 0..1000 {
        let n = g.gen_range(1..50);
        let p: Vec<f64> = (0..n).map(|_| g.gen_range(-1e3..1e3)).collect();
        let t: Vec<f64> = (0..n).map(|_| g.gen_range(-1e3..1e3)).collect();
        if rmse(&p, &t).unwrap() < mae(&p, &t).unwrap() {
            violations += 1;
        }
    }
    ensure(violations == 0, format!("rmse {r}, mae {a}; rmse < mae in {violations} of 1000 random pairs"))
}

fn attention() -> Outcome {
    let mut worst = 0.0f64;
    let mut mismatched = 0;
    for seed in 0..20u64 {
        let mut g = rng::seeded(seed, 1);
        let (batch, steps, features) = (3, 7, 6);
        let x = SequenceBatch::new(batch, steps, features, (0..batch * steps * features).map(|_| g.gen_range(-3.0..3.0)).collect())
            .unwrap();
        let mut perm: Vec<usize> = (0..steps).collect();
        perm.shuffle(&mut g);
        let mha = MultiHeadAttention::glorot(features, 3, 4, ResidualNorm::AddThenNorm, &mut g).unwrap();
        let (out, weights) = mha.forward_with_weights(&x).unwrap();
        for w in &weights {
            for r in 0..w.rows() {
                worst = worst.max((w.row(r).iter().sum::<f64>() - 1.0).abs());
            }
        }
        let permuted = mha.forward(&x.permute_steps(&perm).unwrap()).unwrap();
        if permuted != out.permute_steps(&perm).unwrap() {
            mismatched += 1;
        }
    }
    ensure(
        worst <= 1e-9 && mismatched == 0,
        format!("max |row sum - 1| {worst:.2e}; {mismatched} of 20 permutations not bit-exact"),
    )
}

fn pipeline() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let checks = pipeline_checks(dir.path()).map_err(|e| e.to_string())?;
    all_pass(&checks)?;

    // Statistics must not move when every day past the training span changes.
    let run = RunConfig::load(&dir.path().join("mag.conf"), &[]).unwrap();
    let (table, _) = load_inputs(&run).unwrap();
    let data = windows(&run, &table).unwrap();
    let mut perturbed = table.clone();
    for c in perturbed.columns.iter_mut() {
        for v in &mut c.values[data.train_days..] {
            *v = *v * 7.0 + 1e3;
        }
    }
    let again = make_windows(&perturbed, &run.target_column, run.model.lookback, run.model.horizon, &run.split).unwrap();
    let same = again.feature_stats == data.feature_stats && again.splits.scale == data.splits.scale;
    ensure(
        same,
        format!(
            "{} windows, targets audited, statistics from the first {} of {} days only",
            data.window_count(),
            data.train_days,
            table.len()
        ),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_fixture(dir.path(), &planted_fixture(&FixtureSpec::default()), FIXTURE_SETTINGS).unwrap();
    let base = RunConfig::load(&conf, &[]).unwrap();
    let (table, _) = load_inputs(&base).unwrap();
    let groups = load_groups(&base, &table).unwrap();
    let conditions = ablation_conditions();
    let pick = |name: &str| conditions.iter().find(|c| c.name == name).unwrap().clone();
    let names = ["full", "without_trends", "without_attention"];
    let jobs: Vec<(u64, &str)> = (0..5u64).flat_map(|s| names.iter().map(move |&n| (s, n))).collect();
    let results: Vec<(u64, &str, f64, f64, usize, Duration)> = jobs
        .par_iter()
        .map(|&(seed, name)| {
            let mut run = base.clone();
            run.model.seed = seed;
            run.train.seed = seed;
            let start = Instant::now();
            let r = run_condition(&run, &table, &groups, &pick(name)).unwrap();
            let actual = &r.data.splits.test.raw_targets;
            let range = actual.iter().copied().fold(f64::MIN, f64::max) - actual.iter().copied().fold(f64::MAX, f64::min);
            (seed, name, r.evaluation.rmse, range, r.outcome.history.len(), start.elapsed())
        })
        .collect();
    let of = |name: &'static str| results.iter().filter(move |r| r.1 == name);

    let worst_pct = of("full").map(|r| 100.0 * r.2 / r.3).fold(0.0, f64::max);
    let slowest = of("full").map(|r| r.5).max().unwrap();
    let max_epochs = of("full").map(|r| r.4).max().unwrap();
    let trends_worse = of("full").all(|f| of("without_trends").any(|w| w.0 == f.0 && w.2 > f.2));
    let full_median = median(of("full").map(|r| r.2).collect());
    let plain_median = median(of("without_attention").map(|r| r.2).collect());
    let detail = format!(
        "full test rmse <= {worst_pct:.2}% of range in {max_epochs} epochs, slowest run {slowest:.1?}; \
         without_trends worse on every seed: {trends_worse}; median rmse full {full_median:.3} vs without_attention {plain_median:.3}"
    );
    ensure(
        worst_pct < 5.0 && max_epochs <= 200 && slowest < Duration::from_secs(600) && trends_worse && plain_median >= full_median,
        detail,
    )
}

const GRID: &[(&str, &str)] = &[
    ("grid.batch_size", "32"),
    ("grid.lr", "0.001,0.01,0.1"),
    ("grid.gru_units", "32"),
    ("grid.dropout", "0.0"),
    ("grid.num_heads", "2"),
    ("grid.head_size", "8"),
    ("epochs", "10"),
    ("patience", "10"),
];

fn ranking(conf: &Path) -> (String, Vec<Vec<String>>) {
    let overrides: Vec<(String, String)> = GRID.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    let run = RunConfig::load(conf, &overrides).unwrap();
    gridsearch_command(&run).unwrap();
    let text = std::fs::read_to_string(run.output_dir.join(RANKING_FILE)).unwrap();
    let rows = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    (text, rows)
}

fn grid() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_fixture(dir.path(), &planted_fixture(&FixtureSpec::default()), FIXTURE_SETTINGS).unwrap();
    let (first, rows) = ranking(&conf);
    let (second, _) = ranking(&conf);
    let mut trials: Vec<&str> = rows.iter().map(|r| r[1].as_str()).collect();
    trials.sort_unstable();
    let order: Vec<String> = rows.iter().map(|r| format!("lr {} rmse {}", r[3], r[8])).collect();
    ensure(
        rows[0][3] == "0.01" && trials == ["0", "1", "2"] && first == second,
        format!("{} rows, ranking [{}], repeat identical: {}", rows.len(), order.join(", "), first == second),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let fixture = planted_fixture(&FixtureSpec {
        days: 200,
        ..FixtureSpec::default()
    });
    let conf = write_fixture(dir.path(), &fixture, FIXTURE_SETTINGS).unwrap();
    let overrides = [("epochs".to_string(), "8".to_string()), ("patience".to_string(), "8".to_string()), ("dropout".to_string(), "0.2".to_string())];
    let run = RunConfig::load(&conf, &overrides).unwrap();
    let read = |name: &str| std::fs::read(run.output_dir.join(name)).unwrap();
    train_command(&run).unwrap();
    let (params, history) = (read(PARAMS_FILE), read(HISTORY_FILE));
    train_command(&run).unwrap();
    let same = params == read(PARAMS_FILE) && history == read(HISTORY_FILE);
    ensure(same, format!("params.json ({} bytes) and history.csv identical across two runs: {same}", params.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("gradient checks", gradients),
        ("known-answer oracles", oracles),
        ("metrics", metrics),
        ("attention weights and permutation equivariance", attention),
        ("pipeline audit", pipeline),
        ("end-to-end learning and ablation orderings", end_to_end),
        ("grid search", grid),
        ("deterministic training", determinism),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 8 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
