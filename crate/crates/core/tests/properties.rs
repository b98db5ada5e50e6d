use mag_core::layers::{GruCell, GruOutput, MultiHeadAttention, ResidualNorm};
use mag_core::rng;
use mag_core::tensor::{layer_norm, matmul, softmax_rows, Matrix, SequenceBatch, LAYER_NORM_EPS};
use mag_core::train::{area_between, mae, rmse};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, mag: f64) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-mag..mag, rows * cols).prop_map(move |d| Matrix::new(rows, cols, d).unwrap())
}

fn sized_matrix(max_rows: usize, max_cols: usize, mag: f64) -> impl Strategy<Value = Matrix> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(move |(r, c)| matrix(r, c, mag))
}

fn sequence(batch: usize, steps: usize, features: usize) -> impl Strategy<Value = SequenceBatch> {
    prop::collection::vec(-2.0..2.0f64, batch * steps * features)
        .prop_map(move |d| SequenceBatch::new(batch, steps, features, d).unwrap())
}

fn series_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(-1e3..1e3f64, n),
            prop::collection::vec(-1e3..1e3f64, n),
        )
    })
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(m in sized_matrix(6, 9, 1e3)) {
        let s = softmax_rows(&m);
        for r in 0..s.rows() {
            let row = s.row(r);
            prop_assert!(row.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn matmul_is_associative(
        (a, b, c) in (1usize..5, 1usize..5, 1usize..5, 1usize..5)
            .prop_flat_map(|(n, k, l, m)| (matrix(n, k, 1.0), matrix(k, l, 1.0), matrix(l, m, 1.0)))
    ) {
        let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
        let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
        prop_assert!(left.sub(&right).unwrap().max_abs() < 1e-9);
    }

    #[test]
    fn layer_norm_standardizes_rows(m in sized_matrix(5, 8, 1e3).prop_filter("need width > 1", |m| m.cols() > 1)) {
        let cols = m.cols();
        let (y, _) = layer_norm(&m, &Matrix::filled(1, cols, 1.0), &Matrix::zeros(1, cols), LAYER_NORM_EPS).unwrap();
        prop_assert!(y.is_finite());
        for r in 0..y.rows() {
            let mean = y.row(r).iter().sum::<f64>() / cols as f64;
            prop_assert!(mean.abs() < 1e-9);
        }
    }

    #[test]
    fn rmse_bounds_mae((p, t) in series_pair()) {
        prop_assert!(rmse(&p, &t).unwrap() >= mae(&p, &t).unwrap() - 1e-12);
    }

    #[test]
    fn metrics_are_symmetric((p, t) in series_pair()) {
        prop_assert_eq!(rmse(&p, &t).unwrap(), rmse(&t, &p).unwrap());
        prop_assert_eq!(mae(&p, &t).unwrap(), mae(&t, &p).unwrap());
        prop_assert_eq!(area_between(&p, &t).unwrap(), area_between(&t, &p).unwrap());
    }

    #[test]
    fn area_scales_linearly((p, t) in series_pair(), k in 0.01..100.0f64) {
        let a = area_between(&p, &t).unwrap();
        let ps: Vec<f64> = p.iter().map(|v| v * k).collect();
        let ts: Vec<f64> = t.iter().map(|v| v * k).collect();
        let b = area_between(&ps, &ts).unwrap();
        prop_assert!((b - k * a).abs() <= 1e-9 * (1.0 + k * a));
    }

    #[test]
    fn attention_weight_rows_sum_to_one(x in sequence(2, 5, 6), seed in 0u64..1000, heads in 1usize..4) {
        let mut r = rng::seeded(seed, 0);
        let mha = MultiHeadAttention::glorot(6, heads, 3, ResidualNorm::AddThenNorm, &mut r).unwrap();
        let (out, weights) = mha.forward_with_weights(&x).unwrap();
        prop_assert_eq!(weights.len(), 2 * heads);
        prop_assert!(out.data().iter().all(|v| v.is_finite()));
        for w in &weights {
            prop_assert_eq!(w.shape(), (5, 5));
            for row in 0..5 {
                prop_assert!((w.row(row).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn attention_is_permutation_equivariant(
        x in sequence(2, 6, 5),
        perm in Just((0..6).collect::<Vec<usize>>()).prop_shuffle(),
        seed in 0u64..1000,
        residual in prop_oneof![Just(ResidualNorm::AddOnly), Just(ResidualNorm::AddThenNorm), Just(ResidualNorm::NormThenAdd)],
    ) {
        let mut r = rng::seeded(seed, 0);
        let mha = MultiHeadAttention::glorot(5, 2, 4, residual, &mut r).unwrap();
        let permuted_then_attended = mha.forward(&x.permute_steps(&perm).unwrap()).unwrap();
        let attended_then_permuted = mha.forward(&x).unwrap().permute_steps(&perm).unwrap();
        prop_assert_eq!(permuted_then_attended, attended_then_permuted);
    }

    #[test]
    fn gru_is_causal(
        x in sequence(2, 6, 3),
        noise in prop::collection::vec(-5.0..5.0f64, 2 * 6 * 3),
        cut in 1usize..6,
        seed in 0u64..1000,
    ) {
        let mut r = rng::seeded(seed, 0);
        let cell = GruCell::glorot(3, 4, &mut r);
        // Same prefix, arbitrary suffix from step `cut` on.
        let mut data = x.data().to_vec();
        for b in 0..2 {
            for i in cut * 3..6 * 3 {
                data[b * 18 + i] = noise[b * 18 + i];
            }
        }
        let y = SequenceBatch::new(2, 6, 3, data).unwrap();
        let (GruOutput::Sequence(a), GruOutput::Sequence(b)) =
            (cell.forward(&x, true).unwrap(), cell.forward(&y, true).unwrap()) else { unreachable!() };
        prop_assert_eq!(a.truncate_steps(cut).unwrap(), b.truncate_steps(cut).unwrap());
    }

    #[test]
    fn gru_stays_bounded(x in prop::collection::vec(-1e3..1e3f64, 4 * 3), seed in 0u64..1000) {
        let mut r = rng::seeded(seed, 0);
        let cell = GruCell::glorot(3, 5, &mut r);
        let x = SequenceBatch::new(1, 4, 3, x).unwrap();
        let GruOutput::Final(h) = cell.forward(&x, false).unwrap() else { unreachable!() };
        prop_assert!(h.data().iter().all(|v| v.is_finite() && v.abs() <= 1.0));
    }
}
