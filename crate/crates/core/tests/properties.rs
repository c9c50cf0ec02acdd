use fusion_iv::data::{read_fused_csv_from, write_fused_csv_to};
use fusion_iv::estimators::{efficient_influence_values, estimate_kind, EstimatorOptions};
use fusion_iv::inference::{normal_cdf, normal_quantile, wald_ci};
use fusion_iv::nuisance::RowValues;
use fusion_iv::sim::{gen_fused, metrics, DgpParams, ScenarioConfig, ScenarioId};
use fusion_iv::{EstimatorKind, FusedRow, FusedSample};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn row() -> impl Strategy<Value = FusedRow> {
    (any::<bool>(), -1e6..1e6f64, 0u8..2, 0u8..2, prop::collection::vec(-1e3..1e3f64, 2)).prop_map(
        |(primary, y, d, z, x)| {
            if primary {
                FusedRow::primary(y, z, x)
            } else {
                FusedRow::auxiliary(d, z, x)
            }
        },
    )
}

fn row_values() -> impl Strategy<Value = RowValues> {
    (0.05..0.95f64, 0.05..0.95f64, 0.05..0.95f64, 0.05..0.95f64, -5.0..5.0f64, -5.0..5.0f64).prop_map(
        |(lambda1, tau1, tau0, pi, h, omega)| RowValues {
            lambda1,
            lambda_z: lambda1,
            tau_z: tau1,
            tau1,
            tau0: if (tau1 - tau0).abs() < 0.01 { tau1 - 0.02 } else { tau0 },
            pi,
            theta: 0.0,
            h,
            omega,
            clamped: 0,
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trip(mut rows in prop::collection::vec(row(), 0..40), y in -1e6..1e6f64) {
        rows.push(FusedRow::primary(y, 1, vec![0.5, -0.5]));
        rows.push(FusedRow::auxiliary(0, 0, vec![1.0, 2.0]));
        let s = FusedSample::new(rows).unwrap();
        let mut buf = Vec::new();
        write_fused_csv_to(&s, &mut buf).unwrap();
        let back = read_fused_csv_from(buf.as_slice()).unwrap();
        prop_assert_eq!(back, s);
    }

    #[test]
    fn influence_is_affine_in_delta(
        r in row(),
        v in row_values(),
        q in 0.1..0.9f64,
        d1 in -10.0..10.0f64,
        d2 in -10.0..10.0f64,
    ) {
        let at = |d| efficient_influence_values(&r, &v, d, q);
        let slope = if r.is_primary() { -1.0 / q } else { 0.0 };
        let lhs = at(d2) - at(d1);
        prop_assert!((lhs - slope * (d2 - d1)).abs() <= 1e-9 * (1.0 + at(d1).abs()));
    }

    #[test]
    fn wald_interval_is_symmetric(est in -100.0..100.0f64, se in 1e-3..10.0f64, level in 0.5..0.999f64) {
        let (lo, hi) = wald_ci(est, se, level).unwrap();
        prop_assert!(((est - lo) - (hi - est)).abs() < 1e-9);
        let z = (hi - est) / se;
        prop_assert!((normal_cdf(z) - (0.5 + level / 2.0)).abs() < 1e-9);
    }

    #[test]
    fn normal_quantile_inverts_cdf(p in 1e-10..(1.0 - 1e-10f64)) {
        let x = normal_quantile(p);
        prop_assert!((normal_cdf(x) - p).abs() <= 1e-12 + 1e-9 * p.min(1.0 - p));
    }

    #[test]
    fn mse_decomposes(est in prop::collection::vec(-10.0..10.0f64, 2..50), truth in -5.0..5.0f64) {
        let m = metrics(&est, truth).unwrap();
        let n = est.len() as f64;
        let direct = est.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / n;
        prop_assert!((m.mse - direct).abs() < 1e-9 * (1.0 + direct));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn estimates_ignore_row_order(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = gen_fused(&DgpParams::default(), 1500, &mut rng).unwrap().sample;
        let mut rows = s.rows().to_vec();
        rows.shuffle(&mut rng);
        let shuffled = FusedSample::new(rows).unwrap();
        let spec = ScenarioConfig::new(ScenarioId::M0).model_spec();
        let opts = EstimatorOptions::default();
        for kind in [EstimatorKind::D1, EstimatorKind::D2, EstimatorKind::Mul] {
            let a = estimate_kind(kind, &s, &spec, &opts).unwrap().delta_hat;
            let b = estimate_kind(kind, &shuffled, &spec, &opts).unwrap().delta_hat;
            prop_assert!((a - b).abs() < 1e-8 * (1.0 + a.abs()), "{kind}: {a} vs {b}");
        }
    }

    #[test]
    fn outcome_shift_moves_effect_free_estimators(seed in 0u64..1000, c in -5.0..5.0f64) {
        // Adding a constant to Y is absorbed by omega, so the effect curve
        // and the estimators built from it do not move.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = gen_fused(&DgpParams::default(), 1500, &mut rng).unwrap().sample;
        let shifted = FusedSample::new(
            s.rows()
                .iter()
                .map(|r| match r.y {
                    Some(y) => FusedRow::primary(y + c, r.z, r.x.clone()),
                    None => r.clone(),
                })
                .collect(),
        )
        .unwrap();
        let spec = ScenarioConfig::new(ScenarioId::M0).model_spec();
        let opts = EstimatorOptions::default();
        for kind in [EstimatorKind::D2, EstimatorKind::D3, EstimatorKind::Dr2, EstimatorKind::Tsiv] {
            let a = estimate_kind(kind, &s, &spec, &opts).unwrap().delta_hat;
            let b = estimate_kind(kind, &shifted, &spec, &opts).unwrap().delta_hat;
            prop_assert!((a - b).abs() < 1e-7 * (1.0 + a.abs()), "{kind}: {a} vs {b}");
        }
    }
}
