//! Acceptance gates. Runs as a plain binary so every gate prints one
//! PASS/FAIL line; exits non-zero if any gate fails.

use std::process::{Command, ExitCode};
use std::time::Instant;

use fusion_iv::data::{parse_formula, write_fused_csv};
use fusion_iv::estimators::{
    efficient_influence, estimate, estimate_ts2sls, fit_for, run_battery, BatteryOptions, EstimatorOptions, OmegaSpec,
};
use fusion_iv::inference::{wald_ci, BootstrapOptions};
use fusion_iv::sim::{
    discrete_oracle, gen_fused, run_scenario, simulate_replicate, DgpParams, DiscreteDgp, MonteCarloConfig,
    MonteCarloReport, ScenarioConfig, ScenarioId,
};
use fusion_iv::{CovariateSource, EstimateResult, EstimatorKind, FusedRow, FusedSample};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use EstimatorKind::{Dr2, Dr3, Mul, D1, D2, D3};

const SEED: u64 = 20_240_601;
const TABLE_REPS: usize = 300;
const CALIBRATION_REPS: usize = 500;
const ROBUSTNESS_N: usize = 200_000;
const ROBUSTNESS_REPS: usize = 50;

#[derive(Default)]
struct Gates {
    failed: Vec<String>,
    total: usize,
}

impl Gates {
    fn check(&mut self, criterion: u32, name: &str, pass: bool, detail: String) {
        self.total += 1;
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!("[{verdict}] criterion {criterion}: {name}: {detail}");
        if !pass {
            self.failed.push(format!("criterion {criterion}: {name}"));
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

// ---------------------------------------------------------------- 1

fn truth_constant(g: &mut Gates) {
    let params = DgpParams::default();
    let truth = params.true_delta();
    g.check(1, "analytic truth", truth == 2.75, format!("{truth}"));

    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let s = gen_fused(&params, 1_450_000, &mut rng).unwrap().sample;
    let effects: Vec<f64> = s
        .rows()
        .iter()
        .filter(|r| r.is_primary())
        .take(1_000_000)
        .map(|r| params.gamma[0] + params.gamma[1..].iter().zip(&r.x).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let m = mean(&effects);
    g.check(
        1,
        "empirical mean over 1e6 primary draws",
        effects.len() == 1_000_000 && (m - 2.75).abs() <= 0.01,
        format!("{m:.5} over {} draws", effects.len()),
    );
}

// ---------------------------------------------------------------- 2

struct TableCell {
    kind: EstimatorKind,
    abs_bias: f64,
    sd: f64,
    mse: f64,
}

/// Printed |bias|, SD and MSE ("RMSE" column) per scenario, in the order
/// d1, d2, d3, mul.
fn table_values(id: ScenarioId) -> [TableCell; 4] {
    let row = |v: [(f64, f64, f64); 4]| {
        let kinds = [D1, D2, D3, Mul];
        std::array::from_fn(|i| TableCell {
            kind: kinds[i],
            abs_bias: v[i].0,
            sd: v[i].1,
            mse: v[i].2,
        })
    };
    match id {
        ScenarioId::M0 => row([(0.01, 0.29, 0.09), (0.01, 0.29, 0.09), (0.08, 0.33, 0.11), (0.04, 0.31, 0.10)]),
        ScenarioId::M1 => row([(0.01, 0.29, 0.08), (0.65, 0.34, 0.54), (0.74, 0.37, 0.68), (0.05, 0.30, 0.09)]),
        ScenarioId::M2 => row([(0.67, 0.36, 0.58), (0.01, 0.32, 0.10), (0.11, 0.41, 0.18), (0.05, 0.33, 0.11)]),
        ScenarioId::M3 => row([(1.10, 0.46, 1.50), (1.20, 0.48, 1.70), (0.09, 0.34, 0.12), (0.06, 0.33, 0.11)]),
        ScenarioId::M4 => row([(1.30, 0.47, 1.80), (2.20, 0.57, 5.00), (0.77, 0.44, 0.78), (0.72, 0.39, 0.67)]),
    }
}

/// Gate on the |bias| of one estimator in one scenario.
enum BiasGate {
    AtMost(f64),
    Near,
    AtLeast(f64),
}

fn bias_gates(id: ScenarioId) -> [BiasGate; 4] {
    use BiasGate::*;
    match id {
        ScenarioId::M0 => [AtMost(0.05), AtMost(0.05), AtMost(0.15), AtMost(0.15)],
        ScenarioId::M1 => [AtMost(0.05), Near, Near, AtMost(0.15)],
        ScenarioId::M2 => [Near, AtMost(0.05), AtMost(0.2), AtMost(0.15)],
        ScenarioId::M3 => [Near, Near, AtMost(0.2), AtMost(0.15)],
        ScenarioId::M4 => [AtLeast(0.4), AtLeast(0.4), AtLeast(0.4), AtLeast(0.4)],
    }
}

fn table_config(id: ScenarioId, reps: usize) -> MonteCarloConfig {
    MonteCarloConfig::new(id, reps, SEED)
}

fn table_reproduction(g: &mut Gates, m0: &MonteCarloReport) {
    let mut reports = vec![m0.clone()];
    for id in [ScenarioId::M1, ScenarioId::M2, ScenarioId::M3, ScenarioId::M4] {
        reports.push(run_scenario(&table_config(id, TABLE_REPS), None).expect("scenario run"));
    }
    println!("{}", fusion_iv::sim::render_table(&reports));
    for report in &reports {
        let id = report.scenario;
        let reps = report.reps as f64;
        for (cell, gate) in table_values(id).iter().zip(bias_gates(id)) {
            let s = report.summary(cell.kind).expect("estimator present");
            let m = s.metrics.expect("metrics");
            let tol = 0.15_f64.max(3.0 * m.sd / reps.sqrt());
            let (pass, want) = match gate {
                BiasGate::AtMost(b) => (m.abs_bias <= b, format!("<= {b}")),
                BiasGate::AtLeast(b) => (m.abs_bias >= b, format!(">= {b}")),
                BiasGate::Near => (
                    (m.abs_bias - cell.abs_bias).abs() <= tol,
                    format!("{} +- {tol:.3}", cell.abs_bias),
                ),
            };
            g.check(
                2,
                &format!("{id} |bias| {}", cell.kind),
                pass,
                format!("{:.3} (want {want}; {} reps)", m.abs_bias, report.reps),
            );
            if id == ScenarioId::M0 {
                g.check(
                    2,
                    &format!("M0 SD {}", cell.kind),
                    (0.2..=0.45).contains(&m.sd),
                    format!("{:.3} (want [0.2, 0.45]; reference {})", m.sd, cell.sd),
                );
            }
            let rel = (m.mse - cell.mse).abs() / cell.mse;
            g.check(
                2,
                &format!("{id} MSE {}", cell.kind),
                rel <= 0.30,
                format!("{:.3} vs reference {} ({:+.0}%)", m.mse, cell.mse, 100.0 * (m.mse / cell.mse - 1.0)),
            );
        }
    }
}

// ---------------------------------------------------------------- 3

fn oracle_suite(g: &mut Gates) {
    let base = DiscreteDgp {
        xs: vec![0.0, 0.5, 1.0],
        p_xu: vec![vec![0.1, 0.2], vec![0.15, 0.15], vec![0.3, 0.1]],
        lambda1: vec![0.3, 0.5, 0.8],
        g0: vec![vec![0.1, 0.3], vec![0.2, 0.2], vec![0.05, 0.4]],
        g1: vec![vec![0.6, 0.3], vec![0.5, 0.7], vec![0.4, 0.5]],
        h0: vec![vec![1.0, -1.0], vec![0.5, 2.0], vec![0.0, 3.0]],
        h1: vec![vec![2.0, 2.0], vec![2.5, 2.5], vec![3.5, 3.5]],
        pi: vec![[0.6, 0.7], [0.5, 0.4], [0.8, 0.3]],
        y_noise_var: 1.0,
    };
    let confounded = DiscreteDgp {
        h1: vec![vec![1.0, 4.0], vec![-1.0, 2.0], vec![3.0, 0.5]],
        ..base.clone()
    };
    let three = DiscreteDgp {
        xs: vec![-1.0, 2.0],
        p_xu: vec![vec![0.1, 0.1, 0.2], vec![0.25, 0.05, 0.3]],
        lambda1: vec![0.45, 0.2],
        g0: vec![vec![0.0, 0.2, 0.1], vec![0.3, 0.1, 0.25]],
        g1: vec![vec![0.9, 0.2, 0.4], vec![0.6, 0.8, 0.1]],
        h0: vec![vec![0.0, 1.0, 2.0], vec![-2.0, 0.0, 1.0]],
        h1: vec![vec![1.0, -3.0, 0.5], vec![2.0, 2.0, -1.0]],
        pi: vec![[0.35, 0.65], [0.55, 0.9]],
        y_noise_var: 0.25,
    };
    const TOL: f64 = 1e-12;
    let start = Instant::now();
    let o = discrete_oracle(&base).unwrap();
    g.check(
        3,
        "(a) functional equals effect without covariance",
        (o.functional - o.delta).abs() < TOL,
        format!("gap {:.1e}", o.functional - o.delta),
    );
    let mut worst_b = 0.0_f64;
    let mut nonzero = true;
    for d in [&confounded, &three] {
        let o = discrete_oracle(d).unwrap();
        nonzero &= o.discrepancy.abs() > 1e-3;
        worst_b = worst_b.max((o.discrepancy - o.covariance_term).abs());
    }
    g.check(
        3,
        "(b) discrepancy equals covariance term",
        nonzero && worst_b < TOL,
        format!("max gap {worst_b:.1e}"),
    );
    let (mut worst_c, mut worst_d, mut worst_e) = (0.0_f64, 0.0_f64, 0.0_f64);
    let ms: [fn(f64) -> f64; 3] = [|_| 1.0, |x| x, |x| x * x];
    for d in [&base, &confounded, &three] {
        for m in ms {
            let (a, b, c) = d.weighting_moments(m).unwrap();
            worst_c = worst_c.max(a.abs()).max((b - c).abs());
        }
        let o = discrete_oracle(d).unwrap();
        worst_d = worst_d.max(o.mean_mu_eff.abs());
        worst_e = worst_e.max(o.decomposition_max_error);
    }
    let elapsed = start.elapsed().as_secs_f64();
    g.check(3, "(c) weighting moments for m in {1, x, x^2}", worst_c < TOL, format!("max gap {worst_c:.1e}"));
    g.check(3, "(d) influence function has mean zero", worst_d < TOL, format!("max |mean| {worst_d:.1e}"));
    g.check(3, "(e) outcome mean decomposition", worst_e < TOL, format!("max gap {worst_e:.1e}"));
    g.check(3, "oracle runtime under 1 s", elapsed < 1.0, format!("{elapsed:.4} s"));
}

// ---------------------------------------------------------------- 4

/// Runs replicates keeping the full estimator output.
fn replicate_results(config: &MonteCarloConfig) -> Vec<Vec<Option<EstimateResult>>> {
    (0..config.reps as u64)
        .into_par_iter()
        .map(|k| {
            simulate_replicate(config, k)
                .map(|o| o.results.into_iter().map(Result::ok).collect())
                .unwrap_or_else(|_| vec![None; config.kinds.len()])
        })
        .collect()
}

fn unbiased(g: &mut Gates, name: &str, values: &[f64], truth: f64, reps: usize) {
    let se = sd(values) / (values.len() as f64).sqrt();
    let bias = mean(values) - truth;
    let pass = values.len() as f64 >= 0.9 * reps as f64 && bias.abs() <= 3.0 * se;
    g.check(
        4,
        name,
        pass,
        format!("bias {bias:+.4}, MC SE {se:.4}, {} of {reps} reps", values.len()),
    );
}

fn robustness(g: &mut Gates) {
    let truth_gamma = DgpParams::default().gamma;
    let runs: [(ScenarioId, DgpParams, Vec<EstimatorKind>); 4] = [
        (ScenarioId::M1, DgpParams::default(), vec![D1, Mul]),
        (ScenarioId::M2, DgpParams::default(), vec![D2, Mul, Dr2]),
        (ScenarioId::M3, DgpParams::default(), vec![D3, Mul, Dr2]),
        (ScenarioId::M0, DgpParams::reversed(), vec![Dr3]),
    ];
    for (id, params, kinds) in runs {
        let reversed = params.layout != Default::default();
        let truth = params.true_delta();
        let config = MonteCarloConfig {
            params,
            n: ROBUSTNESS_N,
            kinds: kinds.clone(),
            ..MonteCarloConfig::new(id, ROBUSTNESS_REPS, SEED + 4)
        };
        let start = Instant::now();
        let results = replicate_results(&config);
        let label = if reversed { format!("{id} reversed fusion") } else { id.to_string() };
        for (j, kind) in kinds.iter().enumerate() {
            let est: Vec<f64> = results.iter().filter_map(|r| r[j].as_ref().map(|e| e.delta_hat)).collect();
            unbiased(g, &format!("{kind} under {label}"), &est, truth, ROBUSTNESS_REPS);
            if *kind == Dr2 {
                let which = if id == ScenarioId::M2 { "tau-only correct" } else { "pi-only correct" };
                for c in 0..4 {
                    let gam: Vec<f64> = results
                        .iter()
                        .filter_map(|r| r[j].as_ref().and_then(|e| e.nuisance.effect.as_ref()).map(|f| f.gamma[c]))
                        .collect();
                    unbiased(g, &format!("doubly robust gamma[{c}], {which}"), &gam, truth_gamma[c], ROBUSTNESS_REPS);
                }
            }
        }
        println!("    ({label}: {} reps at n = {} in {:.0} s)", ROBUSTNESS_REPS, ROBUSTNESS_N, start.elapsed().as_secs_f64());
    }
}

// ---------------------------------------------------------------- 5

fn efficiency(g: &mut Gates, m0: &MonteCarloReport) {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 5);
    let s = gen_fused(&DgpParams::default(), 1_000_000, &mut rng).unwrap().sample;
    let spec = ScenarioConfig::new(ScenarioId::M0).model_spec();
    let set = fit_for(Mul, &s, &spec).unwrap();
    let r = estimate(Mul, &s, &set, &EstimatorOptions::default()).unwrap();
    let q = s.q_hat();
    let bound = s
        .rows()
        .par_iter()
        .map(|row| efficient_influence(row, &set, r.delta_hat, q).unwrap().powi(2))
        .sum::<f64>()
        / s.n() as f64;
    let mul = m0.summary(Mul).unwrap();
    let n_var = m0.n as f64 * sd(&mul.estimates).powi(2);
    let rel = n_var / bound - 1.0;
    g.check(
        5,
        "n Var_MC(mul) vs plug-in E[mu_eff^2]",
        rel.abs() <= 0.15,
        format!("{n_var:.1} vs {bound:.1} ({:+.1}%)", 100.0 * rel),
    );
}

// ---------------------------------------------------------------- 6

fn calibration(g: &mut Gates) {
    let config = MonteCarloConfig {
        kinds: vec![D1, D2],
        sandwich: true,
        ..MonteCarloConfig::new(ScenarioId::M0, CALIBRATION_REPS, SEED + 6)
    };
    let report = run_scenario(&config, None).expect("calibration run");
    let spec = config.scenario.model_spec();
    let datasets = 3u64;
    let mut boot_se = [0.0; 2];
    for k in 0..datasets {
        let mut rng = ChaCha8Rng::seed_from_u64(SEED + 60);
        rng.set_stream(k);
        let s = gen_fused(&config.params, config.n, &mut rng).unwrap().sample;
        let opts = BatteryOptions {
            sandwich: false,
            bootstrap: Some(BootstrapOptions::new(500, SEED + k)),
            ..BatteryOptions::default()
        };
        let out = run_battery(&s, &[D1, D2], &spec, &opts).expect("bootstrap battery");
        for (j, r) in out.iter().enumerate() {
            boot_se[j] += r.se_boot.unwrap() / datasets as f64;
        }
    }
    for (j, kind) in [D1, D2].into_iter().enumerate() {
        let s = report.summary(kind).unwrap();
        let mc_sd = s.metrics.unwrap().sd;
        let se = s.mean_se.unwrap();
        let cov = s.coverage.unwrap();
        g.check(
            6,
            &format!("{kind} sandwich SE vs MC SD"),
            (se / mc_sd - 1.0).abs() <= 0.15,
            format!("{se:.4} vs {mc_sd:.4}"),
        );
        g.check(
            6,
            &format!("{kind} bootstrap SE (B = 500) vs MC SD"),
            (boot_se[j] / mc_sd - 1.0).abs() <= 0.15,
            format!("{:.4} vs {mc_sd:.4}, averaged over {datasets} datasets", boot_se[j]),
        );
        g.check(
            6,
            &format!("{kind} 95% Wald coverage"),
            (0.91..=0.98).contains(&cov) && s.successes >= CALIBRATION_REPS * 9 / 10,
            format!("{:.3} over {} reps", cov, s.successes),
        );
    }
}

// ---------------------------------------------------------------- 7

fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    (x.transpose() * x).try_inverse().expect("full rank") * (x.transpose() * y)
}

fn linear_iv_sample(n: usize) -> FusedSample {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 7);
    let rows = (0..n)
        .map(|i| {
            let x: f64 = rng.random();
            let z = u8::from(rng.random::<f64>() < 0.5);
            let u: f64 = rng.sample(StandardNormal);
            let p = (0.2 + 0.4 * f64::from(z) + 0.2 * x + 0.1 * u).clamp(0.0, 1.0);
            let d = u8::from(rng.random::<f64>() < p);
            if i % 3 == 0 {
                FusedRow::auxiliary(d, z, vec![x])
            } else {
                let e: f64 = rng.sample(StandardNormal);
                FusedRow::primary(1.5 * f64::from(d) + 0.8 * x + u + 0.5 * e, z, vec![x])
            }
        })
        .collect();
    FusedSample::new(rows).unwrap()
}

fn application_format(g: &mut Gates) {
    let (lo, hi) = wald_ci(0.3717, 0.1124, 0.95).unwrap();
    g.check(
        7,
        "wald_ci(0.3717, 0.1124, 0.95)",
        (lo - 0.1513).abs() <= 2e-4 && (hi - 0.5920).abs() <= 2e-4,
        format!("({lo:.5}, {hi:.5}) vs (0.1513, 0.5920)"),
    );

    let s = linear_iv_sample(6000);
    let r = estimate_ts2sls(
        &s,
        &parse_formula("1 + z + x1").unwrap(),
        CovariateSource::Observed,
        &OmegaSpec::new(parse_formula("1 + x1").unwrap()),
    )
    .unwrap();
    let aux: Vec<&FusedRow> = s.rows().iter().filter(|r| !r.is_primary()).collect();
    let xa = DMatrix::from_fn(aux.len(), 3, |i, j| [1.0, f64::from(aux[i].z), aux[i].x[0]][j]);
    let b = least_squares(&xa, &DVector::from_iterator(aux.len(), aux.iter().map(|r| r.rd())));
    let prim: Vec<&FusedRow> = s.rows().iter().filter(|r| r.is_primary()).collect();
    let xp = DMatrix::from_fn(prim.len(), 3, |i, j| {
        [b[0] + b[1] * f64::from(prim[i].z) + b[2] * prim[i].x[0], 1.0, prim[i].x[0]][j]
    });
    let hand = least_squares(&xp, &DVector::from_iterator(prim.len(), prim.iter().map(|r| r.ry())))[0];
    g.check(
        7,
        "ts2sls matches two-stage algebra",
        (r.delta_hat - hand).abs() <= 1e-8,
        format!("{:.10} vs {hand:.10}", r.delta_hat),
    );

    let dir = tempfile::TempDir::new().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 70);
    let sample = gen_fused(&DgpParams::default(), 10_000, &mut rng).unwrap().sample;
    let data = dir.path().join("fused.csv");
    write_fused_csv(&sample, &data).unwrap();
    let cfg = dir.path().join("config.json");
    std::fs::write(
        &cfg,
        serde_json::json!({
            "formulas": {
                "pi": "1 + z + x1 + x2 + x3",
                "lambda": "1 + x1 + x2 + x3",
                "tau": "1 + z + x1 + x2 + x3",
                "h": "1 + x1 + x2 + x3",
                "omega": "1 + x1 + x2 + x3"
            },
            "kinds": ["d1", "d2", "d3", "mul", "tsiv", "dr"],
            "bootstrap": 0,
            "seed": 1,
            "format": "text"
        })
        .to_string(),
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_fusion-iv"))
        .args(["estimate", "--data"])
        .arg(&data)
        .arg("--config")
        .arg(&cfg)
        .env_remove("FUSION_IV_THREADS")
        .output()
        .unwrap();
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    let rows = text
        .lines()
        .filter(|l| ["d1", "d2", "d3", "mul", "tsiv", "dr"].iter().any(|k| l.starts_with(&format!("{k} "))))
        .filter(|l| l.contains('(') && !l.contains("min |tau"))
        .count();
    print!("{text}");
    g.check(
        7,
        "estimate command emits an application-style report",
        out.status.success() && text.contains("Estimate") && text.contains("SE") && text.contains("95% Wald CI") && rows == 6,
        format!("exit {:?}, {rows} estimator rows", out.status.code()),
    );
}

fn main() -> ExitCode {
    let mut g = Gates::default();
    let t = Instant::now();
    truth_constant(&mut g);
    oracle_suite(&mut g);
    application_format(&mut g);

    let m0 = run_scenario(&table_config(ScenarioId::M0, CALIBRATION_REPS), None).expect("M0 run");
    table_reproduction(&mut g, &m0);
    efficiency(&mut g, &m0);
    calibration(&mut g);
    robustness(&mut g);

    println!(
        "acceptance: {} of {} gates passed in {:.0} s",
        g.total - g.failed.len(),
        g.total,
        t.elapsed().as_secs_f64()
    );
    if g.failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        for f in &g.failed {
            println!("failed: {f}");
        }
        ExitCode::FAILURE
    }
}
