use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{battery_outcomes, BatteryOptions, EstimateResult, EstimatorKind, EstimatorOptions};
use crate::inference::sample_sd;

use super::dgp::{gen_fused, misspecify, DgpParams};
use super::scenario::{ScenarioConfig, ScenarioId};

/// Largest tolerated share of failed replicates per estimator.
pub const MAX_REPLICATE_FAILURE_SHARE: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub scenario: ScenarioConfig,
    pub params: DgpParams,
    pub n: usize,
    pub reps: usize,
    pub kinds: Vec<EstimatorKind>,
    pub seed: u64,
    /// Also compute sandwich standard errors and Wald coverage.
    #[serde(default)]
    pub sandwich: bool,
    #[serde(default = "default_level")]
    pub level: f64,
}

fn default_level() -> f64 {
    0.95
}

impl MonteCarloConfig {
    /// The four estimators of the main comparison at `n = 10^4`.
    pub fn new(scenario: ScenarioId, reps: usize, seed: u64) -> Self {
        MonteCarloConfig {
            scenario: ScenarioConfig::new(scenario),
            params: DgpParams::default(),
            n: 10_000,
            reps,
            kinds: vec![EstimatorKind::D1, EstimatorKind::D2, EstimatorKind::D3, EstimatorKind::Mul],
            seed,
            sandwich: false,
            level: 0.95,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::InvalidArgument("reps must be at least 1".into()));
        }
        if self.kinds.is_empty() {
            return Err(Error::InvalidArgument("no estimators requested".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidArgument(format!("level {} not in (0, 1)", self.level)));
        }
        self.params.validate()?;
        let spec = self.scenario.model_spec();
        for &k in &self.kinds {
            spec.validate(k)?;
        }
        Ok(())
    }
}

/// Everything one replicate produced.
#[derive(Debug)]
pub struct ReplicateOutcome {
    /// Aligned with the configured estimator kinds.
    pub results: Vec<Result<EstimateResult>>,
    pub clamp_rate: f64,
}

/// Runs replicate `k`: its random stream is fully determined by
/// `(config.seed, k)`.
pub fn simulate_replicate(config: &MonteCarloConfig, k: u64) -> Result<ReplicateOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(k);
    let generated = gen_fused(&config.params, config.n, &mut rng)?;
    let sample = if config.scenario.needs_transformed() {
        misspecify(&generated.sample, &mut rng)?
    } else {
        generated.sample.clone()
    };
    let opts = BatteryOptions {
        estimator: EstimatorOptions::default(),
        sandwich: config.sandwich,
        level: config.level,
        bootstrap: None,
    };
    Ok(ReplicateOutcome {
        results: battery_outcomes(&sample, &config.kinds, &config.scenario.model_spec(), &opts),
        clamp_rate: generated.clamp_rate(),
    })
}

/// Summary statistics of a set of estimates against the truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub bias: f64,
    pub abs_bias: f64,
    /// Sample standard deviation (`n - 1` denominator).
    pub sd: f64,
    /// `bias^2 + ` variance with the `n` denominator.
    pub mse: f64,
    pub rmse: f64,
}

pub fn metrics(estimates: &[f64], truth: f64) -> Result<Metrics> {
    let m = estimates.len();
    if m < 2 {
        return Err(Error::InvalidArgument(format!("metrics need at least 2 estimates, got {m}")));
    }
    let mean = estimates.iter().sum::<f64>() / m as f64;
    let bias = mean - truth;
    let sd = sample_sd(estimates);
    let mse = bias * bias + sd * sd * (m - 1) as f64 / m as f64;
    Ok(Metrics {
        bias,
        abs_bias: bias.abs(),
        sd,
        mse,
        rmse: mse.sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub kind: EstimatorKind,
    pub successes: usize,
    pub failures: usize,
    /// `None` with fewer than two successful replicates.
    pub metrics: Option<Metrics>,
    /// Mean sandwich standard error.
    pub mean_se: Option<f64>,
    /// Share of Wald intervals covering the truth.
    pub coverage: Option<f64>,
    /// Successful estimates in replicate order.
    #[serde(skip)]
    pub estimates: Vec<f64>,
    #[serde(skip)]
    pub standard_errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub scenario: ScenarioId,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub truth: f64,
    /// Mean share of structural treatment probabilities clamped into `[0, 1]`.
    pub clamp_rate: f64,
    pub estimators: Vec<EstimatorSummary>,
}

impl MonteCarloReport {
    pub fn summary(&self, kind: EstimatorKind) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|s| s.kind == kind)
    }
}

/// Runs `config.reps` replicates in parallel. `threads` fixes the pool
/// size; the report does not depend on it.
pub fn run_scenario(config: &MonteCarloConfig, threads: Option<usize>) -> Result<MonteCarloReport> {
    config.validate()?;
    let work = || -> Vec<Result<ReplicateOutcome>> {
        (0..config.reps as u64)
            .into_par_iter()
            .map(|k| simulate_replicate(config, k))
            .collect()
    };
    let outcomes = match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?
            .install(work),
        None => work(),
    };
    aggregate(config, outcomes)
}

fn aggregate(config: &MonteCarloConfig, outcomes: Vec<Result<ReplicateOutcome>>) -> Result<MonteCarloReport> {
    let truth = config.params.true_delta();
    let k = config.kinds.len();
    let mut estimates = vec![Vec::new(); k];
    let mut ses = vec![Vec::new(); k];
    let mut covered = vec![0usize; k];
    let mut failures = vec![0usize; k];
    let mut clamp = 0.0;
    let mut generated = 0usize;
    for outcome in outcomes {
        let Ok(outcome) = outcome else {
            failures.iter_mut().for_each(|f| *f += 1);
            continue;
        };
        clamp += outcome.clamp_rate;
        generated += 1;
        for (j, res) in outcome.results.into_iter().enumerate() {
            match res {
                Ok(r) => {
                    estimates[j].push(r.delta_hat);
                    if let (Some(se), Some(ci)) = (r.se_sandwich, r.ci) {
                        ses[j].push(se);
                        covered[j] += usize::from(ci.lo <= truth && truth <= ci.hi);
                    }
                }
                Err(_) => failures[j] += 1,
            }
        }
    }
    let worst = failures.iter().copied().max().unwrap_or(0);
    if worst as f64 > MAX_REPLICATE_FAILURE_SHARE * config.reps as f64 {
        return Err(Error::TooManyFailures {
            failures: worst,
            total: config.reps,
        });
    }
    let estimators = config
        .kinds
        .iter()
        .enumerate()
        .map(|(j, &kind)| {
            let est = std::mem::take(&mut estimates[j]);
            let se = std::mem::take(&mut ses[j]);
            let with_se = se.len();
            EstimatorSummary {
                kind,
                successes: est.len(),
                failures: failures[j],
                metrics: metrics(&est, truth).ok(),
                mean_se: (with_se > 0).then(|| se.iter().sum::<f64>() / with_se as f64),
                coverage: (with_se > 0).then(|| covered[j] as f64 / with_se as f64),
                estimates: est,
                standard_errors: se,
            }
        })
        .collect();
    Ok(MonteCarloReport {
        scenario: config.scenario.id,
        n: config.n,
        reps: config.reps,
        seed: config.seed,
        truth,
        clamp_rate: if generated > 0 { clamp / generated as f64 } else { 0.0 },
        estimators,
    })
}

/// Fixed-width two-panel table: `|bias| (sd)` then MSE, one row per
/// scenario and one column per estimator of the first report.
pub fn render_table(reports: &[MonteCarloReport]) -> String {
    let Some(first) = reports.first() else {
        return String::new();
    };
    let kinds: Vec<EstimatorKind> = first.estimators.iter().map(|s| s.kind).collect();
    let mut out = String::new();
    let _ = write!(out, "{:<8}", "");
    for k in &kinds {
        let _ = write!(out, "{:>15}", k.name());
    }
    out.push('\n');
    let cell = |r: &MonteCarloReport, k: EstimatorKind, f: &dyn Fn(&Metrics) -> String| {
        r.summary(k).and_then(|s| s.metrics.as_ref()).map_or_else(|| "-".to_string(), f)
    };
    let panels: [(&str, &dyn Fn(&Metrics) -> String); 2] = [
        ("|Bias| (SD)", &|m: &Metrics| format!("{:.2} ({:.2})", m.abs_bias, m.sd)),
        ("MSE", &|m: &Metrics| format!("{:.2}", m.mse)),
    ];
    for (title, f) in panels {
        out.push_str(title);
        out.push('\n');
        for r in reports {
            let _ = write!(out, "{:<8}", r.scenario.to_string());
            for &k in &kinds {
                let _ = write!(out, "{:>15}", cell(r, k, f));
            }
            out.push('\n');
        }
    }
    out
}
