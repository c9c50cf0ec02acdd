//! Point estimators of the average treatment effect and the efficient
//! influence function.
//!
//! Every estimator is affine in `Delta` once its nuisance models are fitted,
//! so all are computed in closed form as a ratio of empirical means. The
//! same row kernels feed the stacked sandwich systems in [`stack`].

mod battery;
mod kind;
mod stack;

pub(crate) use battery::battery_outcomes;
pub use battery::{estimate_kind, fit_for, run_battery, BatteryOptions, ComponentSpec, ModelSpec};
pub use kind::{EstimatorKind, Requirements};
pub use stack::{sandwich_se, EstimatorStack};

use serde::{Deserialize, Serialize};

use crate::data::{CovariateSource, Formula, FusedRow, FusedSample};
use crate::error::{Error, Result};
use crate::nuisance::eval::{Evaluator, Params};
use crate::nuisance::{
    clamp_probability, fit_effect, fit_tau_linear, EffectCurveFit, EffectSolver, EffectSpec, GlmFit, HLink,
    IndexFunctions, Link, NuisanceSet, RowValues,
};

/// Tunables shared by all estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorOptions {
    /// Smallest admissible `|tau(1, x) - tau(0, x)|`.
    pub weak_instrument_threshold: f64,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        EstimatorOptions {
            weak_instrument_threshold: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Smallest `|tau(1, x) - tau(0, x)|` over the rows where it divides.
    pub min_instrument_margin: Option<f64>,
    /// Logistic predictions clamped into `[1e-12, 1 - 1e-12]`.
    pub clamp_count: usize,
    /// Iterations of the `(gamma, eta)` solver, when one was used.
    pub solver_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub kind: EstimatorKind,
    pub delta_hat: f64,
    pub se_sandwich: Option<f64>,
    pub se_boot: Option<f64>,
    /// Wald interval from the sandwich standard error.
    pub ci: Option<ConfidenceInterval>,
    /// Bootstrap percentile interval.
    pub ci_boot: Option<ConfidenceInterval>,
    pub diagnostics: Diagnostics,
    /// Working models the estimate was computed from.
    pub nuisance: NuisanceSet,
}

#[inline]
fn instrument_sign(row: &FusedRow) -> f64 {
    if row.z == 1 {
        1.0
    } else {
        -1.0
    }
}

/// Efficient influence function evaluated from precomputed nuisance values.
///
/// Requires `lambda_z`, `tau_z`, `tau1`, `tau0`, `pi`, `h` and `omega`.
pub fn efficient_influence_values(row: &FusedRow, v: &RowValues, delta: f64, q: f64) -> f64 {
    let s = instrument_sign(row);
    let denom = v.lambda_z * v.margin();
    let inner = if row.is_primary() {
        (row.ry() - v.h * v.tau_z - v.omega) / q
    } else {
        -(v.pi / (1.0 - v.pi)) * v.h * (row.rd() - v.tau_z) / q
    };
    let own = if row.is_primary() { (v.h - delta) / q } else { 0.0 };
    s * inner / denom + own
}

/// Efficient influence function `mu_eff(O; Delta)` at one row.
///
/// `nuisances` must hold `lambda`, `tau`, `pi` and an effect-curve fit.
pub fn efficient_influence(row: &FusedRow, nuisances: &NuisanceSet, delta: f64, q: f64) -> Result<f64> {
    let lambda = nuisances.lambda()?;
    let tau = nuisances.tau()?;
    let effect = nuisances.effect()?;
    let l1 = lambda.mean_at(0.0, row.point(lambda.source)?.1);
    let (z, x) = row.point(tau.source)?;
    let tau_at = |z: f64| match tau.link {
        Link::Logit => clamp_probability(tau.mean_at(z, x)).0,
        Link::Identity => tau.mean_at(z, x),
    };
    let l1 = clamp_probability(l1).0;
    let v = RowValues {
        lambda1: l1,
        lambda_z: if row.z == 1 { l1 } else { 1.0 - l1 },
        tau_z: tau_at(z),
        tau1: tau_at(1.0),
        tau0: tau_at(0.0),
        pi: nuisances.pi()?.predict_row(row)?,
        h: effect.predict_h_row(row)?,
        omega: effect.predict_omega_row(row)?,
        ..RowValues::nan()
    };
    Ok(efficient_influence_values(row, &v, delta, q))
}

/// Per-row `(a_i, b_i)` such that the estimating function is
/// `a_i - b_i Delta`. `None` for the constant-effect estimators, whose
/// target is the intercept of `gamma`.
#[inline]
pub(crate) fn delta_parts(kind: EstimatorKind, row: &FusedRow, v: &RowValues, q: f64) -> Option<(f64, f64)> {
    let r = if row.is_primary() { 1.0 } else { 0.0 };
    Some(match kind {
        EstimatorKind::D1 => {
            let a = if row.is_primary() {
                instrument_sign(row) * row.ry() / (q * v.lambda_z * v.margin())
            } else {
                0.0
            };
            (a, 1.0)
        }
        EstimatorKind::Mle => (
            instrument_sign(row) * v.pi * v.theta / (q * v.lambda_z * v.margin()),
            1.0,
        ),
        EstimatorKind::Mul => (efficient_influence_values(row, v, 0.0, q), r / q),
        EstimatorKind::D2 | EstimatorKind::D3 | EstimatorKind::Dr2 => (r * v.h / q, r / q),
        EstimatorKind::Dr3 => ((1.0 - r) * v.h / (1.0 - q), (1.0 - r) / (1.0 - q)),
        EstimatorKind::Tsiv | EstimatorKind::Ts2sls | EstimatorKind::Dr => return None,
    })
}

/// Evaluator holding exactly the designs `kind` reads from `nuisances`.
pub(crate) fn evaluator_for<'s>(
    sample: &'s FusedSample,
    kind: EstimatorKind,
    nuisances: &NuisanceSet,
) -> Result<Evaluator<'s>> {
    let mut ev = Evaluator::new(sample);
    let needs = kind.requirements();
    let eq = kind.effect_equation();
    if needs.lambda {
        let l = nuisances.lambda()?;
        ev = ev.with_lambda(&l.formula, l.source)?;
    }
    if needs.tau {
        let t = nuisances.tau()?;
        ev = ev.with_tau(&t.formula, t.source, t.link)?;
    }
    if needs.pi {
        let p = nuisances.pi()?;
        ev = ev.with_pi(&p.formula, p.source)?;
    }
    if needs.theta {
        let t = nuisances.theta()?;
        ev = ev.with_theta(&t.formula, t.source)?;
    }
    if let Some(eq) = eq {
        let e = nuisances.effect()?;
        if e.equation != eq {
            return Err(Error::InvalidArgument(format!(
                "{kind} needs an effect curve from the {:?} equation, got {:?}",
                eq, e.equation
            )));
        }
        ev = ev
            .with_h(&e.h_formula, e.h_source, e.link)?
            .with_omega(&e.omega_formula, e.omega_source)?
            .with_index(&e.index)?;
    }
    Ok(ev)
}

pub(crate) fn params_of(nuisances: &NuisanceSet) -> Params<'_> {
    fn beta(f: &Option<GlmFit>) -> &[f64] {
        f.as_ref().map_or(&[], |g| g.beta.as_slice())
    }
    Params {
        q: nuisances.q_hat,
        lambda: beta(&nuisances.lambda),
        tau: beta(&nuisances.tau),
        pi: beta(&nuisances.pi),
        theta: beta(&nuisances.theta),
        gamma: nuisances.effect.as_ref().map_or(&[], |e| e.gamma.as_slice()),
        eta: nuisances.effect.as_ref().map_or(&[], |e| e.eta.as_slice()),
    }
}

/// Runs `kind` on already-fitted nuisance models.
pub fn estimate(
    kind: EstimatorKind,
    sample: &FusedSample,
    nuisances: &NuisanceSet,
    opts: &EstimatorOptions,
) -> Result<EstimateResult> {
    let ev = evaluator_for(sample, kind, nuisances)?;
    let params = params_of(nuisances);
    let q = nuisances.q_hat;

    let mut clamp_count = 0usize;
    let mut min_margin = f64::INFINITY;
    let (mut sum_a, mut sum_b) = (0.0, 0.0);
    for (i, row) in sample.rows().iter().enumerate() {
        let v = ev.row(i, &params);
        clamp_count += v.clamped as usize;
        if kind.uses_margin() && (kind != EstimatorKind::D1 || row.is_primary()) {
            min_margin = min_margin.min(v.margin().abs());
        }
        if let Some((a, b)) = delta_parts(kind, row, &v, q) {
            sum_a += a;
            sum_b += b;
        }
    }
    if kind.uses_margin() && !(min_margin >= opts.weak_instrument_threshold) {
        return Err(Error::WeakInstrument {
            min_margin,
            threshold: opts.weak_instrument_threshold,
        });
    }

    let delta_hat = if kind.constant_effect() {
        let e = nuisances.effect()?;
        if e.h_formula != Formula::intercept_only() || e.link != HLink::Identity {
            return Err(Error::InvalidFormula(format!(
                "{kind} requires the constant effect curve `1`, got `{}`",
                e.h_formula
            )));
        }
        e.gamma[0]
    } else {
        sum_a / sum_b
    };
    if !delta_hat.is_finite() {
        return Err(Error::SingularSystem);
    }
    Ok(EstimateResult {
        kind,
        delta_hat,
        se_sandwich: None,
        se_boot: None,
        ci: None,
        ci_boot: None,
        diagnostics: Diagnostics {
            min_instrument_margin: kind.uses_margin().then_some(min_margin),
            clamp_count,
            solver_iterations: nuisances.effect.as_ref().map_or(0, |e| e.iterations),
        },
        nuisance: nuisances.clone(),
    })
}

fn expect_solver(effect: &EffectCurveFit, solver: EffectSolver) -> Result<()> {
    if effect.solver() != solver {
        return Err(Error::InvalidArgument(format!(
            "expected an effect curve from the {solver:?} equation, got {:?}",
            effect.solver()
        )));
    }
    Ok(())
}

/// Instrument-density weighting estimator; needs no outcome model.
pub fn estimate_d1(
    sample: &FusedSample,
    lambda: &GlmFit,
    tau: &GlmFit,
    opts: &EstimatorOptions,
) -> Result<EstimateResult> {
    let set = NuisanceSet {
        lambda: Some(lambda.clone()),
        tau: Some(tau.clone()),
        ..NuisanceSet::new(sample.q_hat())
    };
    estimate(EstimatorKind::D1, sample, &set, opts)
}

/// Primary-sample mean of `H(X; gamma_2)`.
pub fn estimate_d2(sample: &FusedSample, effect_m2: &EffectCurveFit) -> Result<EstimateResult> {
    expect_solver(effect_m2, EffectSolver::M2)?;
    let set = NuisanceSet {
        effect: Some(effect_m2.clone()),
        ..NuisanceSet::new(sample.q_hat())
    };
    estimate_effect_mean(EstimatorKind::D2, sample, set)
}

/// Primary-sample mean of `H(X; gamma_3)`.
pub fn estimate_d3(sample: &FusedSample, effect_m3: &EffectCurveFit) -> Result<EstimateResult> {
    expect_solver(effect_m3, EffectSolver::M3)?;
    let set = NuisanceSet {
        effect: Some(effect_m3.clone()),
        ..NuisanceSet::new(sample.q_hat())
    };
    estimate_effect_mean(EstimatorKind::D3, sample, set)
}

/// Primary-sample mean of the doubly robust `H(X; gamma~)`.
pub fn estimate_dr2(sample: &FusedSample, effect_dr: &EffectCurveFit) -> Result<EstimateResult> {
    expect_solver(effect_dr, EffectSolver::Dr)?;
    let set = NuisanceSet {
        effect: Some(effect_dr.clone()),
        ..NuisanceSet::new(sample.q_hat())
    };
    estimate_effect_mean(EstimatorKind::Dr2, sample, set)
}

/// Auxiliary-sample mean of the doubly robust `H(X; gamma~)`.
pub fn estimate_dr3(sample: &FusedSample, effect_dr: &EffectCurveFit) -> Result<EstimateResult> {
    expect_solver(effect_dr, EffectSolver::Dr)?;
    let set = NuisanceSet {
        effect: Some(effect_dr.clone()),
        ..NuisanceSet::new(sample.q_hat())
    };
    estimate_effect_mean(EstimatorKind::Dr3, sample, set)
}

/// Averages of `H` need only the effect curve, whatever equation produced it.
fn estimate_effect_mean(kind: EstimatorKind, sample: &FusedSample, set: NuisanceSet) -> Result<EstimateResult> {
    let effect = set.effect()?;
    let q = sample.q_hat();
    let (mut a, mut b) = (0.0, 0.0);
    for row in sample.rows() {
        let v = RowValues {
            h: effect.predict_h_row(row)?,
            ..RowValues::nan()
        };
        let (ai, bi) = delta_parts(kind, row, &v, q).expect("effect-mean estimator");
        a += ai;
        b += bi;
    }
    Ok(EstimateResult {
        kind,
        delta_hat: a / b,
        se_sandwich: None,
        se_boot: None,
        ci: None,
        ci_boot: None,
        diagnostics: Diagnostics {
            min_instrument_margin: None,
            clamp_count: 0,
            solver_iterations: effect.iterations,
        },
        nuisance: set,
    })
}

/// Plug-in maximum likelihood estimator.
pub fn estimate_mle(
    sample: &FusedSample,
    pi: &GlmFit,
    lambda: &GlmFit,
    tau: &GlmFit,
    theta: &GlmFit,
    opts: &EstimatorOptions,
) -> Result<EstimateResult> {
    let set = NuisanceSet {
        pi: Some(pi.clone()),
        lambda: Some(lambda.clone()),
        tau: Some(tau.clone()),
        theta: Some(theta.clone()),
        ..NuisanceSet::new(sample.q_hat())
    };
    estimate(EstimatorKind::Mle, sample, &set, opts)
}

/// Multiply robust estimator: the root of the empirical mean of the
/// efficient influence function.
pub fn estimate_mul(
    sample: &FusedSample,
    lambda: &GlmFit,
    tau: &GlmFit,
    pi: &GlmFit,
    effect_dr: &EffectCurveFit,
    opts: &EstimatorOptions,
) -> Result<EstimateResult> {
    let set = NuisanceSet {
        pi: Some(pi.clone()),
        lambda: Some(lambda.clone()),
        tau: Some(tau.clone()),
        effect: Some(effect_dr.clone()),
        ..NuisanceSet::new(sample.q_hat())
    };
    estimate(EstimatorKind::Mul, sample, &set, opts)
}

/// The outcome-remainder model of the constant-effect estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaSpec {
    pub formula: Formula,
    pub source: CovariateSource,
    /// Instruments `(v, w)`; `v` has one component because `H` is constant.
    pub index: IndexFunctions,
}

impl OmegaSpec {
    pub fn new(formula: Formula) -> Self {
        OmegaSpec {
            formula,
            source: CovariateSource::Observed,
            index: IndexFunctions::Gradient,
        }
    }

    fn effect_spec(&self) -> EffectSpec {
        EffectSpec {
            h_formula: Formula::intercept_only(),
            h_source: CovariateSource::Observed,
            link: HLink::Identity,
            omega_formula: self.formula.clone(),
            omega_source: self.source,
            index: self.index.clone(),
        }
    }
}

/// Two-sample IV estimator: constant effect, with the auxiliary sample
/// reweighted by `q / (1 - q)`.
pub fn estimate_tsiv(sample: &FusedSample, omega: &OmegaSpec) -> Result<EstimateResult> {
    let eq = EstimatorKind::Tsiv.effect_equation().expect("tsiv");
    let effect = fit_effect(sample, &omega.effect_spec(), eq, None, None)?;
    let set = NuisanceSet {
        effect: Some(effect),
        ..NuisanceSet::new(sample.q_hat())
    };
    estimate(EstimatorKind::Tsiv, sample, &set, &EstimatorOptions::default())
}

/// Two-sample two-stage least squares: a least-squares first stage of `D`
/// on `first_stage` over auxiliary rows, then the constant-odds doubly
/// robust equation with `H = Delta`.
pub fn estimate_ts2sls(
    sample: &FusedSample,
    first_stage: &Formula,
    first_stage_source: CovariateSource,
    omega: &OmegaSpec,
) -> Result<EstimateResult> {
    let tau = fit_tau_linear(sample, first_stage, first_stage_source)?;
    let eq = EstimatorKind::Ts2sls.effect_equation().expect("ts2sls");
    let effect = fit_effect(sample, &omega.effect_spec(), eq, Some(&tau), None)?;
    let set = NuisanceSet {
        tau: Some(tau),
        effect: Some(effect),
        ..NuisanceSet::new(sample.q_hat())
    };
    estimate(EstimatorKind::Ts2sls, sample, &set, &EstimatorOptions::default())
}

/// Doubly robust constant-effect estimator with fitted `tau` and `pi`.
pub fn estimate_dr(sample: &FusedSample, tau: &GlmFit, pi: &GlmFit, omega: &OmegaSpec) -> Result<EstimateResult> {
    let eq = EstimatorKind::Dr.effect_equation().expect("dr");
    let effect = fit_effect(sample, &omega.effect_spec(), eq, Some(tau), Some(pi))?;
    let set = NuisanceSet {
        tau: Some(tau.clone()),
        pi: Some(pi.clone()),
        effect: Some(effect),
        ..NuisanceSet::new(sample.q_hat())
    };
    estimate(EstimatorKind::Dr, sample, &set, &EstimatorOptions::default())
}
