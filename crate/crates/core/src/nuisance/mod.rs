//! Working models consumed by the estimators: logistic models for the
//! instrument density `lambda`, the propensity `tau` and the sampling score
//! `pi`, a linear outcome regression `theta`, and the joint `(gamma, eta)`
//! solvers for the effect curve `H` and outcome remainder `omega`.

mod effect;
pub(crate) mod eval;
mod glm;

pub use effect::{
    fit_effect, fit_effect_dr, fit_effect_m2, fit_effect_m3, EffectCurveFit, EffectEquation, EffectSolver,
    EffectSpec, HLink, IndexFn, IndexFunctions, OddsSource,
};
pub use eval::RowValues;
pub use glm::{clamp_probability, expit, fit_linear, fit_logistic, logit, GlmFit, GlmSettings, Link, PROB_CLAMP};

use serde::{Deserialize, Serialize};

use crate::data::{build_design, CovariateSource, Formula, FusedRow, FusedSample};
use crate::error::{Error, Result};

fn primary_mask(sample: &FusedSample) -> Vec<bool> {
    sample.rows().iter().map(FusedRow::is_primary).collect()
}

fn auxiliary_mask(sample: &FusedSample) -> Vec<bool> {
    sample.rows().iter().map(|r| !r.is_primary()).collect()
}

/// `pr(Z = 1 | X)` in the primary population, fitted on `r = 1` rows.
pub fn fit_lambda(sample: &FusedSample, formula: &Formula, source: CovariateSource) -> Result<GlmFit> {
    if formula.has_z() {
        return Err(Error::InvalidFormula(format!(
            "instrument density model `{formula}` cannot contain z"
        )));
    }
    let design = build_design(formula, sample, source)?;
    let z: Vec<f64> = sample.rows().iter().map(|r| f64::from(r.z)).collect();
    fit_logistic(&design, &z, Some(&primary_mask(sample)), &GlmSettings::default())
}

/// Logistic propensity `pr(D = 1 | Z, X)`, fitted on `r = 0` rows.
pub fn fit_tau(sample: &FusedSample, formula: &Formula, source: CovariateSource) -> Result<GlmFit> {
    let design = build_design(formula, sample, source)?;
    let d: Vec<f64> = sample.rows().iter().map(FusedRow::rd).collect();
    fit_logistic(&design, &d, Some(&auxiliary_mask(sample)), &GlmSettings::default())
}

/// Linear-probability first stage: least squares of `D` on the formula
/// over `r = 0` rows.
pub fn fit_tau_linear(sample: &FusedSample, formula: &Formula, source: CovariateSource) -> Result<GlmFit> {
    let design = build_design(formula, sample, source)?;
    let d: Vec<f64> = sample.rows().iter().map(FusedRow::rd).collect();
    fit_linear(&design, &d, Some(&auxiliary_mask(sample)))
}

/// Sampling score `pr(R = 1 | Z, X)`, fitted on all rows.
pub fn fit_pi(sample: &FusedSample, formula: &Formula, source: CovariateSource) -> Result<GlmFit> {
    let design = build_design(formula, sample, source)?;
    let r: Vec<f64> = sample.rows().iter().map(|r| f64::from(r.r)).collect();
    fit_logistic(&design, &r, None, &GlmSettings::default())
}

/// Outcome regression `E(Y | Z, X, R = 1)`, fitted on `r = 1` rows.
pub fn fit_theta(sample: &FusedSample, formula: &Formula, source: CovariateSource) -> Result<GlmFit> {
    let design = build_design(formula, sample, source)?;
    let y: Vec<f64> = sample.rows().iter().map(FusedRow::ry).collect();
    fit_linear(&design, &y, Some(&primary_mask(sample)))
}

/// All working models fitted for one estimator.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NuisanceSet {
    pub pi: Option<GlmFit>,
    pub lambda: Option<GlmFit>,
    pub tau: Option<GlmFit>,
    pub theta: Option<GlmFit>,
    pub effect: Option<EffectCurveFit>,
    pub q_hat: f64,
}

impl NuisanceSet {
    pub fn new(q_hat: f64) -> Self {
        NuisanceSet {
            q_hat,
            ..Default::default()
        }
    }

    pub fn pi(&self) -> Result<&GlmFit> {
        self.pi.as_ref().ok_or(Error::MissingNuisance("pi"))
    }

    pub fn lambda(&self) -> Result<&GlmFit> {
        self.lambda.as_ref().ok_or(Error::MissingNuisance("lambda"))
    }

    pub fn tau(&self) -> Result<&GlmFit> {
        self.tau.as_ref().ok_or(Error::MissingNuisance("tau"))
    }

    pub fn theta(&self) -> Result<&GlmFit> {
        self.theta.as_ref().ok_or(Error::MissingNuisance("theta"))
    }

    pub fn effect(&self) -> Result<&EffectCurveFit> {
        self.effect.as_ref().ok_or(Error::MissingNuisance("effect curve"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Pi,
    Lambda1,
    Tau,
    ThetaMean,
    H,
    Omega,
}

#[derive(Debug, Clone, Copy)]
pub enum Fitted<'a> {
    Glm(&'a GlmFit),
    Effect(&'a EffectCurveFit),
}

/// Evaluates one working-model component at a row.
///
/// Logistic predictions are clamped into `[1e-12, 1 - 1e-12]`; `Tau` is
/// evaluated at the row's own instrument value.
pub fn predict(fit: Fitted<'_>, component: Component, row: &FusedRow) -> Result<f64> {
    match (fit, component) {
        (Fitted::Glm(g), Component::Pi | Component::Lambda1 | Component::Tau | Component::ThetaMean) => {
            g.predict_row(row)
        }
        (Fitted::Effect(e), Component::H) => e.predict_h_row(row),
        (Fitted::Effect(e), Component::Omega) => e.predict_omega_row(row),
        _ => Err(Error::InvalidArgument(format!(
            "component {component:?} is not provided by this fit"
        ))),
    }
}
