use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{CovariateSource, Formula, FusedSample};
use crate::error::{Error, Result};
use crate::inference::{bootstrap, wald_ci, BootstrapOptions};
use crate::nuisance::{
    fit_effect, fit_lambda, fit_pi, fit_tau, fit_tau_linear, fit_theta, EffectCurveFit, EffectEquation, EffectSpec,
    GlmFit, HLink, IndexFunctions, NuisanceSet,
};

use super::{estimate, sandwich_se, ConfidenceInterval, EstimateResult, EstimatorKind, EstimatorOptions};

/// One working model: a formula and the covariates it is evaluated on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub formula: Formula,
    #[serde(default)]
    pub source: CovariateSource,
}

impl ComponentSpec {
    pub fn observed(formula: Formula) -> Self {
        ComponentSpec {
            formula,
            source: CovariateSource::Observed,
        }
    }

    pub fn transformed(formula: Formula) -> Self {
        ComponentSpec {
            formula,
            source: CovariateSource::Transformed,
        }
    }
}

/// Working-model specification for a battery of estimators. Components a
/// requested estimator does not use may be left out.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub pi: Option<ComponentSpec>,
    pub lambda: Option<ComponentSpec>,
    pub tau: Option<ComponentSpec>,
    pub theta: Option<ComponentSpec>,
    pub h: Option<ComponentSpec>,
    pub omega: Option<ComponentSpec>,
    #[serde(default)]
    pub h_link: HLink,
    #[serde(skip)]
    pub index: IndexFunctions,
}

fn need<'a>(c: &'a Option<ComponentSpec>, name: &'static str) -> Result<&'a ComponentSpec> {
    c.as_ref().ok_or(Error::MissingNuisance(name))
}

impl ModelSpec {
    /// Checks that every component `kind` needs is present.
    pub fn validate(&self, kind: EstimatorKind) -> Result<()> {
        let req = kind.requirements();
        let checks = [
            (req.pi, &self.pi, "pi"),
            (req.lambda, &self.lambda, "lambda"),
            (req.tau, &self.tau, "tau"),
            (req.theta, &self.theta, "theta"),
            (req.h, &self.h, "H"),
            (req.omega, &self.omega, "omega"),
        ];
        for (wanted, c, name) in checks {
            if wanted {
                need(c, name)?;
            }
        }
        Ok(())
    }

    fn effect_spec(&self, kind: EstimatorKind) -> Result<EffectSpec> {
        let omega = need(&self.omega, "omega")?;
        let (h_formula, h_source, link) = if kind.constant_effect() {
            (Formula::intercept_only(), CovariateSource::Observed, HLink::Identity)
        } else {
            let h = need(&self.h, "H")?;
            (h.formula.clone(), h.source, self.h_link)
        };
        Ok(EffectSpec {
            h_formula,
            h_source,
            link,
            omega_formula: omega.formula.clone(),
            omega_source: omega.source,
            index: if kind.constant_effect() {
                IndexFunctions::Gradient
            } else {
                self.index.clone()
            },
        })
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum Slot {
    Pi,
    Lambda,
    Tau,
    TauLinear,
    Theta,
    Effect { eq: EffectEquation, constant: bool },
}

/// Memoises nuisance fits so a battery fits each distinct model once.
/// Failures are cached too and reported with the component that failed.
#[derive(Default)]
struct FitCache {
    glm: HashMap<Slot, Result<GlmFit, Arc<Error>>>,
    effect: HashMap<Slot, Result<EffectCurveFit, Arc<Error>>>,
}

fn unwrap_cached<T: Clone>(r: &Result<T, Arc<Error>>, component: &'static str) -> Result<T> {
    r.clone().map_err(|source| Error::NuisanceFit { component, source })
}

impl FitCache {
    fn glm(&mut self, slot: Slot, sample: &FusedSample, spec: &ModelSpec) -> Result<GlmFit> {
        let name = match slot {
            Slot::Pi => "pi",
            Slot::Lambda => "lambda",
            Slot::Tau | Slot::TauLinear => "tau",
            Slot::Theta => "theta",
            Slot::Effect { .. } => unreachable!("effect slots use FitCache::effect"),
        };
        if !self.glm.contains_key(&slot) {
            let fit = (|| {
                let c = match slot {
                    Slot::Pi => need(&spec.pi, name)?,
                    Slot::Lambda => need(&spec.lambda, name)?,
                    Slot::Tau | Slot::TauLinear => need(&spec.tau, name)?,
                    _ => need(&spec.theta, name)?,
                };
                match slot {
                    Slot::Pi => fit_pi(sample, &c.formula, c.source),
                    Slot::Lambda => fit_lambda(sample, &c.formula, c.source),
                    Slot::Tau => fit_tau(sample, &c.formula, c.source),
                    Slot::TauLinear => fit_tau_linear(sample, &c.formula, c.source),
                    _ => fit_theta(sample, &c.formula, c.source),
                }
            })();
            let fit = match fit {
                Err(Error::MissingNuisance(n)) => return Err(Error::MissingNuisance(n)),
                other => other.map_err(Arc::new),
            };
            self.glm.insert(slot, fit);
        }
        unwrap_cached(&self.glm[&slot], name)
    }

    fn effect(
        &mut self,
        kind: EstimatorKind,
        sample: &FusedSample,
        spec: &ModelSpec,
        tau: Option<&GlmFit>,
        pi: Option<&GlmFit>,
    ) -> Result<EffectCurveFit> {
        let eq = kind.effect_equation().expect("effect estimator");
        let slot = Slot::Effect {
            eq,
            constant: kind.constant_effect(),
        };
        if !self.effect.contains_key(&slot) {
            let es = spec.effect_spec(kind)?;
            let fit = fit_effect(sample, &es, eq, tau, pi).map_err(Arc::new);
            self.effect.insert(slot, fit);
        }
        unwrap_cached(&self.effect[&slot], "effect curve")
    }

    fn fit_for(&mut self, kind: EstimatorKind, sample: &FusedSample, spec: &ModelSpec) -> Result<NuisanceSet> {
        spec.validate(kind)?;
        let req = kind.requirements();
        let mut set = NuisanceSet::new(sample.q_hat());
        if req.pi {
            set.pi = Some(self.glm(Slot::Pi, sample, spec)?);
        }
        if req.lambda {
            set.lambda = Some(self.glm(Slot::Lambda, sample, spec)?);
        }
        if req.tau {
            let slot = if kind == EstimatorKind::Ts2sls {
                Slot::TauLinear
            } else {
                Slot::Tau
            };
            set.tau = Some(self.glm(slot, sample, spec)?);
        }
        if req.theta {
            set.theta = Some(self.glm(Slot::Theta, sample, spec)?);
        }
        if kind.effect_equation().is_some() {
            let effect = self.effect(kind, sample, spec, set.tau.as_ref(), set.pi.as_ref())?;
            set.effect = Some(effect);
        }
        Ok(set)
    }
}

/// Fits the working models `kind` needs. Fit failures are reported as
/// [`Error::NuisanceFit`] naming the component.
pub fn fit_for(kind: EstimatorKind, sample: &FusedSample, spec: &ModelSpec) -> Result<NuisanceSet> {
    FitCache::default().fit_for(kind, sample, spec)
}

/// Fits the working models for `kind` and computes the point estimate.
pub fn estimate_kind(
    kind: EstimatorKind,
    sample: &FusedSample,
    spec: &ModelSpec,
    opts: &EstimatorOptions,
) -> Result<EstimateResult> {
    let set = fit_for(kind, sample, spec)?;
    estimate(kind, sample, &set, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryOptions {
    pub estimator: EstimatorOptions,
    /// Compute sandwich standard errors and Wald intervals.
    pub sandwich: bool,
    pub level: f64,
    pub bootstrap: Option<BootstrapOptions>,
}

impl Default for BatteryOptions {
    fn default() -> Self {
        BatteryOptions {
            estimator: EstimatorOptions::default(),
            sandwich: true,
            level: 0.95,
            bootstrap: None,
        }
    }
}

/// Point estimates (and sandwich intervals when requested) for each kind,
/// sharing working-model fits. One entry per kind, failures included.
pub(crate) fn battery_outcomes(
    sample: &FusedSample,
    kinds: &[EstimatorKind],
    spec: &ModelSpec,
    opts: &BatteryOptions,
) -> Vec<Result<EstimateResult>> {
    let mut cache = FitCache::default();
    kinds
        .iter()
        .map(|&kind| {
            let set = cache.fit_for(kind, sample, spec)?;
            let mut res = estimate(kind, sample, &set, &opts.estimator)?;
            if opts.sandwich {
                let se = sandwich_se(sample, &res)?;
                let (lo, hi) = wald_ci(res.delta_hat, se, opts.level)?;
                res.se_sandwich = Some(se);
                res.ci = Some(ConfidenceInterval {
                    lo,
                    hi,
                    level: opts.level,
                });
            }
            Ok(res)
        })
        .collect()
}

/// Runs several estimators on one sample, fitting each shared working model
/// once. Results come back in the order of `kinds`; the first failure
/// aborts the battery.
pub fn run_battery(
    sample: &FusedSample,
    kinds: &[EstimatorKind],
    spec: &ModelSpec,
    opts: &BatteryOptions,
) -> Result<Vec<EstimateResult>> {
    for &kind in kinds {
        spec.validate(kind)?;
    }
    let mut out = battery_outcomes(sample, kinds, spec, opts)
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    if let Some(boot) = &opts.bootstrap {
        for res in &mut out {
            let kind = res.kind;
            let b = bootstrap(
                sample,
                |s| estimate_kind(kind, s, spec, &opts.estimator).map(|r| r.delta_hat),
                boot,
            )?;
            res.se_boot = Some(b.se_boot);
            res.ci_boot = Some(ConfidenceInterval {
                lo: b.percentile_ci.0,
                hi: b.percentile_ci.1,
                level: b.level,
            });
        }
    }
    Ok(out)
}
