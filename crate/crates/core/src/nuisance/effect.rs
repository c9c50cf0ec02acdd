use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{CovariateSource, Formula, FusedRow, FusedSample};
use crate::error::{Error, Result};

use super::eval::{Evaluator, Params};
use super::glm::GlmFit;

/// Link of the effect-curve model `H(x; gamma)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HLink {
    #[default]
    Identity,
    /// `tanh(gamma' x)`, bounded in `[-1, 1]` for binary outcomes.
    Tanh,
}

/// Which estimating equation produced an [`EffectCurveFit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectSolver {
    /// Outcome-plus-propensity equation, consistent when tau, H and omega
    /// are correct.
    M2,
    /// Selection-weighted equation, consistent when pi, H and omega are
    /// correct.
    M3,
    /// Doubly robust combination of the two.
    Dr,
}

/// Source of the auxiliary-row odds weight `pi / (1 - pi)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OddsSource {
    /// Fitted selection model.
    Pi,
    /// Constant `q / (1 - q)`: identical `(Z, X)` laws in both samples.
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EffectEquation {
    pub solver: EffectSolver,
    pub odds: OddsSource,
}

impl EffectEquation {
    pub const M2: Self = EffectEquation {
        solver: EffectSolver::M2,
        odds: OddsSource::Pi,
    };
    pub const M3: Self = EffectEquation {
        solver: EffectSolver::M3,
        odds: OddsSource::Pi,
    };
    pub const DR: Self = EffectEquation {
        solver: EffectSolver::Dr,
        odds: OddsSource::Pi,
    };

    pub(crate) fn needs_tau(self) -> bool {
        self.solver != EffectSolver::M3
    }

    pub(crate) fn needs_pi(self) -> bool {
        self.solver != EffectSolver::M2 && self.odds == OddsSource::Pi
    }
}

pub type IndexFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Index functions `v(x)` and `w(x)` forming `G = (v(X) Z, w(X))`.
#[derive(Clone, Default)]
pub enum IndexFunctions {
    /// `v = dH/dgamma`, `w = domega/deta`.
    #[default]
    Gradient,
    /// Analyst-supplied functions of the covariates read by the H and
    /// omega models respectively.
    Custom { v: IndexFn, w: IndexFn },
}

impl PartialEq for IndexFunctions {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (IndexFunctions::Gradient, IndexFunctions::Gradient) => true,
            (IndexFunctions::Custom { v: a, w: b }, IndexFunctions::Custom { v: c, w: d }) => {
                Arc::ptr_eq(a, c) && Arc::ptr_eq(b, d)
            }
            _ => false,
        }
    }
}

impl fmt::Debug for IndexFunctions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IndexFunctions::Gradient => write!(f, "Gradient"),
            IndexFunctions::Custom { .. } => write!(f, "Custom"),
        }
    }
}

/// Model specification for `(H, omega)`.
#[derive(Debug, Clone)]
pub struct EffectSpec {
    pub h_formula: Formula,
    pub h_source: CovariateSource,
    pub link: HLink,
    pub omega_formula: Formula,
    pub omega_source: CovariateSource,
    pub index: IndexFunctions,
}

impl EffectSpec {
    pub fn new(h_formula: Formula, omega_formula: Formula) -> Self {
        EffectSpec {
            h_formula,
            h_source: CovariateSource::Observed,
            link: HLink::Identity,
            omega_formula,
            omega_source: CovariateSource::Observed,
            index: IndexFunctions::Gradient,
        }
    }

    pub fn sources(mut self, h: CovariateSource, omega: CovariateSource) -> Self {
        self.h_source = h;
        self.omega_source = omega;
        self
    }

    pub fn link(mut self, link: HLink) -> Self {
        self.link = link;
        self
    }

    pub fn index(mut self, index: IndexFunctions) -> Self {
        self.index = index;
        self
    }
}

/// Fitted `(gamma, eta)` for the effect curve and outcome remainder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectCurveFit {
    pub h_formula: Formula,
    pub h_source: CovariateSource,
    pub link: HLink,
    pub gamma: Vec<f64>,
    pub omega_formula: Formula,
    pub omega_source: CovariateSource,
    pub eta: Vec<f64>,
    /// Index functions used in the fit; not serialized.
    #[serde(skip)]
    pub index: IndexFunctions,
    pub equation: EffectEquation,
    pub converged: bool,
    pub iterations: usize,
    /// Max-norm of the mean moment vector at the solution.
    pub moment_norm: f64,
}

impl EffectCurveFit {
    pub fn solver(&self) -> EffectSolver {
        self.equation.solver
    }

    pub fn h_at(&self, x: &[f64]) -> f64 {
        let lin: f64 = self
            .h_formula
            .terms()
            .iter()
            .zip(&self.gamma)
            .map(|(t, g)| t.eval(0.0, x) * g)
            .sum();
        match self.link {
            HLink::Identity => lin,
            HLink::Tanh => lin.tanh(),
        }
    }

    pub fn omega_at(&self, x: &[f64]) -> f64 {
        self.omega_formula
            .terms()
            .iter()
            .zip(&self.eta)
            .map(|(t, e)| t.eval(0.0, x) * e)
            .sum()
    }

    pub fn predict_h_row(&self, row: &FusedRow) -> Result<f64> {
        Ok(self.h_at(row.point(self.h_source)?.1))
    }

    pub fn predict_omega_row(&self, row: &FusedRow) -> Result<f64> {
        Ok(self.omega_at(row.point(self.omega_source)?.1))
    }
}

pub(crate) const MOMENT_TOLERANCE: f64 = 1e-10;
const NEWTON_MAX_ITER: usize = 200;

/// Evaluator carrying the designs needed by an effect equation.
pub(crate) fn effect_evaluator<'s>(
    sample: &'s FusedSample,
    spec: &EffectSpec,
    eq: EffectEquation,
    tau: Option<&GlmFit>,
    pi: Option<&GlmFit>,
) -> Result<Evaluator<'s>> {
    let mut ev = Evaluator::new(sample)
        .with_h(&spec.h_formula, spec.h_source, spec.link)?
        .with_omega(&spec.omega_formula, spec.omega_source)?
        .with_index(&spec.index)?;
    if eq.needs_tau() {
        let t = tau.ok_or(Error::MissingNuisance("tau"))?;
        ev = ev.with_tau(&t.formula, t.source, t.link)?;
    }
    if eq.needs_pi() {
        let p = pi.ok_or(Error::MissingNuisance("pi"))?;
        ev = ev.with_pi(&p.formula, p.source)?;
    }
    Ok(ev)
}

/// Mean moment `E_n{G (R Y - H c - R omega)}` at `(gamma, eta)`, with
/// per-row coefficients `c` precomputed.
fn mean_moment(ev: &Evaluator<'_>, coefs: &[f64], gamma: &[f64], eta: &[f64], out: &mut [f64]) {
    let kg = gamma.len();
    let mut g = vec![0.0; kg + eta.len()];
    out.iter_mut().for_each(|o| *o = 0.0);
    let omega = ev.omega.as_ref().expect("omega design");
    for (i, row) in ev.sample.rows().iter().enumerate() {
        let h = ev.h_value(i, gamma);
        let own = if row.is_primary() { row.ry() - omega.dot(i, eta) } else { 0.0 };
        let resid = own - h * coefs[i];
        ev.g_row(i, gamma, &mut g);
        for (o, gi) in out.iter_mut().zip(&g) {
            *o += gi * resid;
        }
    }
    let n = ev.n() as f64;
    out.iter_mut().for_each(|o| *o /= n);
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

fn solve_checked(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = a.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin <= 1e-13 * smax {
        return Err(Error::SingularSystem);
    }
    a.clone().lu().solve(b).ok_or(Error::SingularSystem)
}

pub(crate) struct EffectSolution {
    pub gamma: Vec<f64>,
    pub eta: Vec<f64>,
    pub iterations: usize,
    pub moment_norm: f64,
}

/// Solves the effect equation for `(gamma, eta)` with the nuisance
/// parameters in `base` held fixed.
pub(crate) fn solve_effect(ev: &Evaluator<'_>, eq: EffectEquation, base: &Params<'_>) -> Result<EffectSolution> {
    let kg = ev.gamma_dim();
    let ke = ev.eta_dim();
    let k = kg + ke;
    let coefs: Vec<f64> = (0..ev.n())
        .map(|i| {
            let v = ev.row(i, base);
            ev.effect_coef(i, eq, &v, base.q)
        })
        .collect();
    if coefs.iter().any(|c| !c.is_finite()) {
        return Err(Error::SingularSystem);
    }
    let h = ev.h.as_ref().expect("H design");
    let omega = ev.omega.as_ref().expect("omega design");
    let mut theta = vec![0.0; k];
    let mut m = vec![0.0; k];
    let moment = |theta: &[f64], out: &mut [f64]| mean_moment(ev, &coefs, &theta[..kg], &theta[kg..], out);

    if h.link == HLink::Identity {
        // Residual is affine in theta: R Y - b' theta with b = (c x_h, R x_w).
        let mut a = DMatrix::zeros(k, k);
        let mut g = vec![0.0; k];
        let mut b = vec![0.0; k];
        for (i, row) in ev.sample.rows().iter().enumerate() {
            ev.g_row(i, &theta[..kg], &mut g);
            let r = if row.is_primary() { 1.0 } else { 0.0 };
            for (bj, x) in b[..kg].iter_mut().zip(h.design.row(i)) {
                *bj = coefs[i] * x;
            }
            for (bj, x) in b[kg..].iter_mut().zip(omega.row(i)) {
                *bj = r * x;
            }
            for (ga, gv) in g.iter().enumerate() {
                if *gv == 0.0 {
                    continue;
                }
                for (gb, bv) in b.iter().enumerate() {
                    a[(ga, gb)] += gv * bv;
                }
            }
        }
        a /= ev.n() as f64;
        let mut iterations = 0;
        for _ in 0..4 {
            moment(&theta, &mut m);
            if max_norm(&m) <= MOMENT_TOLERANCE * 1e-2 {
                break;
            }
            let delta = solve_checked(&a, &DVector::from_column_slice(&m))?;
            for (t, d) in theta.iter_mut().zip(delta.iter()) {
                *t += d;
            }
            iterations += 1;
        }
        moment(&theta, &mut m);
        let norm = max_norm(&m);
        if !(norm <= MOMENT_TOLERANCE) {
            return Err(Error::NotConverged {
                iterations,
                score_norm: norm,
            });
        }
        return Ok(EffectSolution {
            gamma: theta[..kg].to_vec(),
            eta: theta[kg..].to_vec(),
            iterations,
            moment_norm: norm,
        });
    }

    // Damped Newton with a central-difference Jacobian.
    let mut m_plus = vec![0.0; k];
    let mut m_minus = vec![0.0; k];
    moment(&theta, &mut m);
    let mut norm = max_norm(&m);
    for iter in 0..NEWTON_MAX_ITER {
        if norm <= MOMENT_TOLERANCE {
            return Ok(EffectSolution {
                gamma: theta[..kg].to_vec(),
                eta: theta[kg..].to_vec(),
                iterations: iter,
                moment_norm: norm,
            });
        }
        let mut jac = DMatrix::zeros(k, k);
        for j in 0..k {
            let step = 1e-6 * theta[j].abs().max(1.0);
            let mut tp = theta.clone();
            tp[j] += step;
            moment(&tp, &mut m_plus);
            tp[j] = theta[j] - step;
            moment(&tp, &mut m_minus);
            for r in 0..k {
                jac[(r, j)] = (m_plus[r] - m_minus[r]) / (2.0 * step);
            }
        }
        let delta = solve_checked(&jac, &DVector::from_column_slice(&m))?;
        let mut t = 1.0;
        let mut improved = false;
        let mut cand = theta.clone();
        let mut m_cand = vec![0.0; k];
        for _ in 0..30 {
            for ((c, th), d) in cand.iter_mut().zip(&theta).zip(delta.iter()) {
                *c = th - t * d;
            }
            moment(&cand, &mut m_cand);
            let cand_norm = max_norm(&m_cand);
            if cand_norm < norm {
                theta.clone_from(&cand);
                m.clone_from(&m_cand);
                norm = cand_norm;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    if norm <= MOMENT_TOLERANCE {
        return Ok(EffectSolution {
            gamma: theta[..kg].to_vec(),
            eta: theta[kg..].to_vec(),
            iterations: NEWTON_MAX_ITER,
            moment_norm: norm,
        });
    }
    Err(Error::NotConverged {
        iterations: NEWTON_MAX_ITER,
        score_norm: norm,
    })
}

/// Fits `(gamma, eta)` for any effect equation. Used directly by the
/// constant-odds estimators.
pub fn fit_effect(
    sample: &FusedSample,
    spec: &EffectSpec,
    eq: EffectEquation,
    tau: Option<&GlmFit>,
    pi: Option<&GlmFit>,
) -> Result<EffectCurveFit> {
    let ev = effect_evaluator(sample, spec, eq, tau, pi)?;
    let empty: &[f64] = &[];
    let base = Params {
        q: sample.q_hat(),
        tau: if eq.needs_tau() { &tau.expect("checked").beta } else { empty },
        pi: if eq.needs_pi() { &pi.expect("checked").beta } else { empty },
        ..Params::default()
    };
    let sol = solve_effect(&ev, eq, &base)?;
    Ok(EffectCurveFit {
        h_formula: spec.h_formula.clone(),
        h_source: spec.h_source,
        link: spec.link,
        gamma: sol.gamma,
        omega_formula: spec.omega_formula.clone(),
        omega_source: spec.omega_source,
        eta: sol.eta,
        index: spec.index.clone(),
        equation: eq,
        converged: true,
        iterations: sol.iterations,
        moment_norm: sol.moment_norm,
    })
}

/// `(gamma_2, eta_2)`: consistent when tau, H and omega are correct.
pub fn fit_effect_m2(sample: &FusedSample, spec: &EffectSpec, tau: &GlmFit) -> Result<EffectCurveFit> {
    fit_effect(sample, spec, EffectEquation::M2, Some(tau), None)
}

/// `(gamma_3, eta_3)`: consistent when pi, H and omega are correct.
pub fn fit_effect_m3(sample: &FusedSample, spec: &EffectSpec, pi: &GlmFit) -> Result<EffectCurveFit> {
    fit_effect(sample, spec, EffectEquation::M3, None, Some(pi))
}

/// Doubly robust `(gamma~, eta~)`: consistent if either tau or pi is
/// correct (with H and omega correct).
pub fn fit_effect_dr(
    sample: &FusedSample,
    spec: &EffectSpec,
    tau: &GlmFit,
    pi: &GlmFit,
) -> Result<EffectCurveFit> {
    fit_effect(sample, spec, EffectEquation::DR, Some(tau), Some(pi))
}
