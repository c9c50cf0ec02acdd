//! Row-level evaluation of fitted (or trial) working models.
//!
//! Estimators, the effect-curve solvers and the sandwich systems all read
//! nuisance values through [`Evaluator`], so the same arithmetic is used for
//! point estimation and for differentiating the stacked equations.

use crate::data::{build_design, build_design_at, CovariateSource, DesignMatrix, Formula, FusedSample};
use crate::error::{Error, Result};

use super::effect::{EffectEquation, EffectSolver, HLink, IndexFunctions, OddsSource};
use super::glm::{clamp_probability, expit, Link};

/// Plain row-major matrix for index-function values.
#[derive(Debug, Clone)]
pub(crate) struct Rows {
    values: Vec<f64>,
    k: usize,
}

impl Rows {
    fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.k..(i + 1) * self.k]
    }
}

#[derive(Debug, Clone)]
pub(crate) struct TauDesign {
    pub link: Link,
    pub at_row: DesignMatrix,
    pub at_one: DesignMatrix,
    pub at_zero: DesignMatrix,
}

#[derive(Debug, Clone)]
pub(crate) struct HDesign {
    pub link: HLink,
    pub design: DesignMatrix,
}

/// Parameter slices for each component; empty slices for absent components.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Params<'a> {
    pub q: f64,
    pub lambda: &'a [f64],
    pub tau: &'a [f64],
    pub pi: &'a [f64],
    pub theta: &'a [f64],
    pub gamma: &'a [f64],
    pub eta: &'a [f64],
}

/// Nuisance values at one row. Components that are not configured are NaN.
#[derive(Debug, Clone, Copy)]
pub struct RowValues {
    /// `pr(Z = 1 | X)` in the primary population.
    pub lambda1: f64,
    /// `lambda(Z | X)` at the observed instrument.
    pub lambda_z: f64,
    pub tau_z: f64,
    pub tau1: f64,
    pub tau0: f64,
    pub pi: f64,
    pub theta: f64,
    pub h: f64,
    pub omega: f64,
    /// Number of logistic predictions clamped at this row.
    pub clamped: u32,
}

impl RowValues {
    pub(crate) fn nan() -> Self {
        RowValues {
            lambda1: f64::NAN,
            lambda_z: f64::NAN,
            tau_z: f64::NAN,
            tau1: f64::NAN,
            tau0: f64::NAN,
            pi: f64::NAN,
            theta: f64::NAN,
            h: f64::NAN,
            omega: f64::NAN,
            clamped: 0,
        }
    }

    /// `tau(1, x) - tau(0, x)`.
    #[inline]
    pub fn margin(&self) -> f64 {
        self.tau1 - self.tau0
    }
}

#[inline]
fn logistic(eta: f64, clamped: &mut u32) -> f64 {
    let (p, hit) = clamp_probability(expit(eta));
    *clamped += u32::from(hit);
    p
}

pub(crate) struct Evaluator<'s> {
    pub sample: &'s FusedSample,
    pub lambda: Option<DesignMatrix>,
    pub tau: Option<TauDesign>,
    pub pi: Option<DesignMatrix>,
    pub theta: Option<DesignMatrix>,
    pub h: Option<HDesign>,
    pub omega: Option<DesignMatrix>,
    custom_v: Option<Rows>,
    custom_w: Option<Rows>,
}

fn no_z(formula: &Formula, what: &str) -> Result<()> {
    if formula.has_z() {
        return Err(Error::InvalidFormula(format!(
            "the {what} model is a function of x only, but `{formula}` contains z"
        )));
    }
    Ok(())
}

impl<'s> Evaluator<'s> {
    pub fn new(sample: &'s FusedSample) -> Self {
        Evaluator {
            sample,
            lambda: None,
            tau: None,
            pi: None,
            theta: None,
            h: None,
            omega: None,
            custom_v: None,
            custom_w: None,
        }
    }

    pub fn with_lambda(mut self, formula: &Formula, source: CovariateSource) -> Result<Self> {
        no_z(formula, "instrument density")?;
        self.lambda = Some(build_design(formula, self.sample, source)?);
        Ok(self)
    }

    pub fn with_tau(mut self, formula: &Formula, source: CovariateSource, link: Link) -> Result<Self> {
        self.tau = Some(TauDesign {
            link,
            at_row: build_design(formula, self.sample, source)?,
            at_one: build_design_at(formula, self.sample, source, Some(1.0))?,
            at_zero: build_design_at(formula, self.sample, source, Some(0.0))?,
        });
        Ok(self)
    }

    pub fn with_pi(mut self, formula: &Formula, source: CovariateSource) -> Result<Self> {
        self.pi = Some(build_design(formula, self.sample, source)?);
        Ok(self)
    }

    pub fn with_theta(mut self, formula: &Formula, source: CovariateSource) -> Result<Self> {
        self.theta = Some(build_design(formula, self.sample, source)?);
        Ok(self)
    }

    pub fn with_h(mut self, formula: &Formula, source: CovariateSource, link: HLink) -> Result<Self> {
        no_z(formula, "effect curve")?;
        self.h = Some(HDesign {
            link,
            design: build_design(formula, self.sample, source)?,
        });
        Ok(self)
    }

    pub fn with_omega(mut self, formula: &Formula, source: CovariateSource) -> Result<Self> {
        no_z(formula, "outcome remainder")?;
        self.omega = Some(build_design(formula, self.sample, source)?);
        Ok(self)
    }

    /// Evaluates custom index functions on the covariates of the H and
    /// omega models. Must be called after `with_h` and `with_omega`.
    pub fn with_index(mut self, index: &IndexFunctions) -> Result<Self> {
        let IndexFunctions::Custom { v, w } = index else {
            return Ok(self);
        };
        let h = self.h.as_ref().ok_or(Error::MissingNuisance("H"))?;
        let om = self.omega.as_ref().ok_or(Error::MissingNuisance("omega"))?;
        let hs = h.design.source();
        let os = om.source();
        let (kg, ke) = (h.design.ncols(), om.ncols());
        let mut vv = Vec::with_capacity(self.sample.n() * kg);
        let mut ww = Vec::with_capacity(self.sample.n() * ke);
        for row in self.sample.rows() {
            let a = v(row.point(hs)?.1);
            let b = w(row.point(os)?.1);
            if a.len() != kg || b.len() != ke {
                return Err(Error::InvalidArgument(format!(
                    "index functions return dimensions ({}, {}), expected ({kg}, {ke})",
                    a.len(),
                    b.len()
                )));
            }
            vv.extend(a);
            ww.extend(b);
        }
        self.custom_v = Some(Rows { values: vv, k: kg });
        self.custom_w = Some(Rows { values: ww, k: ke });
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.sample.n()
    }

    pub fn gamma_dim(&self) -> usize {
        self.h.as_ref().map_or(0, |h| h.design.ncols())
    }

    pub fn eta_dim(&self) -> usize {
        self.omega.as_ref().map_or(0, DesignMatrix::ncols)
    }

    /// Unclamped `pr(Z=1|X)` at row `i`.
    #[inline]
    pub fn lambda_raw(&self, i: usize, beta: &[f64]) -> f64 {
        expit(self.lambda.as_ref().expect("lambda design").dot(i, beta))
    }

    /// Unclamped `tau(Z, X)` at the observed instrument.
    #[inline]
    pub fn tau_raw(&self, i: usize, beta: &[f64]) -> f64 {
        let t = self.tau.as_ref().expect("tau design");
        let eta = t.at_row.dot(i, beta);
        match t.link {
            Link::Logit => expit(eta),
            Link::Identity => eta,
        }
    }

    #[inline]
    pub fn pi_raw(&self, i: usize, beta: &[f64]) -> f64 {
        expit(self.pi.as_ref().expect("pi design").dot(i, beta))
    }

    #[inline]
    pub fn h_value(&self, i: usize, gamma: &[f64]) -> f64 {
        let h = self.h.as_ref().expect("H design");
        let lin = h.design.dot(i, gamma);
        match h.link {
            HLink::Identity => lin,
            HLink::Tanh => lin.tanh(),
        }
    }

    pub fn row(&self, i: usize, p: &Params<'_>) -> RowValues {
        let mut v = RowValues::nan();
        let mut clamped = 0;
        let z = self.sample.rows()[i].z;
        if let Some(d) = &self.lambda {
            v.lambda1 = logistic(d.dot(i, p.lambda), &mut clamped);
            v.lambda_z = if z == 1 { v.lambda1 } else { 1.0 - v.lambda1 };
        }
        if let Some(t) = &self.tau {
            let mut eval = |m: &DesignMatrix| {
                let eta = m.dot(i, p.tau);
                match t.link {
                    Link::Logit => logistic(eta, &mut clamped),
                    Link::Identity => eta,
                }
            };
            v.tau_z = eval(&t.at_row);
            v.tau1 = eval(&t.at_one);
            v.tau0 = eval(&t.at_zero);
        }
        if let Some(d) = &self.pi {
            v.pi = logistic(d.dot(i, p.pi), &mut clamped);
        }
        if let Some(d) = &self.theta {
            v.theta = d.dot(i, p.theta);
        }
        if self.h.is_some() {
            v.h = self.h_value(i, p.gamma);
        }
        if let Some(d) = &self.omega {
            v.omega = d.dot(i, p.eta);
        }
        v.clamped = clamped;
        v
    }

    /// Writes `G(X, Z) = (v(X) Z, w(X))` at row `i` into `out`.
    pub fn g_row(&self, i: usize, gamma: &[f64], out: &mut [f64]) {
        let kg = self.gamma_dim();
        let z = f64::from(self.sample.rows()[i].z);
        let (gv, gw) = out.split_at_mut(kg);
        match &self.custom_v {
            Some(rows) => {
                for (o, a) in gv.iter_mut().zip(rows.row(i)) {
                    *o = a * z;
                }
            }
            None => {
                let h = self.h.as_ref().expect("H design");
                let scale = match h.link {
                    HLink::Identity => 1.0,
                    HLink::Tanh => {
                        let t = h.design.dot(i, gamma).tanh();
                        1.0 - t * t
                    }
                };
                for (o, a) in gv.iter_mut().zip(h.design.row(i)) {
                    *o = a * scale * z;
                }
            }
        }
        let w_row = match &self.custom_w {
            Some(rows) => rows.row(i),
            None => self.omega.as_ref().expect("omega design").row(i),
        };
        gw.copy_from_slice(w_row);
    }

    /// Coefficient `c_i` multiplying `H(X)` in the effect residual
    /// `R Y - H c - R omega`.
    #[inline]
    pub fn effect_coef(&self, i: usize, eq: EffectEquation, v: &RowValues, q: f64) -> f64 {
        let row = &self.sample.rows()[i];
        let odds = || match eq.odds {
            OddsSource::Pi => v.pi / (1.0 - v.pi),
            OddsSource::Constant => q / (1.0 - q),
        };
        if row.is_primary() {
            match eq.solver {
                EffectSolver::M2 | EffectSolver::Dr => v.tau_z,
                EffectSolver::M3 => 0.0,
            }
        } else {
            let d = row.rd();
            match eq.solver {
                EffectSolver::M2 => d - v.tau_z,
                EffectSolver::M3 => odds() * d,
                EffectSolver::Dr => odds() * (d - v.tau_z),
            }
        }
    }

    /// `R Y - H c - R omega` at row `i`.
    #[inline]
    pub fn effect_residual(&self, i: usize, eq: EffectEquation, v: &RowValues, q: f64) -> f64 {
        let row = &self.sample.rows()[i];
        let c = self.effect_coef(i, eq, v, q);
        let own = if row.is_primary() { row.ry() - v.omega } else { 0.0 };
        own - v.h * c
    }
}
