use crate::data::FusedSample;
use crate::error::{Error, Result};
use crate::inference::{sandwich, SandwichResult, StackedSystem};
use crate::nuisance::eval::{Evaluator, Params};
use crate::nuisance::EffectEquation;

use super::{delta_parts, evaluator_for, EstimateResult, EstimatorKind};

#[derive(Debug, Clone, Copy, Default)]
struct Block {
    start: usize,
    len: usize,
}

impl Block {
    fn slice<'a>(&self, zeta: &'a [f64]) -> &'a [f64] {
        &zeta[self.start..self.start + self.len]
    }
}

/// The estimator stacked with every working model it depends on:
/// `q`, the logistic/linear score equations of `pi`, `lambda`, `tau` and
/// `theta`, the `(gamma, eta)` effect equation and finally the `Delta`
/// equation, in that order. Blocks absent from the estimator are skipped.
pub struct EstimatorStack<'s> {
    ev: Evaluator<'s>,
    kind: EstimatorKind,
    eq: Option<EffectEquation>,
    pi: Option<Block>,
    lambda: Option<Block>,
    tau: Option<Block>,
    theta: Option<Block>,
    gamma: Block,
    eta: Block,
    delta: Option<usize>,
    dim: usize,
    zeta_hat: Vec<f64>,
}

impl<'s> EstimatorStack<'s> {
    /// Builds the stack for `result`, whose nuisance snapshot must have been
    /// fitted on `sample`.
    pub fn new(sample: &'s FusedSample, result: &EstimateResult) -> Result<Self> {
        let kind = result.kind;
        let nuis = &result.nuisance;
        let ev = evaluator_for(sample, kind, nuis)?;
        let mut zeta = vec![nuis.q_hat];
        let mut push = |present: bool, beta: &[f64]| {
            present.then(|| {
                let b = Block {
                    start: zeta.len(),
                    len: beta.len(),
                };
                zeta.extend_from_slice(beta);
                b
            })
        };
        let beta = |f: Option<&crate::nuisance::GlmFit>| f.map_or(Vec::new(), |g| g.beta.clone());
        let pi = push(ev.pi.is_some(), &beta(nuis.pi.as_ref()));
        let lambda = push(ev.lambda.is_some(), &beta(nuis.lambda.as_ref()));
        let tau = push(ev.tau.is_some(), &beta(nuis.tau.as_ref()));
        let theta = push(ev.theta.is_some(), &beta(nuis.theta.as_ref()));
        let eq = kind.effect_equation();
        let (gamma, eta) = match (eq, nuis.effect.as_ref()) {
            (Some(_), Some(e)) => (push(true, &e.gamma).unwrap(), push(true, &e.eta).unwrap()),
            _ => (Block::default(), Block::default()),
        };
        let delta = if kind.constant_effect() {
            None
        } else {
            zeta.push(result.delta_hat);
            Some(zeta.len() - 1)
        };
        Ok(EstimatorStack {
            ev,
            kind,
            eq,
            pi,
            lambda,
            tau,
            theta,
            gamma,
            eta,
            delta,
            dim: zeta.len(),
            zeta_hat: zeta,
        })
    }

    /// Parameter vector at the fitted values.
    pub fn zeta_hat(&self) -> &[f64] {
        &self.zeta_hat
    }

    pub fn sandwich(&self) -> Result<SandwichResult> {
        sandwich(self, &self.zeta_hat)
    }
}

impl StackedSystem for EstimatorStack<'_> {
    fn n(&self) -> usize {
        self.ev.n()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn target(&self) -> usize {
        self.delta.unwrap_or(self.gamma.start)
    }

    fn moment(&self, i: usize, zeta: &[f64], out: &mut [f64]) {
        let row = &self.ev.sample.rows()[i];
        let r = if row.is_primary() { 1.0 } else { 0.0 };
        let q = zeta[0];
        let empty: &[f64] = &[];
        let get = |b: Option<Block>| b.map_or(empty, |b| b.slice(zeta));
        let params = Params {
            q,
            pi: get(self.pi),
            lambda: get(self.lambda),
            tau: get(self.tau),
            theta: get(self.theta),
            gamma: self.gamma.slice(zeta),
            eta: self.eta.slice(zeta),
        };
        out[0] = r - q;

        let score = |out: &mut [f64], b: Block, x: &[f64], weight: f64| {
            for (o, xv) in out[b.start..b.start + b.len].iter_mut().zip(x) {
                *o = weight * xv;
            }
        };
        if let Some(b) = self.pi {
            let d = self.ev.pi.as_ref().expect("pi design");
            score(out, b, d.row(i), r - self.ev.pi_raw(i, params.pi));
        }
        if let Some(b) = self.lambda {
            let d = self.ev.lambda.as_ref().expect("lambda design");
            score(out, b, d.row(i), r * (f64::from(row.z) - self.ev.lambda_raw(i, params.lambda)));
        }
        if let Some(b) = self.tau {
            let d = &self.ev.tau.as_ref().expect("tau design").at_row;
            score(out, b, d.row(i), (1.0 - r) * (row.rd() - self.ev.tau_raw(i, params.tau)));
        }
        if let Some(b) = self.theta {
            let d = self.ev.theta.as_ref().expect("theta design");
            score(out, b, d.row(i), r * (row.ry() - d.dot(i, params.theta)));
        }

        let v = self.ev.row(i, &params);
        if let Some(eq) = self.eq {
            let k = self.gamma.len + self.eta.len;
            let g = &mut out[self.gamma.start..self.gamma.start + k];
            self.ev.g_row(i, params.gamma, g);
            let resid = self.ev.effect_residual(i, eq, &v, q);
            g.iter_mut().for_each(|x| *x *= resid);
        }
        if let Some(j) = self.delta {
            let (a, b) = delta_parts(self.kind, row, &v, q).expect("affine estimator");
            out[j] = a - b * zeta[j];
        }
    }
}

/// Sandwich standard error of `result` from the full stacked system, so
/// that first-stage estimation of every working model is propagated.
pub fn sandwich_se(sample: &FusedSample, result: &EstimateResult) -> Result<f64> {
    let stack = EstimatorStack::new(sample, result)?;
    let s = stack.sandwich()?;
    let se = s.target_se();
    if !se.is_finite() {
        return Err(Error::SingularBread);
    }
    Ok(se)
}
