use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::{CovariateSource, DesignMatrix, Formula, FusedRow};
use crate::error::{Error, Result};

/// Fitted linear predictors beyond this put probabilities at 0 or 1 in
/// double precision, which only happens under (quasi-)separation.
const SEPARATION_ETA: f64 = 36.0;

/// Lower and upper bound applied to every logistic prediction.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Logit,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlmSettings {
    /// Convergence threshold on the max-norm of the mean score.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Any coefficient exceeding this magnitude is declared separation.
    pub separation_bound: f64,
}

impl Default for GlmSettings {
    fn default() -> Self {
        GlmSettings {
            tolerance: 1e-8,
            max_iterations: 100,
            separation_bound: 1e3,
        }
    }
}

/// A fitted logistic or linear working model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub formula: Formula,
    pub source: CovariateSource,
    pub link: Link,
    pub beta: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Max-norm of the mean score (or normal-equation residual) at `beta`.
    pub score_norm: f64,
}

impl GlmFit {
    /// Linear predictor at instrument `z` and covariates `x`.
    pub fn linear_predictor(&self, z: f64, x: &[f64]) -> f64 {
        self.formula
            .terms()
            .iter()
            .zip(&self.beta)
            .map(|(t, b)| t.eval(z, x) * b)
            .sum()
    }

    /// Mean response at `(z, x)`, without clamping.
    pub fn mean_at(&self, z: f64, x: &[f64]) -> f64 {
        let eta = self.linear_predictor(z, x);
        match self.link {
            Link::Logit => expit(eta),
            Link::Identity => eta,
        }
    }

    /// Mean response at a row, read from the model's covariate source.
    /// Logistic predictions are clamped into `[1e-12, 1 - 1e-12]`.
    pub fn predict_row(&self, row: &FusedRow) -> Result<f64> {
        let (z, x) = row.point(self.source)?;
        let m = self.mean_at(z, x);
        Ok(match self.link {
            Link::Logit => clamp_probability(m).0,
            Link::Identity => m,
        })
    }
}

#[inline]
pub fn expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Clamps a probability into `[1e-12, 1 - 1e-12]`; the flag reports whether
/// clamping was needed.
#[inline]
pub fn clamp_probability(p: f64) -> (f64, bool) {
    if p < PROB_CLAMP {
        (PROB_CLAMP, true)
    } else if p > 1.0 - PROB_CLAMP {
        (1.0 - PROB_CLAMP, true)
    } else {
        (p, false)
    }
}

/// `log(1 + exp(eta))` without overflow.
#[inline]
fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

fn subset_indices(n: usize, subset: Option<&[bool]>) -> Result<Vec<usize>> {
    let idx: Vec<usize> = match subset {
        Some(mask) => {
            if mask.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "subset mask has {} entries for {n} rows",
                    mask.len()
                )));
            }
            (0..n).filter(|&i| mask[i]).collect()
        }
        None => (0..n).collect(),
    };
    if idx.is_empty() {
        return Err(Error::InvalidArgument("empty fitting subset".into()));
    }
    Ok(idx)
}

fn formula_of(design: &DesignMatrix) -> Formula {
    Formula::new(design.labels().to_vec()).expect("design labels are a valid formula")
}

/// Cross-product `X'WX / m` over `idx`.
fn weighted_gram(design: &DesignMatrix, idx: &[usize], weight: impl Fn(usize) -> f64) -> DMatrix<f64> {
    let k = design.ncols();
    let mut g = DMatrix::zeros(k, k);
    for &i in idx {
        let row = design.row(i);
        let w = weight(i);
        for a in 0..k {
            let wa = w * row[a];
            for b in 0..=a {
                g[(a, b)] += wa * row[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            g[(b, a)] = g[(a, b)];
        }
    }
    g / idx.len() as f64
}

/// Rejects designs whose Gram matrix is numerically rank deficient.
fn full_rank(gram: &DMatrix<f64>) -> bool {
    let eig = SymmetricEigen::new(gram.clone());
    let max = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |m, v| m.min(*v));
    max > 0.0 && min > 1e-12 * max
}

struct LogisticState {
    loglik: f64,
    score: DVector<f64>,
}

fn logistic_state(design: &DesignMatrix, y: &[f64], idx: &[usize], beta: &[f64]) -> LogisticState {
    let k = design.ncols();
    let mut score = DVector::zeros(k);
    let mut loglik = 0.0;
    for &i in idx {
        let eta = design.dot(i, beta);
        loglik += y[i] * eta - softplus(eta);
        let resid = y[i] - expit(eta);
        for (s, x) in score.iter_mut().zip(design.row(i)) {
            *s += x * resid;
        }
    }
    let m = idx.len() as f64;
    LogisticState {
        loglik: loglik / m,
        score: score / m,
    }
}

/// Maximum-likelihood logistic regression by Newton–Raphson (IRLS) with
/// step halving.
///
/// Converges when the mean score has max-norm at most `settings.tolerance`.
/// A constant response, or any coefficient drifting past
/// `settings.separation_bound`, is reported as [`Error::Separation`].
pub fn fit_logistic(
    design: &DesignMatrix,
    response: &[f64],
    subset: Option<&[bool]>,
    settings: &GlmSettings,
) -> Result<GlmFit> {
    let n = design.nrows();
    if response.len() != n {
        return Err(Error::InvalidArgument("response length mismatch".into()));
    }
    let idx = subset_indices(n, subset)?;
    let first = response[idx[0]];
    if idx.iter().all(|&i| response[i] == first) {
        return Err(Error::Separation);
    }
    if !full_rank(&weighted_gram(design, &idx, |_| 1.0)) {
        return Err(Error::SingularInformation);
    }

    let k = design.ncols();
    let mut beta = vec![0.0; k];
    let mut state = logistic_state(design, response, &idx, &beta);
    let mut polished = false;
    for iter in 0..=settings.max_iterations {
        let norm = state.score.amax();
        // One extra Newton step past the tolerance costs little and brings
        // the coefficients to near machine precision.
        if norm <= settings.tolerance && (polished || norm == 0.0) {
            let (max_eta, max_resid) = idx.iter().fold((0.0_f64, 0.0_f64), |(e, r), &i| {
                let eta = design.dot(i, &beta);
                (e.max(eta.abs()), r.max((response[i] - expit(eta)).abs()))
            });
            // A perfect fit means the classes are separated.
            if max_eta > SEPARATION_ETA || max_resid < 1e-3 {
                return Err(Error::Separation);
            }
            return Ok(GlmFit {
                formula: formula_of(design),
                source: design.source(),
                link: Link::Logit,
                beta,
                converged: true,
                iterations: iter,
                score_norm: norm,
            });
        }
        if iter == settings.max_iterations {
            break;
        }
        let info = weighted_gram(design, &idx, |i| {
            let p = expit(design.dot(i, &beta));
            p * (1.0 - p)
        });
        let step = info
            .cholesky()
            .ok_or(Error::SingularInformation)?
            .solve(&state.score);

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect();
            let cand_state = logistic_state(design, response, &idx, &cand);
            if cand_state.loglik >= state.loglik - 1e-14 * (1.0 + state.loglik.abs()) {
                accepted = Some((cand, cand_state));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, cand_state)) = accepted else {
            if norm <= settings.tolerance {
                polished = true;
                continue;
            }
            break;
        };
        polished = norm <= settings.tolerance;
        if cand.iter().any(|b| !b.is_finite() || b.abs() > settings.separation_bound) {
            return Err(Error::Separation);
        }
        beta = cand;
        state = cand_state;
    }
    Err(Error::NotConverged {
        iterations: settings.max_iterations,
        score_norm: state.score.amax(),
    })
}

/// Ordinary least squares via the normal equations, with one round of
/// iterative refinement.
pub fn fit_linear(design: &DesignMatrix, response: &[f64], subset: Option<&[bool]>) -> Result<GlmFit> {
    let n = design.nrows();
    if response.len() != n {
        return Err(Error::InvalidArgument("response length mismatch".into()));
    }
    let idx = subset_indices(n, subset)?;
    let gram = weighted_gram(design, &idx, |_| 1.0);
    if !full_rank(&gram) {
        return Err(Error::SingularDesign);
    }
    let chol = gram.cholesky().ok_or(Error::SingularDesign)?;
    let m = idx.len() as f64;
    let cross = |beta: &DVector<f64>| {
        let mut xty = DVector::zeros(design.ncols());
        for &i in &idx {
            let e = response[i] - design.dot(i, beta.as_slice());
            for (s, x) in xty.iter_mut().zip(design.row(i)) {
                *s += x * e;
            }
        }
        xty / m
    };
    let mut beta = DVector::zeros(design.ncols());
    for _ in 0..2 {
        let r = cross(&beta);
        beta += chol.solve(&r);
    }
    let norm = cross(&beta).amax();
    Ok(GlmFit {
        formula: formula_of(design),
        source: design.source(),
        link: Link::Identity,
        beta: beta.as_slice().to_vec(),
        converged: true,
        iterations: 2,
        score_norm: norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_design, parse_formula, FusedRow, FusedSample};

    fn sample_with(xs: &[f64]) -> FusedSample {
        let mut rows: Vec<FusedRow> = xs
            .iter()
            .map(|&x| FusedRow::primary(0.0, 0, vec![x]))
            .collect();
        rows.push(FusedRow::auxiliary(0, 0, vec![0.0]));
        FusedSample::new(rows).unwrap()
    }

    fn design(formula: &str, s: &FusedSample) -> DesignMatrix {
        build_design(&parse_formula(formula).unwrap(), s, CovariateSource::Observed).unwrap()
    }

    #[test]
    fn intercept_only_matches_logit_of_mean() {
        let s = sample_with(&[0.0; 10]);
        let d = design("1", &s);
        let mut y = vec![0.0; 11];
        for v in y.iter_mut().take(7) {
            *v = 1.0;
        }
        let mask: Vec<bool> = (0..11).map(|i| i < 10).collect();
        let fit = fit_logistic(&d, &y, Some(&mask), &GlmSettings::default()).unwrap();
        assert!(fit.converged);
        assert!((fit.beta[0] - logit(0.7)).abs() < 1e-9);
        assert!((fit.beta[0] - 0.8473).abs() < 1e-4);
        assert!(fit.score_norm <= 1e-8);
    }

    #[test]
    fn constant_response_is_separation() {
        let s = sample_with(&[0.1, 0.2, 0.3]);
        let d = design("1 + x1", &s);
        let y = vec![1.0; 4];
        assert!(matches!(
            fit_logistic(&d, &y, None, &GlmSettings::default()),
            Err(Error::Separation)
        ));
    }

    #[test]
    fn perfectly_separated_data_is_separation() {
        let s = sample_with(&[0.1, 0.2, 0.3, 0.7, 0.8, 0.9]);
        let d = design("1 + x1", &s);
        let y = vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0];
        let mut mask = vec![true; 7];
        mask[6] = false;
        assert!(matches!(
            fit_logistic(&d, &y, Some(&mask), &GlmSettings::default()),
            Err(Error::Separation)
        ));
    }

    #[test]
    fn collinear_design_is_singular() {
        let s = sample_with(&[0.1, 0.2, 0.3, 0.4]);
        // x1 and x1 scaled identically is impossible through the grammar, so
        // build a rank-deficient design from a constant covariate.
        let s2 = FusedSample::new(
            s.rows()
                .iter()
                .map(|r| FusedRow { x: vec![1.0], ..r.clone() })
                .collect(),
        )
        .unwrap();
        let d = design("1 + x1", &s2);
        let y = vec![0.0, 1.0, 0.0, 1.0, 0.0];
        assert!(matches!(
            fit_logistic(&d, &y, None, &GlmSettings::default()),
            Err(Error::SingularInformation)
        ));
        assert!(matches!(fit_linear(&d, &y, None), Err(Error::SingularDesign)));
    }

    #[test]
    fn linear_recovers_exact_line() {
        let xs = [0.0, 0.5, 1.0, 2.0, 3.5];
        let s = sample_with(&xs);
        let d = design("1 + x1", &s);
        let mut y: Vec<f64> = xs.iter().map(|x| 2.0 + 3.0 * x).collect();
        y.push(100.0);
        let mut mask = vec![true; 6];
        mask[5] = false;
        let fit = fit_linear(&d, &y, Some(&mask)).unwrap();
        assert!((fit.beta[0] - 2.0).abs() < 1e-12);
        assert!((fit.beta[1] - 3.0).abs() < 1e-12);
        assert!(fit.score_norm <= 1e-10);
    }

    #[test]
    fn linear_constant_response() {
        let s = sample_with(&[0.1, 0.2, 0.3]);
        let d = design("1", &s);
        let fit = fit_linear(&d, &[4.25; 4], None).unwrap();
        assert!((fit.beta[0] - 4.25).abs() < 1e-14);
    }

    #[test]
    fn prediction_helpers() {
        assert_eq!(expit(0.0), 0.5);
        assert!((expit(-800.0)).abs() < 1e-300);
        assert_eq!(clamp_probability(0.0), (PROB_CLAMP, true));
        assert_eq!(clamp_probability(1.0), (1.0 - PROB_CLAMP, true));
        assert_eq!(clamp_probability(0.3), (0.3, false));
        let fit = GlmFit {
            formula: parse_formula("1 + x1").unwrap(),
            source: CovariateSource::Observed,
            link: Link::Logit,
            beta: vec![0.0, 0.0],
            converged: true,
            iterations: 0,
            score_norm: 0.0,
        };
        let row = FusedRow::primary(1.0, 1, vec![3.0]);
        assert_eq!(fit.predict_row(&row).unwrap(), 0.5);
    }
}
