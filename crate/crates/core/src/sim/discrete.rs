use serde::{Deserialize, Serialize};

use crate::data::FusedRow;
use crate::error::{Error, Result};
use crate::estimators::efficient_influence_values;
use crate::nuisance::RowValues;

/// A fused-data law with finite support, for exact enumeration.
///
/// In the primary population `(X, U)` has joint law `p_xu`, `Z | X` is
/// Bernoulli(`lambda1[x]`) independently of `U`,
/// `E(D | Z, X, U) = g0 + g1 Z` and `E(Y | D, X, U) = h0 + h1 D` with
/// additive noise of variance `y_noise_var`. The auxiliary law of `(Z, X)`
/// follows from the sampling score `pi` by Bayes' rule, and `D` there has
/// the same conditional mean `tau(Z, X)` as in the primary population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDgp {
    /// Support of the scalar covariate.
    pub xs: Vec<f64>,
    /// `pr(X = xs[i], U = u_j | R = 1)`.
    pub p_xu: Vec<Vec<f64>>,
    /// `pr(Z = 1 | X = xs[i], R = 1)`.
    pub lambda1: Vec<f64>,
    pub g0: Vec<Vec<f64>>,
    pub g1: Vec<Vec<f64>>,
    pub h0: Vec<Vec<f64>>,
    pub h1: Vec<Vec<f64>>,
    /// `pr(R = 1 | Z = z, X = xs[i])`, indexed `[i][z]`.
    pub pi: Vec<[f64; 2]>,
    pub y_noise_var: f64,
}

/// Exact population quantities of a [`DiscreteDgp`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleValues {
    pub q: f64,
    /// `E(h1 | R = 1)`.
    pub delta: f64,
    /// The Wald-type identifying functional
    /// `E{(R/q)(-1)^{1-Z} Y / (lambda(Z|X)[tau(1,X) - tau(0,X)])}`.
    pub functional: f64,
    /// `functional - delta`.
    pub discrepancy: f64,
    /// `E{(-1)^{1-Z} Z cov(g1, h1 | X) / (lambda(Z|X)[tau(1,X) - tau(0,X)]) | R = 1}`.
    pub covariance_term: f64,
    /// `E{mu_eff(O; functional)}` under the fused law.
    pub mean_mu_eff: f64,
    /// `E{mu_eff(O; functional)^2}`, the variance bound.
    pub mean_mu_eff_sq: f64,
    /// Largest gap between `E(Y | Z, X, R = 1)` and `H tau + omega`.
    pub decomposition_max_error: f64,
}

fn sign(z: usize) -> f64 {
    if z == 1 {
        1.0
    } else {
        -1.0
    }
}

impl DiscreteDgp {
    fn nx(&self) -> usize {
        self.xs.len()
    }

    pub fn validate(&self) -> Result<()> {
        let nx = self.nx();
        let bad = |m: &str| Err(Error::InvalidArgument(format!("discrete law: {m}")));
        if nx == 0 || self.p_xu.len() != nx || self.lambda1.len() != nx || self.pi.len() != nx {
            return bad("tables must have one row per support point of X");
        }
        let nu = self.p_xu[0].len();
        for t in [&self.p_xu, &self.g0, &self.g1, &self.h0, &self.h1] {
            if t.len() != nx || t.iter().any(|r| r.len() != nu) {
                return bad("(X, U) tables must share one shape");
            }
        }
        let total: f64 = self.p_xu.iter().flatten().sum();
        if self.p_xu.iter().flatten().any(|p| *p < 0.0) || (total - 1.0).abs() > 1e-12 {
            return bad("pr(X, U | R = 1) must be a probability table");
        }
        for i in 0..nx {
            if self.p_x(i) <= 0.0 {
                return bad("every support point of X needs positive mass");
            }
            if !(self.lambda1[i] > 0.0 && self.lambda1[i] < 1.0) {
                return Err(Error::AssumptionViolated(format!(
                    "instrument density is degenerate at x = {}",
                    self.xs[i]
                )));
            }
            if self.pi[i].iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
                return Err(Error::AssumptionViolated(format!(
                    "sampling score is degenerate at x = {}",
                    self.xs[i]
                )));
            }
            for j in 0..nu {
                for z in 0..2 {
                    let p = self.g0[i][j] + self.g1[i][j] * z as f64;
                    if !(0.0..=1.0).contains(&p) {
                        return bad("g0 + g1 z must be a probability");
                    }
                }
            }
            if self.margin(i).abs() < 1e-12 {
                return Err(Error::AssumptionViolated(format!(
                    "instrument is irrelevant at x = {}",
                    self.xs[i]
                )));
            }
        }
        Ok(())
    }

    fn p_x(&self, i: usize) -> f64 {
        self.p_xu[i].iter().sum()
    }

    /// `E{f(i, j) | X = xs[i], R = 1}`.
    fn cond_mean(&self, i: usize, f: impl Fn(usize) -> f64) -> f64 {
        let px = self.p_x(i);
        self.p_xu[i].iter().enumerate().map(|(j, p)| p * f(j)).sum::<f64>() / px
    }

    pub fn lambda(&self, z: usize, i: usize) -> f64 {
        if z == 1 {
            self.lambda1[i]
        } else {
            1.0 - self.lambda1[i]
        }
    }

    pub fn tau(&self, z: usize, i: usize) -> f64 {
        self.cond_mean(i, |j| self.g0[i][j] + self.g1[i][j] * z as f64)
    }

    fn margin(&self, i: usize) -> f64 {
        self.tau(1, i) - self.tau(0, i)
    }

    /// The effect curve of the outcome decomposition: the conditional Wald
    /// ratio `E(h1 g1 | X) / E(g1 | X)`.
    pub fn effect_curve(&self, i: usize) -> f64 {
        self.cond_mean(i, |j| self.h1[i][j] * self.g1[i][j]) / self.margin(i)
    }

    /// `omega(X) = E(h0 + h1 g0 | X) - H(X) E(g0 | X)`.
    pub fn omega(&self, i: usize) -> f64 {
        self.cond_mean(i, |j| self.h0[i][j] + self.h1[i][j] * self.g0[i][j])
            - self.effect_curve(i) * self.cond_mean(i, |j| self.g0[i][j])
    }

    /// `E(Y | Z = z, X = xs[i], R = 1)` by direct enumeration over `U`.
    pub fn outcome_mean(&self, z: usize, i: usize) -> f64 {
        self.cond_mean(i, |j| {
            self.h0[i][j] + self.h1[i][j] * (self.g0[i][j] + self.g1[i][j] * z as f64)
        })
    }

    /// `pr(R = 1)` implied by the primary law of `(Z, X)` and `pi`.
    pub fn q(&self) -> f64 {
        let odds_sum: f64 = (0..self.nx())
            .flat_map(|i| (0..2).map(move |z| (i, z)))
            .map(|(i, z)| self.p_x(i) * self.lambda(z, i) * (1.0 - self.pi[i][z]) / self.pi[i][z])
            .sum();
        1.0 / (1.0 + odds_sum)
    }

    /// `pr(Z = z, X = xs[i] | R = 0)`.
    pub fn aux_mass(&self, z: usize, i: usize) -> f64 {
        let q = self.q();
        self.p_x(i) * self.lambda(z, i) * (1.0 - self.pi[i][z]) / self.pi[i][z] * q / (1.0 - q)
    }

    /// Primary-population expectations
    /// `(E{s m(X) / (lambda_Z margin)}, E{s m(X) tau(Z, X) / (lambda_Z margin)}, E{m(X)})`
    /// with `s = (-1)^{1-Z}`.
    pub fn weighting_moments(&self, m: impl Fn(f64) -> f64) -> Result<(f64, f64, f64)> {
        self.validate()?;
        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        for i in 0..self.nx() {
            let px = self.p_x(i);
            let mx = m(self.xs[i]);
            c += px * mx;
            for z in 0..2 {
                let w = px * self.lambda(z, i) * sign(z) * mx / (self.lambda(z, i) * self.margin(i));
                a += w;
                b += w * self.tau(z, i);
            }
        }
        Ok((a, b, c))
    }

    fn row_values(&self, z: usize, i: usize) -> RowValues {
        RowValues {
            lambda1: self.lambda1[i],
            lambda_z: self.lambda(z, i),
            tau_z: self.tau(z, i),
            tau1: self.tau(1, i),
            tau0: self.tau(0, i),
            pi: self.pi[i][z],
            theta: self.outcome_mean(z, i),
            h: self.effect_curve(i),
            omega: self.omega(i),
            clamped: 0,
        }
    }
}

/// Exact values of the identification and efficiency quantities by full
/// enumeration of the finite support. The outcome enters linearly except
/// in the second moment, where its noise variance is added explicitly.
pub fn discrete_oracle(dgp: &DiscreteDgp) -> Result<OracleValues> {
    dgp.validate()?;
    let nx = dgp.nx();
    let q = dgp.q();

    let mut delta = 0.0;
    let mut functional = 0.0;
    let mut covariance_term = 0.0;
    let mut decomposition_max_error = 0.0_f64;
    for i in 0..nx {
        let px = dgp.p_x(i);
        let h1 = dgp.cond_mean(i, |j| dgp.h1[i][j]);
        let g1 = dgp.cond_mean(i, |j| dgp.g1[i][j]);
        let cov = dgp.cond_mean(i, |j| dgp.h1[i][j] * dgp.g1[i][j]) - h1 * g1;
        delta += px * h1;
        for z in 0..2 {
            let lz = dgp.lambda(z, i);
            let weight = px * lz * sign(z) / (lz * dgp.margin(i));
            functional += weight * dgp.outcome_mean(z, i);
            covariance_term += weight * z as f64 * cov;
            let decomposed = dgp.effect_curve(i) * dgp.tau(z, i) + dgp.omega(i);
            decomposition_max_error = decomposition_max_error.max((dgp.outcome_mean(z, i) - decomposed).abs());
        }
    }

    let target = functional;
    let (mut mean_mu, mut mean_sq) = (0.0, 0.0);
    let x_row = |i: usize| vec![dgp.xs[i]];
    for i in 0..nx {
        for z in 0..2 {
            let v = dgp.row_values(z, i);
            // Primary rows: enumerate U and D; Y enters through its mean.
            for j in 0..dgp.p_xu[i].len() {
                let pz = dgp.p_xu[i][j] * dgp.lambda(z, i);
                let pd1 = dgp.g0[i][j] + dgp.g1[i][j] * z as f64;
                for (d, pd) in [(0.0, 1.0 - pd1), (1.0, pd1)] {
                    let p = q * pz * pd;
                    if p == 0.0 {
                        continue;
                    }
                    let y = dgp.h0[i][j] + dgp.h1[i][j] * d;
                    let row = FusedRow::primary(y, z as u8, x_row(i));
                    let mu = efficient_influence_values(&row, &v, target, q);
                    let y_coef = sign(z) / (q * v.lambda_z * v.margin());
                    mean_mu += p * mu;
                    mean_sq += p * (mu * mu + y_coef * y_coef * dgp.y_noise_var);
                }
            }
            let pa = (1.0 - q) * dgp.aux_mass(z, i);
            for (d, pd) in [(0u8, 1.0 - v.tau_z), (1u8, v.tau_z)] {
                let row = FusedRow::auxiliary(d, z as u8, x_row(i));
                let mu = efficient_influence_values(&row, &v, target, q);
                mean_mu += pa * pd * mu;
                mean_sq += pa * pd * mu * mu;
            }
        }
    }

    Ok(OracleValues {
        q,
        delta,
        functional,
        discrepancy: functional - delta,
        covariance_term,
        mean_mu_eff: mean_mu,
        mean_mu_eff_sq: mean_sq,
        decomposition_max_error,
    })
}
