use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A system of stacked estimating equations `E_n{m(O_i; zeta)} = 0`.
///
/// Implementations provide the per-row estimating function; the sandwich
/// differentiates the mean numerically.
pub trait StackedSystem: Sync {
    fn n(&self) -> usize;

    /// Dimension of `zeta` and of `m`.
    fn dim(&self) -> usize;

    /// Writes `m(O_i; zeta)` into `out`.
    fn moment(&self, i: usize, zeta: &[f64], out: &mut [f64]);

    /// Position of the target parameter within `zeta`.
    fn target(&self) -> usize;

    fn mean_moment(&self, zeta: &[f64]) -> Vec<f64> {
        let k = self.dim();
        let mut acc = vec![0.0; k];
        let mut m = vec![0.0; k];
        for i in 0..self.n() {
            self.moment(i, zeta, &mut m);
            for (a, v) in acc.iter_mut().zip(&m) {
                *a += v;
            }
        }
        let n = self.n() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }
}

#[derive(Debug, Clone)]
pub struct SandwichResult {
    /// `A = d E_n{m} / d zeta`.
    pub bread: DMatrix<f64>,
    /// `B = E_n{m m'}`.
    pub meat: DMatrix<f64>,
    /// `A^{-1} B A^{-T} / n`.
    pub covariance: DMatrix<f64>,
    pub target: usize,
    /// Max-norm of the mean moment at the supplied `zeta`.
    pub moment_norm: f64,
}

impl SandwichResult {
    pub fn se(&self, j: usize) -> f64 {
        self.covariance[(j, j)].max(0.0).sqrt()
    }

    /// Standard error of the target parameter.
    pub fn target_se(&self) -> f64 {
        self.se(self.target)
    }
}

/// Sandwich covariance of the solution `zeta_hat` of a stacked system.
///
/// The bread is a central finite difference with step
/// `1e-6 * max(1, |zeta_j|)`.
pub fn sandwich<S: StackedSystem + ?Sized>(system: &S, zeta_hat: &[f64]) -> Result<SandwichResult> {
    let k = system.dim();
    let n = system.n();
    if zeta_hat.len() != k {
        return Err(Error::InvalidArgument(format!(
            "zeta has length {}, system dimension is {k}",
            zeta_hat.len()
        )));
    }
    if n < 2 {
        return Err(Error::InvalidArgument("sandwich needs at least two rows".into()));
    }
    let centre = system.mean_moment(zeta_hat);
    let moment_norm = centre.iter().fold(0.0_f64, |m, v| m.max(v.abs()));

    let mut bread = DMatrix::zeros(k, k);
    let mut zeta = zeta_hat.to_vec();
    for j in 0..k {
        let step = 1e-6 * zeta_hat[j].abs().max(1.0);
        zeta[j] = zeta_hat[j] + step;
        let plus = system.mean_moment(&zeta);
        zeta[j] = zeta_hat[j] - step;
        let minus = system.mean_moment(&zeta);
        zeta[j] = zeta_hat[j];
        for r in 0..k {
            bread[(r, j)] = (plus[r] - minus[r]) / (2.0 * step);
        }
    }

    let mut meat = DMatrix::zeros(k, k);
    let mut m = vec![0.0; k];
    for i in 0..n {
        system.moment(i, zeta_hat, &mut m);
        let v = DVector::from_column_slice(&m);
        meat.syger(1.0, &v, &v, 1.0);
    }
    meat /= n as f64;
    meat.fill_upper_triangle_with_lower_triangle();

    let inv = bread.clone().try_inverse().ok_or(Error::SingularBread)?;
    if inv.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularBread);
    }
    let mut covariance = &inv * &meat * inv.transpose() / n as f64;
    let sym = (&covariance + covariance.transpose()) * 0.5;
    covariance = sym;
    Ok(SandwichResult {
        bread,
        meat,
        covariance,
        target: system.target(),
        moment_norm,
    })
}
