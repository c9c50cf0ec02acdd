//! Standard errors and confidence intervals: stacked M-estimation sandwich,
//! nonparametric bootstrap and Wald intervals.

mod bootstrap;
mod normal;
mod sandwich;

pub use bootstrap::{bootstrap, resample, BootstrapOptions, BootstrapResult, MAX_FAILURE_SHARE};
pub(crate) use bootstrap::sample_sd;
pub use normal::{normal_cdf, normal_quantile};
pub use sandwich::{sandwich, SandwichResult, StackedSystem};

use crate::error::{Error, Result};

/// `delta_hat -/+ z_{(1+level)/2} se`.
pub fn wald_ci(delta_hat: f64, se: f64, level: f64) -> Result<(f64, f64)> {
    if !(se >= 0.0) || !se.is_finite() {
        return Err(Error::InvalidArgument(format!("standard error must be finite and >= 0, got {se}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("level {level} not in (0, 1)")));
    }
    let z = normal_quantile((1.0 + level) / 2.0);
    Ok((delta_hat - z * se, delta_hat + z * se))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wald_intervals() {
        let (lo, hi) = wald_ci(0.0, 1.0, 0.95).unwrap();
        assert!((lo + 1.959964).abs() < 1e-6 && (hi - 1.959964).abs() < 1e-6);
        assert_eq!(wald_ci(2.0, 0.0, 0.9).unwrap(), (2.0, 2.0));
        assert!(wald_ci(0.0, -1.0, 0.95).is_err());
        assert!(wald_ci(0.0, 1.0, 1.0).is_err());
    }
}
