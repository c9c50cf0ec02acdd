use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{parse_formula, CovariateSource};
use crate::error::Error;
use crate::estimators::{ComponentSpec, ModelSpec};
use crate::nuisance::{HLink, IndexFunctions};

pub const LAMBDA_FORMULA: &str = "1 + x1 + x2 + x3";
pub const TAU_FORMULA: &str = "1 + z + x1 + x2 + x3";
pub const PI_FORMULA: &str = "1 + z + x1 + x2 + x3 + x1^2 + x2^2 + x3^2";
pub const H_FORMULA: &str = "1 + x1 + x2 + x3";
pub const OMEGA_FORMULA: &str = "1 + x1 + x2 + x3";
/// Flexible linear regression for `E(Y | Z, X, R = 1)`.
pub const THETA_FORMULA: &str =
    "1 + z + x1 + x2 + x3 + z*x1 + z*x2 + z*x3 + x1^2 + x2^2 + x3^2 + z*x1^2 + z*x2^2 + z*x3^2 + x1*x2 + x1*x3 + x2*x3";

/// The five misspecification scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScenarioId {
    M0,
    M1,
    M2,
    M3,
    M4,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 5] = [ScenarioId::M0, ScenarioId::M1, ScenarioId::M2, ScenarioId::M3, ScenarioId::M4];
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.trim().to_ascii_uppercase().trim_end_matches('\'') {
            "M0" => Ok(ScenarioId::M0),
            "M1" => Ok(ScenarioId::M1),
            "M2" => Ok(ScenarioId::M2),
            "M3" => Ok(ScenarioId::M3),
            "M4" => Ok(ScenarioId::M4),
            _ => Err(Error::InvalidArgument(format!("unknown scenario `{s}`"))),
        }
    }
}

/// Covariates each working model is fitted on. The outcome regression
/// `theta` follows `h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub id: ScenarioId,
    pub lambda: CovariateSource,
    pub tau: CovariateSource,
    pub pi: CovariateSource,
    pub h: CovariateSource,
    pub omega: CovariateSource,
}

impl ScenarioConfig {
    pub fn new(id: ScenarioId) -> Self {
        use CovariateSource::{Observed as O, Transformed as T};
        let (lambda, tau, pi, h, omega) = match id {
            ScenarioId::M0 => (O, O, O, O, O),
            ScenarioId::M1 => (O, O, T, T, T),
            ScenarioId::M2 => (T, O, T, O, O),
            ScenarioId::M3 => (T, T, O, O, O),
            ScenarioId::M4 => (T, T, T, T, T),
        };
        ScenarioConfig {
            id,
            lambda,
            tau,
            pi,
            h,
            omega,
        }
    }

    pub fn needs_transformed(&self) -> bool {
        [self.lambda, self.tau, self.pi, self.h, self.omega].contains(&CovariateSource::Transformed)
    }

    /// Working models with the default formulas and this scenario's sources.
    pub fn model_spec(&self) -> ModelSpec {
        let c = |f: &str, source| ComponentSpec {
            formula: parse_formula(f).expect("built-in formula"),
            source,
        };
        ModelSpec {
            pi: Some(c(PI_FORMULA, self.pi)),
            lambda: Some(c(LAMBDA_FORMULA, self.lambda)),
            tau: Some(c(TAU_FORMULA, self.tau)),
            theta: Some(c(THETA_FORMULA, self.h)),
            h: Some(c(H_FORMULA, self.h)),
            omega: Some(c(OMEGA_FORMULA, self.omega)),
            h_link: HLink::Identity,
            index: IndexFunctions::Gradient,
        }
    }
}

impl From<ScenarioId> for ScenarioConfig {
    fn from(id: ScenarioId) -> Self {
        ScenarioConfig::new(id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags() {
        use CovariateSource::{Observed as O, Transformed as T};
        let m2 = ScenarioConfig::new(ScenarioId::M2);
        assert_eq!((m2.lambda, m2.tau, m2.pi, m2.h, m2.omega), (T, O, T, O, O));
        assert!(!ScenarioConfig::new(ScenarioId::M0).needs_transformed());
        assert!(ScenarioConfig::new(ScenarioId::M4).needs_transformed());
        assert_eq!("m3'".parse::<ScenarioId>().unwrap(), ScenarioId::M3);
        let spec = ScenarioConfig::new(ScenarioId::M1).model_spec();
        assert_eq!(spec.theta.unwrap().source, T);
    }
}
