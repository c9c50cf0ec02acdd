use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::nuisance::{EffectEquation, EffectSolver, OddsSource};

/// The estimator catalogue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Plug-in maximum likelihood.
    Mle,
    /// Instrument-density and propensity weighting; no outcome model.
    D1,
    /// Averages the effect curve fitted with the propensity equation.
    D2,
    /// Averages the effect curve fitted with the selection-weighted equation.
    D3,
    /// Multiply robust, locally efficient.
    Mul,
    /// Two-sample IV with a constant effect and equal `(Z, X)` laws.
    Tsiv,
    /// Two-sample two-stage least squares.
    Ts2sls,
    /// Doubly robust constant-effect estimator.
    Dr,
    /// Primary-sample average of the doubly robust effect curve.
    Dr2,
    /// Auxiliary-sample average of the doubly robust effect curve, for
    /// designs where the `r = 0` sample is the target population.
    Dr3,
}

/// Nuisance components an estimator needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Requirements {
    pub pi: bool,
    pub lambda: bool,
    pub tau: bool,
    pub theta: bool,
    pub h: bool,
    pub omega: bool,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 10] = [
        EstimatorKind::Mle,
        EstimatorKind::D1,
        EstimatorKind::D2,
        EstimatorKind::D3,
        EstimatorKind::Mul,
        EstimatorKind::Tsiv,
        EstimatorKind::Ts2sls,
        EstimatorKind::Dr,
        EstimatorKind::Dr2,
        EstimatorKind::Dr3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Mle => "mle",
            EstimatorKind::D1 => "d1",
            EstimatorKind::D2 => "d2",
            EstimatorKind::D3 => "d3",
            EstimatorKind::Mul => "mul",
            EstimatorKind::Tsiv => "tsiv",
            EstimatorKind::Ts2sls => "ts2sls",
            EstimatorKind::Dr => "dr",
            EstimatorKind::Dr2 => "dr2",
            EstimatorKind::Dr3 => "dr3",
        }
    }

    /// Working models whose formulas must be supplied.
    pub fn requirements(self) -> Requirements {
        let r = Requirements::default();
        match self {
            EstimatorKind::Mle => Requirements {
                pi: true,
                lambda: true,
                tau: true,
                theta: true,
                ..r
            },
            EstimatorKind::D1 => Requirements {
                lambda: true,
                tau: true,
                ..r
            },
            EstimatorKind::D2 => Requirements {
                tau: true,
                h: true,
                omega: true,
                ..r
            },
            EstimatorKind::D3 => Requirements {
                pi: true,
                h: true,
                omega: true,
                ..r
            },
            EstimatorKind::Mul => Requirements {
                pi: true,
                lambda: true,
                tau: true,
                h: true,
                omega: true,
                ..r
            },
            EstimatorKind::Tsiv => Requirements { omega: true, ..r },
            EstimatorKind::Ts2sls => Requirements {
                tau: true,
                omega: true,
                ..r
            },
            EstimatorKind::Dr => Requirements {
                tau: true,
                pi: true,
                omega: true,
                ..r
            },
            EstimatorKind::Dr2 | EstimatorKind::Dr3 => Requirements {
                tau: true,
                pi: true,
                h: true,
                omega: true,
                ..r
            },
        }
    }

    /// The `(gamma, eta)` equation this estimator solves, if any.
    pub fn effect_equation(self) -> Option<EffectEquation> {
        match self {
            EstimatorKind::Mle | EstimatorKind::D1 => None,
            EstimatorKind::D2 => Some(EffectEquation::M2),
            EstimatorKind::D3 => Some(EffectEquation::M3),
            EstimatorKind::Mul | EstimatorKind::Dr | EstimatorKind::Dr2 | EstimatorKind::Dr3 => {
                Some(EffectEquation::DR)
            }
            EstimatorKind::Tsiv => Some(EffectEquation {
                solver: EffectSolver::M3,
                odds: OddsSource::Constant,
            }),
            EstimatorKind::Ts2sls => Some(EffectEquation {
                solver: EffectSolver::Dr,
                odds: OddsSource::Constant,
            }),
        }
    }

    /// Whether the effect curve is the constant `H = Delta`, so that the
    /// estimate is the intercept of `gamma`.
    pub fn constant_effect(self) -> bool {
        matches!(self, EstimatorKind::Tsiv | EstimatorKind::Ts2sls | EstimatorKind::Dr)
    }

    /// Whether the estimator divides by `tau(1, x) - tau(0, x)`.
    pub fn uses_margin(self) -> bool {
        matches!(self, EstimatorKind::Mle | EstimatorKind::D1 | EstimatorKind::Mul)
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown estimator `{s}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for k in EstimatorKind::ALL {
            assert_eq!(k.name().parse::<EstimatorKind>().unwrap(), k);
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(json, format!("\"{}\"", k.name()));
        }
        assert!("d4".parse::<EstimatorKind>().is_err());
    }
}
