//! Estimation of average treatment effects from two fused samples linked by
//! a binary instrument: one sample records `(Y, Z, X)`, the other
//! `(D, Z, X)`.
//!
//! The crate covers working-model fitting ([`nuisance`]), the estimator
//! catalogue ([`estimators`]), sandwich and bootstrap inference
//! ([`inference`]) and a simulation harness with an exact finite-support
//! oracle ([`sim`]).

pub mod data;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod nuisance;
pub mod sim;

pub use data::{CovariateSource, FusedRow, FusedSample};
pub use error::{Error, Result};
pub use estimators::{EstimateResult, EstimatorKind};
