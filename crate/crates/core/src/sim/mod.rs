//! Simulation harness: the data-generating process with a latent
//! confounder, misspecification transforms, the five working-model
//! scenarios, a seeded parallel Monte Carlo driver and an exact oracle for
//! finite-support laws.

mod dgp;
mod discrete;
mod monte_carlo;
mod scenario;

pub use dgp::{gen_fused, misspecify, sample_truncnorm, CovariateLaw, DgpParams, FusionLayout, Generated, HiddenTruth};
pub use discrete::{discrete_oracle, DiscreteDgp, OracleValues};
pub use monte_carlo::{
    metrics, render_table, run_scenario, simulate_replicate, EstimatorSummary, Metrics, MonteCarloConfig,
    MonteCarloReport, ReplicateOutcome, MAX_REPLICATE_FAILURE_SHARE,
};
pub use scenario::{
    ScenarioConfig, ScenarioId, H_FORMULA, LAMBDA_FORMULA, OMEGA_FORMULA, PI_FORMULA, TAU_FORMULA, THETA_FORMULA,
};
