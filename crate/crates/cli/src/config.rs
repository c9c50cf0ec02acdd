use std::fs;
use std::path::Path;

use fusion_iv::data::Formula;
use fusion_iv::estimators::{ComponentSpec, ModelSpec};
use fusion_iv::nuisance::HLink;
use fusion_iv::sim::{DgpParams, ScenarioId};
use fusion_iv::EstimatorKind;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Json,
    Tsv,
    Text,
}

/// Working-model formulas, all evaluated on the observed covariates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormulaSet {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi: Option<Formula>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Formula>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<Formula>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Formula>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<Formula>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<Formula>,
}

/// Configuration of `fusion-iv estimate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    pub formulas: FormulaSet,
    #[serde(default)]
    pub h_link: HLink,
    pub kinds: Vec<EstimatorKind>,
    /// Bootstrap replicates; 0 disables the bootstrap.
    #[serde(default)]
    pub bootstrap: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    pub seed: u64,
    #[serde(default)]
    pub format: OutputFormat,
}

fn default_level() -> f64 {
    0.95
}

impl EstimateConfig {
    pub fn model_spec(&self) -> ModelSpec {
        let c = |f: &Option<Formula>| f.clone().map(ComponentSpec::observed);
        let f = &self.formulas;
        ModelSpec {
            pi: c(&f.pi),
            lambda: c(&f.lambda),
            tau: c(&f.tau),
            theta: c(&f.theta),
            h: c(&f.h),
            omega: c(&f.omega),
            h_link: self.h_link,
            ..ModelSpec::default()
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.kinds.is_empty() {
            return Err(CliError::config("`kinds` must list at least one estimator"));
        }
        check_level(self.level)?;
        let spec = self.model_spec();
        for &k in &self.kinds {
            spec.validate(k)?;
        }
        Ok(())
    }
}

/// Configuration of `fusion-iv simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub scenarios: Vec<ScenarioId>,
    pub n: usize,
    pub reps: usize,
    pub kinds: Vec<EstimatorKind>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    /// Also report sandwich standard errors and Wald coverage.
    #[serde(default)]
    pub sandwich: bool,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub params: DgpParams,
    #[serde(default)]
    pub format: OutputFormat,
}

impl SimulateConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.scenarios.is_empty() {
            return Err(CliError::config("`scenarios` must not be empty"));
        }
        if self.kinds.is_empty() {
            return Err(CliError::config("`kinds` must list at least one estimator"));
        }
        if self.reps < 2 {
            return Err(CliError::config("`reps` must be at least 2"));
        }
        if self.n < 10 {
            return Err(CliError::config("`n` must be at least 10"));
        }
        if self.threads == Some(0) {
            return Err(CliError::config("`threads` must be positive"));
        }
        if self.format == OutputFormat::Tsv {
            return Err(CliError::config("simulate writes json or text"));
        }
        check_level(self.level)?;
        self.params.validate()?;
        Ok(())
    }
}

fn check_level(level: f64) -> Result<(), CliError> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(CliError::config(format!("`level` must lie in (0, 1), got {level}")))
    }
}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}
