use std::fmt::Write as _;

use fusion_iv::{EstimateResult, EstimatorKind, FusedSample};
use serde::{Deserialize, Serialize};

/// One estimator's line of the application report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub estimator: EstimatorKind,
    pub estimate: f64,
    pub se: Option<f64>,
    pub se_boot: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub boot_ci_lo: Option<f64>,
    pub boot_ci_hi: Option<f64>,
    pub min_instrument_margin: Option<f64>,
    pub clamp_count: usize,
}

impl From<&EstimateResult> for EstimateRow {
    fn from(r: &EstimateResult) -> Self {
        EstimateRow {
            estimator: r.kind,
            estimate: r.delta_hat,
            se: r.se_sandwich,
            se_boot: r.se_boot,
            ci_lo: r.ci.map(|c| c.lo),
            ci_hi: r.ci.map(|c| c.hi),
            boot_ci_lo: r.ci_boot.map(|c| c.lo),
            boot_ci_hi: r.ci_boot.map(|c| c.hi),
            min_instrument_margin: r.diagnostics.min_instrument_margin,
            clamp_count: r.diagnostics.clamp_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub n: usize,
    pub n_primary: usize,
    pub n_auxiliary: usize,
    pub q_hat: f64,
    pub level: f64,
    pub bootstrap_replicates: usize,
    pub rows: Vec<EstimateRow>,
}

impl EstimateReport {
    pub fn new(sample: &FusedSample, level: f64, bootstrap_replicates: usize, results: &[EstimateResult]) -> Self {
        EstimateReport {
            n: sample.n(),
            n_primary: sample.n_primary(),
            n_auxiliary: sample.n_auxiliary(),
            q_hat: sample.q_hat(),
            level,
            bootstrap_replicates,
            rows: results.iter().map(EstimateRow::from).collect(),
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from(
            "estimator\testimate\tse\tse_boot\tci_lo\tci_hi\tboot_ci_lo\tboot_ci_hi\tmin_instrument_margin\tclamp_count\n",
        );
        let opt = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v}"));
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.estimator,
                r.estimate,
                opt(r.se),
                opt(r.se_boot),
                opt(r.ci_lo),
                opt(r.ci_hi),
                opt(r.boot_ci_lo),
                opt(r.boot_ci_hi),
                opt(r.min_instrument_margin),
                r.clamp_count
            );
        }
        out
    }

    /// Fixed-width table: point estimate, standard errors and Wald
    /// interval per estimator, then diagnostics.
    pub fn to_text(&self) -> String {
        let pct = (self.level * 100.0).round();
        let mut out = String::new();
        let _ = writeln!(
            out,
            "n = {} ({} primary, {} auxiliary), q = {:.4}",
            self.n, self.n_primary, self.n_auxiliary, self.q_hat
        );
        let _ = writeln!(
            out,
            "{:<10}{:>12}{:>12}{:>12}{:>24}",
            "Estimator",
            "Estimate",
            "SE",
            "Boot SE",
            format!("{pct}% Wald CI")
        );
        let num = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        for r in &self.rows {
            let ci = match (r.ci_lo, r.ci_hi) {
                (Some(lo), Some(hi)) => format!("({lo:.4}, {hi:.4})"),
                _ => "-".to_string(),
            };
            let _ = writeln!(
                out,
                "{:<10}{:>12.4}{:>12}{:>12}{:>24}",
                r.estimator.name(),
                r.estimate,
                num(r.se),
                num(r.se_boot),
                ci
            );
        }
        out.push_str("Diagnostics\n");
        for r in &self.rows {
            let margin = r.min_instrument_margin.map_or_else(|| "-".to_string(), |m| format!("{m:.4}"));
            let _ = writeln!(
                out,
                "{:<10}min |tau(1,x) - tau(0,x)| = {margin}, clamped probabilities = {}",
                r.estimator.name(),
                r.clamp_count
            );
        }
        out
    }
}
