use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{FusedRow, FusedSample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub replicates: usize,
    pub seed: u64,
    pub level: f64,
    /// Resample primary and auxiliary rows separately, keeping `n_p` fixed.
    pub stratified: bool,
}

impl BootstrapOptions {
    pub fn new(replicates: usize, seed: u64) -> Self {
        BootstrapOptions {
            replicates,
            seed,
            level: 0.95,
            stratified: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub replicates: usize,
    /// Estimates of the successful replicates, in replicate order.
    pub estimates: Vec<f64>,
    pub failures: usize,
    pub se_boot: f64,
    pub percentile_ci: (f64, f64),
    pub level: f64,
}

/// Largest tolerated share of failed replicates.
pub const MAX_FAILURE_SHARE: f64 = 0.05;

/// Draws one bootstrap resample; the RNG is fully determined by
/// `(seed, replicate)`.
pub fn resample(sample: &FusedSample, seed: u64, replicate: u64, stratified: bool) -> Result<FusedSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    let rows = sample.rows();
    let n = rows.len();
    let picked: Vec<FusedRow> = if stratified {
        let (prim, aux): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| rows[i].is_primary());
        let mut out = Vec::with_capacity(n);
        for group in [&prim, &aux] {
            for _ in 0..group.len() {
                out.push(rows[group[rng.random_range(0..group.len())]].clone());
            }
        }
        out
    } else {
        (0..n).map(|_| rows[rng.random_range(0..n)].clone()).collect()
    };
    FusedSample::new(picked)
}

/// Linear-interpolation sample quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub(crate) fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Nonparametric bootstrap of `recipe`, which must re-fit every nuisance
/// model on the resample it is handed.
///
/// Replicates run on the current rayon pool; results are identical for any
/// pool size.
pub fn bootstrap<F>(sample: &FusedSample, recipe: F, opts: &BootstrapOptions) -> Result<BootstrapResult>
where
    F: Fn(&FusedSample) -> Result<f64> + Sync,
{
    if opts.replicates < 50 {
        return Err(Error::InvalidArgument(format!(
            "bootstrap needs at least 50 replicates, got {}",
            opts.replicates
        )));
    }
    if !(opts.level > 0.0 && opts.level < 1.0) {
        return Err(Error::InvalidArgument(format!("level {} not in (0, 1)", opts.level)));
    }
    let outcomes: Vec<Option<f64>> = (0..opts.replicates as u64)
        .into_par_iter()
        .map(|b| {
            resample(sample, opts.seed, b, opts.stratified)
                .and_then(|s| recipe(&s))
                .ok()
                .filter(|v| v.is_finite())
        })
        .collect();
    let estimates: Vec<f64> = outcomes.iter().flatten().copied().collect();
    let failures = opts.replicates - estimates.len();
    if failures as f64 > MAX_FAILURE_SHARE * opts.replicates as f64 {
        return Err(Error::TooManyFailures {
            failures,
            total: opts.replicates,
        });
    }
    let mut sorted = estimates.clone();
    sorted.sort_by(f64::total_cmp);
    let alpha = (1.0 - opts.level) / 2.0;
    Ok(BootstrapResult {
        replicates: opts.replicates,
        se_boot: sample_sd(&estimates),
        percentile_ci: (quantile_sorted(&sorted, alpha), quantile_sorted(&sorted, 1.0 - alpha)),
        estimates,
        failures,
        level: opts.level,
    })
}
