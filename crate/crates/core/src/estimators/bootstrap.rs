//! Arm-stratified nonparametric bootstrap.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AnalysisSample, EstimationError};
use crate::rng;

pub const MIN_REPLICATES: usize = 100;

fn default_replicates() -> usize {
    1000
}

fn default_level() -> f64 {
    0.95
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    pub seed: u64,
}

impl BootstrapConfig {
    pub fn new(seed: u64) -> Self {
        BootstrapConfig { replicates: default_replicates(), level: default_level(), seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapInterval {
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    /// Successful replicate estimates, in attempt order.
    pub replicates: Vec<f64>,
    /// Attempts that failed and were redrawn.
    pub failures: usize,
}

/// Linear-interpolation quantile of sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile interval of `estimator` over resamples drawn within each arm.
///
/// Attempt `j` draws from stream `j` of `cfg.seed`; the first `B`
/// successful attempts are kept. Attempts run in parallel but the result
/// depends only on the seed.
pub fn bootstrap_ci<F>(sample: &AnalysisSample, cfg: &BootstrapConfig, estimator: F) -> Result<BootstrapInterval, EstimationError>
where
    F: Fn(&AnalysisSample) -> Result<f64, EstimationError> + Sync,
{
    let b = cfg.replicates;
    if b < MIN_REPLICATES {
        return Err(EstimationError::TooFewReplicates(b));
    }
    if !(cfg.level > 0.0 && cfg.level < 1.0) {
        return Err(EstimationError::InvalidArgument(format!("level {}", cfg.level)));
    }
    let arms = [sample.arm_indices(true), sample.arm_indices(false)];
    let max_attempts = 10 * b;
    let mut estimates = Vec::with_capacity(b);
    let mut next = 0usize;
    while estimates.len() < b {
        if next >= max_attempts {
            return Err(EstimationError::BootstrapExhausted { attempts: next, successes: estimates.len() });
        }
        let batch = (b - estimates.len()).min(max_attempts - next);
        let results: Vec<Result<f64, EstimationError>> = (next..next + batch)
            .into_par_iter()
            .map(|j| {
                let mut r = rng::stream(cfg.seed, j as u64);
                let mut idx = Vec::with_capacity(sample.len());
                for arm in &arms {
                    for _ in 0..arm.len() {
                        idx.push(arm[r.random_range(0..arm.len())]);
                    }
                }
                estimator(&sample.select(&idx))
            })
            .collect();
        next += batch;
        estimates.extend(results.into_iter().filter_map(Result::ok).filter(|v| v.is_finite()));
        estimates.truncate(b);
    }
    let mut sorted = estimates.clone();
    sorted.sort_by(f64::total_cmp);
    let alpha = 1.0 - cfg.level;
    Ok(BootstrapInterval {
        lo: percentile(&sorted, alpha / 2.0),
        hi: percentile(&sorted, 1.0 - alpha / 2.0),
        level: cfg.level,
        replicates: estimates,
        failures: next - b,
    })
}
