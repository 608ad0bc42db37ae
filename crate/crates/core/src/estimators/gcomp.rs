//! G-computation: standardize the fitted outcome regression over the
//! empirical covariate distribution.

use super::bootstrap::{bootstrap_ci, BootstrapConfig};
use super::effect::{weighted_mean, ConfidenceInterval, Diagnostics, EffectEstimate, Method};
use super::models::{fit_outcome_model, OutcomeModelSpec};
use super::{AnalysisSample, EstimationError};

fn point(sample: &AnalysisSample, spec: &OutcomeModelSpec) -> Result<f64, EstimationError> {
    let q = fit_outcome_model(sample, spec)?;
    let (q1, q0) = q.counterfactual_predictions(sample);
    Ok(weighted_mean(q1.iter().zip(&q0).map(|(a, b)| a - b), &sample.weights))
}

/// Point estimate only; `variance` and `ci` are `None`.
pub fn g_computation(sample: &AnalysisSample, spec: &OutcomeModelSpec) -> Result<EffectEstimate, EstimationError> {
    let psi = point(sample, spec)?;
    Ok(EffectEstimate {
        psi_hat: psi,
        method: Method::GComputation,
        variance: None,
        ci: None,
        influence: None,
        n_used: sample.len(),
        n_dropped: sample.n_dropped,
        diagnostics: Diagnostics::default(),
    })
}

/// G-computation with a percentile bootstrap interval. The variance is the
/// bootstrap variance. If the percentile interval misses the point estimate
/// (possible for skewed replicate distributions) it is extended to include
/// it, and a note is recorded.
pub fn g_computation_bootstrap(
    sample: &AnalysisSample,
    spec: &OutcomeModelSpec,
    cfg: &BootstrapConfig,
) -> Result<EffectEstimate, EstimationError> {
    let mut est = g_computation(sample, spec)?;
    let boot = bootstrap_ci(sample, cfg, |s| point(s, spec))?;
    let n = boot.replicates.len() as f64;
    let mean = boot.replicates.iter().sum::<f64>() / n;
    est.variance = Some(boot.replicates.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0));
    let (lo, hi) = (boot.lo.min(est.psi_hat), boot.hi.max(est.psi_hat));
    if lo != boot.lo || hi != boot.hi {
        est.diagnostics.notes.push("percentile interval extended to contain the point estimate".into());
    }
    if boot.failures > 0 {
        est.diagnostics.notes.push(format!("{} bootstrap resamples failed and were redrawn", boot.failures));
    }
    est.ci = Some(ConfidenceInterval { lo, hi, level: boot.level });
    Ok(est)
}
