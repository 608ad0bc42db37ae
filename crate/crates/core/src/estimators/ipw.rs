//! Inverse probability weighting.

use serde::{Deserialize, Serialize};

use super::effect::{ic_variance, ConfidenceInterval, Diagnostics, EffectEstimate, Method};
use super::models::{fit_observation_model, PropensityModel};
use super::{AnalysisSample, EstimationError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    HorvitzThompson,
    #[default]
    Hajek,
}

/// IPW estimate of ψ with an influence-curve Wald interval.
///
/// `ps` must be fitted on `sample` (same subjects, same order). When the
/// sample keeps unobserved subjects, weights are further divided by a
/// fitted `P(Δ = 1 | A, C)` bounded below by the lower truncation bound.
/// The variance treats the scores as known.
pub fn ipw(
    sample: &AnalysisSample,
    ps: &PropensityModel,
    weighting: Weighting,
    level: f64,
) -> Result<EffectEstimate, EstimationError> {
    let n = sample.len();
    if ps.scores.len() != n {
        return Err(EstimationError::InvalidArgument(format!(
            "propensity model has {} scores for {n} subjects",
            ps.scores.len()
        )));
    }
    if let Some(i) = ps.raw_scores.iter().position(|p| *p <= 0.0 || *p >= 1.0) {
        return Err(EstimationError::PositivityViolation(sample.ids[i].clone()));
    }
    if sample.arm_indices(true).is_empty() || sample.arm_indices(false).is_empty() {
        return Err(EstimationError::SingleArmSample);
    }
    let obs = fit_observation_model(sample, ps.bounds.0)?;

    // w1_i = A Δ / (g π), w0_i = (1 − A) Δ / ((1 − g) π)
    let mut w1 = vec![0.0; n];
    let mut w0 = vec![0.0; n];
    for i in 0..n {
        if !sample.observed[i] {
            continue;
        }
        let a = sample.treatment[i];
        let g = ps.scores[i];
        let pi = obs.at(i, a);
        if a == 1.0 {
            w1[i] = 1.0 / (g * pi);
        } else {
            w0[i] = 1.0 / ((1.0 - g) * pi);
        }
    }
    let s = &sample.weights;
    let y = &sample.outcome;
    let total: f64 = s.iter().sum();
    let sum = |f: &dyn Fn(usize) -> f64| (0..n).map(|i| s[i] * f(i)).sum::<f64>();

    let (psi, ic): (f64, Vec<f64>) = match weighting {
        Weighting::Hajek => {
            let (d1, d0) = (sum(&|i| w1[i]), sum(&|i| w0[i]));
            let mu1 = sum(&|i| w1[i] * y[i]) / d1;
            let mu0 = sum(&|i| w0[i] * y[i]) / d0;
            let ic = (0..n)
                .map(|i| w1[i] * (y[i] - mu1) * total / d1 - w0[i] * (y[i] - mu0) * total / d0)
                .collect();
            (mu1 - mu0, ic)
        }
        Weighting::HorvitzThompson => {
            let psi = sum(&|i| (w1[i] - w0[i]) * y[i]) / total;
            let ic = (0..n).map(|i| (w1[i] - w0[i]) * y[i] - psi).collect();
            (psi, ic)
        }
    };
    let variance = ic_variance(&ic, s);
    let mut diagnostics = Diagnostics { n_truncated: ps.n_truncated, notes: vec![] };
    if ps.n_truncated > 0 {
        diagnostics.notes.push(format!(
            "{} propensity scores truncated to [{}, {}]",
            ps.n_truncated, ps.bounds.0, ps.bounds.1
        ));
    }
    if sample.has_unobserved() {
        diagnostics.notes.push("weights include inverse probability of observation".into());
    }
    Ok(EffectEstimate {
        psi_hat: psi,
        method: match weighting {
            Weighting::Hajek => Method::IpwHajek,
            Weighting::HorvitzThompson => Method::IpwHorvitzThompson,
        },
        variance: Some(variance),
        ci: Some(ConfidenceInterval::wald(psi, variance.sqrt(), level)),
        influence: Some(ic),
        n_used: n,
        n_dropped: sample.n_dropped,
        diagnostics,
    })
}
