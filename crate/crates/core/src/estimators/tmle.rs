//! Targeted maximum likelihood estimation of the ATE.

use serde::{Deserialize, Serialize};

use super::effect::{ic_variance, weighted_mean, ConfidenceInterval, Diagnostics, EffectEstimate, Method};
use super::glm::{expit, logit};
use super::models::{
    fit_observation_model, fit_outcome_model_on, fit_propensity, OutcomeModel, OutcomeModelSpec, PropensityModel,
    PropensitySpec,
};
use super::{AnalysisSample, EstimationError};
use crate::data::OutcomeKind;

/// Initial predictions are bounded to `[Q_BOUND, 1 − Q_BOUND]` before the
/// logit fluctuation.
pub const Q_BOUND: f64 = 1e-6;
const SCORE_TOLERANCE: f64 = 1e-10;
const MAX_NEWTON: usize = 100;

/// Everything produced along the way to ψ̂, on the [0, 1] outcome scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TmleState {
    pub initial_q1: Vec<f64>,
    pub initial_q0: Vec<f64>,
    /// h(A_i, C_i), including the 1/π observation factor when Δ is weighted.
    pub clever: Vec<f64>,
    pub epsilon: f64,
    pub targeted_q1: Vec<f64>,
    pub targeted_q0: Vec<f64>,
    /// Propensity scores g(1, c_i) used in the clever covariate.
    pub g: Vec<f64>,
    /// Mean of Δ h (Y − Q*) at ε̂.
    pub score: f64,
    pub newton_iterations: usize,
    /// Affine map from the outcome scale to [0, 1]: y* = (y − shift) / scale.
    pub shift: f64,
    pub scale: f64,
}

/// Fits Q and g from their specifications, then targets.
pub fn tmle(
    sample: &AnalysisSample,
    q_spec: &OutcomeModelSpec,
    g_spec: &PropensitySpec,
    level: f64,
) -> Result<(EffectEstimate, TmleState), EstimationError> {
    let ps = fit_propensity(sample, g_spec)?;
    let (shift, scale) = outcome_scaling(sample);
    let y: Vec<f64> = sample.outcome.iter().map(|v| (v - shift) / scale).collect();
    let q = fit_outcome_model_on(sample, q_spec, &y)?;
    tmle_with_models(sample, &q, &ps, level)
}

fn outcome_scaling(sample: &AnalysisSample) -> (f64, f64) {
    if sample.outcome_kind == OutcomeKind::Binary {
        return (0.0, 1.0);
    }
    let obs = sample.outcome.iter().zip(&sample.observed).filter(|(_, o)| **o).map(|(y, _)| *y);
    let (lo, hi) = obs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), y| (lo.min(y), hi.max(y)));
    if hi > lo {
        (lo, hi - lo)
    } else {
        (lo, 1.0)
    }
}

/// Targets a supplied initial outcome model `q` (fitted on the [0, 1]
/// scale of [`tmle`]) with supplied scores `ps`.
pub fn tmle_with_models(
    sample: &AnalysisSample,
    q: &OutcomeModel,
    ps: &PropensityModel,
    level: f64,
) -> Result<(EffectEstimate, TmleState), EstimationError> {
    let n = sample.len();
    if ps.scores.len() != n {
        return Err(EstimationError::InvalidArgument(format!(
            "propensity model has {} scores for {n} subjects",
            ps.scores.len()
        )));
    }
    if sample.arm_indices(true).is_empty() || sample.arm_indices(false).is_empty() {
        return Err(EstimationError::SingleArmSample);
    }
    let (shift, scale) = outcome_scaling(sample);
    let y: Vec<f64> = sample.outcome.iter().map(|v| (v - shift) / scale).collect();
    let obs = fit_observation_model(sample, ps.bounds.0)?;
    let s = &sample.weights;
    let g = &ps.scores;

    let bound = |p: f64| p.clamp(Q_BOUND, 1.0 - Q_BOUND);
    let (raw1, raw0) = q.counterfactual_predictions(sample);
    let q1: Vec<f64> = raw1.into_iter().map(bound).collect();
    let q0: Vec<f64> = raw0.into_iter().map(bound).collect();
    let h1: Vec<f64> = (0..n).map(|i| 1.0 / (g[i] * obs.treated[i])).collect();
    let h0: Vec<f64> = (0..n).map(|i| -1.0 / ((1.0 - g[i]) * obs.control[i])).collect();
    let treated = |i: usize| sample.treatment[i] == 1.0;
    let clever: Vec<f64> = (0..n).map(|i| if treated(i) { h1[i] } else { h0[i] }).collect();
    let qa: Vec<f64> = (0..n).map(|i| if treated(i) { q1[i] } else { q0[i] }).collect();

    let observed_y = sample.observed.iter().zip(&y).filter(|(o, _)| **o).map(|(_, v)| *v);
    let degenerate = q.constant.is_some() && observed_y.clone().all(|v| v == q.constant.unwrap_or(f64::NAN));

    let total: f64 = s.iter().sum();
    let score_at = |eps: f64| -> (f64, f64) {
        let mut u = 0.0;
        let mut du = 0.0;
        for i in 0..n {
            if !sample.observed[i] {
                continue;
            }
            let p = expit(logit(qa[i]) + eps * clever[i]);
            u += s[i] * clever[i] * (y[i] - p);
            du -= s[i] * clever[i] * clever[i] * p * (1.0 - p);
        }
        (u / total, du / total)
    };

    let mut eps = 0.0;
    let mut iterations = 0;
    let (mut u, mut du) = if degenerate { (0.0, 0.0) } else { score_at(0.0) };
    while u.abs() > SCORE_TOLERANCE && !degenerate {
        if iterations == MAX_NEWTON || du == 0.0 {
            return Err(EstimationError::ModelFit(format!("fluctuation did not converge (score {u:e})")));
        }
        iterations += 1;
        let mut step = -u / du;
        loop {
            let (u_new, du_new) = score_at(eps + step);
            if u_new.abs() < u.abs() || step.abs() < 1e-14 {
                eps += step;
                u = u_new;
                du = du_new;
                break;
            }
            step /= 2.0;
        }
    }

    let fluctuate = |p: f64, h: f64| if eps == 0.0 { p } else { expit(logit(p) + eps * h) };
    let (t1, t0): (Vec<f64>, Vec<f64>) = if degenerate {
        (q1.clone(), q0.clone())
    } else {
        (0..n).map(|i| (fluctuate(q1[i], h1[i]), fluctuate(q0[i], h0[i]))).unzip()
    };
    let psi_star = if degenerate { 0.0 } else { weighted_mean((0..n).map(|i| t1[i] - t0[i]), s) };
    let ic: Vec<f64> = (0..n)
        .map(|i| {
            let resid = if sample.observed[i] {
                clever[i] * (y[i] - if treated(i) { t1[i] } else { t0[i] })
            } else {
                0.0
            };
            if degenerate {
                0.0
            } else {
                scale * (resid + t1[i] - t0[i] - psi_star)
            }
        })
        .collect();
    let psi = scale * psi_star;
    let variance = ic_variance(&ic, s);

    let mut diagnostics = Diagnostics { n_truncated: ps.n_truncated, notes: vec![] };
    if degenerate {
        diagnostics.notes.push("all observed outcomes identical; no targeting performed".into());
    }
    if sample.has_unobserved() {
        diagnostics.notes.push("clever covariate includes inverse probability of observation".into());
    }
    let estimate = EffectEstimate {
        psi_hat: psi,
        method: Method::Tmle,
        variance: Some(variance),
        ci: Some(ConfidenceInterval::wald(psi, variance.sqrt(), level)),
        influence: Some(ic),
        n_used: n,
        n_dropped: sample.n_dropped,
        diagnostics,
    };
    let state = TmleState {
        initial_q1: q1,
        initial_q0: q0,
        clever,
        epsilon: eps,
        targeted_q1: t1,
        targeted_q0: t0,
        g: g.clone(),
        score: u,
        newton_iterations: iterations,
        shift,
        scale,
    };
    Ok((estimate, state))
}
