//! Causal-gap sweeps and E-values.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::estimators::EffectEstimate;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensitivityError {
    #[error("causal-gap grid is empty")]
    EmptyGrid,
    #[error("causal-gap grid must contain 0")]
    GridMissingZero,
    #[error("estimate has no confidence interval")]
    MissingInterval,
    #[error("risk ratio must be positive, got {0}")]
    NonpositiveRatio(f64),
    #[error("control arm has no events")]
    ZeroControlRate,
    #[error("invalid counts: {0}")]
    InvalidCounts(String),
}

/// Order in which bias models are layered when several are considered,
/// reversing the order in which the biases arise.
pub const BIAS_ANALYSIS_ORDER: [&str; 3] = ["confounding", "selection", "information"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub eta: f64,
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalGapGrid {
    pub rows: Vec<GapRow>,
    /// Signed gap of smallest magnitude at which the interval's relation
    /// to 0 changes; `None` when that gap lies outside the grid's range.
    pub tipping_eta: Option<f64>,
}

/// Sweeps η over `grid`, reading the causal gap as a bias correction:
/// every quantity is shifted to `x − η`.
pub fn causal_gap_sweep(est: &EffectEstimate, grid: &[f64]) -> Result<CausalGapGrid, SensitivityError> {
    let ci = est.ci.ok_or(SensitivityError::MissingInterval)?;
    causal_gap_sweep_bounds(est.psi_hat, ci.lo, ci.hi, grid)
}

pub fn causal_gap_sweep_bounds(psi: f64, lo: f64, hi: f64, grid: &[f64]) -> Result<CausalGapGrid, SensitivityError> {
    if grid.is_empty() {
        return Err(SensitivityError::EmptyGrid);
    }
    if !grid.contains(&0.0) {
        return Err(SensitivityError::GridMissingZero);
    }
    let rows = grid.iter().map(|&eta| GapRow { eta, estimate: psi - eta, lo: lo - eta, hi: hi - eta }).collect();
    // The shifted interval (lo − η, hi − η) excludes 0 from above iff η < lo
    // and from below iff η > hi.
    let tipping = if lo > 0.0 {
        lo
    } else if hi < 0.0 {
        hi
    } else if hi <= -lo {
        hi
    } else {
        lo
    };
    let min = grid.iter().copied().fold(f64::INFINITY, f64::min);
    let max = grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tipping_eta = (min <= tipping && tipping <= max).then_some(tipping);
    Ok(CausalGapGrid { rows, tipping_eta })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalueResult {
    /// The risk ratio after the reciprocal convention (≥ 1).
    pub rr_input: f64,
    pub evalue_point: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evalue_ci: Option<f64>,
}

fn evalue_closed_form(rr: f64) -> f64 {
    rr + (rr * (rr - 1.0)).sqrt()
}

/// E-value for a risk ratio and, optionally, for the confidence bound
/// closer to 1. The bound's E-value is 1 when it lies on the other side of
/// 1 from `rr` (the interval crosses the null).
pub fn e_value(rr: f64, ci_bound: Option<f64>) -> Result<EvalueResult, SensitivityError> {
    if !(rr > 0.0) || !rr.is_finite() {
        return Err(SensitivityError::NonpositiveRatio(rr));
    }
    let flip = rr < 1.0;
    let r = if flip { 1.0 / rr } else { rr };
    let evalue_ci = match ci_bound {
        None => None,
        Some(b) if !(b > 0.0) => return Err(SensitivityError::NonpositiveRatio(b)),
        Some(b) => {
            let b = if flip { 1.0 / b } else { b };
            Some(if b <= 1.0 { 1.0 } else { evalue_closed_form(b) })
        }
    };
    Ok(EvalueResult { rr_input: r, evalue_point: evalue_closed_form(r), evalue_ci })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskRatio {
    pub rr: f64,
    /// Wald interval on the log scale; absent when the treated arm has no
    /// events.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci: Option<(f64, f64)>,
    pub level: f64,
}

pub fn risk_ratio_from_arms(treated: (u64, u64), control: (u64, u64), level: f64) -> Result<RiskRatio, SensitivityError> {
    let ((x1, n1), (x0, n0)) = (treated, control);
    if n1 == 0 || n0 == 0 || x1 > n1 || x0 > n0 {
        return Err(SensitivityError::InvalidCounts(format!("{x1}/{n1} vs {x0}/{n0}")));
    }
    if x0 == 0 {
        return Err(SensitivityError::ZeroControlRate);
    }
    let rr = (x1 as f64 / n1 as f64) / (x0 as f64 / n0 as f64);
    let ci = (x1 > 0).then(|| {
        let se = (1.0 / x1 as f64 - 1.0 / n1 as f64 + 1.0 / x0 as f64 - 1.0 / n0 as f64).sqrt();
        let z = Normal::standard().inverse_cdf(0.5 + level / 2.0);
        ((rr.ln() - z * se).exp(), (rr.ln() + z * se).exp())
    });
    Ok(RiskRatio { rr, ci, level })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_identity_and_tipping() {
        let grid: Vec<f64> = (-50..=50).map(|k| k as f64 / 100.0).collect();
        let g = causal_gap_sweep_bounds(0.35, 0.15, 0.55, &grid).unwrap();
        let zero = g.rows.iter().find(|r| r.eta == 0.0).unwrap();
        assert_eq!((zero.estimate, zero.lo, zero.hi), (0.35, 0.15, 0.55));
        assert_eq!(g.tipping_eta, Some(0.15));
        assert_eq!(causal_gap_sweep_bounds(0.35, 0.15, 0.55, &[0.1]), Err(SensitivityError::GridMissingZero));
        assert_eq!(causal_gap_sweep_bounds(0.35, 0.15, 0.55, &[]), Err(SensitivityError::EmptyGrid));
        assert_eq!(causal_gap_sweep_bounds(0.35, 0.15, 0.55, &[0.0, 0.1]).unwrap().tipping_eta, None);
        assert_eq!(causal_gap_sweep_bounds(-0.3, -0.5, -0.1, &grid).unwrap().tipping_eta, Some(-0.1));
    }

    #[test]
    fn evalue_cases() {
        assert_eq!(e_value(1.0, None).unwrap().evalue_point, 1.0);
        let two = e_value(2.0, None).unwrap().evalue_point;
        assert!((two - (2.0 + 2f64.sqrt())).abs() < 1e-15);
        assert_eq!(e_value(0.5, None).unwrap().evalue_point, two);
        assert_eq!(e_value(2.0, Some(0.9)).unwrap().evalue_ci, Some(1.0));
        assert!(e_value(2.0, Some(1.5)).unwrap().evalue_ci.unwrap() > 1.0);
        assert_eq!(e_value(0.0, None), Err(SensitivityError::NonpositiveRatio(0.0)));
    }

    #[test]
    fn risk_ratio() {
        assert_eq!(risk_ratio_from_arms((30, 100), (15, 100), 0.95).unwrap().rr, 2.0);
        assert_eq!(risk_ratio_from_arms((10, 50), (10, 50), 0.95).unwrap().rr, 1.0);
        assert_eq!(risk_ratio_from_arms((3, 10), (0, 10), 0.95), Err(SensitivityError::ZeroControlRate));
        let ci = risk_ratio_from_arms((30, 100), (15, 100), 0.95).unwrap().ci.unwrap();
        assert!(ci.0 < 2.0 && 2.0 < ci.1);
    }
}
