//! Unadjusted comparisons and two-sample tests.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use super::effect::{ic_variance, weighted_mean, ConfidenceInterval, Diagnostics, EffectEstimate, Method};
use super::{AnalysisSample, EstimationError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    /// Degrees of freedom for t tests.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub df: Option<f64>,
}

/// Two-sided two-proportion z test with pooled variance. When the pooled
/// rate is 0 or 1 the statistic is 0 and p = 1.
pub fn two_proportion_z_test(x1: u64, n1: u64, x2: u64, n2: u64) -> Result<TestResult, EstimationError> {
    if n1 == 0 || n2 == 0 || x1 > n1 || x2 > n2 {
        return Err(EstimationError::InvalidCounts(format!("{x1}/{n1} vs {x2}/{n2}")));
    }
    let (p1, p2) = (x1 as f64 / n1 as f64, x2 as f64 / n2 as f64);
    let pooled = (x1 + x2) as f64 / (n1 + n2) as f64;
    let var = pooled * (1.0 - pooled) * (1.0 / n1 as f64 + 1.0 / n2 as f64);
    if var == 0.0 || p1 == p2 {
        return Ok(TestResult { statistic: 0.0, p_value: 1.0, df: None });
    }
    let z = (p1 - p2) / var.sqrt();
    Ok(TestResult { statistic: z, p_value: 2.0 * Normal::standard().sf(z.abs()), df: None })
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Two-sided Welch t test for a difference in means.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TestResult, EstimationError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(EstimationError::InsufficientData("t test needs two subjects per group".into()));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    if se2 == 0.0 {
        let p = if ma == mb { 1.0 } else { 0.0 };
        return Ok(TestResult { statistic: 0.0, p_value: p, df: None });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| EstimationError::InvalidArgument(e.to_string()))?;
    Ok(TestResult { statistic: t, p_value: 2.0 * dist.sf(t.abs()), df: Some(df) })
}

/// Wald interval from an estimate and its variance.
pub fn wald_interval(estimate: f64, variance: f64, level: f64) -> ConfidenceInterval {
    ConfidenceInterval::wald(estimate, variance.sqrt(), level)
}

/// Unadjusted difference in (weighted) arm means among observed subjects.
pub fn naive_difference(sample: &AnalysisSample, level: f64) -> Result<EffectEstimate, EstimationError> {
    let arm = |treated: bool| -> Vec<usize> {
        sample.arm_indices(treated).into_iter().filter(|&i| sample.observed[i]).collect()
    };
    let (t, c) = (arm(true), arm(false));
    if t.is_empty() || c.is_empty() {
        return Err(EstimationError::SingleArmSample);
    }
    let stats = |idx: &[usize]| {
        let w: Vec<f64> = idx.iter().map(|&i| sample.weights[i]).collect();
        let m = weighted_mean(idx.iter().map(|&i| sample.outcome[i]), &w);
        let ic: Vec<f64> = idx.iter().map(|&i| sample.outcome[i] - m).collect();
        (m, ic_variance(&ic, &w))
    };
    let (m1, v1) = stats(&t);
    let (m0, v0) = stats(&c);
    let psi = m1 - m0;
    let variance = v1 + v0;
    Ok(EffectEstimate {
        psi_hat: psi,
        method: Method::Naive,
        variance: Some(variance),
        ci: Some(wald_interval(psi, variance, level)),
        influence: None,
        n_used: t.len() + c.len(),
        n_dropped: sample.n_dropped + (sample.len() - t.len() - c.len()),
        diagnostics: Diagnostics::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::OutcomeKind;

    #[test]
    fn z_test_oracle() {
        // internal 10/50 vs external 30/60
        let r = two_proportion_z_test(10, 50, 30, 60).unwrap();
        let p: f64 = 40.0 / 110.0;
        let z = (0.2 - 0.5) / (p * (1.0 - p) * (1.0 / 50.0 + 1.0 / 60.0)).sqrt();
        assert!((r.statistic - z).abs() < 1e-12);
        assert!(r.p_value < 0.002 && r.p_value > 0.0005, "{}", r.p_value);
        assert_eq!(two_proportion_z_test(5, 10, 10, 20).unwrap().p_value, 1.0);
        assert!(two_proportion_z_test(3, 2, 1, 1).is_err());
    }

    #[test]
    fn welch_symmetric() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let r = welch_t_test(&a, &a).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 1.0).abs() < 1e-12);
        // equal variances and sizes: Welch df = 2n - 2
        let b = [2.0, 3.0, 4.0, 5.0];
        let r = welch_t_test(&a, &b).unwrap();
        assert!((r.df.unwrap() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn naive_is_arm_mean_difference() {
        let rows = vec![vec![]; 6];
        let a = vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0];
        let y = vec![1.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let s = AnalysisSample::from_columns(vec![], rows, a, y, OutcomeKind::Binary);
        let e = naive_difference(&s, 0.95).unwrap();
        assert!((e.psi_hat - 1.0 / 3.0).abs() < 1e-15);
        let ci = e.ci.unwrap();
        assert!(ci.lo < e.psi_hat && e.psi_hat < ci.hi);
    }
}
