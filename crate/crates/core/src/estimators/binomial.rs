//! Exact single-arm binomial test of H0: p ≤ p0.

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use super::EstimationError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinomialTest {
    pub x: u64,
    pub n: u64,
    pub p0: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub reject: bool,
    /// Observed response rate x / n.
    pub p_hat: f64,
    /// Clinically meaningful rate, echoed when supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p1: Option<f64>,
}

/// `P(X ≥ x)` for `X ~ Bin(n, p0)`, summed term by term in log space.
pub fn binomial_tail(x: u64, n: u64, p0: f64) -> f64 {
    if x == 0 {
        return 1.0;
    }
    let (lp, lq) = (p0.ln(), (-p0).ln_1p());
    let mut tail = 0.0;
    // smallest terms first
    for k in (x..=n).rev() {
        tail += (ln_binomial(n, k) + k as f64 * lp + (n - k) as f64 * lq).exp();
    }
    tail.min(1.0)
}

pub fn binomial_response_test(
    x: u64,
    n: u64,
    p0: f64,
    alpha: f64,
    p1: Option<f64>,
) -> Result<BinomialTest, EstimationError> {
    if n == 0 || x > n {
        return Err(EstimationError::InvalidCounts(format!("{x} responders out of {n}")));
    }
    if !(p0 > 0.0 && p0 < 1.0) {
        return Err(EstimationError::InvalidArgument(format!("p0 = {p0} outside (0, 1)")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(EstimationError::InvalidArgument(format!("alpha = {alpha} outside (0, 1)")));
    }
    let p_value = binomial_tail(x, n, p0);
    Ok(BinomialTest { x, n, p0, p_value, alpha, reject: p_value <= alpha, p_hat: x as f64 / n as f64, p1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        assert_eq!(binomial_tail(0, 20, 0.3), 1.0);
        assert!((binomial_tail(10, 10, 0.5) - 2f64.powi(-10)).abs() < 1e-15);
        let t = binomial_response_test(3, 20, 0.05, 0.1, Some(0.25)).unwrap();
        assert!((t.p_value - 0.0755).abs() < 5e-5, "{}", t.p_value);
        assert!(t.reject);
        assert!(binomial_response_test(5, 4, 0.1, 0.05, None).is_err());
    }
}
