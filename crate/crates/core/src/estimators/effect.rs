use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Naive,
    GComputation,
    IpwHajek,
    IpwHorvitzThompson,
    Tmle,
    /// Observed treated outcomes against model-predicted counterfactuals.
    VirtualControl,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
}

impl ConfidenceInterval {
    /// `estimate ± z·se` at the given two-sided level.
    pub fn wald(estimate: f64, se: f64, level: f64) -> Self {
        let z = Normal::standard().inverse_cdf(0.5 + level / 2.0);
        ConfidenceInterval { lo: estimate - z * se, hi: estimate + z * se, level }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Subjects whose propensity score was truncated.
    pub n_truncated: usize,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub psi_hat: f64,
    pub method: Method,
    pub variance: Option<f64>,
    pub ci: Option<ConfidenceInterval>,
    /// Per-subject influence-curve values, in sample order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub influence: Option<Vec<f64>>,
    pub n_used: usize,
    pub n_dropped: usize,
    #[serde(default)]
    pub diagnostics: Diagnostics,
}

impl EffectEstimate {
    pub fn standard_error(&self) -> Option<f64> {
        self.variance.map(f64::sqrt)
    }

    /// Two-sided Wald p-value against 0.
    pub fn p_value(&self) -> Option<f64> {
        let se = self.standard_error()?;
        if se == 0.0 {
            return Some(if self.psi_hat == 0.0 { 1.0 } else { 0.0 });
        }
        Some(2.0 * Normal::standard().sf((self.psi_hat / se).abs()))
    }
}

/// `Σ s_i x_i / Σ s_i`.
pub(crate) fn weighted_mean(x: impl IntoIterator<Item = f64>, w: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (xi, wi) in x.into_iter().zip(w) {
        num += wi * xi;
        den += wi;
    }
    num / den
}

/// Variance of the mean of an influence curve: `Σ s IC² / (Σ s)²`.
pub(crate) fn ic_variance(ic: &[f64], w: &[f64]) -> f64 {
    let total: f64 = w.iter().sum();
    ic.iter().zip(w).map(|(v, s)| s * v * v).sum::<f64>() / (total * total)
}
