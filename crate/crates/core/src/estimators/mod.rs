//! Effect estimation under the observed-data structure `O = (C, A, Δ, ΔY)`.
//!
//! The target is
//!
//! ```text
//! ψ = E_c[ E(Y | A = 1, Δ = 1, C) − E(Y | A = 0, Δ = 1, C) ]
//! ```
//!
//! All estimators take an [`AnalysisSample`], a dense numeric view of a
//! dataset. With [`DeltaHandling::CompleteCase`] the sample holds observed
//! subjects only; with [`DeltaHandling::ObservationWeighted`] it keeps
//! unobserved subjects and IPW / TMLE reweight by a fitted `P(Δ = 1 | A, C)`.

use thiserror::Error;

mod binomial;
mod bootstrap;
mod effect;
mod gcomp;
pub mod glm;
mod hypothesis;
mod identifiability;
mod ipw;
mod models;
mod sample;
mod tmle;

pub use binomial::{binomial_response_test, binomial_tail, BinomialTest};
pub use bootstrap::{bootstrap_ci, percentile, BootstrapConfig, BootstrapInterval};
pub use effect::{ConfidenceInterval, Diagnostics, EffectEstimate, Method};
pub use gcomp::{g_computation, g_computation_bootstrap};
pub use hypothesis::{naive_difference, two_proportion_z_test, welch_t_test, wald_interval, TestResult};
pub use identifiability::{identifiability_diagnostics, IdentifiabilityReport, PositivityReport, StratumCell, Balance};
pub use ipw::{ipw, Weighting};
pub use models::{
    fit_observation_model, fit_outcome_model, fit_outcome_model_on, fit_propensity, Family, ObservationModel,
    OutcomeModel, OutcomeModelSpec, PropensityModel, PropensitySpec, Term, DEFAULT_TRUNCATION,
};
pub use sample::{AnalysisSample, DeltaHandling};
pub use tmle::{tmle, tmle_with_models, TmleState, Q_BOUND};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("unknown covariate {0:?}")]
    UnknownCovariate(String),
    #[error("model fit failed: {0}")]
    ModelFit(String),
    #[error("perfect separation: the logistic MLE does not exist")]
    PerfectSeparation,
    #[error("sample contains a single treatment arm")]
    SingleArmSample,
    #[error("positivity violation: subject {0} has a propensity score of exactly 0 or 1")]
    PositivityViolation(String),
    #[error("invalid counts: {0}")]
    InvalidCounts(String),
    #[error("bootstrap needs at least 100 replicates, got {0}")]
    TooFewReplicates(usize),
    #[error("bootstrap gave up after {attempts} attempts ({successes} succeeded)")]
    BootstrapExhausted { attempts: usize, successes: usize },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
