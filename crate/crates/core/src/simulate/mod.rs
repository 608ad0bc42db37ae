//! Structural causal model generator with sealed counterfactual truth.

mod replicate;
mod scenarios;
mod scm;

use thiserror::Error;

use crate::data::DataError;

pub use replicate::{mean_sd, operating_characteristics, run_replicates, OperatingCharacteristics};
pub use scenarios::{scenario, scenario_library, SCENARIO_NAMES};
pub use scm::{
    generate, inject_measurement_error, true_ate, CounterfactualPair, CovariateDist, CovariateSpec, DriftSpec,
    ExternalSpec, MeasurementErrorSpec, ObservationSpec, OutcomeLink, OutcomeSpec, ScmConfig, SealedCounterfactuals,
    TreatmentSpec, TrueEffect, MIN_TRUTH_DRAWS,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimulationError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("measurement-error injection needs a binary outcome")]
    NonBinaryOutcome,
    #[error("true_ate needs at least {MIN_TRUTH_DRAWS} draws, got {0}")]
    TooFewDraws(usize),
    #[error("unknown scenario {name:?}; known scenarios: {known}")]
    UnknownScenario { name: String, known: String },
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Like [`scenario`], but an unknown name is an error listing the known ones.
pub fn require_scenario(name: &str) -> Result<ScmConfig, SimulationError> {
    scenario(name).ok_or_else(|| SimulationError::UnknownScenario { name: name.into(), known: SCENARIO_NAMES.join(", ") })
}
