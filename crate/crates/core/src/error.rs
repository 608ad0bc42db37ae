use thiserror::Error;

use crate::controls::ControlError;
use crate::data::DataError;
use crate::estimand::EstimandError;
use crate::estimators::EstimationError;
use crate::fitness::FitnessError;
use crate::sensitivity::SensitivityError;
use crate::simulate::SimulationError;

/// Umbrella error for callers that drive several stages of an analysis.
#[derive(Debug, Error)]
pub enum Error {
    #[error("estimand: {0}")]
    Estimand(#[from] EstimandError),
    #[error("data: {0}")]
    Data(#[from] DataError),
    #[error("fitness: {0}")]
    Fitness(#[from] FitnessError),
    #[error("controls: {0}")]
    Controls(#[from] ControlError),
    #[error("estimation: {0}")]
    Estimation(#[from] EstimationError),
    #[error("sensitivity: {0}")]
    Sensitivity(#[from] SensitivityError),
    #[error("simulation: {0}")]
    Simulation(#[from] SimulationError),
}

pub type Result<T> = std::result::Result<T, Error>;
