//! Construction of comparator arms.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DataError;
use crate::estimators::EstimationError;

mod historical;
mod hybrid;
mod synthetic;
mod virtual_control;

pub use historical::{select_historical, EligibilityCriteria, HistoricalDiagnostics, NamedCondition};
pub use hybrid::{
    hybrid_match, power_prior_arm, power_prior_borrow, test_and_pool, test_and_pool_counts, BetaPrior, MatchConfig,
    MatchDiagnostics, MatchPair, MatchScore, PoolDecision, PowerPriorPosterior, DEFAULT_ALPHA, DEFAULT_CALIPER,
};
pub use synthetic::{
    default_metric, source_summaries, synthetic_control, synthetic_objective, synthetic_weights, SourceSummary,
    SyntheticWeights, FW_GAP_TOLERANCE, FW_MAX_ITERATIONS,
};
pub use virtual_control::{virtual_control, VirtualConfig, VirtualControl, VirtualDiagnostics};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("record {0} has no index date")]
    MissingIndexDate(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("no sources supplied")]
    NoSources,
    #[error("metric entries must be positive and finite")]
    InvalidMetric,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid counts: {0}")]
    InvalidCounts(String),
    #[error("subject {0} is not an observed control")]
    NotObservedControl(String),
    #[error("treated arm is empty")]
    EmptyTreatedArm,
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("model fit failed: {0}")]
    ModelFit(#[from] EstimationError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstructionMethod {
    Historical,
    Synthetic,
    HybridTestAndPool,
    HybridPowerPrior,
    HybridMatched,
    Virtual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub id: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ArmDiagnostics {
    Historical(HistoricalDiagnostics),
    Synthetic(SyntheticWeights),
    TestAndPool(PoolDecision),
    PowerPrior(PowerPriorPosterior),
    Matched(MatchDiagnostics),
    Virtual(VirtualDiagnostics),
}

/// A constructed comparator: weighted members, exclusions with reasons, and
/// method-specific diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlArm {
    pub method: ConstructionMethod,
    pub members: Vec<Member>,
    pub excluded: Vec<Exclusion>,
    pub diagnostics: ArmDiagnostics,
}

impl ControlArm {
    pub fn member_ids(&self) -> Vec<&str> {
        self.members.iter().map(|m| m.id.as_str()).collect()
    }

    pub fn total_weight(&self) -> f64 {
        self.members.iter().map(|m| m.weight).sum()
    }

    pub fn weight_of(&self, id: &str) -> Option<f64> {
        self.members.iter().find(|m| m.id == id).map(|m| m.weight)
    }
}
