use serde::{Deserialize, Serialize};

use super::{Arm, DataError};

/// One visit `(C_t, A_t, Δ_{t+1})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Visit {
    /// Visit time (days from baseline, or visit number).
    pub time: u32,
    pub covariates: Vec<Option<f64>>,
    pub treatment: Arm,
    /// Whether the subject is still observed at the next visit.
    pub observed_next: bool,
}

/// Multi-visit observed data `((C_0, A_0, Δ_1), ..., Δ_{T+1} Y)`.
///
/// Ingestion-only: estimators in this crate work on baseline records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongitudinalRecord {
    id: String,
    visits: Vec<Visit>,
    outcome: Option<f64>,
}

/// A visit as exposed to analysis code.
pub type VisitTuple<'a> = (&'a [Option<f64>], Arm, bool);

impl LongitudinalRecord {
    /// Visits must be strictly time-ordered and nothing may follow a visit
    /// whose `observed_next` is false.
    pub fn new(id: impl Into<String>, visits: Vec<Visit>, outcome: Option<f64>) -> Result<Self, DataError> {
        let id = id.into();
        for pair in visits.windows(2) {
            if pair[1].time <= pair[0].time {
                return Err(DataError::UnorderedVisits(id));
            }
            if !pair[0].observed_next {
                return Err(DataError::VisitAfterDropout(id));
            }
        }
        Ok(LongitudinalRecord { id, visits, outcome })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn visits(&self) -> &[Visit] {
        &self.visits
    }

    /// `Δ_{T+1}` of the final visit.
    pub fn completed(&self) -> bool {
        self.visits.last().is_some_and(|v| v.observed_next)
    }

    /// The per-visit tuples and the masked terminal `Δ_{T+1}·Y`
    /// (`None` when the subject dropped out).
    pub fn observed_tuples(&self) -> (Vec<VisitTuple<'_>>, Option<f64>) {
        let tuples = self.visits.iter().map(|v| (v.covariates.as_slice(), v.treatment, v.observed_next)).collect();
        let terminal = if self.completed() { self.outcome } else { None };
        (tuples, terminal)
    }
}
