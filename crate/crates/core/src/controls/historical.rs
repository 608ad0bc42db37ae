use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{ArmDiagnostics, ConstructionMethod, ControlArm, ControlError, Exclusion, Member};
use crate::data::{date_to_value, CompiledCondition, Condition, Dataset, Field, SubjectRecord};
use crate::estimand::IndexWindow;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedCondition {
    pub name: String,
    pub condition: Condition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EligibilityCriteria {
    /// Evaluated in order; the first failure is the exclusion reason.
    pub predicates: Vec<NamedCondition>,
    pub index_window: IndexWindow,
    #[serde(default)]
    pub coding_change_dates: Vec<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoricalDiagnostics {
    pub index_window: IndexWindow,
    pub n_screened: usize,
    pub n_included: usize,
    pub coding_changes_in_window: Vec<NaiveDate>,
    pub warnings: Vec<String>,
}

pub const CODING_CHANGE_WARNING: &str = "coding-change-in-window";

/// What is known about `r` on its index date: baseline covariates,
/// treatment and dates up to the index date. The outcome, Δ and any later
/// date are hidden, so nothing that happens after time zero can affect
/// eligibility.
fn as_of_index(r: &SubjectRecord, index: NaiveDate) -> impl Fn(Field) -> Option<f64> + '_ {
    let cutoff = date_to_value(index);
    move |f| match f {
        Field::Outcome | Field::Delta => None,
        Field::EndDate | Field::EligibilityDate => r.value(f).filter(|v| *v <= cutoff),
        _ => r.value(f),
    }
}

pub fn select_historical(ds: &Dataset, crit: &EligibilityCriteria) -> Result<ControlArm, ControlError> {
    crit.index_window.check().map_err(|e| ControlError::InvalidArgument(e.to_string()))?;
    let compiled: Vec<(&str, CompiledCondition)> = crit
        .predicates
        .iter()
        .map(|p| Ok((p.name.as_str(), p.condition.compile(ds.schema())?)))
        .collect::<Result<_, ControlError>>()?;

    let mut members = vec![];
    let mut excluded = vec![];
    for r in ds.records() {
        let index = r.index_date.ok_or_else(|| ControlError::MissingIndexDate(r.id.clone()))?;
        let reason = if !crit.index_window.contains(index) {
            Some("index_window")
        } else {
            let view = as_of_index(r, index);
            compiled.iter().find(|(_, c)| !c.eval_with(&view)).map(|(name, _)| *name)
        };
        match reason {
            None => members.push(Member { id: r.id.clone(), weight: 1.0 }),
            Some(reason) => excluded.push(Exclusion { id: r.id.clone(), reason: reason.to_string() }),
        }
    }

    let coding_changes_in_window: Vec<NaiveDate> =
        crit.coding_change_dates.iter().copied().filter(|d| crit.index_window.contains(*d)).collect();
    let warnings = if coding_changes_in_window.is_empty() { vec![] } else { vec![CODING_CHANGE_WARNING.to_string()] };
    Ok(ControlArm {
        method: ConstructionMethod::Historical,
        diagnostics: ArmDiagnostics::Historical(HistoricalDiagnostics {
            index_window: crit.index_window,
            n_screened: ds.len(),
            n_included: members.len(),
            coding_changes_in_window,
            warnings,
        }),
        members,
        excluded,
    })
}
