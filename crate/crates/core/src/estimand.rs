//! Research-question metadata and the temporal taxonomy of comparator arms.

use std::collections::HashSet;
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimandError {
    #[error("estimand attribute `{0}` is empty")]
    MissingAttribute(String),
    #[error("intercurrent event `{0}` has more than one handling strategy")]
    DuplicateIceStrategy(String),
    #[error("malformed period: start {start} is after end {end}")]
    MalformedPeriod { start: NaiveDate, end: NaiveDate },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreatmentLabels {
    pub experimental: String,
    pub comparator: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EndpointKind {
    BinaryResponse,
    Continuous,
    TimeToEvent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endpoint {
    pub kind: EndpointKind,
    pub label: String,
}

/// ICH E9(R1) strategies for intercurrent events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IceStrategy {
    TreatmentPolicy,
    Hypothetical,
    Composite,
    WhileOnTreatment,
    PrincipalStratum,
}

impl fmt::Display for IceStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            IceStrategy::TreatmentPolicy => "treatment-policy",
            IceStrategy::Hypothetical => "hypothetical",
            IceStrategy::Composite => "composite",
            IceStrategy::WhileOnTreatment => "while-on-treatment",
            IceStrategy::PrincipalStratum => "principal-stratum",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntercurrentEvent {
    pub event: String,
    pub strategy: IceStrategy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SummaryMeasure {
    RiskDifference,
    RiskRatio,
    MeanDifference,
    ResponseRate,
}

impl fmt::Display for SummaryMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SummaryMeasure::RiskDifference => "risk difference",
            SummaryMeasure::RiskRatio => "risk ratio",
            SummaryMeasure::MeanDifference => "mean difference",
            SummaryMeasure::ResponseRate => "response rate",
        };
        f.write_str(s)
    }
}

/// The five estimand attributes plus a textual rendering of the target
/// statistical estimand.
///
/// This is metadata only: it parameterises reports and estimator
/// configuration but never computes anything itself.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimandSpec {
    /// Named eligibility criteria.
    pub population: Vec<String>,
    pub treatment: TreatmentLabels,
    pub endpoint: Endpoint,
    pub intercurrent_events: Vec<IntercurrentEvent>,
    pub summary: SummaryMeasure,
    #[serde(default)]
    pub estimand_form: String,
}

impl EstimandSpec {
    /// Renders the target statistical estimand in words, naming all five
    /// attributes.
    pub fn render(&self) -> String {
        let ices = self
            .intercurrent_events
            .iter()
            .map(|e| format!("{} ({})", e.event, e.strategy))
            .collect::<Vec<_>>()
            .join("; ");
        format!(
            "{} of {} for {} versus {} in the population [{}], \
             averaged over the covariate distribution E_c[E(Y|A=1,Δ=1,C) - E(Y|A=0,Δ=1,C)]; \
             intercurrent events: {}",
            self.summary,
            self.endpoint.label,
            self.treatment.experimental,
            self.treatment.comparator,
            self.population.join(", "),
            ices
        )
    }
}

fn blank(s: &str) -> bool {
    s.trim().is_empty()
}

/// Checks the estimand invariants.
///
/// A valid spec is returned unchanged, except that a blank `estimand_form`
/// is filled in with [`EstimandSpec::render`]. The function is idempotent.
pub fn validate_estimand(mut spec: EstimandSpec) -> Result<EstimandSpec, EstimandError> {
    let missing = |name: &str| Err(EstimandError::MissingAttribute(name.to_string()));
    if spec.population.is_empty() || spec.population.iter().any(|c| blank(c)) {
        return missing("population");
    }
    if blank(&spec.treatment.experimental) || blank(&spec.treatment.comparator) {
        return missing("treatment");
    }
    if blank(&spec.endpoint.label) {
        return missing("endpoint");
    }
    if spec.intercurrent_events.is_empty() || spec.intercurrent_events.iter().any(|e| blank(&e.event)) {
        return missing("intercurrent_events");
    }
    let mut seen = HashSet::new();
    for ice in &spec.intercurrent_events {
        if !seen.insert(ice.event.trim().to_lowercase()) {
            return Err(EstimandError::DuplicateIceStrategy(ice.event.clone()));
        }
    }
    if blank(&spec.estimand_form) {
        spec.estimand_form = spec.render();
    }
    Ok(spec)
}

/// Temporal / provenance class of a comparator.
///
/// `Synthetic`, `Hybrid` and `Virtual` are construction methods; they are
/// listed for reporting but [`classify_control`] never returns them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlType {
    Historical,
    Contemporaneous,
    NonConcurrent,
    HistoricalContemporaneous,
    Synthetic,
    Hybrid,
    Virtual,
    InternalConcurrent,
}

/// Closed calendar interval, day granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexWindow {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl IndexWindow {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self, EstimandError> {
        let w = IndexWindow { start, end };
        w.check()?;
        Ok(w)
    }

    pub fn check(&self) -> Result<(), EstimandError> {
        if self.start > self.end {
            return Err(EstimandError::MalformedPeriod { start: self.start, end: self.end });
        }
        Ok(())
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.start <= date && date <= self.end
    }

    /// At least one shared calendar day.
    pub fn overlaps(&self, other: &IndexWindow) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

/// Calendar periods share the window type.
pub type Period = IndexWindow;

/// Classifies a comparator by provenance and by when its data were collected
/// relative to the trial.
///
/// External sources: ending before the trial starts is historical; starting
/// before the trial and running into it is historical-contemporaneous;
/// starting inside the trial period is contemporaneous. An external source
/// collected entirely after the trial is non-concurrent.
///
/// Internal controls are concurrent when they start inside the trial period,
/// non-concurrent when disjoint or started earlier.
pub fn classify_control(
    internal: bool,
    control_period: &Period,
    trial_period: &Period,
) -> Result<ControlType, EstimandError> {
    control_period.check()?;
    trial_period.check()?;
    let overlap = control_period.overlaps(trial_period);
    let starts_before = control_period.start < trial_period.start;
    let class = match (internal, overlap) {
        (false, false) if control_period.end < trial_period.start => ControlType::Historical,
        (false, false) => ControlType::NonConcurrent,
        (false, true) if starts_before => ControlType::HistoricalContemporaneous,
        (false, true) => ControlType::Contemporaneous,
        (true, true) if !starts_before => ControlType::InternalConcurrent,
        (true, _) => ControlType::NonConcurrent,
    };
    Ok(class)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    fn years(a: i32, b: i32) -> Period {
        IndexWindow::new(d(a, 1, 1), d(b, 12, 31)).unwrap()
    }

    pub(crate) fn sample_spec() -> EstimandSpec {
        EstimandSpec {
            population: vec!["age >= 1".into(), "rare cancer".into()],
            treatment: TreatmentLabels { experimental: "drug X".into(), comparator: "SoC".into() },
            endpoint: Endpoint { kind: EndpointKind::BinaryResponse, label: "objective response".into() },
            intercurrent_events: vec![IntercurrentEvent {
                event: "treatment switching".into(),
                strategy: IceStrategy::TreatmentPolicy,
            }],
            summary: SummaryMeasure::RiskDifference,
            estimand_form: String::new(),
        }
    }

    #[test]
    fn valid_spec_passes_and_is_idempotent() {
        let v = validate_estimand(sample_spec()).unwrap();
        for word in ["risk difference", "objective response", "drug X", "SoC", "rare cancer", "treatment switching"] {
            assert!(v.estimand_form.contains(word), "{word} missing from rendering");
        }
        assert_eq!(validate_estimand(v.clone()).unwrap(), v);
    }

    #[test]
    fn explicit_form_is_kept() {
        let mut s = sample_spec();
        s.estimand_form = "psi".into();
        assert_eq!(validate_estimand(s.clone()).unwrap(), s);
    }

    #[test]
    fn empty_endpoint_is_missing() {
        let mut s = sample_spec();
        s.endpoint.label = " ".into();
        assert_eq!(validate_estimand(s), Err(EstimandError::MissingAttribute("endpoint".into())));
    }

    #[test]
    fn duplicate_ice_rejected() {
        let mut s = sample_spec();
        s.intercurrent_events.push(IntercurrentEvent {
            event: "treatment switching".into(),
            strategy: IceStrategy::Hypothetical,
        });
        assert!(matches!(validate_estimand(s), Err(EstimandError::DuplicateIceStrategy(e)) if e == "treatment switching"));
    }

    #[test]
    fn classification_examples() {
        let trial = years(2020, 2023);
        assert_eq!(classify_control(false, &years(2015, 2018), &trial).unwrap(), ControlType::Historical);
        assert_eq!(classify_control(true, &years(2020, 2023), &trial).unwrap(), ControlType::InternalConcurrent);
        assert_eq!(classify_control(true, &years(2018, 2019), &trial).unwrap(), ControlType::NonConcurrent);
        assert_eq!(classify_control(false, &years(2020, 2023), &trial).unwrap(), ControlType::Contemporaneous);
        assert_eq!(
            classify_control(false, &years(2017, 2021), &trial).unwrap(),
            ControlType::HistoricalContemporaneous
        );
        assert_eq!(classify_control(true, &years(2018, 2021), &trial).unwrap(), ControlType::NonConcurrent);
    }

    #[test]
    fn one_day_overlap_counts() {
        let trial = years(2020, 2023);
        let c = IndexWindow::new(d(2018, 1, 1), d(2020, 1, 1)).unwrap();
        assert_eq!(classify_control(false, &c, &trial).unwrap(), ControlType::HistoricalContemporaneous);
        let c = IndexWindow::new(d(2018, 1, 1), d(2019, 12, 31)).unwrap();
        assert_eq!(classify_control(false, &c, &trial).unwrap(), ControlType::Historical);
    }

    #[test]
    fn malformed_period() {
        let bad = IndexWindow { start: d(2021, 1, 1), end: d(2020, 1, 1) };
        assert!(matches!(
            classify_control(false, &bad, &years(2020, 2023)),
            Err(EstimandError::MalformedPeriod { .. })
        ));
        assert!(IndexWindow::new(d(2021, 1, 1), d(2020, 1, 1)).is_err());
    }

    #[test]
    fn never_returns_construction_methods() {
        let base = d(2020, 1, 1);
        for internal in [false, true] {
            for s in (-800..800).step_by(97) {
                for len in [0i64, 30, 400, 2000] {
                    let start = base + chrono::Duration::days(s);
                    let c = IndexWindow::new(start, start + chrono::Duration::days(len)).unwrap();
                    let t = classify_control(internal, &c, &years(2020, 2022)).unwrap();
                    assert!(!matches!(t, ControlType::Synthetic | ControlType::Hybrid | ControlType::Virtual));
                }
            }
        }
    }
}
