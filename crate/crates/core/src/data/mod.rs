//! Observed-data model `O = (C, A, Δ, ΔY)` and the dataset container.

mod csvio;
mod longitudinal;
mod predicate;

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimand::Period;

pub use csvio::{export_csv, ingest_csv, read_csv, write_csv, ColumnMapping, CovariateMapping};
pub use longitudinal::{LongitudinalRecord, Visit, VisitTuple};
pub use predicate::{CompiledCondition, Condition, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("schema mismatch on column `{0}`")]
    SchemaMismatch(String),
    #[error("parse error at row {row}, column `{column}`: {value:?}")]
    ParseError { row: usize, column: String, value: String },
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("duplicate subject id `{0}`")]
    DuplicateId(String),
    #[error("record `{id}` has {found} covariates, schema expects {expected}")]
    ArityMismatch { id: String, expected: usize, found: usize },
    #[error("record `{id}`: outcome {value} is not binary")]
    NonBinaryOutcome { id: String, value: f64 },
    #[error("record `{0}`: observed (delta = 1) but outcome missing")]
    MissingObservedOutcome(String),
    #[error("longitudinal record `{0}`: visits not strictly time-ordered")]
    UnorderedVisits(String),
    #[error("longitudinal record `{0}`: visit recorded after an unobserved transition")]
    VisitAfterDropout(String),
}

/// Declared kind of an input covariate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum VariableKind {
    Real,
    Binary,
    Date,
    /// Expanded into indicator columns for every level but the first.
    Categorical { levels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    #[serde(flatten)]
    pub kind: VariableKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnKind {
    Real,
    Binary,
    Date,
    Indicator { variable: String, level: String },
}

impl ColumnKind {
    /// Binary and indicator columns take values in {0, 1}.
    pub fn is_discrete(&self) -> bool {
        matches!(self, ColumnKind::Binary | ColumnKind::Indicator { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
}

/// Declared covariates and the numeric columns they expand to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    variables: Vec<Variable>,
    columns: Vec<Column>,
}

impl Schema {
    pub fn new(variables: Vec<Variable>) -> Self {
        let mut columns = Vec::new();
        for v in &variables {
            match &v.kind {
                VariableKind::Real => columns.push(Column { name: v.name.clone(), kind: ColumnKind::Real }),
                VariableKind::Binary => columns.push(Column { name: v.name.clone(), kind: ColumnKind::Binary }),
                VariableKind::Date => columns.push(Column { name: v.name.clone(), kind: ColumnKind::Date }),
                VariableKind::Categorical { levels } => {
                    for level in levels.iter().skip(1) {
                        columns.push(Column {
                            name: format!("{}={}", v.name, level),
                            kind: ColumnKind::Indicator { variable: v.name.clone(), level: level.clone() },
                        });
                    }
                }
            }
        }
        Schema { variables, columns }
    }

    /// Schema of real-valued covariates with the given names.
    pub fn real(names: &[&str]) -> Self {
        Schema::new(
            names.iter().map(|n| Variable { name: n.to_string(), kind: VariableKind::Real }).collect(),
        )
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn arity(&self) -> usize {
        self.columns.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Resolves a column name, including the reserved record fields
    /// `treatment`, `delta`, `outcome`, `index_date`, `eligibility_date` and
    /// `end_date`. Covariate names take precedence.
    pub fn resolve(&self, name: &str) -> Result<Field, DataError> {
        if let Some(i) = self.column_index(name) {
            return Ok(Field::Covariate(i));
        }
        match name {
            "treatment" => Ok(Field::Treatment),
            "delta" => Ok(Field::Delta),
            "outcome" => Ok(Field::Outcome),
            "index_date" => Ok(Field::IndexDate),
            "eligibility_date" => Ok(Field::EligibilityDate),
            "end_date" => Ok(Field::EndDate),
            _ => Err(DataError::UnknownColumn(name.to_string())),
        }
    }
}

/// A resolved, addressable cell of a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Covariate(usize),
    Treatment,
    Delta,
    /// Masked: missing whenever Δ = 0.
    Outcome,
    IndexDate,
    EligibilityDate,
    EndDate,
}

/// Days since 1970-01-01; the numeric encoding of calendar dates.
pub fn date_to_value(d: NaiveDate) -> f64 {
    (d - NaiveDate::from_ymd_opt(1970, 1, 1).expect("epoch")).num_days() as f64
}

pub fn value_to_date(v: f64) -> Option<NaiveDate> {
    NaiveDate::from_ymd_opt(1970, 1, 1)?.checked_add_signed(chrono::Duration::days(v.round() as i64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Control,
    Treated,
}

impl Arm {
    pub fn from_flag(treated: bool) -> Self {
        if treated {
            Arm::Treated
        } else {
            Arm::Control
        }
    }

    pub fn is_treated(self) -> bool {
        self == Arm::Treated
    }

    pub fn indicator(self) -> f64 {
        if self.is_treated() {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeKind {
    #[default]
    Binary,
    Continuous,
}

/// Source label and the internal/external flag.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SourceTag {
    pub label: String,
    pub external: bool,
}

impl SourceTag {
    pub fn internal(label: &str) -> Self {
        SourceTag { label: label.into(), external: false }
    }

    pub fn external(label: &str) -> Self {
        SourceTag { label: label.into(), external: true }
    }
}

/// One subject. The outcome is stored privately and is only readable when
/// the subject is observed (Δ = 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub id: String,
    pub covariates: Vec<Option<f64>>,
    pub treatment: Arm,
    pub observed: bool,
    outcome: Option<f64>,
    pub source: SourceTag,
    pub index_date: Option<NaiveDate>,
    pub eligibility_date: Option<NaiveDate>,
    /// Death or censoring date.
    pub end_date: Option<NaiveDate>,
}

impl SubjectRecord {
    pub fn new(
        id: impl Into<String>,
        covariates: Vec<Option<f64>>,
        treatment: Arm,
        observed: bool,
        outcome: Option<f64>,
        source: SourceTag,
    ) -> Self {
        SubjectRecord {
            id: id.into(),
            covariates,
            treatment,
            observed,
            outcome,
            source,
            index_date: None,
            eligibility_date: None,
            end_date: None,
        }
    }

    pub fn with_index_date(mut self, d: NaiveDate) -> Self {
        self.index_date = Some(d);
        self
    }

    pub fn with_end_date(mut self, d: NaiveDate) -> Self {
        self.end_date = Some(d);
        self
    }

    pub fn with_eligibility_date(mut self, d: NaiveDate) -> Self {
        self.eligibility_date = Some(d);
        self
    }

    /// The outcome, masked unless Δ = 1.
    pub fn outcome(&self) -> Option<f64> {
        if self.observed {
            self.outcome
        } else {
            None
        }
    }

    /// Raw stored outcome, including values hidden by Δ = 0. Only export and
    /// measurement-error injection need this.
    pub(crate) fn stored_outcome(&self) -> Option<f64> {
        self.outcome
    }

    pub(crate) fn set_outcome(&mut self, y: Option<f64>) {
        self.outcome = y;
    }

    pub fn value(&self, field: Field) -> Option<f64> {
        match field {
            Field::Covariate(i) => self.covariates.get(i).copied().flatten(),
            Field::Treatment => Some(self.treatment.indicator()),
            Field::Delta => Some(if self.observed { 1.0 } else { 0.0 }),
            Field::Outcome => self.outcome(),
            Field::IndexDate => self.index_date.map(date_to_value),
            Field::EligibilityDate => self.eligibility_date.map(date_to_value),
            Field::EndDate => self.end_date.map(date_to_value),
        }
    }

    /// `(C, A, Δ, ΔY)`.
    pub fn observed_tuple(&self) -> ObservedTuple<'_> {
        let y = self.outcome();
        ObservedTuple {
            covariates: &self.covariates,
            treatment: self.treatment,
            delta: self.observed,
            delta_y: y.unwrap_or(0.0),
            outcome_missing: y.is_none(),
        }
    }
}

/// The observed-data tuple. When Δ = 0 the fourth element is the masked
/// value 0 and `outcome_missing` is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservedTuple<'a> {
    pub covariates: &'a [Option<f64>],
    pub treatment: Arm,
    pub delta: bool,
    pub delta_y: f64,
    pub outcome_missing: bool,
}

/// Free function form of [`SubjectRecord::observed_tuple`].
pub fn observed_tuple(record: &SubjectRecord) -> ObservedTuple<'_> {
    record.observed_tuple()
}

/// Descriptor of one data source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceInfo {
    pub name: String,
    #[serde(default)]
    pub external: bool,
    #[serde(default)]
    pub period: Option<Period>,
    /// How the outcome was ascertained (e.g. "investigator RECIST 1.1").
    #[serde(default)]
    pub ascertainment: Option<String>,
    #[serde(default)]
    pub coding_version: Option<String>,
    #[serde(default)]
    pub notes: String,
}

impl SourceInfo {
    pub fn named(name: &str, external: bool) -> Self {
        SourceInfo {
            name: name.into(),
            external,
            period: None,
            ascertainment: None,
            coding_version: None,
            notes: String::new(),
        }
    }
}

/// Immutable collection of schema-conformant records with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    schema: Schema,
    outcome_kind: OutcomeKind,
    records: Vec<SubjectRecord>,
    provenance: Vec<SourceInfo>,
}

impl Dataset {
    /// Validates arity, id uniqueness and binary outcomes. Sources seen on
    /// records but absent from `provenance` are appended with default
    /// descriptors.
    pub fn new(
        schema: Schema,
        outcome_kind: OutcomeKind,
        records: Vec<SubjectRecord>,
        mut provenance: Vec<SourceInfo>,
    ) -> Result<Self, DataError> {
        let mut ids = HashSet::with_capacity(records.len());
        for r in &records {
            if r.covariates.len() != schema.arity() {
                return Err(DataError::ArityMismatch {
                    id: r.id.clone(),
                    expected: schema.arity(),
                    found: r.covariates.len(),
                });
            }
            if !ids.insert(r.id.as_str()) {
                return Err(DataError::DuplicateId(r.id.clone()));
            }
            if r.observed && r.outcome.is_none() {
                return Err(DataError::MissingObservedOutcome(r.id.clone()));
            }
            if outcome_kind == OutcomeKind::Binary {
                if let Some(y) = r.outcome {
                    if y != 0.0 && y != 1.0 {
                        return Err(DataError::NonBinaryOutcome { id: r.id.clone(), value: y });
                    }
                }
            }
            if !provenance.iter().any(|p| p.name == r.source.label) {
                provenance.push(SourceInfo::named(&r.source.label, r.source.external));
            }
        }
        Ok(Dataset { schema, outcome_kind, records, provenance })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn outcome_kind(&self) -> OutcomeKind {
        self.outcome_kind
    }

    pub fn records(&self) -> &[SubjectRecord] {
        &self.records
    }

    pub fn provenance(&self) -> &[SourceInfo] {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&SubjectRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Record count per source label, in provenance order.
    pub fn source_counts(&self) -> BTreeMap<String, usize> {
        let mut counts: BTreeMap<String, usize> =
            self.provenance.iter().map(|p| (p.name.clone(), 0)).collect();
        for r in &self.records {
            *counts.entry(r.source.label.clone()).or_default() += 1;
        }
        counts
    }

    /// Records matching `keep`, with provenance restricted to the sources
    /// that still have records.
    pub fn filter(&self, keep: impl Fn(&SubjectRecord) -> bool) -> Dataset {
        let records: Vec<SubjectRecord> = self.records.iter().filter(|r| keep(r)).cloned().collect();
        let provenance = self
            .provenance
            .iter()
            .filter(|p| records.iter().any(|r| r.source.label == p.name))
            .cloned()
            .collect();
        Dataset { schema: self.schema.clone(), outcome_kind: self.outcome_kind, records, provenance }
    }

    /// Replaces the records, keeping schema and provenance. Used by
    /// transformations that only touch outcomes.
    pub(crate) fn with_records(&self, records: Vec<SubjectRecord>) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            outcome_kind: self.outcome_kind,
            records,
            provenance: self.provenance.clone(),
        }
    }

    /// Column values, `None` where missing.
    pub fn column(&self, name: &str) -> Result<Vec<Option<f64>>, DataError> {
        let f = self.schema.resolve(name)?;
        Ok(self.records.iter().map(|r| r.value(f)).collect())
    }
}

/// Concatenates datasets with identical schemas. Record order and source
/// labels are preserved; provenance is the union by source name.
pub fn pool(datasets: &[Dataset]) -> Result<Dataset, DataError> {
    let first = datasets.first().ok_or_else(|| DataError::SchemaMismatch("<no datasets>".into()))?;
    let mut records = Vec::new();
    let mut provenance: Vec<SourceInfo> = Vec::new();
    for ds in datasets {
        if ds.schema != first.schema {
            let col = first
                .schema
                .columns()
                .iter()
                .zip(ds.schema.columns())
                .find(|(a, b)| a != b)
                .map(|(a, _)| a.name.clone())
                .unwrap_or_else(|| "<arity>".to_string());
            return Err(DataError::SchemaMismatch(col));
        }
        if ds.outcome_kind != first.outcome_kind {
            return Err(DataError::SchemaMismatch("outcome".into()));
        }
        records.extend(ds.records.iter().cloned());
        for p in &ds.provenance {
            if !provenance.iter().any(|q| q.name == p.name) {
                provenance.push(p.clone());
            }
        }
    }
    Dataset::new(first.schema.clone(), first.outcome_kind, records, provenance)
}
