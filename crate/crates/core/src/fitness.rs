//! Fit-for-use scoring of an external data source.
//!
//! All scores are computed at cell granularity from user-supplied rules:
//!
//! * density: per-domain fraction of non-missing required cells,
//!   weight-averaged over domains;
//! * error rate: (out-of-range cells + violated date-order rules) over
//!   (checked cells + checked rule instances); missing cells are not
//!   checked;
//! * generalizability: fraction of evaluated (non-missing) entries that
//!   satisfy their credibility predicate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{CompiledCondition, Condition, DataError, Dataset, Field, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitnessError {
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("no credibility rules supplied")]
    NoRules,
    #[error("domain weights must be positive and sum to 1 (got sum {0})")]
    InvalidWeights(f64),
    #[error("no relevance definitions supplied")]
    NoRelevanceDefinitions,
}

impl From<DataError> for FitnessError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::UnknownColumn(c) => FitnessError::UnknownColumn(c),
            other => FitnessError::UnknownColumn(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub name: String,
    pub columns: Vec<String>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeRule {
    pub column: String,
    #[serde(default)]
    pub min: Option<Scalar>,
    #[serde(default)]
    pub max: Option<Scalar>,
}

/// `before <= after` whenever both cells are present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderRule {
    pub before: String,
    pub after: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CredibilityRule {
    /// The entry being judged; records where it is missing are not
    /// evaluated.
    pub column: String,
    pub predicate: Condition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RelevanceDefs {
    /// Disease-population definition; all must hold.
    #[serde(default)]
    pub disease: Vec<Condition>,
    /// Control / exposure definition; all must hold.
    #[serde(default)]
    pub exposure: Vec<Condition>,
    #[serde(default)]
    pub key_confounders: Vec<String>,
    #[serde(default)]
    pub time_variables: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct FitnessRules {
    #[serde(default)]
    pub domains: Vec<Domain>,
    #[serde(default)]
    pub range_rules: Vec<RangeRule>,
    #[serde(default)]
    pub consistency_rules: Vec<OrderRule>,
    #[serde(default)]
    pub credibility_rules: Vec<CredibilityRule>,
    #[serde(default)]
    pub relevance: Option<RelevanceDefs>,
    #[serde(default)]
    pub format_notes: String,
}

impl FitnessRules {
    fn check_weights(&self) -> Result<(), FitnessError> {
        let sum: f64 = self.domains.iter().map(|d| d.weight).sum();
        if self.domains.iter().any(|d| !(d.weight > 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(FitnessError::InvalidWeights(sum));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountPct {
    pub n: usize,
    /// Percent, 0–100.
    pub pct: f64,
}

impl CountPct {
    fn of(n: usize, total: usize) -> Self {
        CountPct { n, pct: if total == 0 { 0.0 } else { 100.0 * n as f64 / total as f64 } }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Relevance {
    pub disease_n_pct: CountPct,
    pub outcome_n_pct: CountPct,
    pub exposure_n_pct: CountPct,
    /// Percent of key-confounder cells populated.
    pub confounder_pct: f64,
    pub time_available: bool,
    pub representativeness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reliability {
    /// Equals the error rate (fraction).
    pub quality_pct_error: f64,
    /// Equals 1 - density (fraction).
    pub completeness_pct_missing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitForResearch {
    pub provenance_text: String,
    pub format_notes: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessReport {
    pub density_score: f64,
    pub error_rate: f64,
    pub generalizability_score: f64,
    pub relevance: Relevance,
    pub reliability: Reliability,
    pub fit_for_research: FitForResearch,
}

fn resolve(ds: &Dataset, name: &str) -> Result<Field, FitnessError> {
    Ok(ds.schema().resolve(name)?)
}

fn completeness(ds: &Dataset, columns: &[String]) -> Result<f64, FitnessError> {
    let fields = columns.iter().map(|c| resolve(ds, c)).collect::<Result<Vec<_>, _>>()?;
    let total = ds.len() * fields.len();
    if total == 0 {
        return Ok(1.0);
    }
    let present: usize =
        ds.records().iter().map(|r| fields.iter().filter(|f| r.value(**f).is_some()).count()).sum();
    Ok(present as f64 / total as f64)
}

/// Weight-averaged per-domain completeness.
pub fn data_density_score(ds: &Dataset, rules: &FitnessRules) -> Result<f64, FitnessError> {
    if rules.domains.is_empty() {
        return Ok(1.0);
    }
    rules.check_weights()?;
    let mut score = 0.0;
    for d in &rules.domains {
        score += d.weight * completeness(ds, &d.columns)?;
    }
    Ok(score.clamp(0.0, 1.0))
}

/// Erroneous cells and rule violations over everything checked.
pub fn error_rate(ds: &Dataset, rules: &FitnessRules) -> Result<f64, FitnessError> {
    let mut checked = 0usize;
    let mut errors = 0usize;
    for rule in &rules.range_rules {
        let f = resolve(ds, &rule.column)?;
        let (lo, hi) = (rule.min.map(Scalar::value), rule.max.map(Scalar::value));
        for r in ds.records() {
            if let Some(v) = r.value(f) {
                checked += 1;
                if lo.is_some_and(|lo| v < lo) || hi.is_some_and(|hi| v > hi) {
                    errors += 1;
                }
            }
        }
    }
    for rule in &rules.consistency_rules {
        let (b, a) = (resolve(ds, &rule.before)?, resolve(ds, &rule.after)?);
        for r in ds.records() {
            if let (Some(before), Some(after)) = (r.value(b), r.value(a)) {
                checked += 1;
                if before > after {
                    errors += 1;
                }
            }
        }
    }
    Ok(if checked == 0 { 0.0 } else { errors as f64 / checked as f64 })
}

/// Fraction of evaluated entries judged credible.
pub fn generalizability_score(ds: &Dataset, rules: &FitnessRules) -> Result<f64, FitnessError> {
    if rules.credibility_rules.is_empty() {
        return Err(FitnessError::NoRules);
    }
    let mut evaluated = 0usize;
    let mut credible = 0usize;
    for rule in &rules.credibility_rules {
        let f = resolve(ds, &rule.column)?;
        let pred = rule.predicate.compile(ds.schema())?;
        for r in ds.records() {
            if r.value(f).is_some() {
                evaluated += 1;
                if pred.eval(r) {
                    credible += 1;
                }
            }
        }
    }
    Ok(if evaluated == 0 { 1.0 } else { credible as f64 / evaluated as f64 })
}

fn compile_all(ds: &Dataset, conds: &[Condition]) -> Result<Vec<CompiledCondition>, FitnessError> {
    Ok(conds.iter().map(|c| c.compile(ds.schema())).collect::<Result<_, _>>()?)
}

fn provenance_text(ds: &Dataset) -> String {
    let counts = ds.source_counts();
    ds.provenance()
        .iter()
        .map(|p| {
            let mut s = format!(
                "{} ({}, n={})",
                p.name,
                if p.external { "external" } else { "internal" },
                counts.get(&p.name).copied().unwrap_or(0)
            );
            if let Some(per) = &p.period {
                s.push_str(&format!(" collected {}..{}", per.start, per.end));
            }
            if let Some(a) = &p.ascertainment {
                s.push_str(&format!("; outcome ascertainment: {a}"));
            }
            if let Some(c) = &p.coding_version {
                s.push_str(&format!("; coding: {c}"));
            }
            if !p.notes.is_empty() {
                s.push_str(&format!("; {}", p.notes));
            }
            s
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Relevance, reliability and provenance in one report.
pub fn fitness_report(ds: &Dataset, rules: &FitnessRules) -> Result<FitnessReport, FitnessError> {
    let rel = rules.relevance.as_ref().ok_or(FitnessError::NoRelevanceDefinitions)?;
    let density = data_density_score(ds, rules)?;
    let err = error_rate(ds, rules)?;
    let general = generalizability_score(ds, rules)?;

    let n = ds.len();
    let disease = compile_all(ds, &rel.disease)?;
    let exposure = compile_all(ds, &rel.exposure)?;
    let disease_n = ds.records().iter().filter(|r| disease.iter().all(|c| c.eval(r))).count();
    let exposure_n = ds.records().iter().filter(|r| exposure.iter().all(|c| c.eval(r))).count();
    let outcome_n = ds.records().iter().filter(|r| r.outcome().is_some()).count();
    let confounder_pct = 100.0 * completeness(ds, &rel.key_confounders)?;
    let time_fields = rel.time_variables.iter().map(|c| resolve(ds, c)).collect::<Result<Vec<_>, _>>()?;
    let time_available = ds.records().iter().all(|r| time_fields.iter().all(|f| r.value(*f).is_some()));

    Ok(FitnessReport {
        density_score: density,
        error_rate: err,
        generalizability_score: general,
        relevance: Relevance {
            disease_n_pct: CountPct::of(disease_n, n),
            outcome_n_pct: CountPct::of(outcome_n, n),
            exposure_n_pct: CountPct::of(exposure_n, n),
            confounder_pct,
            time_available,
            representativeness: general,
        },
        reliability: Reliability { quality_pct_error: err, completeness_pct_missing: 1.0 - density },
        fit_for_research: FitForResearch {
            provenance_text: provenance_text(ds),
            format_notes: rules.format_notes.clone(),
        },
    })
}
