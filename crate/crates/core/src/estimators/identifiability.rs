//! Diagnostics for consistency, positivity and exchangeability.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{AnalysisSample, PropensityModel};
use crate::data::SourceInfo;

pub const SMD_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumCell {
    /// `name=value` for each discrete covariate.
    pub stratum: String,
    pub n_treated: usize,
    pub n_control: usize,
    pub single_arm: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositivityReport {
    pub min_score: f64,
    pub max_score: f64,
    pub below_lower: usize,
    pub above_upper: usize,
    pub strata: Vec<StratumCell>,
    pub flagged_strata: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Balance {
    pub covariate: String,
    pub mean_treated: f64,
    pub mean_control: f64,
    pub smd: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    /// Ascertainment label per source present in the sample.
    pub ascertainment: BTreeMap<String, Option<String>>,
    pub flagged: bool,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifiabilityReport {
    pub positivity: PositivityReport,
    pub exchangeability: Vec<Balance>,
    pub consistency: ConsistencyReport,
}

fn fmt_value(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

pub fn identifiability_diagnostics(
    sample: &AnalysisSample,
    ps: &PropensityModel,
    provenance: &[SourceInfo],
) -> IdentifiabilityReport {
    let (lo, hi) = ps.bounds;
    let raw = &ps.raw_scores;
    let min_score = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let max_score = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let discrete: Vec<usize> = (0..sample.n_covariates()).filter(|&j| sample.discrete[j]).collect();
    let mut cells: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (i, row) in sample.rows.iter().enumerate() {
        let key = if discrete.is_empty() {
            "all".to_string()
        } else {
            discrete.iter().map(|&j| format!("{}={}", sample.covariate_names[j], fmt_value(row[j]))).collect::<Vec<_>>().join(",")
        };
        let cell = cells.entry(key).or_default();
        if sample.treatment[i] == 1.0 {
            cell.0 += 1;
        } else {
            cell.1 += 1;
        }
    }
    let strata: Vec<StratumCell> = cells
        .into_iter()
        .map(|(stratum, (t, c))| StratumCell { stratum, n_treated: t, n_control: c, single_arm: t == 0 || c == 0 })
        .collect();
    let flagged_strata = strata.iter().filter(|c| c.single_arm).map(|c| c.stratum.clone()).collect();

    let exchangeability = (0..sample.n_covariates())
        .map(|j| {
            let moments = |treated: bool| {
                let idx = sample.arm_indices(treated);
                let w: f64 = idx.iter().map(|&i| sample.weights[i]).sum();
                let m = idx.iter().map(|&i| sample.weights[i] * sample.rows[i][j]).sum::<f64>() / w;
                let v = idx.iter().map(|&i| sample.weights[i] * (sample.rows[i][j] - m).powi(2)).sum::<f64>() / w;
                (m, v)
            };
            let (m1, v1) = moments(true);
            let (m0, v0) = moments(false);
            let sd = ((v1 + v0) / 2.0).sqrt();
            let smd = if sd > 0.0 {
                (m1 - m0) / sd
            } else if m1 == m0 {
                0.0
            } else {
                f64::INFINITY.copysign(m1 - m0)
            };
            Balance {
                covariate: sample.covariate_names[j].clone(),
                mean_treated: m1,
                mean_control: m0,
                smd,
                flagged: !(smd.abs() <= SMD_THRESHOLD),
            }
        })
        .collect();

    let present: BTreeSet<&str> = sample.sources.iter().map(String::as_str).collect();
    let ascertainment: BTreeMap<String, Option<String>> = present
        .iter()
        .map(|s| (s.to_string(), provenance.iter().find(|p| p.name == *s).and_then(|p| p.ascertainment.clone())))
        .collect();
    let labels: BTreeSet<&String> = ascertainment.values().flatten().collect();
    let mut notes = vec![];
    let flagged = labels.len() > 1;
    if flagged {
        notes.push(format!(
            "outcome ascertainment differs across sources: {}",
            labels.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(" / ")
        ));
    }
    let unknown: Vec<&String> = ascertainment.iter().filter(|(_, v)| v.is_none()).map(|(k, _)| k).collect();
    if !unknown.is_empty() && ascertainment.len() > 1 {
        notes.push(format!(
            "no ascertainment label for: {}",
            unknown.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
        ));
    }

    IdentifiabilityReport {
        positivity: PositivityReport {
            min_score,
            max_score,
            below_lower: raw.iter().filter(|p| **p < lo).count(),
            above_upper: raw.iter().filter(|p| **p > hi).count(),
            strata,
            flagged_strata,
        },
        exchangeability,
        consistency: ConsistencyReport { ascertainment, flagged, notes },
    }
}
