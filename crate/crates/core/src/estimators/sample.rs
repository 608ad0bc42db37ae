use serde::{Deserialize, Serialize};

use super::EstimationError;
use crate::data::{Dataset, OutcomeKind};

/// How subjects with Δ = 0 enter the analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DeltaHandling {
    /// Condition on Δ = 1: unobserved subjects are dropped.
    #[default]
    CompleteCase,
    /// Keep unobserved subjects and reweight observed ones by the inverse
    /// of a fitted P(Δ = 1 | A, C).
    ObservationWeighted,
}

/// Numeric analysis view of a dataset: complete cases on the required
/// covariates, with per-subject case weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisSample {
    pub ids: Vec<String>,
    pub covariate_names: Vec<String>,
    /// Which covariates are binary / indicators (used for strata).
    pub discrete: Vec<bool>,
    pub rows: Vec<Vec<f64>>,
    pub treatment: Vec<f64>,
    pub observed: Vec<bool>,
    /// Outcome where observed, 0 otherwise.
    pub outcome: Vec<f64>,
    pub weights: Vec<f64>,
    pub sources: Vec<String>,
    pub outcome_kind: OutcomeKind,
    pub n_dropped: usize,
}

impl AnalysisSample {
    /// Builds the analysis sample, dropping records with a missing value on
    /// any of `covariates` (all schema columns when `None`), and, under
    /// [`DeltaHandling::CompleteCase`], records with Δ = 0.
    pub fn from_dataset(
        ds: &Dataset,
        covariates: Option<&[String]>,
        delta: DeltaHandling,
    ) -> Result<Self, EstimationError> {
        let schema = ds.schema();
        let names: Vec<String> = match covariates {
            Some(c) => c.to_vec(),
            None => schema.columns().iter().map(|c| c.name.clone()).collect(),
        };
        let idx = names
            .iter()
            .map(|n| schema.column_index(n).ok_or_else(|| EstimationError::UnknownCovariate(n.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        let discrete = idx.iter().map(|&i| schema.columns()[i].kind.is_discrete()).collect();

        let mut s = AnalysisSample {
            ids: vec![],
            covariate_names: names,
            discrete,
            rows: vec![],
            treatment: vec![],
            observed: vec![],
            outcome: vec![],
            weights: vec![],
            sources: vec![],
            outcome_kind: ds.outcome_kind(),
            n_dropped: 0,
        };
        for r in ds.records() {
            let row: Option<Vec<f64>> = idx.iter().map(|&i| r.covariates[i]).collect();
            let keep_delta = r.observed || delta == DeltaHandling::ObservationWeighted;
            match row {
                Some(row) if keep_delta => {
                    s.ids.push(r.id.clone());
                    s.rows.push(row);
                    s.treatment.push(r.treatment.indicator());
                    s.observed.push(r.observed);
                    s.outcome.push(r.outcome().unwrap_or(0.0));
                    s.weights.push(1.0);
                    s.sources.push(r.source.label.clone());
                }
                _ => s.n_dropped += 1,
            }
        }
        Ok(s)
    }

    /// Direct construction from columns; every subject observed, unit
    /// weights.
    pub fn from_columns(
        covariate_names: Vec<String>,
        rows: Vec<Vec<f64>>,
        treatment: Vec<f64>,
        outcome: Vec<f64>,
        outcome_kind: OutcomeKind,
    ) -> Self {
        let n = rows.len();
        let discrete = (0..covariate_names.len())
            .map(|j| rows.iter().all(|r| r[j] == 0.0 || r[j] == 1.0))
            .collect();
        AnalysisSample {
            ids: (0..n).map(|i| format!("s{i:07}")).collect(),
            covariate_names,
            discrete,
            rows,
            treatment,
            observed: vec![true; n],
            outcome,
            weights: vec![1.0; n],
            sources: vec!["sample".to_string(); n],
            outcome_kind,
            n_dropped: 0,
        }
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Self {
        assert_eq!(weights.len(), self.len());
        self.weights = weights;
        self
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn has_unobserved(&self) -> bool {
        self.observed.iter().any(|o| !o)
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn arm_indices(&self, treated: bool) -> Vec<usize> {
        (0..self.len()).filter(|&i| (self.treatment[i] == 1.0) == treated).collect()
    }

    /// Column positions of the named covariates (`None` = all).
    pub fn covariate_positions(&self, names: Option<&[String]>) -> Result<Vec<usize>, EstimationError> {
        match names {
            None => Ok((0..self.n_covariates()).collect()),
            Some(names) => names
                .iter()
                .map(|n| {
                    self.covariate_names
                        .iter()
                        .position(|c| c == n)
                        .ok_or_else(|| EstimationError::UnknownCovariate(n.clone()))
                })
                .collect(),
        }
    }

    /// The sample restricted / resampled to `idx` (repeats allowed).
    pub fn select(&self, idx: &[usize]) -> AnalysisSample {
        AnalysisSample {
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            covariate_names: self.covariate_names.clone(),
            discrete: self.discrete.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            treatment: idx.iter().map(|&i| self.treatment[i]).collect(),
            observed: idx.iter().map(|&i| self.observed[i]).collect(),
            outcome: idx.iter().map(|&i| self.outcome[i]).collect(),
            weights: idx.iter().map(|&i| self.weights[i]).collect(),
            sources: idx.iter().map(|&i| self.sources[i].clone()).collect(),
            outcome_kind: self.outcome_kind,
            n_dropped: self.n_dropped,
        }
    }

    /// Maps every observed outcome through `y -> a + b*y`.
    pub fn map_outcome(&self, a: f64, b: f64) -> AnalysisSample {
        let mut s = self.clone();
        for (y, o) in s.outcome.iter_mut().zip(&s.observed) {
            if *o {
                *y = a + b * *y;
            }
        }
        s.outcome_kind = OutcomeKind::Continuous;
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tests::toy;

    #[test]
    fn complete_case_drops_missing_and_unobserved() {
        let ds = toy(12, "x", 0);
        let s = AnalysisSample::from_dataset(&ds, None, DeltaHandling::CompleteCase).unwrap();
        // i % 3 == 0 has missing ecog; i % 4 == 1 unobserved
        let kept: Vec<usize> = (0..12).filter(|i| i % 3 != 0 && i % 4 != 1).collect();
        assert_eq!(s.len(), kept.len());
        assert_eq!(s.n_dropped, 12 - kept.len());
        let only_age = AnalysisSample::from_dataset(&ds, Some(&["age".into()]), DeltaHandling::ObservationWeighted).unwrap();
        assert_eq!(only_age.len(), 12);
        assert!(only_age.has_unobserved());
    }

    #[test]
    fn unknown_covariate() {
        let ds = toy(3, "x", 0);
        assert!(matches!(
            AnalysisSample::from_dataset(&ds, Some(&["bmi".into()]), DeltaHandling::CompleteCase),
            Err(EstimationError::UnknownCovariate(_))
        ));
    }
}
