//! Nuisance models: outcome regression Q(a, c), propensity score g(1, c) and
//! the observation model P(Δ = 1 | A, C).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::glm::{self, expit, Convergence, FitError, FitOptions};
use super::{AnalysisSample, EstimationError};
use crate::data::OutcomeKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Logistic,
    Linear,
}

fn yes() -> bool {
    true
}

/// Terms of an outcome regression on (A, C).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeModelSpec {
    /// Defaults to logistic for binary outcomes, linear otherwise.
    #[serde(default)]
    pub family: Option<Family>,
    /// Covariate names; `None` uses every covariate in the sample.
    #[serde(default)]
    pub covariates: Option<Vec<String>>,
    #[serde(default = "yes")]
    pub treatment: bool,
    /// Adds A×C terms for every covariate.
    #[serde(default)]
    pub interactions: bool,
}

impl Default for OutcomeModelSpec {
    fn default() -> Self {
        OutcomeModelSpec { family: None, covariates: None, treatment: true, interactions: false }
    }
}

impl OutcomeModelSpec {
    /// A + C + A×C over all covariates; saturated when C is a single
    /// binary covariate.
    pub fn with_interactions() -> Self {
        OutcomeModelSpec { interactions: true, ..Default::default() }
    }

    pub fn intercept_only() -> Self {
        OutcomeModelSpec { family: None, covariates: Some(vec![]), treatment: false, interactions: false }
    }

    pub fn family_for(&self, kind: OutcomeKind) -> Family {
        self.family.unwrap_or(match kind {
            OutcomeKind::Binary => Family::Logistic,
            OutcomeKind::Continuous => Family::Linear,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "term", content = "index", rename_all = "lowercase")]
pub enum Term {
    Intercept,
    Treatment,
    Covariate(usize),
    Interaction(usize),
}

fn term_value(t: Term, row: &[f64], a: f64) -> f64 {
    match t {
        Term::Intercept => 1.0,
        Term::Treatment => a,
        Term::Covariate(j) => row[j],
        Term::Interaction(j) => a * row[j],
    }
}

fn design(terms: &[Term], rows: &[&[f64]], a: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), terms.len(), |i, k| term_value(terms[k], rows[i], a[i]))
}

/// A fitted outcome regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeModel {
    pub family: Family,
    pub terms: Vec<Term>,
    pub coefficients: Vec<f64>,
    /// Set when every training outcome is identical; predictions are then
    /// that constant.
    pub constant: Option<f64>,
}

impl OutcomeModel {
    pub fn predict(&self, row: &[f64], a: f64) -> f64 {
        if let Some(c) = self.constant {
            return c;
        }
        let eta: f64 = self.terms.iter().zip(&self.coefficients).map(|(t, b)| b * term_value(*t, row, a)).sum();
        match self.family {
            Family::Logistic => expit(eta),
            Family::Linear => eta,
        }
    }

    /// Q(1, c_i) and Q(0, c_i) for every subject in the sample.
    pub fn counterfactual_predictions(&self, sample: &AnalysisSample) -> (Vec<f64>, Vec<f64>) {
        sample.rows.iter().map(|r| (self.predict(r, 1.0), self.predict(r, 0.0))).unzip()
    }
}

pub(crate) fn map_fit_error(e: FitError) -> EstimationError {
    match e {
        FitError::PerfectSeparation => EstimationError::PerfectSeparation,
        other => EstimationError::ModelFit(other.to_string()),
    }
}

/// Fits Q on observed subjects of `sample` with the sample's case weights.
pub fn fit_outcome_model(sample: &AnalysisSample, spec: &OutcomeModelSpec) -> Result<OutcomeModel, EstimationError> {
    fit_outcome_model_on(sample, spec, &sample.outcome)
}

/// As [`fit_outcome_model`] with a substitute response vector (e.g. a
/// rescaled outcome).
pub fn fit_outcome_model_on(
    sample: &AnalysisSample,
    spec: &OutcomeModelSpec,
    y: &[f64],
) -> Result<OutcomeModel, EstimationError> {
    let family = spec.family_for(sample.outcome_kind);
    let positions = sample.covariate_positions(spec.covariates.as_deref())?;
    let mut terms = vec![Term::Intercept];
    if spec.treatment {
        terms.push(Term::Treatment);
    }
    terms.extend(positions.iter().map(|&j| Term::Covariate(j)));
    if spec.interactions && spec.treatment {
        terms.extend(positions.iter().map(|&j| Term::Interaction(j)));
    }

    let obs: Vec<usize> = (0..sample.len()).filter(|&i| sample.observed[i]).collect();
    if obs.is_empty() {
        return Err(EstimationError::InsufficientData("no observed outcomes".into()));
    }
    let ys: Vec<f64> = obs.iter().map(|&i| y[i]).collect();
    if ys.iter().all(|v| *v == ys[0]) {
        return Ok(OutcomeModel { family, terms, coefficients: vec![], constant: Some(ys[0]) });
    }
    let rows: Vec<&[f64]> = obs.iter().map(|&i| sample.rows[i].as_slice()).collect();
    let a: Vec<f64> = obs.iter().map(|&i| sample.treatment[i]).collect();
    let w: Vec<f64> = obs.iter().map(|&i| sample.weights[i]).collect();
    let x = design(&terms, &rows, &a);
    let coefficients = match family {
        Family::Logistic => {
            glm::fit_logistic(&x, &ys, FitOptions { offset: None, weights: Some(&w) }).map_err(map_fit_error)?.coefficients
        }
        Family::Linear => glm::fit_linear(&x, &ys, Some(&w)).map_err(map_fit_error)?,
    };
    Ok(OutcomeModel { family, terms, coefficients, constant: None })
}

pub const DEFAULT_TRUNCATION: (f64, f64) = (0.01, 0.99);

fn default_truncation() -> (f64, f64) {
    DEFAULT_TRUNCATION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensitySpec {
    /// Covariate names; `None` uses every covariate.
    #[serde(default)]
    pub covariates: Option<Vec<String>>,
    #[serde(default = "default_truncation")]
    pub truncation: (f64, f64),
}

impl Default for PropensitySpec {
    fn default() -> Self {
        PropensitySpec { covariates: None, truncation: DEFAULT_TRUNCATION }
    }
}

impl PropensitySpec {
    pub fn intercept_only() -> Self {
        PropensitySpec { covariates: Some(vec![]), truncation: DEFAULT_TRUNCATION }
    }
}

/// Fitted propensity scores g(1, c_i), raw and truncated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    pub covariate_names: Vec<String>,
    /// Intercept first, then one per covariate. Empty for supplied scores.
    pub coefficients: Vec<f64>,
    pub raw_scores: Vec<f64>,
    pub scores: Vec<f64>,
    pub bounds: (f64, f64),
    pub n_truncated: usize,
    pub convergence: Option<Convergence>,
}

impl PropensityModel {
    /// Wraps externally computed scores (e.g. within-stratum treated
    /// fractions), applying truncation.
    pub fn from_scores(raw_scores: Vec<f64>, bounds: (f64, f64)) -> Self {
        let scores: Vec<f64> = raw_scores.iter().map(|p| p.clamp(bounds.0, bounds.1)).collect();
        let n_truncated = raw_scores.iter().zip(&scores).filter(|(a, b)| a != b).count();
        PropensityModel {
            covariate_names: vec![],
            coefficients: vec![],
            raw_scores,
            scores,
            bounds,
            n_truncated,
            convergence: None,
        }
    }

    pub fn truncated(&self) -> Vec<bool> {
        self.raw_scores.iter().zip(&self.scores).map(|(a, b)| a != b).collect()
    }
}

/// Logistic propensity model on the whole sample (observed or not).
pub fn fit_propensity(sample: &AnalysisSample, spec: &PropensitySpec) -> Result<PropensityModel, EstimationError> {
    let (lo, hi) = spec.truncation;
    if !(0.0 < lo && lo <= hi && hi < 1.0) {
        return Err(EstimationError::InvalidArgument(format!("truncation bounds ({lo}, {hi})")));
    }
    let n_treated = sample.treatment.iter().filter(|a| **a == 1.0).count();
    if n_treated == 0 || n_treated == sample.len() {
        return Err(EstimationError::SingleArmSample);
    }
    let positions = sample.covariate_positions(spec.covariates.as_deref())?;
    let x = DMatrix::from_fn(sample.len(), positions.len() + 1, |i, k| {
        if k == 0 {
            1.0
        } else {
            sample.rows[i][positions[k - 1]]
        }
    });
    let fit = glm::fit_logistic(&x, &sample.treatment, FitOptions { offset: None, weights: Some(&sample.weights) })
        .map_err(map_fit_error)?;
    let raw: Vec<f64> = (0..sample.len())
        .map(|i| expit(fit.coefficients[0] + positions.iter().enumerate().map(|(k, &j)| fit.coefficients[k + 1] * sample.rows[i][j]).sum::<f64>()))
        .collect();
    let mut model = PropensityModel::from_scores(raw, (lo, hi));
    model.covariate_names = positions.iter().map(|&j| sample.covariate_names[j].clone()).collect();
    model.coefficients = fit.coefficients;
    model.convergence = Some(fit.convergence);
    Ok(model)
}

/// Fitted P(Δ = 1 | A = a, C = c_i) for a = 1 and a = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationModel {
    pub treated: Vec<f64>,
    pub control: Vec<f64>,
}

impl ObservationModel {
    pub fn at(&self, i: usize, a: f64) -> f64 {
        if a == 1.0 {
            self.treated[i]
        } else {
            self.control[i]
        }
    }
}

/// Logistic model for Δ on (A, C), bounded below by `lower`. When every
/// subject is observed the model is identically 1.
pub fn fit_observation_model(sample: &AnalysisSample, lower: f64) -> Result<ObservationModel, EstimationError> {
    let n = sample.len();
    if !sample.has_unobserved() {
        return Ok(ObservationModel { treated: vec![1.0; n], control: vec![1.0; n] });
    }
    let p = sample.n_covariates();
    let x = DMatrix::from_fn(n, p + 2, |i, k| match k {
        0 => 1.0,
        1 => sample.treatment[i],
        _ => sample.rows[i][k - 2],
    });
    let delta: Vec<f64> = sample.observed.iter().map(|o| if *o { 1.0 } else { 0.0 }).collect();
    let fit = glm::fit_logistic(&x, &delta, FitOptions { offset: None, weights: Some(&sample.weights) })
        .map_err(map_fit_error)?;
    let b = &fit.coefficients;
    let at = |i: usize, a: f64| {
        let eta = b[0] + b[1] * a + (0..p).map(|j| b[j + 2] * sample.rows[i][j]).sum::<f64>();
        expit(eta).max(lower)
    };
    Ok(ObservationModel { treated: (0..n).map(|i| at(i, 1.0)).collect(), control: (0..n).map(|i| at(i, 0.0)).collect() })
}
