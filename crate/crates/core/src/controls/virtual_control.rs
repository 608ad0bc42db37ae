//! Virtual controls: counterfactual outcomes for treated subjects predicted
//! by a model trained on external untreated patients.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{ArmDiagnostics, ConstructionMethod, ControlArm, ControlError, Exclusion, Member};
use crate::data::Dataset;
use crate::estimators::{fit_outcome_model, AnalysisSample, DeltaHandling, EstimationError, OutcomeModelSpec};
use crate::rng;

fn default_validation() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualConfig {
    /// Outcome model on C. Any treatment term is ignored.
    #[serde(default)]
    pub model: OutcomeModelSpec,
    #[serde(default = "default_validation")]
    pub validation_fraction: f64,
    pub seed: u64,
}

impl VirtualConfig {
    pub fn new(seed: u64) -> Self {
        VirtualConfig { model: OutcomeModelSpec::default(), validation_fraction: default_validation(), seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualDiagnostics {
    pub n_train: usize,
    pub n_validation: usize,
    /// Brier score (binary) or mean squared error on the held-out split,
    /// using the model fitted on the training split.
    pub validation_error: Option<f64>,
    /// Mean observed minus mean predicted on the held-out split.
    pub validation_calibration: Option<f64>,
    /// Mean observed outcome of treated subjects minus their mean predicted
    /// counterfactual.
    pub effect: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualControl {
    /// (treated id, predicted control outcome).
    pub predictions: Vec<(String, f64)>,
    pub arm: ControlArm,
}

fn schema_error(e: EstimationError) -> ControlError {
    match e {
        EstimationError::UnknownCovariate(c) => ControlError::SchemaMismatch(c),
        other => ControlError::ModelFit(other),
    }
}

fn check_schema(external: &AnalysisSample, treated: &Dataset) -> Result<(), ControlError> {
    for name in &external.covariate_names {
        if treated.schema().column_index(name).is_none() {
            return Err(ControlError::SchemaMismatch(name.clone()));
        }
    }
    Ok(())
}

pub fn virtual_control(external_naive: &Dataset, treated: &Dataset, cfg: &VirtualConfig) -> Result<VirtualControl, ControlError> {
    if let Some(r) = external_naive.records().iter().find(|r| r.treatment.is_treated()) {
        return Err(ControlError::NotObservedControl(r.id.clone()));
    }
    if !(0.0..1.0).contains(&cfg.validation_fraction) {
        return Err(ControlError::InvalidArgument(format!("validation fraction {}", cfg.validation_fraction)));
    }
    let spec = OutcomeModelSpec { treatment: false, interactions: false, ..cfg.model.clone() };
    let train_all = AnalysisSample::from_dataset(external_naive, spec.covariates.as_deref(), DeltaHandling::CompleteCase).map_err(schema_error)?;
    check_schema(&train_all, treated)?;
    if train_all.is_empty() {
        return Err(ControlError::InsufficientData("no complete external cases".into()));
    }
    let names = train_all.covariate_names.clone();
    let treated_sample = AnalysisSample::from_dataset(treated, Some(&names), DeltaHandling::ObservationWeighted).map_err(schema_error)?;
    if treated_sample.is_empty() {
        return Err(ControlError::EmptyTreatedArm);
    }

    // seeded hold-out split for validation
    let mut idx: Vec<usize> = (0..train_all.len()).collect();
    idx.shuffle(&mut rng::root(cfg.seed));
    let n_val = (cfg.validation_fraction * train_all.len() as f64).round() as usize;
    let (val, fit) = idx.split_at(n_val);
    let (validation_error, validation_calibration) = if n_val > 0 && !fit.is_empty() {
        let model = fit_outcome_model(&train_all.select(fit), &spec)?;
        let v = train_all.select(val);
        let pred: Vec<f64> = v.rows.iter().map(|r| model.predict(r, 0.0)).collect();
        let n = pred.len() as f64;
        let err = pred.iter().zip(&v.outcome).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / n;
        let cal = (v.outcome.iter().sum::<f64>() - pred.iter().sum::<f64>()) / n;
        (Some(err), Some(cal))
    } else {
        (None, None)
    };

    let model = fit_outcome_model(&train_all, &spec)?;
    let predictions: Vec<(String, f64)> = treated_sample
        .ids
        .iter()
        .zip(&treated_sample.rows)
        .map(|(id, row)| (id.clone(), model.predict(row, 0.0)))
        .collect();
    let observed: Vec<(f64, f64)> = (0..treated_sample.len())
        .filter(|&i| treated_sample.observed[i])
        .map(|i| (treated_sample.outcome[i], predictions[i].1))
        .collect();
    let effect = (!observed.is_empty()).then(|| {
        let n = observed.len() as f64;
        observed.iter().map(|(y, p)| y - p).sum::<f64>() / n
    });

    let kept: std::collections::HashSet<&str> = treated_sample.ids.iter().map(String::as_str).collect();
    let excluded = treated
        .records()
        .iter()
        .filter(|r| !kept.contains(r.id.as_str()))
        .map(|r| Exclusion { id: r.id.clone(), reason: "missing-covariate".into() })
        .collect();
    let arm = ControlArm {
        method: ConstructionMethod::Virtual,
        members: predictions.iter().map(|(id, _)| Member { id: id.clone(), weight: 1.0 }).collect(),
        excluded,
        diagnostics: ArmDiagnostics::Virtual(VirtualDiagnostics {
            n_train: fit.len(),
            n_validation: n_val,
            validation_error,
            validation_calibration,
            effect,
        }),
    };
    Ok(VirtualControl { predictions, arm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controls::tests::controls;
    use crate::data::{Arm, OutcomeKind, Schema, SourceTag, SubjectRecord};

    #[test]
    fn intercept_only_predicts_training_mean() {
        let ext = controls("e", &[0.0, 1.0, 2.0, 3.0, 4.0], &[1.0, 0.0, 1.0, 0.0, 0.0], true);
        let treated = controls("t", &[5.0, 6.0], &[1.0, 1.0], false);
        let cfg = VirtualConfig { model: OutcomeModelSpec::intercept_only(), validation_fraction: 0.2, seed: 1 };
        let v = virtual_control(&ext, &treated, &cfg).unwrap();
        assert!(v.predictions.iter().all(|(_, p)| (p - 0.4).abs() < 1e-12));
        assert_eq!(v.arm.members.len(), 2);
    }

    #[test]
    fn schema_mismatch_and_treated_training() {
        let ext = controls("e", &[0.0, 1.0], &[1.0, 0.0], true);
        let r = SubjectRecord::new("t", vec![Some(1.0)], Arm::Treated, true, Some(1.0), SourceTag::internal("trial"));
        let treated = Dataset::new(Schema::real(&["age"]), OutcomeKind::Binary, vec![r.clone()], vec![]).unwrap();
        assert_eq!(virtual_control(&ext, &treated, &VirtualConfig::new(0)), Err(ControlError::SchemaMismatch("x".into())));
        let bad = Dataset::new(Schema::real(&["x"]), OutcomeKind::Binary, vec![r], vec![]).unwrap();
        assert_eq!(virtual_control(&bad, &bad, &VirtualConfig::new(0)), Err(ControlError::NotObservedControl("t".into())));
    }
}
