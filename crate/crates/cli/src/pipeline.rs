//! The analysis stages shared by `estimate` and `replicate`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use extarm_core::controls::{
    hybrid_match, power_prior_arm, select_historical, synthetic_control, test_and_pool, virtual_control, ArmDiagnostics,
    ControlError, MatchConfig, VirtualConfig,
};
use extarm_core::data::{ingest_csv, pool, Dataset, OutcomeKind, SubjectRecord};
use extarm_core::estimators::{
    binomial_response_test, fit_propensity, g_computation, g_computation_bootstrap, identifiability_diagnostics, ipw,
    naive_difference, tmle, AnalysisSample, BinomialTest, BootstrapConfig, EffectEstimate, EstimationError,
    IdentifiabilityReport, Method,
};
use extarm_core::fitness::{fitness_report, FitnessRules};
use extarm_core::rng;
use extarm_core::sensitivity::{causal_gap_sweep, e_value, risk_ratio_from_arms, RiskRatio, SensitivityError};

use crate::config::{AnalysisConfig, ControlConfig, EstimatorConfig, RunConfig, SensitivityConfig};
use crate::report::{ControlSection, EvalueSection, GapSweep, SensitivitySection, SourceFitness};

// child streams of the run seed
const BOOTSTRAP_STREAM: u64 = 1;
const CONTROL_STREAM: u64 = 2;

/// Pipeline stage, named in error messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Estimand,
    Ingest,
    Fitness,
    Control,
    Diagnostics,
    Estimate,
    Sensitivity,
    Simulate,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Estimand => "estimand",
            Stage::Ingest => "ingest",
            Stage::Fitness => "fitness",
            Stage::Control => "control",
            Stage::Diagnostics => "diagnostics",
            Stage::Estimate => "estimate",
            Stage::Sensitivity => "sensitivity",
            Stage::Simulate => "simulate",
            Stage::Output => "output",
        };
        f.write_str(s)
    }
}

pub trait StageExt<T> {
    fn stage(self, stage: Stage) -> anyhow::Result<T>;
}

impl<T, E: Into<anyhow::Error>> StageExt<T> for Result<T, E> {
    fn stage(self, stage: Stage) -> anyhow::Result<T> {
        self.map_err(|e| e.into().context(format!("{stage} stage failed")))
    }
}

pub struct Loaded {
    pub label: String,
    pub dataset: Dataset,
}

pub fn load_sources(cfg: &RunConfig) -> anyhow::Result<Vec<Loaded>> {
    if cfg.sources.is_empty() {
        return Err(anyhow::anyhow!("config declares no sources")).stage(Stage::Ingest);
    }
    cfg.sources
        .iter()
        .map(|s| Ok(Loaded { label: s.label(), dataset: ingest_csv(&s.path, &s.mapping).stage(Stage::Ingest)? }))
        .collect()
}

/// Fitness of the external records of each source that has any, in
/// declaration order.
pub fn audit_sources(loaded: &[Loaded], rules: &FitnessRules) -> anyhow::Result<Vec<SourceFitness>> {
    let mut out = vec![];
    for l in loaded {
        let ext = l.dataset.filter(|r| r.source.external);
        if ext.is_empty() {
            continue;
        }
        let fitness = fitness_report(&ext, rules).map_err(|e| anyhow::anyhow!("source {}: {e}", l.label)).stage(Stage::Fitness)?;
        out.push(SourceFitness { source: l.label.clone(), n_records: ext.len(), fitness });
    }
    Ok(out)
}

fn is_trial_treated(r: &SubjectRecord) -> bool {
    !r.source.external && r.treatment.is_treated()
}

/// The pooled data split by role.
pub struct Partition {
    pub all: Dataset,
    pub treated: Dataset,
    pub internal_controls: Dataset,
    pub external: Dataset,
    pub n_external_treated: usize,
}

impl Partition {
    pub fn new(all: Dataset) -> Self {
        let n_external_treated = all.records().iter().filter(|r| r.source.external && r.treatment.is_treated()).count();
        Partition {
            treated: all.filter(is_trial_treated),
            internal_controls: all.filter(|r| !r.source.external && !r.treatment.is_treated()),
            external: all.filter(|r| r.source.external && !r.treatment.is_treated()),
            all,
            n_external_treated,
        }
    }

    pub fn from_sources(loaded: &[Loaded]) -> anyhow::Result<Self> {
        let sets: Vec<Dataset> = loaded.iter().map(|l| l.dataset.clone()).collect();
        Ok(Partition::new(pool(&sets).stage(Stage::Ingest)?))
    }
}

pub struct Constructed {
    pub section: ControlSection,
    /// Control member weights by id.
    pub weights: BTreeMap<String, f64>,
    /// Treated subjects left out of the comparison (unmatched).
    pub treated_dropped: BTreeSet<String>,
    /// Set for virtual controls, which have no control subjects to compare.
    pub virtual_effect: Option<EffectEstimate>,
}

pub fn construct(p: &Partition, control: &ControlConfig, seed: u64) -> Result<Constructed, ControlError> {
    let seed = rng::child_seed(seed, CONTROL_STREAM);
    let arm = match control {
        ControlConfig::Internal => {
            let weights: BTreeMap<String, f64> =
                p.internal_controls.records().iter().map(|r| (r.id.clone(), 1.0)).collect();
            return Ok(Constructed {
                section: ControlSection {
                    method: control.name().into(),
                    n_treated: p.treated.len(),
                    n_members: weights.len(),
                    total_weight: weights.len() as f64,
                    excluded: vec![],
                    arm: None,
                },
                weights,
                treated_dropped: BTreeSet::new(),
                virtual_effect: None,
            });
        }
        ControlConfig::Historical(crit) => select_historical(&p.external, crit)?,
        ControlConfig::Synthetic { covariates, metric } => {
            let mut arm = synthetic_control(&p.treated, &p.external, covariates, metric.as_deref())?;
            // source weights sum to one; scale to the member count so the
            // arm enters weighted models at its actual size
            let k = arm.members.len() as f64;
            for m in &mut arm.members {
                m.weight *= k;
            }
            arm
        }
        ControlConfig::TestAndPool { alpha } => test_and_pool(&p.internal_controls, &p.external, *alpha)?,
        ControlConfig::PowerPrior { a0, prior } => power_prior_arm(&p.internal_controls, &p.external, *a0, *prior)?,
        ControlConfig::Matched { ratio, caliper, score, covariates } => {
            let cfg = MatchConfig { ratio: *ratio, caliper: *caliper, score: *score, covariates: covariates.clone(), seed };
            hybrid_match(&p.treated, &p.internal_controls, &p.external, &cfg)?
        }
        ControlConfig::Virtual { model, validation_fraction } => {
            let cfg = VirtualConfig { model: model.clone(), validation_fraction: *validation_fraction, seed };
            let vc = virtual_control(&p.external, &p.treated, &cfg)?;
            let effect = match &vc.arm.diagnostics {
                ArmDiagnostics::Virtual(d) => d.effect,
                _ => None,
            };
            let psi_hat = effect.ok_or_else(|| ControlError::InsufficientData("no observed treated outcomes".into()))?;
            let est = EffectEstimate {
                psi_hat,
                method: Method::VirtualControl,
                variance: None,
                ci: None,
                influence: None,
                n_used: vc.predictions.len(),
                n_dropped: vc.arm.excluded.len(),
                diagnostics: Default::default(),
            };
            return Ok(Constructed {
                section: ControlSection {
                    method: control.name().into(),
                    n_treated: p.treated.len(),
                    n_members: 0,
                    total_weight: 0.0,
                    excluded: vc.arm.excluded.clone(),
                    arm: Some(vc.arm),
                },
                weights: BTreeMap::new(),
                treated_dropped: BTreeSet::new(),
                virtual_effect: Some(est),
            });
        }
    };
    let treated_dropped = match &arm.diagnostics {
        ArmDiagnostics::Matched(d) => d.unmatched_treated.iter().cloned().collect(),
        _ => BTreeSet::new(),
    };
    let weights = arm.members.iter().map(|m| (m.id.clone(), m.weight)).collect();
    Ok(Constructed {
        section: ControlSection {
            method: control.name().into(),
            n_treated: p.treated.len() - treated_dropped.len(),
            n_members: arm.members.len(),
            total_weight: arm.total_weight(),
            excluded: arm.excluded.clone(),
            arm: Some(arm),
        },
        weights,
        treated_dropped,
        virtual_effect: None,
    })
}

/// Trial treated subjects plus the constructed arm, with member weights as
/// case weights.
pub fn analysis_sample(p: &Partition, c: &Constructed, analysis: &AnalysisConfig) -> Result<AnalysisSample, EstimationError> {
    let ds = p.all.filter(|r| (is_trial_treated(r) && !c.treated_dropped.contains(&r.id)) || c.weights.contains_key(&r.id));
    let sample = AnalysisSample::from_dataset(&ds, analysis.covariates.as_deref(), analysis.delta)?;
    let weights = sample.ids.iter().map(|id| c.weights.get(id).copied().unwrap_or(1.0)).collect();
    Ok(sample.with_weights(weights))
}

pub fn diagnostics(s: &AnalysisSample, est: &EstimatorConfig, p: &Partition) -> Result<IdentifiabilityReport, EstimationError> {
    let spec = est
        .ipw
        .as_ref()
        .map(|c| c.propensity.clone())
        .or_else(|| est.tmle.as_ref().map(|c| c.propensity.clone()))
        .unwrap_or_default();
    let ps = fit_propensity(s, &spec)?;
    Ok(identifiability_diagnostics(s, &ps, p.all.provenance()))
}

/// Runs the selected effect estimators in a fixed order, labelled.
pub fn run_estimators(s: &AnalysisSample, est: &EstimatorConfig, seed: u64) -> Vec<(&'static str, Result<EffectEstimate, EstimationError>)> {
    let level = est.level;
    let mut out = vec![];
    if est.naive {
        out.push(("naive", naive_difference(s, level)));
    }
    if let Some(g) = &est.gcomp {
        let r = match g.bootstrap {
            Some(replicates) => {
                let cfg = BootstrapConfig { replicates, level, seed: rng::child_seed(seed, BOOTSTRAP_STREAM) };
                g_computation_bootstrap(s, &g.model, &cfg)
            }
            None => g_computation(s, &g.model),
        };
        out.push(("gcomp", r));
    }
    if let Some(c) = &est.ipw {
        out.push(("ipw", fit_propensity(s, &c.propensity).and_then(|ps| ipw(s, &ps, c.weighting, level))));
    }
    if let Some(c) = &est.tmle {
        out.push(("tmle", tmle(s, &c.outcome, &c.propensity, level).map(|(e, _)| e)));
    }
    out
}

/// Exact test on the trial's observed treated outcomes.
pub fn single_arm(p: &Partition, est: &EstimatorConfig) -> Result<Option<BinomialTest>, EstimationError> {
    let Some(b) = &est.binomial else { return Ok(None) };
    if p.all.outcome_kind() != OutcomeKind::Binary {
        return Err(EstimationError::InvalidArgument("the binomial test needs a binary outcome".into()));
    }
    let ys: Vec<f64> = p.treated.records().iter().filter_map(SubjectRecord::outcome).collect();
    let x = ys.iter().filter(|y| **y == 1.0).count() as u64;
    binomial_response_test(x, ys.len() as u64, b.p0, b.alpha, b.p1).map(Some)
}

fn weighted_arm_means(s: &AnalysisSample) -> (f64, f64) {
    let mut sums = [(0.0, 0.0); 2];
    for i in 0..s.len() {
        if s.observed[i] {
            let a = s.treatment[i] as usize;
            sums[a].0 += s.weights[i] * s.outcome[i];
            sums[a].1 += s.weights[i];
        }
    }
    (sums[1].0 / sums[1].1, sums[0].0 / sums[0].1)
}

pub fn sensitivity(estimates: &[EffectEstimate], s: &AnalysisSample, cfg: &SensitivityConfig, level: f64) -> Result<SensitivitySection, SensitivityError> {
    let mut out = SensitivitySection::default();
    let grid = cfg.grid.values().map_err(|e| SensitivityError::InvalidCounts(e.to_string()))?;
    for e in estimates.iter().filter(|e| e.ci.is_some()) {
        out.causal_gap.push(GapSweep { method: e.method, sweep: causal_gap_sweep(e, &grid)? });
    }
    if !cfg.evalue {
        return Ok(out);
    }
    if s.outcome_kind != OutcomeKind::Binary {
        out.notes.push("E-value skipped: outcome is not binary".into());
        return Ok(out);
    }
    let unit = s.weights.iter().all(|w| *w == 1.0);
    let rr = if unit {
        let count = |a: f64| {
            let idx: Vec<usize> = (0..s.len()).filter(|&i| s.observed[i] && s.treatment[i] == a).collect();
            (idx.iter().filter(|&&i| s.outcome[i] == 1.0).count() as u64, idx.len() as u64)
        };
        match risk_ratio_from_arms(count(1.0), count(0.0), level) {
            Ok(rr) => rr,
            Err(SensitivityError::ZeroControlRate) => {
                out.notes.push("E-value skipped: control arm has no events".into());
                return Ok(out);
            }
            Err(e) => return Err(e),
        }
    } else {
        let (p1, p0) = weighted_arm_means(s);
        if !(p0 > 0.0) {
            out.notes.push("E-value skipped: control arm has no events".into());
            return Ok(out);
        }
        out.notes.push("weighted control arm: risk ratio from weighted means, without interval".into());
        RiskRatio { rr: p1 / p0, ci: None, level }
    };
    let bound = rr.ci.map(|(lo, hi)| if rr.rr >= 1.0 { lo } else { hi });
    out.evalue = Some(EvalueSection { evalue: e_value(rr.rr, bound)?, risk_ratio: rr });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use extarm_core::simulate::{generate, scenario};

    #[test]
    fn internal_arm_is_all_concurrent_controls() {
        let (ds, _) = generate(&scenario("G1").unwrap(), 300, 9).unwrap();
        let p = Partition::new(ds);
        let c = construct(&p, &ControlConfig::Internal, 1).unwrap();
        assert_eq!(c.weights.len(), p.internal_controls.len());
        let s = analysis_sample(&p, &c, &AnalysisConfig::default()).unwrap();
        assert_eq!(s.len(), 300);
        assert!(s.weights.iter().all(|w| *w == 1.0));
    }

    #[test]
    fn synthetic_weights_scale_to_member_count() {
        let (ds, _) = generate(&scenario("HYBRID-OK").unwrap(), 150, 4).unwrap();
        let p = Partition::new(ds);
        let ctl = ControlConfig::Synthetic { covariates: vec!["c1".into(), "c2".into()], metric: None };
        let c = construct(&p, &ctl, 1).unwrap();
        assert!((c.section.total_weight - c.section.n_members as f64).abs() < 1e-9);
    }

    #[test]
    fn stage_names_prefix_errors() {
        let r: Result<(), ControlError> = Err(ControlError::EmptyTreatedArm);
        let e = r.stage(Stage::Control).unwrap_err();
        assert_eq!(format!("{e:#}"), "control stage failed: treated arm is empty");
    }
}
