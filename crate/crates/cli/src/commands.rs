use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use extarm_core::data::export_csv;
use extarm_core::estimand::validate_estimand;
use extarm_core::estimators::{EffectEstimate, EstimationError};
use extarm_core::rng;
use extarm_core::simulate::{generate, operating_characteristics, run_replicates, true_ate, ScmConfig};

use crate::config::{ControlConfig, RunConfig, MIN_REPLICATES};
use crate::pipeline::{
    analysis_sample, audit_sources, construct, diagnostics, load_sources, run_estimators, sensitivity, single_arm,
    Partition, Stage, StageExt,
};
use crate::report::{
    analysis_summary, audit_summary, replicate_summary, to_json, AnalysisReport, AuditReport, EstimateEntry,
    Provenance, ReplicateReport, SensitivitySection, TruthSidecar, SCHEMA_VERSION,
};

// truth draws use a stream no replicate index can reach
const TRUTH_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Default)]
pub struct Options {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// A finished command: the JSON document, a short text summary, and where
/// the document should go (stdout when `None`).
pub struct Outcome {
    pub json: String,
    pub summary: String,
    pub path: Option<PathBuf>,
}

pub fn load(opts: &Options) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::load(&opts.config).stage(Stage::Config)?;
    if let Some(seed) = opts.seed {
        cfg.seed = Some(seed);
    }
    Ok(cfg)
}

fn out_path(opts: &Options, cfg: &RunConfig) -> Option<PathBuf> {
    opts.out.clone().or_else(|| cfg.output.clone())
}

pub fn audit(opts: &Options) -> anyhow::Result<Outcome> {
    let cfg = load(opts)?;
    let rules = cfg.fitness.as_ref().context("config has no [fitness] rules").stage(Stage::Config)?;
    let loaded = load_sources(&cfg)?;
    let sources = audit_sources(&loaded, rules)?;
    if sources.is_empty() {
        return Err(anyhow!("no declared source has external records")).stage(Stage::Fitness);
    }
    let report = AuditReport { schema_version: SCHEMA_VERSION, command: "audit", sources, provenance: Provenance::new(&cfg) };
    Ok(Outcome { json: to_json(&report)?, summary: audit_summary(&report), path: out_path(opts, &cfg) })
}

pub fn estimate(opts: &Options) -> anyhow::Result<Outcome> {
    let cfg = load(opts)?;
    // every config check runs before any data is touched
    let seed = cfg.require_seed().stage(Stage::Config)?;
    let control = cfg.require_control().stage(Stage::Config)?;
    if !cfg.estimators.any_selected() && !matches!(control, ControlConfig::Virtual { .. }) {
        return Err(anyhow!("no estimators selected")).stage(Stage::Config);
    }
    cfg.sensitivity.grid.values().stage(Stage::Config)?;
    let spec = cfg.estimand.clone().context("config has no [estimand] section").stage(Stage::Config)?;
    let estimand = validate_estimand(spec).stage(Stage::Estimand)?;

    let loaded = load_sources(&cfg)?;
    let fitness = match &cfg.fitness {
        Some(rules) => audit_sources(&loaded, rules)?,
        None => vec![],
    };
    let partition = Partition::from_sources(&loaded)?;
    let constructed = construct(&partition, control, seed).stage(Stage::Control)?;

    let mut notes = vec![];
    if partition.n_external_treated > 0 {
        notes.push(format!("{} treated records from external sources were ignored", partition.n_external_treated));
    }
    let mut effects: Vec<EffectEstimate> = vec![];
    let mut diag = None;
    let mut sample = None;
    if let Some(v) = &constructed.virtual_effect {
        effects.push(v.clone());
        if cfg.estimators.naive || cfg.estimators.gcomp.is_some() || cfg.estimators.ipw.is_some() || cfg.estimators.tmle.is_some() {
            notes.push("virtual controls have no control subjects; comparative estimators were not run".into());
        }
    } else {
        let s = analysis_sample(&partition, &constructed, &cfg.analysis).stage(Stage::Estimate)?;
        diag = Some(diagnostics(&s, &cfg.estimators, &partition).stage(Stage::Diagnostics)?);
        for (label, r) in run_estimators(&s, &cfg.estimators, seed) {
            effects.push(r.map_err(|e| anyhow!("{label}: {e}")).stage(Stage::Estimate)?);
        }
        sample = Some(s);
    }
    let single = single_arm(&partition, &cfg.estimators).stage(Stage::Estimate)?;
    let sens = match &sample {
        Some(s) => sensitivity(&effects, s, &cfg.sensitivity, cfg.estimators.level).stage(Stage::Sensitivity)?,
        None => SensitivitySection { notes: vec!["sensitivity analysis needs an interval estimate".into()], ..Default::default() },
    };

    let report = AnalysisReport {
        schema_version: SCHEMA_VERSION,
        command: "estimate",
        estimand,
        fitness,
        control_arm: constructed.section,
        diagnostics: diag,
        estimates: effects.iter().map(EstimateEntry::from).collect(),
        single_arm: single,
        sensitivity: sens,
        notes,
        provenance: Provenance::new(&cfg),
    };
    Ok(Outcome { json: to_json(&report)?, summary: analysis_summary(&report), path: out_path(opts, &cfg) })
}

/// ψ, its Monte Carlo SE, method label and draw count.
fn truth(scm: &ScmConfig, draws: usize, seed: u64) -> anyhow::Result<(f64, f64, &'static str, usize)> {
    if let Some(psi) = scm.closed_form_ate() {
        return Ok((psi, 0.0, "closed-form", 0));
    }
    let t = true_ate(scm, draws, rng::child_seed(seed, TRUTH_STREAM)).stage(Stage::Simulate)?;
    Ok((t.psi_true, t.mc_standard_error, "monte-carlo", t.draws))
}

/// `data.csv` → `data.truth.json`.
pub fn sidecar_path(data: &Path) -> PathBuf {
    data.with_extension("truth.json")
}

pub fn simulate(opts: &Options) -> anyhow::Result<Outcome> {
    let cfg = load(opts)?;
    let seed = cfg.require_seed().stage(Stage::Config)?;
    let sim = cfg.require_simulation().stage(Stage::Config)?;
    let scm = sim.resolve().stage(Stage::Config)?;
    let data_path = out_path(opts, &cfg).context("an output path is required (--out or `output`)").stage(Stage::Config)?;

    let (ds, _) = generate(&scm, sim.n, seed).stage(Stage::Simulate)?;
    let (psi_true, se, method, draws) = truth(&scm, sim.truth_draws, seed)?;
    export_csv(&ds, &data_path).stage(Stage::Output)?;
    let sidecar = TruthSidecar {
        schema_version: SCHEMA_VERSION,
        command: "simulate",
        scenario: scm.name.clone(),
        n: sim.n,
        n_records: ds.len(),
        data_path: data_path.display().to_string(),
        psi_true,
        mc_standard_error: se,
        truth_method: method,
        truth_draws: draws,
        provenance: Provenance::new(&cfg),
    };
    let summary = format!(
        "{}: wrote {} records to {}; psi_true = {:.6} ({}, SE {:.2e})\n",
        scm.name,
        ds.len(),
        data_path.display(),
        psi_true,
        method,
        se
    );
    Ok(Outcome { json: to_json(&sidecar)?, summary, path: Some(sidecar_path(&data_path)) })
}

fn labels(cfg: &RunConfig, control: &ControlConfig) -> Vec<&'static str> {
    if matches!(control, ControlConfig::Virtual { .. }) {
        return vec!["virtual"];
    }
    let e = &cfg.estimators;
    [("naive", e.naive), ("gcomp", e.gcomp.is_some()), ("ipw", e.ipw.is_some()), ("tmle", e.tmle.is_some())]
        .into_iter()
        .filter_map(|(l, on)| on.then_some(l))
        .collect()
}

/// One generate → construct → estimate pass; every label gets a result.
fn one_replicate(cfg: &RunConfig, scm: &ScmConfig, control: &ControlConfig, labels: &[&'static str], n: usize, seed: u64) -> Vec<Result<EffectEstimate, String>> {
    let fail_all = |e: String| labels.iter().map(|_| Err(e.clone())).collect();
    let ds = match generate(scm, n, seed) {
        Ok((ds, _)) => ds,
        Err(e) => return fail_all(e.to_string()),
    };
    let p = Partition::new(ds);
    let c = match construct(&p, control, seed) {
        Ok(c) => c,
        Err(e) => return fail_all(e.to_string()),
    };
    if let Some(v) = c.virtual_effect {
        return vec![Ok(v)];
    }
    let s = match analysis_sample(&p, &c, &cfg.analysis) {
        Ok(s) => s,
        Err(e) => return fail_all(e.to_string()),
    };
    run_estimators(&s, &cfg.estimators, seed).into_iter().map(|(_, r)| r.map_err(|e: EstimationError| e.to_string())).collect()
}

pub fn replicate(opts: &Options) -> anyhow::Result<Outcome> {
    let cfg = load(opts)?;
    let seed = cfg.require_seed().stage(Stage::Config)?;
    let sim = cfg.require_simulation().stage(Stage::Config)?;
    let scm = sim.resolve().stage(Stage::Config)?;
    let rep = cfg.replicate.as_ref().context("config has no [replicate] section").stage(Stage::Config)?;
    if rep.replicates < MIN_REPLICATES {
        return Err(anyhow!("replicates must be at least {MIN_REPLICATES}, got {}", rep.replicates)).stage(Stage::Config);
    }
    let control = cfg.require_control().stage(Stage::Config)?;
    let labels = labels(&cfg, control);
    if labels.is_empty() {
        return Err(anyhow!("no effect estimators selected")).stage(Stage::Config);
    }
    let n = rep.n.unwrap_or(sim.n);
    let (psi, truth_se, _, _) = truth(&scm, sim.truth_draws, seed)?;

    let results = run_replicates(rep.replicates, seed, |_, s| one_replicate(&cfg, &scm, control, &labels, n, s));
    let rows = labels
        .iter()
        .enumerate()
        .map(|(j, label)| {
            let ok: Vec<EffectEstimate> = results.iter().filter_map(|r| r[j].as_ref().ok().cloned()).collect();
            operating_characteristics(label, &ok, results.len() - ok.len(), psi, rep.alpha)
        })
        .collect();
    let report = ReplicateReport {
        schema_version: SCHEMA_VERSION,
        command: "replicate",
        scenario: scm.name.clone(),
        control_method: control.name().into(),
        replicates: rep.replicates,
        n,
        alpha: rep.alpha,
        truth: psi,
        truth_mc_standard_error: truth_se,
        null_scenario: psi == 0.0,
        rows,
        provenance: Provenance::new(&cfg),
    };
    Ok(Outcome { json: to_json(&report)?, summary: replicate_summary(&report), path: out_path(opts, &cfg) })
}
