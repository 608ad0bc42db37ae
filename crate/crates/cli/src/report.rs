//! JSON report documents and the plain-text summaries printed alongside.

use std::fmt::Write as _;

use extarm_core::controls::{ControlArm, Exclusion};
use extarm_core::estimand::EstimandSpec;
use extarm_core::estimators::{BinomialTest, ConfidenceInterval, EffectEstimate, IdentifiabilityReport, Method};
use extarm_core::fitness::FitnessReport;
use extarm_core::sensitivity::{CausalGapGrid, EvalueResult, RiskRatio};
use extarm_core::simulate::OperatingCharacteristics;
use serde::Serialize;

use crate::config::RunConfig;

/// Version of the report layout in `schema/report.schema.json`.
pub const SCHEMA_VERSION: &str = "1.0.0";

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub config_sha256: String,
    pub seed: Option<u64>,
    pub version: String,
    pub generated_at: String,
}

impl Provenance {
    pub fn new(cfg: &RunConfig) -> Self {
        Provenance {
            config_sha256: cfg.sha256(),
            seed: cfg.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            generated_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SourceFitness {
    pub source: String,
    pub n_records: usize,
    pub fitness: FitnessReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub schema_version: &'static str,
    pub command: &'static str,
    pub sources: Vec<SourceFitness>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Serialize)]
pub struct ControlSection {
    pub method: String,
    pub n_treated: usize,
    pub n_members: usize,
    pub total_weight: f64,
    pub excluded: Vec<Exclusion>,
    /// Method diagnostics and member weights; absent for internal controls.
    pub arm: Option<ControlArm>,
}

/// One row of the estimates table. The influence curve is left out.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateEntry {
    pub method: Method,
    pub psi_hat: f64,
    pub standard_error: Option<f64>,
    pub ci: Option<ConfidenceInterval>,
    pub p_value: Option<f64>,
    pub n_used: usize,
    pub n_dropped: usize,
    pub n_truncated: usize,
    pub notes: Vec<String>,
}

impl From<&EffectEstimate> for EstimateEntry {
    fn from(e: &EffectEstimate) -> Self {
        EstimateEntry {
            method: e.method,
            psi_hat: e.psi_hat,
            standard_error: e.standard_error(),
            ci: e.ci,
            p_value: e.p_value(),
            n_used: e.n_used,
            n_dropped: e.n_dropped,
            n_truncated: e.diagnostics.n_truncated,
            notes: e.diagnostics.notes.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GapSweep {
    pub method: Method,
    pub sweep: CausalGapGrid,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalueSection {
    pub risk_ratio: RiskRatio,
    pub evalue: EvalueResult,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SensitivitySection {
    pub causal_gap: Vec<GapSweep>,
    pub evalue: Option<EvalueSection>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub schema_version: &'static str,
    pub command: &'static str,
    pub estimand: EstimandSpec,
    pub fitness: Vec<SourceFitness>,
    pub control_arm: ControlSection,
    pub diagnostics: Option<IdentifiabilityReport>,
    pub estimates: Vec<EstimateEntry>,
    pub single_arm: Option<BinomialTest>,
    pub sensitivity: SensitivitySection,
    pub notes: Vec<String>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Serialize)]
pub struct TruthSidecar {
    pub schema_version: &'static str,
    pub command: &'static str,
    pub scenario: String,
    pub n: usize,
    pub n_records: usize,
    pub data_path: String,
    pub psi_true: f64,
    pub mc_standard_error: f64,
    /// "closed-form" or "monte-carlo".
    pub truth_method: &'static str,
    pub truth_draws: usize,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicateReport {
    pub schema_version: &'static str,
    pub command: &'static str,
    pub scenario: String,
    pub control_method: String,
    pub replicates: usize,
    pub n: usize,
    pub alpha: f64,
    pub truth: f64,
    pub truth_mc_standard_error: f64,
    /// True effect is zero, so rejection rates are type I error.
    pub null_scenario: bool,
    pub rows: Vec<OperatingCharacteristics>,
    pub provenance: Provenance,
}

pub fn to_json(value: &impl Serialize) -> anyhow::Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

fn opt(x: Option<f64>, prec: usize) -> String {
    match x {
        Some(v) if v.is_finite() => format!("{v:.prec$}"),
        _ => "-".into(),
    }
}

pub fn method_label(m: Method) -> &'static str {
    match m {
        Method::Naive => "naive",
        Method::GComputation => "g-computation",
        Method::IpwHajek => "ipw (hajek)",
        Method::IpwHorvitzThompson => "ipw (ht)",
        Method::Tmle => "tmle",
        Method::VirtualControl => "virtual control",
    }
}

pub fn audit_summary(report: &AuditReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<24} {:>8} {:>9} {:>9} {:>9} {:>9}", "source", "records", "density", "errors", "general.", "missing%");
    for src in &report.sources {
        let f = &src.fitness;
        let _ = writeln!(
            s,
            "{:<24} {:>8} {:>9.4} {:>9.4} {:>9.4} {:>9.2}",
            truncate(&src.source, 24),
            src.n_records,
            f.density_score,
            f.error_rate,
            f.generalizability_score,
            f.reliability.completeness_pct_missing
        );
    }
    s
}

pub fn analysis_summary(report: &AnalysisReport) -> String {
    let mut s = String::new();
    let c = &report.control_arm;
    let _ = writeln!(s, "estimand: {}", report.estimand.estimand_form);
    let _ = writeln!(
        s,
        "control arm: {} ({} members, total weight {:.3}, {} excluded); treated: {}",
        c.method,
        c.n_members,
        c.total_weight,
        c.excluded.len(),
        c.n_treated
    );
    if let Some(d) = &report.diagnostics {
        let flagged = d.exchangeability.iter().filter(|b| b.flagged).count();
        let _ = writeln!(
            s,
            "positivity: scores in [{:.3}, {:.3}], {} flagged strata; balance: {} of {} covariates flagged",
            d.positivity.min_score,
            d.positivity.max_score,
            d.positivity.flagged_strata.len(),
            flagged,
            d.exchangeability.len()
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<16} {:>10} {:>10} {:>22} {:>10} {:>7}", "method", "estimate", "se", "ci", "p", "n");
    for e in &report.estimates {
        let ci = e.ci.map(|c| format!("[{:.4}, {:.4}]", c.lo, c.hi)).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            s,
            "{:<16} {:>10.4} {:>10} {:>22} {:>10} {:>7}",
            method_label(e.method),
            e.psi_hat,
            opt(e.standard_error, 4),
            ci,
            opt(e.p_value, 4),
            e.n_used
        );
    }
    if let Some(b) = &report.single_arm {
        let _ = writeln!(s, "single-arm binomial: {}/{} vs p0 = {}: p = {:.4}{}", b.x, b.n, b.p0, b.p_value, if b.reject { " (reject)" } else { "" });
    }
    for g in &report.sensitivity.causal_gap {
        let tip = g.sweep.tipping_eta.map(|t| format!("{t:.4}")).unwrap_or_else(|| "none in grid".into());
        let _ = writeln!(s, "causal gap ({}): tipping point {}", method_label(g.method), tip);
    }
    if let Some(e) = &report.sensitivity.evalue {
        let _ = writeln!(s, "E-value: {:.3} (CI bound {}) for RR {:.3}", e.evalue.evalue_point, opt(e.evalue.evalue_ci, 3), e.risk_ratio.rr);
    }
    for n in report.notes.iter().chain(&report.sensitivity.notes) {
        let _ = writeln!(s, "note: {n}");
    }
    s
}

pub fn replicate_summary(report: &ReplicateReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{}: {} replicates at n = {}, control {}, truth {:.5} (MC SE {:.1e}){}",
        report.scenario,
        report.replicates,
        report.n,
        report.control_method,
        report.truth,
        report.truth_mc_standard_error,
        if report.null_scenario { ", null scenario" } else { "" }
    );
    let _ = writeln!(
        s,
        "{:<16} {:>6} {:>10} {:>10} {:>10} {:>10} {:>9} {:>9}",
        "method", "fails", "mean", "bias", "mc se", "emp. se", "coverage", "reject"
    );
    for r in &report.rows {
        let _ = writeln!(
            s,
            "{:<16} {:>6} {:>10.5} {:>10.5} {:>10.5} {:>10.5} {:>9} {:>9}",
            r.label,
            r.failures,
            r.mean_estimate,
            r.mean_bias,
            r.mc_se_bias,
            r.empirical_se,
            opt(r.coverage, 3),
            opt(r.rejection_rate, 3)
        );
    }
    s
}

fn truncate(s: &str, n: usize) -> String {
    if s.chars().count() <= n {
        s.to_string()
    } else {
        let tail: String = s.chars().rev().take(n - 1).collect::<Vec<_>>().into_iter().rev().collect();
        format!("…{tail}")
    }
}
