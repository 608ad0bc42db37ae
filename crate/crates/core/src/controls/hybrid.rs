//! Hybrid controls: internal concurrent controls augmented with external
//! ones by test-then-pool, power-prior borrowing, or two-stage matching.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use super::{ArmDiagnostics, ConstructionMethod, ControlArm, ControlError, Exclusion, Member};
use crate::data::{Dataset, OutcomeKind, SubjectRecord};
use crate::estimators::glm::{self, FitOptions};
use crate::estimators::{two_proportion_z_test, welch_t_test, EstimationError};
use crate::rng;

pub const DEFAULT_ALPHA: f64 = 0.10;
pub const DEFAULT_CALIPER: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolDecision {
    /// "two-proportion-z" or "welch-t".
    pub test: String,
    pub statistic: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub pooled: bool,
    pub n_internal: usize,
    pub n_external: usize,
}

/// Test-then-pool on summary counts of a binary endpoint.
pub fn test_and_pool_counts(x_int: u64, n_int: u64, x_ext: u64, n_ext: u64, alpha: f64) -> Result<PoolDecision, ControlError> {
    check_alpha(alpha)?;
    if n_int == 0 || n_ext == 0 {
        return Err(ControlError::InsufficientData("both slices must be non-empty".into()));
    }
    let t = two_proportion_z_test(x_int, n_int, x_ext, n_ext)
        .map_err(|e| ControlError::InvalidCounts(e.to_string()))?;
    Ok(PoolDecision {
        test: "two-proportion-z".into(),
        statistic: t.statistic,
        p_value: t.p_value,
        alpha,
        pooled: t.p_value > alpha,
        n_internal: n_int as usize,
        n_external: n_ext as usize,
    })
}

fn check_alpha(alpha: f64) -> Result<(), ControlError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(ControlError::InvalidArgument(format!("alpha = {alpha} outside (0, 1)")))
    }
}

fn observed_control_outcomes(ds: &Dataset) -> Result<Vec<f64>, ControlError> {
    ds.records()
        .iter()
        .map(|r| match (r.treatment.is_treated(), r.outcome()) {
            (false, Some(y)) => Ok(y),
            _ => Err(ControlError::NotObservedControl(r.id.clone())),
        })
        .collect()
}

/// Pools `external` into the arm when the homogeneity test of control
/// outcomes gives p > alpha; otherwise the arm is `internal` alone.
pub fn test_and_pool(internal: &Dataset, external: &Dataset, alpha: f64) -> Result<ControlArm, ControlError> {
    check_alpha(alpha)?;
    let yi = observed_control_outcomes(internal)?;
    let ye = observed_control_outcomes(external)?;
    if yi.is_empty() || ye.is_empty() {
        return Err(ControlError::InsufficientData("both slices must be non-empty".into()));
    }
    let decision = match internal.outcome_kind() {
        OutcomeKind::Binary => {
            let count = |y: &[f64]| y.iter().filter(|v| **v == 1.0).count() as u64;
            test_and_pool_counts(count(&yi), yi.len() as u64, count(&ye), ye.len() as u64, alpha)?
        }
        OutcomeKind::Continuous => {
            let t = welch_t_test(&yi, &ye).map_err(|e| ControlError::InsufficientData(e.to_string()))?;
            PoolDecision {
                test: "welch-t".into(),
                statistic: t.statistic,
                p_value: t.p_value,
                alpha,
                pooled: t.p_value > alpha,
                n_internal: yi.len(),
                n_external: ye.len(),
            }
        }
    };
    let unit = |r: &SubjectRecord| Member { id: r.id.clone(), weight: 1.0 };
    let mut members: Vec<Member> = internal.records().iter().map(unit).collect();
    let mut excluded = vec![];
    if decision.pooled {
        members.extend(external.records().iter().map(unit));
    } else {
        excluded = external
            .records()
            .iter()
            .map(|r| Exclusion { id: r.id.clone(), reason: "heterogeneity-test-rejected".into() })
            .collect();
    }
    Ok(ControlArm {
        method: ConstructionMethod::HybridTestAndPool,
        members,
        excluded,
        diagnostics: ArmDiagnostics::TestAndPool(decision),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaPrior {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for BetaPrior {
    fn default() -> Self {
        BetaPrior { alpha: 1.0, beta: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerPriorPosterior {
    pub a0: f64,
    pub alpha: f64,
    pub beta: f64,
    pub mean: f64,
    /// Equal-tailed 95% credible interval.
    pub lo: f64,
    pub hi: f64,
}

/// Beta quantile by bisection on the regularized incomplete beta function.
fn beta_quantile(a: f64, b: f64, p: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if beta_reg(a, b, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Conjugate power-prior posterior for a response rate.
pub fn power_prior_borrow(
    internal: (u64, u64),
    external: (u64, u64),
    a0: f64,
    prior: BetaPrior,
) -> Result<PowerPriorPosterior, ControlError> {
    let ((x, n), (x0, n0)) = (internal, external);
    if x > n || x0 > n0 {
        return Err(ControlError::InvalidCounts(format!("{x}/{n}, {x0}/{n0}")));
    }
    if !(0.0..=1.0).contains(&a0) {
        return Err(ControlError::InvalidArgument(format!("a0 = {a0} outside [0, 1]")));
    }
    if !(prior.alpha > 0.0 && prior.beta > 0.0) {
        return Err(ControlError::InvalidArgument("Beta prior parameters must be positive".into()));
    }
    let alpha = prior.alpha + x as f64 + a0 * x0 as f64;
    let beta = prior.beta + (n - x) as f64 + a0 * (n0 - x0) as f64;
    Ok(PowerPriorPosterior {
        a0,
        alpha,
        beta,
        mean: alpha / (alpha + beta),
        lo: beta_quantile(alpha, beta, 0.025),
        hi: beta_quantile(alpha, beta, 0.975),
    })
}

/// Power-prior arm: internal controls at weight 1, external controls at
/// weight a0.
pub fn power_prior_arm(internal: &Dataset, external: &Dataset, a0: f64, prior: BetaPrior) -> Result<ControlArm, ControlError> {
    if internal.outcome_kind() != OutcomeKind::Binary {
        return Err(ControlError::InvalidArgument("power prior borrowing needs a binary endpoint".into()));
    }
    let yi = observed_control_outcomes(internal)?;
    let ye = observed_control_outcomes(external)?;
    let count = |y: &[f64]| y.iter().filter(|v| **v == 1.0).count() as u64;
    let post = power_prior_borrow((count(&yi), yi.len() as u64), (count(&ye), ye.len() as u64), a0, prior)?;
    let mut members: Vec<Member> = internal.records().iter().map(|r| Member { id: r.id.clone(), weight: 1.0 }).collect();
    let mut excluded = vec![];
    for r in external.records() {
        if a0 > 0.0 {
            members.push(Member { id: r.id.clone(), weight: a0 });
        } else {
            excluded.push(Exclusion { id: r.id.clone(), reason: "zero-discount".into() });
        }
    }
    Ok(ControlArm { method: ConstructionMethod::HybridPowerPrior, members, excluded, diagnostics: ArmDiagnostics::PowerPrior(post) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MatchScore {
    /// Logit of P(trial | C), fitted on treated, internal and external
    /// subjects together.
    #[default]
    Propensity,
    /// Linear predictor of an outcome model fitted on external controls.
    Prognostic,
}

fn default_ratio() -> usize {
    1
}

fn default_caliper() -> f64 {
    DEFAULT_CALIPER
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    #[serde(default = "default_ratio")]
    pub ratio: usize,
    /// In standard deviations of the score.
    #[serde(default = "default_caliper")]
    pub caliper: f64,
    #[serde(default)]
    pub score: MatchScore,
    /// Covariates for the score model; `None` uses every column.
    #[serde(default)]
    pub covariates: Option<Vec<String>>,
    pub seed: u64,
}

impl MatchConfig {
    pub fn new(seed: u64) -> Self {
        MatchConfig { ratio: 1, caliper: DEFAULT_CALIPER, score: MatchScore::Propensity, covariates: None, seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub treated: String,
    pub controls: Vec<String>,
    pub stage: u8,
    /// Score distances (stage 2 only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub distances: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchDiagnostics {
    pub score: MatchScore,
    pub ratio: usize,
    pub caliper_sd: f64,
    pub caliper: f64,
    pub score_sd: f64,
    pub pairs: Vec<MatchPair>,
    pub unmatched_treated: Vec<String>,
    pub n_internal_used: usize,
    pub n_external_used: usize,
}

struct Unit<'a> {
    record: &'a SubjectRecord,
    row: Option<Vec<f64>>,
}

fn units<'a>(ds: &'a Dataset, pos: &[usize]) -> Vec<Unit<'a>> {
    let mut u: Vec<Unit> = ds
        .records()
        .iter()
        .map(|r| Unit { record: r, row: pos.iter().map(|&j| r.covariates[j]).collect() })
        .collect();
    u.sort_by(|a, b| a.record.id.cmp(&b.record.id));
    u
}

fn linear_predictor(beta: &[f64], row: &[f64]) -> f64 {
    beta[0] + row.iter().zip(&beta[1..]).map(|(x, b)| x * b).sum::<f64>()
}

fn design(rows: &[&[f64]]) -> DMatrix<f64> {
    let p = rows.first().map_or(0, |r| r.len());
    DMatrix::from_fn(rows.len(), p + 1, |i, k| if k == 0 { 1.0 } else { rows[i][k - 1] })
}

fn fit_error(e: glm::FitError) -> ControlError {
    ControlError::ModelFit(match e {
        glm::FitError::PerfectSeparation => EstimationError::PerfectSeparation,
        other => EstimationError::ModelFit(other.to_string()),
    })
}

/// Two-stage hybrid matching.
///
/// Stage 1 pairs a seeded random subset of treated subjects with shuffled
/// internal controls, `ratio` each, without scores; its size is
/// `min(|treated|, ⌊|internal| / ratio⌋)`. Stage 2 matches the remaining
/// treated subjects, in id order, to the nearest available external
/// controls on the score, within the caliper, without replacement; ties go
/// to the smaller id.
pub fn hybrid_match(
    treated: &Dataset,
    internal_cc: &Dataset,
    external: &Dataset,
    cfg: &MatchConfig,
) -> Result<ControlArm, ControlError> {
    if treated.is_empty() {
        return Err(ControlError::EmptyTreatedArm);
    }
    if cfg.ratio == 0 {
        return Err(ControlError::InvalidArgument("ratio must be at least 1".into()));
    }
    if !(cfg.caliper >= 0.0) {
        return Err(ControlError::InvalidArgument(format!("caliper {}", cfg.caliper)));
    }
    let names: Vec<String> = match &cfg.covariates {
        Some(c) => c.clone(),
        None => treated.schema().columns().iter().map(|c| c.name.clone()).collect(),
    };
    let positions = |ds: &Dataset| -> Result<Vec<usize>, ControlError> {
        names.iter().map(|c| ds.schema().column_index(c).ok_or_else(|| ControlError::SchemaMismatch(c.clone()))).collect()
    };
    let t_units = units(treated, &positions(treated)?);
    let i_units = units(internal_cc, &positions(internal_cc)?);
    let e_units = units(external, &positions(external)?);

    // stage 1
    let mut r = rng::root(cfg.seed);
    let n1 = t_units.len().min(i_units.len() / cfg.ratio);
    let mut t_order: Vec<usize> = (0..t_units.len()).collect();
    t_order.shuffle(&mut r);
    let mut cc_order: Vec<usize> = (0..i_units.len()).collect();
    cc_order.shuffle(&mut r);
    let mut stage1: Vec<usize> = t_order[..n1].to_vec();
    stage1.sort_unstable();
    let mut pairs = vec![];
    let mut members = vec![];
    let mut excluded = vec![];
    for (k, &ti) in stage1.iter().enumerate() {
        let controls: Vec<String> = cc_order[k * cfg.ratio..(k + 1) * cfg.ratio]
            .iter()
            .map(|&ci| i_units[ci].record.id.clone())
            .collect();
        members.extend(controls.iter().map(|id| Member { id: id.clone(), weight: 1.0 }));
        pairs.push(MatchPair { treated: t_units[ti].record.id.clone(), controls, stage: 1, distances: vec![] });
    }
    for &ci in &cc_order[n1 * cfg.ratio..] {
        excluded.push(Exclusion { id: i_units[ci].record.id.clone(), reason: "stage1-surplus".into() });
    }

    // stage 2
    let remaining: Vec<usize> = (0..t_units.len()).filter(|i| stage1.binary_search(i).is_err()).collect();
    let mut unmatched = vec![];
    let mut score_sd = 0.0;
    let mut caliper = 0.0;
    let candidates: Vec<usize> = (0..e_units.len()).filter(|&i| e_units[i].row.is_some()).collect();
    for (i, u) in e_units.iter().enumerate() {
        if u.row.is_none() {
            excluded.push(Exclusion { id: u.record.id.clone(), reason: "missing-covariate".into() });
        } else if remaining.is_empty() {
            excluded.push(Exclusion { id: e_units[i].record.id.clone(), reason: "unused".into() });
        }
    }
    let mut n_external_used = 0;
    if !remaining.is_empty() {
        let beta = match cfg.score {
            MatchScore::Propensity => {
                let mut rows: Vec<&[f64]> = vec![];
                let mut y = vec![];
                for (set, label) in [(&t_units, 1.0), (&i_units, 1.0), (&e_units, 0.0)] {
                    for u in set.iter() {
                        if let Some(row) = &u.row {
                            rows.push(row);
                            y.push(label);
                        }
                    }
                }
                glm::fit_logistic(&design(&rows), &y, FitOptions::default()).map_err(fit_error)?.coefficients
            }
            MatchScore::Prognostic => {
                let train: Vec<(&[f64], f64)> = e_units
                    .iter()
                    .filter_map(|u| Some((u.row.as_deref()?, u.record.outcome()?)))
                    .collect();
                if train.is_empty() {
                    return Err(ControlError::InsufficientData("no observed external outcomes for the prognostic model".into()));
                }
                let rows: Vec<&[f64]> = train.iter().map(|t| t.0).collect();
                let y: Vec<f64> = train.iter().map(|t| t.1).collect();
                match external.outcome_kind() {
                    OutcomeKind::Binary => {
                        glm::fit_logistic(&design(&rows), &y, FitOptions::default()).map_err(fit_error)?.coefficients
                    }
                    OutcomeKind::Continuous => glm::fit_linear(&design(&rows), &y, None).map_err(fit_error)?,
                }
            }
        };
        let score = |u: &Unit| u.row.as_deref().map(|row| linear_predictor(&beta, row));
        let t_scores: Vec<Option<f64>> = remaining.iter().map(|&i| score(&t_units[i])).collect();
        let e_scores: Vec<f64> = candidates.iter().map(|&i| score(&e_units[i]).unwrap_or(f64::NAN)).collect();
        let pooled: Vec<f64> = t_scores.iter().flatten().copied().chain(e_scores.iter().copied()).collect();
        if pooled.len() > 1 {
            let m = pooled.iter().sum::<f64>() / pooled.len() as f64;
            score_sd = (pooled.iter().map(|s| (s - m).powi(2)).sum::<f64>() / (pooled.len() as f64 - 1.0)).sqrt();
        }
        caliper = cfg.caliper * score_sd;
        let mut used = vec![false; candidates.len()];
        for (k, &ti) in remaining.iter().enumerate() {
            let id = t_units[ti].record.id.clone();
            let Some(ts) = t_scores[k] else {
                unmatched.push(id);
                continue;
            };
            let mut controls = vec![];
            let mut distances = vec![];
            for _ in 0..cfg.ratio {
                // candidates are in id order, so the first minimum is the
                // smallest id among ties
                let best = (0..candidates.len())
                    .filter(|&c| !used[c])
                    .map(|c| (c, (e_scores[c] - ts).abs()))
                    .filter(|(_, d)| *d <= caliper)
                    .fold(None, |acc: Option<(usize, f64)>, (c, d)| match acc {
                        Some((_, bd)) if bd <= d => acc,
                        _ => Some((c, d)),
                    });
                let Some((c, d)) = best else { break };
                used[c] = true;
                controls.push(e_units[candidates[c]].record.id.clone());
                distances.push(d);
            }
            if controls.is_empty() {
                unmatched.push(id);
            } else {
                n_external_used += controls.len();
                members.extend(controls.iter().map(|id| Member { id: id.clone(), weight: 1.0 }));
                pairs.push(MatchPair { treated: id, controls, stage: 2, distances });
            }
        }
        for (c, &ei) in candidates.iter().enumerate() {
            if !used[c] {
                excluded.push(Exclusion { id: e_units[ei].record.id.clone(), reason: "unmatched".into() });
            }
        }
    }

    Ok(ControlArm {
        method: ConstructionMethod::HybridMatched,
        members,
        excluded,
        diagnostics: ArmDiagnostics::Matched(MatchDiagnostics {
            score: cfg.score,
            ratio: cfg.ratio,
            caliper_sd: cfg.caliper,
            caliper,
            score_sd,
            pairs,
            unmatched_treated: unmatched,
            n_internal_used: n1 * cfg.ratio,
            n_external_used,
        }),
    })
}
