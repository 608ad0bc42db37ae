use chrono::{Days, NaiveDate};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::SimulationError;
use crate::data::{Arm, Dataset, OutcomeKind, Schema, SourceInfo, SourceTag, SubjectRecord, Variable, VariableKind};
use crate::estimand::IndexWindow;
use crate::estimators::glm::expit;
use crate::rng::{self, StreamRng};

/// Distribution of one exogenous covariate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "lowercase")]
pub enum CovariateDist {
    Normal { mean: f64, sd: f64 },
    Bernoulli { p: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    #[serde(flatten)]
    pub dist: CovariateDist,
}

/// `logit P(A = 1 | C) = intercept + coefs·C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentSpec {
    pub intercept: f64,
    pub coefs: Vec<f64>,
}

/// `logit P(Δ = 1 | C, A) = intercept + coef_a·A + coefs·C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSpec {
    pub intercept: f64,
    #[serde(default)]
    pub coef_a: f64,
    pub coefs: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeLink {
    /// Binary Y with `P(Y = 1) = expit(η)`.
    Logit,
    /// Binary Y with `P(Y = 1) = η`, clipped to [0, 1].
    Identity,
    /// Continuous `Y = η + noise_sd·Z`.
    Linear,
}

/// Linear predictor `η(a) = intercept + coef_a·a + coefs·C + a·(interactions·C)
/// + trend·period + shift`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSpec {
    pub link: OutcomeLink,
    pub intercept: f64,
    pub coef_a: f64,
    pub coefs: Vec<f64>,
    #[serde(default)]
    pub interactions: Vec<f64>,
    #[serde(default = "one")]
    pub noise_sd: f64,
}

fn one() -> f64 {
    1.0
}

fn default_period_days() -> u32 {
    365
}

/// Calendar drift: enrolment periods per arm and an additive trend on η.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    pub trend: f64,
    pub treated_periods: Vec<u32>,
    pub control_periods: Vec<u32>,
    /// Periods available to external subjects; defaults to the control
    /// periods.
    #[serde(default)]
    pub external_periods: Option<Vec<u32>>,
}

/// An external control source appended to every generated trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalSpec {
    pub label: String,
    pub count: usize,
    /// Added to η for external subjects.
    #[serde(default)]
    pub outcome_shift: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementErrorSpec {
    pub flip_prob_treated: f64,
    pub flip_prob_control: f64,
    pub seed: u64,
}

fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date")
}

/// A structural causal model `C = f_c(U_c)`, `A = f_a(C, U_a)`,
/// `Δ = f_δ(C, A, U_δ)`, `Y = f_y(C, A, U_y)`.
///
/// Binary mechanisms threshold a standard uniform; continuous ones add
/// standard normal noise. Both potential outcomes share `U_y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmConfig {
    pub name: String,
    pub covariates: Vec<CovariateSpec>,
    pub treatment: TreatmentSpec,
    #[serde(default)]
    pub observation: Option<ObservationSpec>,
    pub outcome: OutcomeSpec,
    #[serde(default)]
    pub drift: Option<DriftSpec>,
    #[serde(default)]
    pub external: Option<ExternalSpec>,
    #[serde(default)]
    pub measurement_error: Option<MeasurementErrorSpec>,
    #[serde(default = "default_start")]
    pub calendar_start: NaiveDate,
    #[serde(default = "default_period_days")]
    pub period_days: u32,
    #[serde(default)]
    pub seed: u64,
}

/// Potential outcomes of one simulated subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualPair {
    pub id: String,
    pub y1: f64,
    pub y0: f64,
}

/// Counterfactual side table returned next to a generated dataset. Nothing
/// in the estimation code accepts it; only evaluation code opens it.
#[derive(Debug, Clone, PartialEq)]
pub struct SealedCounterfactuals(Vec<CounterfactualPair>);

impl SealedCounterfactuals {
    pub fn unseal(self) -> Vec<CounterfactualPair> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueEffect {
    pub psi_true: f64,
    pub mc_standard_error: f64,
    pub draws: usize,
    pub mean_y1: f64,
    pub mean_y0: f64,
}

pub const MIN_TRUTH_DRAWS: usize = 10_000;
const TRUTH_CHUNK: usize = 10_000;

struct Draw {
    covariates: Vec<f64>,
    treated: bool,
    period: u32,
    day: u32,
    observed: bool,
    y1: f64,
    y0: f64,
}

impl ScmConfig {
    pub fn validate(&self) -> Result<(), SimulationError> {
        let bad = |m: String| Err(SimulationError::InvalidConfig(m));
        let p = self.covariates.len();
        for c in &self.covariates {
            match c.dist {
                CovariateDist::Normal { sd, .. } if !(sd >= 0.0) => return bad(format!("{}: negative sd", c.name)),
                CovariateDist::Bernoulli { p } if !(0.0..=1.0).contains(&p) => {
                    return bad(format!("{}: probability {p}", c.name))
                }
                _ => {}
            }
        }
        if self.treatment.coefs.len() != p {
            return bad(format!("treatment mechanism has {} coefficients for {p} covariates", self.treatment.coefs.len()));
        }
        if self.outcome.coefs.len() != p {
            return bad(format!("outcome mechanism has {} coefficients for {p} covariates", self.outcome.coefs.len()));
        }
        if !self.outcome.interactions.is_empty() && self.outcome.interactions.len() != p {
            return bad("interaction coefficients must match the covariates".into());
        }
        if !(self.outcome.noise_sd >= 0.0) {
            return bad("negative outcome noise".into());
        }
        if let Some(o) = &self.observation {
            if o.coefs.len() != p {
                return bad("observation mechanism must have one coefficient per covariate".into());
            }
        }
        if let Some(d) = &self.drift {
            if d.treated_periods.is_empty() || d.control_periods.is_empty() {
                return bad("drift needs at least one period per arm".into());
            }
            if d.external_periods.as_ref().is_some_and(Vec::is_empty) {
                return bad("external periods must not be empty".into());
            }
        }
        if self.period_days == 0 {
            return bad("period length must be positive".into());
        }
        if let Some(m) = &self.measurement_error {
            if self.outcome.link == OutcomeLink::Linear {
                return Err(SimulationError::NonBinaryOutcome);
            }
            check_flip(m)?;
        }
        Ok(())
    }

    pub fn outcome_kind(&self) -> OutcomeKind {
        match self.outcome.link {
            OutcomeLink::Linear => OutcomeKind::Continuous,
            _ => OutcomeKind::Binary,
        }
    }

    pub fn schema(&self) -> Schema {
        Schema::new(
            self.covariates
                .iter()
                .map(|c| Variable {
                    name: c.name.clone(),
                    kind: match c.dist {
                        CovariateDist::Normal { .. } => VariableKind::Real,
                        CovariateDist::Bernoulli { .. } => VariableKind::Binary,
                    },
                })
                .collect(),
        )
    }

    /// Calendar period of an index date.
    pub fn period_of(&self, date: NaiveDate) -> Option<u32> {
        let days = (date - self.calendar_start).num_days();
        (days >= 0).then(|| (days / self.period_days as i64) as u32)
    }

    pub fn period_window(&self, period: u32) -> IndexWindow {
        let start = self.calendar_start + Days::new(period as u64 * self.period_days as u64);
        IndexWindow { start, end: start + Days::new(self.period_days as u64 - 1) }
    }

    /// `E(Y_1 − Y_0)` in closed form for the linear link:
    /// `coef_a + interactions·E[C]`.
    pub fn closed_form_ate(&self) -> Option<f64> {
        if self.outcome.link != OutcomeLink::Linear {
            return None;
        }
        let mean = |d: &CovariateDist| match *d {
            CovariateDist::Normal { mean, .. } => mean,
            CovariateDist::Bernoulli { p } => p,
        };
        Some(
            self.outcome.coef_a
                + self.outcome.interactions.iter().zip(&self.covariates).map(|(b, c)| b * mean(&c.dist)).sum::<f64>(),
        )
    }

    fn eta(&self, c: &[f64], a: f64, period: u32, shift: f64) -> f64 {
        let o = &self.outcome;
        let mut eta = o.intercept + o.coef_a * a + o.coefs.iter().zip(c).map(|(b, x)| b * x).sum::<f64>();
        eta += a * o.interactions.iter().zip(c).map(|(b, x)| b * x).sum::<f64>();
        if let Some(d) = &self.drift {
            eta += d.trend * period as f64;
        }
        eta + shift
    }

    /// One subject by ancestral sampling. `external` forces A = 0 and applies
    /// the external outcome shift. The noise is drawn in a fixed order so
    /// every subject consumes the same number of variates.
    fn draw(&self, r: &mut StreamRng, external: bool) -> Draw {
        let covariates: Vec<f64> = self
            .covariates
            .iter()
            .map(|c| {
                let u: f64 = r.random();
                let z: f64 = r.sample(StandardNormal);
                match c.dist {
                    CovariateDist::Normal { mean, sd } => mean + sd * z,
                    CovariateDist::Bernoulli { p } => (u < p) as u8 as f64,
                }
            })
            .collect();
        let u_a: f64 = r.random();
        let u_period: f64 = r.random();
        let u_day: f64 = r.random();
        let u_delta: f64 = r.random();
        let u_y: f64 = r.random();
        let z_y: f64 = r.sample(StandardNormal);

        let lin = self.treatment.intercept + self.treatment.coefs.iter().zip(&covariates).map(|(b, x)| b * x).sum::<f64>();
        let treated = !external && u_a < expit(lin);
        let period = match &self.drift {
            None => 0,
            Some(d) => {
                let periods = if external {
                    d.external_periods.as_ref().unwrap_or(&d.control_periods)
                } else if treated {
                    &d.treated_periods
                } else {
                    &d.control_periods
                };
                periods[((u_period * periods.len() as f64) as usize).min(periods.len() - 1)]
            }
        };
        let day = ((u_day * self.period_days as f64) as u32).min(self.period_days - 1);
        let a = treated as u8 as f64;
        let observed = match &self.observation {
            None => true,
            Some(o) => {
                let lin = o.intercept + o.coef_a * a + o.coefs.iter().zip(&covariates).map(|(b, x)| b * x).sum::<f64>();
                u_delta < expit(lin)
            }
        };
        let shift = if external { self.external.as_ref().map_or(0.0, |e| e.outcome_shift) } else { 0.0 };
        let potential = |a: f64| {
            let eta = self.eta(&covariates, a, period, shift);
            match self.outcome.link {
                OutcomeLink::Logit => (u_y < expit(eta)) as u8 as f64,
                OutcomeLink::Identity => (u_y < eta.clamp(0.0, 1.0)) as u8 as f64,
                OutcomeLink::Linear => eta + self.outcome.noise_sd * z_y,
            }
        };
        let (y1, y0) = (potential(1.0), potential(0.0));
        Draw { covariates, treated, period, day, observed, y1, y0 }
    }
}

fn check_flip(m: &MeasurementErrorSpec) -> Result<(), SimulationError> {
    for p in [m.flip_prob_treated, m.flip_prob_control] {
        if !(0.0..=1.0).contains(&p) {
            return Err(SimulationError::InvalidConfig(format!("flip probability {p}")));
        }
    }
    Ok(())
}

/// Draws `n` trial subjects (plus the configured external source) from
/// `cfg` under `seed`. The dataset exposes only `(C, A, Δ, ΔY)`, source
/// and index date; potential outcomes go to the sealed side table.
pub fn generate(cfg: &ScmConfig, n: usize, seed: u64) -> Result<(Dataset, SealedCounterfactuals), SimulationError> {
    cfg.validate()?;
    if n == 0 {
        return Err(SimulationError::InvalidConfig("n must be at least 1".into()));
    }
    let mut r = rng::root(seed);
    let trial = SourceTag::internal("trial");
    let ext_tag = cfg.external.as_ref().map(|e| SourceTag::external(&e.label));
    let n_ext = cfg.external.as_ref().map_or(0, |e| e.count);
    let mut records = Vec::with_capacity(n + n_ext);
    let mut pairs = Vec::with_capacity(n + n_ext);
    for i in 0..n + n_ext {
        let external = i >= n;
        let d = cfg.draw(&mut r, external);
        let (id, tag) = if external {
            (format!("x{:06}", i - n), ext_tag.clone().expect("external spec present"))
        } else {
            (format!("s{i:06}"), trial.clone())
        };
        let y = if d.treated { d.y1 } else { d.y0 };
        let index = cfg.calendar_start + Days::new(d.period as u64 * cfg.period_days as u64 + d.day as u64);
        records.push(
            SubjectRecord::new(
                id.clone(),
                d.covariates.into_iter().map(Some).collect(),
                Arm::from_flag(d.treated),
                d.observed,
                Some(y),
                tag,
            )
            .with_index_date(index),
        );
        pairs.push(CounterfactualPair { id, y1: d.y1, y0: d.y0 });
    }
    let mut provenance = vec![SourceInfo::named("trial", false)];
    if let Some(e) = &cfg.external {
        let mut info = SourceInfo::named(&e.label, true);
        info.notes = format!("simulated external source, outcome shift {}", e.outcome_shift);
        provenance.push(info);
    }
    let ds = Dataset::new(cfg.schema(), cfg.outcome_kind(), records, provenance)?;
    let ds = match &cfg.measurement_error {
        Some(m) => inject_measurement_error(&ds, m)?,
        None => ds,
    };
    Ok((ds, SealedCounterfactuals(pairs)))
}

/// Monte Carlo `E(Y_1 − Y_0)` over `m` fresh trial subjects. Chunk `k` of
/// 10⁴ draws uses stream `k`, and chunk sums are added in order, so the
/// result does not depend on the thread count.
pub fn true_ate(cfg: &ScmConfig, m: usize, seed: u64) -> Result<TrueEffect, SimulationError> {
    cfg.validate()?;
    if m < MIN_TRUTH_DRAWS {
        return Err(SimulationError::TooFewDraws(m));
    }
    let chunks = m.div_ceil(TRUTH_CHUNK);
    let sums: Vec<[f64; 4]> = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut r = rng::stream(seed, k as u64);
            let size = TRUTH_CHUNK.min(m - k * TRUTH_CHUNK);
            let mut acc = [0.0; 4];
            for _ in 0..size {
                let d = cfg.draw(&mut r, false);
                let diff = d.y1 - d.y0;
                acc[0] += diff;
                acc[1] += diff * diff;
                acc[2] += d.y1;
                acc[3] += d.y0;
            }
            acc
        })
        .collect();
    let mut total = [0.0; 4];
    for s in &sums {
        for j in 0..4 {
            total[j] += s[j];
        }
    }
    let mf = m as f64;
    let mean = total[0] / mf;
    let var = ((total[1] - mf * mean * mean) / (mf - 1.0)).max(0.0);
    Ok(TrueEffect {
        psi_true: mean,
        mc_standard_error: (var / mf).sqrt(),
        draws: m,
        mean_y1: total[2] / mf,
        mean_y0: total[3] / mf,
    })
}

/// Flips each observed binary outcome with its arm's probability. The input
/// dataset is left untouched.
pub fn inject_measurement_error(ds: &Dataset, spec: &MeasurementErrorSpec) -> Result<Dataset, SimulationError> {
    if ds.outcome_kind() != OutcomeKind::Binary {
        return Err(SimulationError::NonBinaryOutcome);
    }
    check_flip(spec)?;
    let mut r = rng::root(spec.seed);
    let records = ds
        .records()
        .iter()
        .map(|rec| {
            let u: f64 = r.random();
            let mut rec = rec.clone();
            let p = if rec.treatment.is_treated() { spec.flip_prob_treated } else { spec.flip_prob_control };
            if rec.observed && u < p {
                let y = rec.stored_outcome().expect("observed records carry an outcome");
                rec.set_outcome(Some(1.0 - y));
            }
            rec
        })
        .collect();
    Ok(ds.with_records(records))
}
