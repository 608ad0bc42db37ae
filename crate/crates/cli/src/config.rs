//! Run configuration: one file per analysis, TOML or JSON.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use extarm_core::controls::{BetaPrior, EligibilityCriteria, MatchScore, DEFAULT_ALPHA, DEFAULT_CALIPER};
use extarm_core::data::ColumnMapping;
use extarm_core::estimand::EstimandSpec;
use extarm_core::estimators::{DeltaHandling, OutcomeModelSpec, PropensitySpec, Weighting};
use extarm_core::fitness::FitnessRules;
use extarm_core::simulate::{require_scenario, ScmConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MIN_REPLICATES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub estimand: Option<EstimandSpec>,
    #[serde(default)]
    pub sources: Vec<SourceConfig>,
    #[serde(default)]
    pub fitness: Option<FitnessRules>,
    #[serde(default)]
    pub control: Option<ControlConfig>,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub estimators: EstimatorConfig,
    #[serde(default)]
    pub sensitivity: SensitivityConfig,
    #[serde(default)]
    pub simulation: Option<SimulationConfig>,
    #[serde(default)]
    pub replicate: Option<ReplicateConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    /// Label used in reports; defaults to the file path.
    #[serde(default)]
    pub name: Option<String>,
    /// Relative paths resolve against the config file's directory.
    pub path: PathBuf,
    pub mapping: ColumnMapping,
}

impl SourceConfig {
    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.path.display().to_string())
    }
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_ratio() -> usize {
    1
}

fn default_caliper() -> f64 {
    DEFAULT_CALIPER
}

fn default_validation() -> f64 {
    0.2
}

/// The comparator construction, tagged by `method`. Being a single tagged
/// value, a config can only ever name one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum ControlConfig {
    /// Concurrent internal controls only.
    Internal,
    Historical(EligibilityCriteria),
    Synthetic {
        covariates: Vec<String>,
        #[serde(default)]
        metric: Option<Vec<f64>>,
    },
    TestAndPool {
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
    PowerPrior {
        a0: f64,
        #[serde(default)]
        prior: BetaPrior,
    },
    Matched {
        #[serde(default = "default_ratio")]
        ratio: usize,
        #[serde(default = "default_caliper")]
        caliper: f64,
        #[serde(default)]
        score: MatchScore,
        #[serde(default)]
        covariates: Option<Vec<String>>,
    },
    Virtual {
        #[serde(default)]
        model: OutcomeModelSpec,
        #[serde(default = "default_validation")]
        validation_fraction: f64,
    },
}

impl ControlConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ControlConfig::Internal => "internal",
            ControlConfig::Historical(_) => "historical",
            ControlConfig::Synthetic { .. } => "synthetic",
            ControlConfig::TestAndPool { .. } => "test-and-pool",
            ControlConfig::PowerPrior { .. } => "power-prior",
            ControlConfig::Matched { .. } => "matched",
            ControlConfig::Virtual { .. } => "virtual",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Adjustment set; every covariate when absent.
    #[serde(default)]
    pub covariates: Option<Vec<String>>,
    #[serde(default)]
    pub delta: DeltaHandling,
}

fn default_level() -> f64 {
    0.95
}

fn default_test_alpha() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub naive: bool,
    #[serde(default)]
    pub gcomp: Option<GcompConfig>,
    #[serde(default)]
    pub ipw: Option<IpwConfig>,
    #[serde(default)]
    pub tmle: Option<TmleConfig>,
    /// Exact single-arm test on the trial's treated subjects.
    #[serde(default)]
    pub binomial: Option<BinomialConfig>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig { level: default_level(), naive: false, gcomp: None, ipw: None, tmle: None, binomial: None }
    }
}

impl EstimatorConfig {
    pub fn any_selected(&self) -> bool {
        self.naive || self.gcomp.is_some() || self.ipw.is_some() || self.tmle.is_some() || self.binomial.is_some()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GcompConfig {
    #[serde(flatten)]
    pub model: OutcomeModelSpec,
    /// Percentile bootstrap replicates; no interval when absent.
    #[serde(default)]
    pub bootstrap: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IpwConfig {
    #[serde(flatten)]
    pub propensity: PropensitySpec,
    #[serde(default)]
    pub weighting: Weighting,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TmleConfig {
    #[serde(default)]
    pub outcome: OutcomeModelSpec,
    #[serde(default)]
    pub propensity: PropensitySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinomialConfig {
    pub p0: f64,
    #[serde(default)]
    pub p1: Option<f64>,
    #[serde(default = "default_test_alpha")]
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridConfig {
    Values(Vec<f64>),
    Range { from: f64, to: f64, step: f64 },
}

impl GridConfig {
    pub fn values(&self) -> anyhow::Result<Vec<f64>> {
        match *self {
            GridConfig::Values(ref v) => Ok(v.clone()),
            GridConfig::Range { from, to, step } => {
                if !(step > 0.0) || !(to >= from) {
                    bail!("grid range needs from <= to and step > 0");
                }
                let k = ((to - from) / step + 1e-9).floor() as usize;
                Ok((0..=k)
                    .map(|i| {
                        let v = from + i as f64 * step;
                        // snap roundoff so the grid hits 0 exactly
                        if v.abs() < step * 1e-9 { 0.0 } else { v }
                    })
                    .collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivityConfig {
    #[serde(default = "default_grid")]
    pub grid: GridConfig,
    #[serde(default = "yes")]
    pub evalue: bool,
}

fn default_grid() -> GridConfig {
    GridConfig::Range { from: -0.2, to: 0.2, step: 0.02 }
}

fn yes() -> bool {
    true
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        SensitivityConfig { grid: default_grid(), evalue: true }
    }
}

fn default_truth_draws() -> usize {
    1_000_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    /// Name of a shipped scenario; exclusive with `model`.
    #[serde(default)]
    pub scenario: Option<String>,
    #[serde(default)]
    pub model: Option<ScmConfig>,
    pub n: usize,
    /// Monte Carlo draws for the truth when no closed form exists.
    #[serde(default = "default_truth_draws")]
    pub truth_draws: usize,
}

impl SimulationConfig {
    pub fn resolve(&self) -> anyhow::Result<ScmConfig> {
        match (&self.scenario, &self.model) {
            (Some(name), None) => Ok(require_scenario(name)?),
            (None, Some(model)) => Ok(model.clone()),
            _ => bail!("simulation needs exactly one of `scenario` or `model`"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplicateConfig {
    pub replicates: usize,
    /// Trial size per replicate; defaults to `simulation.n`.
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default = "default_test_alpha")]
    pub alpha: f64,
}

impl RunConfig {
    /// Reads a config, choosing the parser by extension. Relative source
    /// paths are resolved against the config's directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        let mut cfg: RunConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text).with_context(|| format!("invalid TOML in {}", path.display()))?,
            Some("json") => serde_json::from_str(&text).with_context(|| format!("invalid JSON in {}", path.display()))?,
            _ => bail!("config must be a .toml or .json file: {}", path.display()),
        };
        let base = path.parent().unwrap_or(Path::new(""));
        for s in &mut cfg.sources {
            if s.path.is_relative() {
                s.path = base.join(&s.path);
            }
        }
        if let Some(out) = cfg.output.as_mut().filter(|o| o.is_relative()) {
            *out = base.join(&*out);
        }
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON form: object keys sorted, defaults
    /// filled in, so equivalent TOML and JSON files hash alike.
    pub fn sha256(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let bytes = serde_json::to_vec(&value).expect("value serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn require_seed(&self) -> anyhow::Result<u64> {
        self.seed.context("a seed is required (set `seed` in the config or pass --seed)")
    }

    pub fn require_simulation(&self) -> anyhow::Result<&SimulationConfig> {
        self.simulation.as_ref().context("config has no [simulation] section")
    }

    pub fn require_control(&self) -> anyhow::Result<&ControlConfig> {
        self.control.as_ref().context("config has no [control] section; exactly one control method is required")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_grid_hits_zero() {
        let g = GridConfig::Range { from: -0.5, to: 0.5, step: 0.1 }.values().unwrap();
        assert_eq!(g.len(), 11);
        assert!(g.contains(&0.0));
        assert!((g[10] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn control_is_tagged() {
        let c: ControlConfig = serde_json::from_str(r#"{"method":"test-and-pool"}"#).unwrap();
        assert_eq!(c, ControlConfig::TestAndPool { alpha: 0.10 });
        let c: ControlConfig = toml::from_str("method = \"power-prior\"\na0 = 0.5").unwrap();
        assert_eq!(c.name(), "power-prior");
        assert!(serde_json::from_str::<ControlConfig>(r#"{"method":"both"}"#).is_err());
    }

    #[test]
    fn hash_ignores_format_but_not_fields() {
        let a: RunConfig = toml::from_str("seed = 1\n[simulation]\nscenario = \"RCT\"\nn = 10").unwrap();
        let b: RunConfig = serde_json::from_str(r#"{"seed":1,"simulation":{"n":10,"scenario":"RCT"}}"#).unwrap();
        let c: RunConfig = serde_json::from_str(r#"{"seed":2,"simulation":{"n":10,"scenario":"RCT"}}"#).unwrap();
        assert_eq!(a.sha256(), b.sha256());
        assert_ne!(a.sha256(), c.sha256());
    }
}
