//! Run configuration: defaults, TOML file, then command-line flags.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use choicecal::estimate::{EstimationConfig, ModelId, SubjectFilter};
use choicecal::predictability::PredictabilityConfig;
use choicecal::shift::ShiftConfig;

pub const DEFAULT_OUT: &str = "choicecal-out";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub pairs: Option<PathBuf>,
    pub observations: Option<PathBuf>,
    /// Largest admissible |outcome|; negative disables the check.
    pub outcome_bound: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModelChoice {
    LogitCpt,
    Qdt,
    Both,
}

impl ModelChoice {
    pub fn models(self) -> Vec<ModelId> {
        match self {
            ModelChoice::LogitCpt => vec![ModelId::LogitCpt],
            ModelChoice::Qdt => vec![ModelId::Qdt],
            ModelChoice::Both => vec![ModelId::LogitCpt, ModelId::Qdt],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Aggregate,
    Individual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum FilterChoice {
    All,
    Majoritarian,
    Contrarian,
}

impl From<FilterChoice> for SubjectFilter {
    fn from(f: FilterChoice) -> Self {
        match f {
            FilterChoice::All => SubjectFilter::All,
            FilterChoice::Majoritarian => SubjectFilter::Majoritarian,
            FilterChoice::Contrarian => SubjectFilter::Contrarian,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub model: ModelChoice,
    pub level: Level,
    pub session: u8,
    pub filter: FilterChoice,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            model: ModelChoice::Both,
            level: Level::Aggregate,
            session: 1,
            filter: FilterChoice::All,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub subjects: usize,
    pub model: ModelId,
    pub sessions: usize,
    /// Majoritarian fraction; enables two-group generation together with
    /// `shift_alpha`.
    pub fraction: Option<f64>,
    pub shift_alpha: Option<f64>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            subjects: 142,
            model: ModelId::LogitCpt,
            sessions: 2,
            fraction: None,
            shift_alpha: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub data: DataConfig,
    pub fit: FitConfig,
    pub simulate: SimulateConfig,
    pub estimation: EstimationConfig,
    pub shift: ShiftConfig,
    pub predictability: PredictabilityConfig,
    /// Monte Carlo band in shift outputs.
    pub band: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: None,
            threads: None,
            data: DataConfig::default(),
            fit: FitConfig::default(),
            simulate: SimulateConfig::default(),
            estimation: EstimationConfig::default(),
            shift: ShiftConfig::default(),
            predictability: PredictabilityConfig::default(),
            band: true,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    /// Push the master seed into every seeded component.
    pub fn seeded(mut self) -> Self {
        self.estimation = self.estimation.with_seed(self.seed);
        self.shift = self.shift.with_seed(self.seed);
        self
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }
}

/// SHA-256 over the command, the effective configuration (without output
/// location and thread count) and the bytes of every input file.
pub fn config_hash(command: &str, cfg: &RunConfig, inputs: &[&Path]) -> anyhow::Result<String> {
    let mut canonical = cfg.clone();
    canonical.out = None;
    canonical.threads = None;
    canonical.data.pairs = None;
    canonical.data.observations = None;
    let mut h = Sha256::new();
    h.update(command.as_bytes());
    h.update([0]);
    h.update(serde_json::to_vec(&canonical)?);
    for p in inputs {
        h.update([0]);
        h.update(std::fs::read(p).with_context(|| format!("cannot read {}", p.display()))?);
    }
    Ok(hex::encode(h.finalize()))
}
