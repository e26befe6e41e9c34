//! TOML experiment configuration. Every field has a default, so an empty
//! file describes the standard synthetic setup.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{DatagenError, GeneratorConfig};
use crate::estimator::EmConfig;
use crate::types::{DecisionMethod, DecisionThreshold, Domain};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {field}: {reason}")]
    Invalid { field: String, reason: String },
}

impl ConfigError {
    fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Invalid { field: field.into(), reason: reason.into() }
    }
}

/// Which decision rule labels the held-out rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "MethodRepr", into = "MethodRepr")]
pub enum MethodChoice {
    Mode,
    Mass,
    /// Mode when its applicability fraction reaches [`AUTO_APPLICABILITY`], otherwise mass.
    #[default]
    Auto,
}

pub const AUTO_APPLICABILITY: f64 = 0.95;

impl MethodChoice {
    pub fn resolve(self, applicability: f64) -> DecisionMethod {
        match self {
            MethodChoice::Mode => DecisionMethod::Mode,
            MethodChoice::Mass => DecisionMethod::Mass,
            MethodChoice::Auto if applicability >= AUTO_APPLICABILITY => DecisionMethod::Mode,
            MethodChoice::Auto => DecisionMethod::Mass,
        }
    }
}

impl std::str::FromStr for MethodChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "1" | "mode" => Ok(MethodChoice::Mode),
            "2" | "mass" => Ok(MethodChoice::Mass),
            "auto" => Ok(MethodChoice::Auto),
            other => Err(format!("expected 1, 2 or \"auto\", got {other:?}")),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum MethodRepr {
    Int(i64),
    Str(String),
}

impl TryFrom<MethodRepr> for MethodChoice {
    type Error = String;

    fn try_from(r: MethodRepr) -> Result<Self, String> {
        match r {
            MethodRepr::Int(i) => i.to_string().parse(),
            MethodRepr::Str(s) => s.parse(),
        }
    }
}

impl From<MethodChoice> for MethodRepr {
    fn from(m: MethodChoice) -> Self {
        match m {
            MethodChoice::Mode => MethodRepr::Int(1),
            MethodChoice::Mass => MethodRepr::Int(2),
            MethodChoice::Auto => MethodRepr::Str("auto".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftConfig {
    pub mean0_values: Vec<f64>,
    pub p_group1_target: f64,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        Self { mean0_values: vec![40.0, 60.0, 80.0], p_group1_target: 0.6 }
    }
}

/// Fixed input tables. When present, repetitions re-split these instead of
/// generating new data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub source: PathBuf,
    pub targets: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub generator: GeneratorConfig,
    pub shift: ShiftConfig,
    pub em: EmConfig,
    pub threshold: DecisionThreshold,
    pub method: MethodChoice,
    pub mass_floor: f64,
    /// Additive smoothing for the source channel estimate.
    pub smoothing: f64,
    /// Fraction of each target used for estimation; the rest is held out.
    pub split_fraction: f64,
    pub repetitions: usize,
    pub base_seed: u64,
    pub output_dir: PathBuf,
    /// Run repetitions concurrently.
    pub parallel: bool,
    pub input: Option<InputConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorConfig::default(),
            shift: ShiftConfig::default(),
            em: EmConfig::default(),
            threshold: DecisionThreshold { tau: 80, strict: true },
            method: MethodChoice::Auto,
            mass_floor: 0.5,
            smoothing: 1e-6,
            split_fraction: 0.8,
            repetitions: 10,
            base_seed: 2023,
            output_dir: PathBuf::from("results"),
            parallel: false,
            input: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.to_path_buf(), message: e.to_string() })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Domains of E and Z taken from the generator section.
    pub fn domains(&self) -> Result<(Domain, Domain), ConfigError> {
        self.generator.validate().map_err(|e| match e {
            DatagenError::Invalid { field, reason } => ConfigError::invalid(format!("generator.{field}"), reason),
            other => ConfigError::invalid("generator", other.to_string()),
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let (e_domain, _) = self.domains()?;
        let p = self.shift.p_group1_target;
        if !(0.0..=1.0).contains(&p) {
            return Err(ConfigError::invalid("shift.p_group1_target", format!("must lie in [0, 1], got {p}")));
        }
        if let Some(v) = self.shift.mean0_values.iter().find(|v| !v.is_finite()) {
            return Err(ConfigError::invalid("shift.mean0_values", format!("must be finite, got {v}")));
        }
        if !(self.em.gamma > 0.0 && self.em.gamma.is_finite()) {
            return Err(ConfigError::invalid("em.gamma", format!("must be > 0, got {}", self.em.gamma)));
        }
        if self.em.max_iterations == 0 {
            return Err(ConfigError::invalid("em.max_iterations", "must be >= 1"));
        }
        if self.threshold.validate(&e_domain).is_err() {
            return Err(ConfigError::invalid(
                "threshold.tau",
                format!("{} is outside the E domain", self.threshold.tau),
            ));
        }
        if !(self.mass_floor > 0.0 && self.mass_floor <= 1.0) {
            return Err(ConfigError::invalid("mass_floor", format!("must lie in (0, 1], got {}", self.mass_floor)));
        }
        if !(self.smoothing >= 0.0 && self.smoothing.is_finite()) {
            return Err(ConfigError::invalid("smoothing", format!("must be >= 0, got {}", self.smoothing)));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(ConfigError::invalid(
                "split_fraction",
                format!("must lie in (0, 1), got {}", self.split_fraction),
            ));
        }
        if self.repetitions == 0 {
            return Err(ConfigError::invalid("repetitions", "must be >= 1"));
        }
        if let Some(input) = &self.input {
            if input.targets.is_empty() {
                return Err(ConfigError::invalid("input.targets", "must list at least one file"));
            }
        }
        Ok(())
    }
}
