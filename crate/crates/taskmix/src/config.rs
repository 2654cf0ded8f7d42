//! Declarative experiment configuration.
//!
//! One TOML file describes a whole experiment: the data source (a manifest
//! path or a synthetic preset), the taxonomy rule, the training method, the
//! trainer hyperparameters and the run settings (seeds, step budget, output
//! directory). CLI flags may override scalar fields; precedence is
//! flags > file > defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::samplers::Strategy;
use crate::synth::SuitePreset;
use crate::taxonomy::TaxonomyRule;
use crate::trainer::TrainerConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("exactly one data source required: set data.manifest or data.preset")]
    DataSource,
    #[error("run.seeds must not be empty")]
    NoSeeds,
    #[error("unsupported method {0:?} (supported: {SUPPORTED_METHODS:?})")]
    UnsupportedMethod(String),
    #[error("method {kind:?} missing field {field}")]
    MissingField { kind: String, field: &'static str },
}

pub const SUPPORTED_METHODS: [&str; 5] = [
    "instance_balanced",
    "class_balanced",
    "temperature_scaled",
    "capped_temperature_scaled",
    "two_stage",
];

/// Data source: a pre-existing manifest, or a synthetic preset generated
/// into the run's output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct DataConfig {
    pub manifest: Option<PathBuf>,
    pub preset: Option<SuitePreset>,
    /// Generator seed for synthetic suites (independent of training seeds).
    pub suite_seed: u64,
    /// Append the preset's generation-like companion task at this
    /// similarity to its reference task (-1 for full conflict).
    pub generation_similarity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct TaxonomyConfig {
    pub rule: TaxonomyRule,
}

/// Raw method section; `kind` is validated against the supported set so that
/// unimplemented baselines (e.g. "few_shot", "unimax") are rejected by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodConfig {
    pub kind: String,
    pub tau: Option<f64>,
    pub cap: Option<usize>,
    /// Saturation threshold (epochs) separating low from high resource.
    pub threshold: f64,
    pub stage1_epochs: f64,
    pub stage2_epochs: f64,
}

impl Default for MethodConfig {
    fn default() -> Self {
        MethodConfig {
            kind: "two_stage".into(),
            tau: None,
            cap: None,
            threshold: crate::curriculum::DEFAULT_SATURATION_THRESHOLD,
            stage1_epochs: 1.0,
            stage2_epochs: 10.0,
        }
    }
}

/// Fully resolved training method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Method {
    /// One stage under a fixed sampling strategy.
    OneStage(Strategy),
    /// High-resource warmup, then the capped temperature-scaled mixture.
    TwoStage {
        tau: f64,
        cap: usize,
        threshold: f64,
        stage1_epochs: f64,
        stage2_epochs: f64,
    },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::OneStage(s) => s.name(),
            Method::TwoStage { .. } => "two_stage",
        }
    }
}

impl MethodConfig {
    /// Resolves the method, filling tau/cap defaults from the preset's
    /// standard hyperparameters (clue_like: tau 2, cap 20000;
    /// application_like: tau 3.33, cap 8000).
    pub fn resolve(&self, preset: Option<SuitePreset>) -> Result<Method, ConfigError> {
        let (default_tau, default_cap) = match preset {
            Some(SuitePreset::ApplicationLike) => (3.33, 8000),
            _ => (2.0, 20000),
        };
        let tau = self.tau.unwrap_or(default_tau);
        let cap = self.cap.unwrap_or(default_cap);
        match self.kind.as_str() {
            "instance_balanced" => Ok(Method::OneStage(Strategy::InstanceBalanced)),
            "class_balanced" => Ok(Method::OneStage(Strategy::ClassBalanced)),
            "temperature_scaled" => Ok(Method::OneStage(Strategy::TemperatureScaled { tau })),
            "capped_temperature_scaled" => {
                Ok(Method::OneStage(Strategy::CappedTemperatureScaled { tau, cap }))
            }
            "two_stage" => Ok(Method::TwoStage {
                tau,
                cap,
                threshold: self.threshold,
                stage1_epochs: self.stage1_epochs,
                stage2_epochs: self.stage2_epochs,
            }),
            other => Err(ConfigError::UnsupportedMethod(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Total step budget per trained model, across stages.
    pub step_cap: Option<usize>,
    /// Training seeds; one full run per seed.
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Epochs each single-task baseline trains for (with per-epoch
    /// early-stopping bookkeeping).
    pub baseline_epochs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            step_cap: Some(15_000),
            seeds: vec![1],
            output_dir: PathBuf::from("runs"),
            baseline_epochs: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub taxonomy: TaxonomyConfig,
    pub method: MethodConfig,
    pub trainer: TrainerConfig,
    pub run: RunConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let body = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let config: ExperimentConfig =
            toml::from_str(&body).map_err(|e| ConfigError::Parse(e.to_string()))?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match (&self.data.manifest, &self.data.preset) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => return Err(ConfigError::DataSource),
        }
        if self.run.seeds.is_empty() {
            return Err(ConfigError::NoSeeds);
        }
        self.method.resolve(self.data.preset)?;
        Ok(())
    }

    pub fn resolve_method(&self) -> Result<Method, ConfigError> {
        self.method.resolve(self.data.preset)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_minimal_toml() {
        let config: ExperimentConfig = toml::from_str(
            r#"
            [data]
            preset = "clue_like"

            [method]
            kind = "two_stage"

            [run]
            seeds = [1, 2, 3]
            step_cap = 15000
            "#,
        )
        .unwrap();
        config.validate().unwrap();
        assert_eq!(config.run.seeds, vec![1, 2, 3]);
        let method = config.resolve_method().unwrap();
        assert_eq!(
            method,
            Method::TwoStage {
                tau: 2.0,
                cap: 20000,
                threshold: 5.0,
                stage1_epochs: 1.0,
                stage2_epochs: 10.0,
            }
        );
    }

    #[test]
    fn preset_defaults_follow_suite() {
        let m = MethodConfig {
            kind: "capped_temperature_scaled".into(),
            ..MethodConfig::default()
        };
        assert_eq!(
            m.resolve(Some(SuitePreset::ApplicationLike)).unwrap(),
            Method::OneStage(Strategy::CappedTemperatureScaled {
                tau: 3.33,
                cap: 8000
            })
        );
        assert_eq!(
            m.resolve(Some(SuitePreset::ClueLike)).unwrap(),
            Method::OneStage(Strategy::CappedTemperatureScaled {
                tau: 2.0,
                cap: 20000
            })
        );
    }

    #[test]
    fn few_shot_rejected_as_unsupported() {
        let m = MethodConfig {
            kind: "few_shot".into(),
            ..MethodConfig::default()
        };
        match m.resolve(None) {
            Err(ConfigError::UnsupportedMethod(kind)) => assert_eq!(kind, "few_shot"),
            other => panic!("expected UnsupportedMethod, got {other:?}"),
        }
        let m = MethodConfig {
            kind: "unimax".into(),
            ..MethodConfig::default()
        };
        assert!(matches!(
            m.resolve(None),
            Err(ConfigError::UnsupportedMethod(_))
        ));
    }

    #[test]
    fn exactly_one_data_source() {
        let mut config = ExperimentConfig::default();
        assert!(matches!(config.validate(), Err(ConfigError::DataSource)));
        config.data.manifest = Some("m.json".into());
        config.data.preset = Some(SuitePreset::ClueLike);
        assert!(matches!(config.validate(), Err(ConfigError::DataSource)));
        config.data.preset = None;
        config.validate().unwrap();
    }

    #[test]
    fn empty_seeds_rejected() {
        let mut config = ExperimentConfig {
            data: DataConfig {
                manifest: Some("m.json".into()),
                ..DataConfig::default()
            },
            ..ExperimentConfig::default()
        };
        config.run.seeds.clear();
        assert!(matches!(config.validate(), Err(ConfigError::NoSeeds)));
    }
}
