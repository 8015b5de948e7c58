//! Run configuration: one TOML file, overridden by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::Context;
use gridptr::model::{ModelConfig, TrainConfig};
use gridptr::metrics::ENSEMBLE_TAU;
use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    /// Text embedding table; the bundled 50-d fixture when absent.
    pub embeddings: Option<PathBuf>,
    /// Visual feature file; seeded random features when absent.
    pub features: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Metrics {
    pub anls_threshold: Option<f64>,
    pub ensemble_tau: f64,
}

impl Default for Metrics {
    fn default() -> Self {
        Metrics {
            anls_threshold: None,
            ensemble_tau: ENSEMBLE_TAU,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub grid_size: usize,
    pub paths: Paths,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub metrics: Metrics,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            grid_size: 19,
            paths: Paths::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            metrics: Metrics::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        toml::from_str(text).map_err(|e| UsageError(format!("invalid config: {e}")).into())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.grid_size == 0 {
            return Err(UsageError("grid_size must be positive".into()).into());
        }
        if let Some(t) = self.metrics.anls_threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(UsageError(format!("anls_threshold {t} outside [0, 1]")).into());
            }
        }
        if !(0.0..=1.0).contains(&self.metrics.ensemble_tau) {
            return Err(UsageError(format!("ensemble_tau {} outside [0, 1]", self.metrics.ensemble_tau)).into());
        }
        Ok(())
    }
}
