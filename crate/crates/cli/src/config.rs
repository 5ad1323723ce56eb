//! Run configuration: one JSON document whose sections all default, with
//! unknown keys rejected. Relative paths inside a file resolve against the
//! file's directory.

use std::path::{Path, PathBuf};

use menet_core::menet::MENetConfig;
use menet_core::training::{OptimState, Schedule, TrainOptions};
use serde::{Deserialize, Serialize};

use crate::archive::Dtype;
use crate::error::{CliError, CliResult};
use crate::io::read_json;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            momentum: 0.9,
            weight_decay: 4e-5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataPaths {
    pub train: Option<PathBuf>,
    pub eval: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputPaths {
    pub weights: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    pub dtype: Dtype,
}

impl Default for OutputPaths {
    fn default() -> Self {
        OutputPaths {
            weights: None,
            metrics: None,
            dtype: Dtype::F64,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: MENetConfig,
    pub schedule: Schedule,
    pub optim: OptimConfig,
    pub train: TrainOptions,
    pub data: DataPaths,
    pub output: OutputPaths,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let mut cfg: RunConfig = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.data.train,
            &mut cfg.data.eval,
            &mut cfg.output.weights,
            &mut cfg.output.metrics,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> CliResult<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// Optimizer state whose learning rate starts at the schedule's base.
    pub fn optim_state(&self) -> CliResult<OptimState> {
        Ok(OptimState::new(
            self.schedule.base_lr,
            self.optim.momentum,
            self.optim.weight_decay,
        )?)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.model.validate()?;
        self.schedule.validate()?;
        self.optim_state()?;
        if self.train.epochs == 0 || self.train.epochs > self.schedule.total_epochs {
            return Err(CliError::Core(menet_core::Error::Config(format!(
                "epochs {} must lie in 1..={}",
                self.train.epochs, self.schedule.total_epochs
            ))));
        }
        if self.train.batch_size < 2 {
            return Err(CliError::Core(menet_core::Error::Config(format!(
                "batch_size {} must be at least 2",
                self.train.batch_size
            ))));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_default_and_unknown_keys_fail() {
        let cfg: RunConfig =
            serde_json::from_str(r#"{"train": {"epochs": 5}, "schedule": {"step_epochs": 2}}"#).unwrap();
        assert_eq!(cfg.train.epochs, 5);
        assert_eq!(cfg.train.batch_size, 32);
        assert_eq!(cfg.schedule.step_epochs, 2);
        assert_eq!(cfg.schedule.base_lr, 0.1);
        assert!(serde_json::from_str::<RunConfig>(r#"{"trian": {}}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"optim": {"lr": 1}}"#).is_err());
    }

    #[test]
    fn validation_catches_epoch_overflow() {
        let mut cfg = RunConfig::default();
        cfg.validate().unwrap();
        cfg.train.epochs = 31;
        assert!(cfg.validate().is_err());
    }
}
