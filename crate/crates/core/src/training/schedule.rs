use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Step schedule: `base_lr · decay_factor^floor(epoch / step_epochs)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    pub base_lr: f64,
    pub decay_factor: f64,
    pub step_epochs: usize,
    pub total_epochs: usize,
}

impl Schedule {
    /// 0.1 divided by 10 every 30 epochs, 120 epochs.
    pub fn imagenet() -> Self {
        Schedule {
            base_lr: 0.1,
            decay_factor: 0.1,
            step_epochs: 30,
            total_epochs: 120,
        }
    }

    /// 0.1 divided by 10 every 10 epochs, 30 epochs.
    pub fn desk() -> Self {
        Schedule {
            base_lr: 0.1,
            decay_factor: 0.1,
            step_epochs: 10,
            total_epochs: 30,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(Error::Config(format!("base_lr {} must be positive", self.base_lr)));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return Err(Error::Config(format!(
                "decay_factor {} must lie in (0, 1)",
                self.decay_factor
            )));
        }
        if self.step_epochs == 0 || self.total_epochs == 0 {
            return Err(Error::Config("step_epochs and total_epochs must be positive".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> Result<f64> {
        self.validate()?;
        if epoch >= self.total_epochs {
            return Err(Error::Config(format!(
                "epoch {epoch} outside schedule of {} epochs",
                self.total_epochs
            )));
        }
        Ok(self.base_lr * self.decay_factor.powi((epoch / self.step_epochs) as i32))
    }
}

impl Default for Schedule {
    fn default() -> Self {
        Self::desk()
    }
}
