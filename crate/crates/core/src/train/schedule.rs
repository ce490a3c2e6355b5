use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-cosine decay from `lr_max` to `lr_min`, no restarts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub lr_max: f64,
    pub lr_min: f64,
    pub total_epochs: usize,
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr_max && self.lr_max.is_finite()) {
            return Err(Error::Config(format!(
                "schedule: need 0 <= lr_min <= lr_max, got lr_min {} and lr_max {}",
                self.lr_min, self.lr_max
            )));
        }
        if self.total_epochs == 0 {
            return Err(Error::Config("schedule: total_epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Learning rate for `epoch` in `0..=total_epochs`. Both endpoints are
/// returned exactly.
pub fn cosine_lr(epoch: usize, cfg: &ScheduleConfig) -> Result<f64> {
    if epoch > cfg.total_epochs {
        return Err(Error::Usage(format!("epoch {epoch} is outside the schedule's 0..={} range", cfg.total_epochs)));
    }
    if epoch == 0 {
        return Ok(cfg.lr_max);
    }
    if epoch == cfg.total_epochs {
        return Ok(cfg.lr_min);
    }
    let phase = std::f64::consts::PI * epoch as f64 / cfg.total_epochs as f64;
    Ok(cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + phase.cos()))
}
