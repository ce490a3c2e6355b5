//! Run configuration: one TOML document with nested sections.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::ops::LossKind;
use crate::tensor::DType;
use crate::train::{AdamWConfig, AugmentationConfig, ScheduleConfig};

/// Element type used for training and inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::Config(format!("unknown precision '{other}' (expected f32, f64)"))),
        }
    }
}

/// Cosine schedule floor; the peak is `optimizer.lr` and the length is
/// `epochs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub lr_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: LossKind,
    pub precision: Precision,
    /// Accepted for reproducibility bookkeeping; every kernel is already
    /// sequential, so results are bit-reproducible either way.
    pub deterministic: bool,
    /// Change threshold for validation metrics.
    pub threshold: f64,
    /// Dataset root holding `train/`, `val/` (and `test/`).
    pub data_root: PathBuf,
    pub model: ModelConfig,
    pub optimizer: AdamWConfig,
    pub schedule: ScheduleSection,
    pub augmentation: AugmentationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            epochs: 30,
            batch_size: 8,
            loss: LossKind::Bce,
            precision: Precision::F32,
            deterministic: true,
            threshold: 0.5,
            data_root: PathBuf::from("data"),
            model: ModelConfig::default(),
            optimizer: AdamWConfig::default(),
            schedule: ScheduleSection::default(),
            augmentation: AugmentationConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optimizer.validate()?;
        self.augmentation.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size: must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold: {} is outside [0, 1]", self.threshold)));
        }
        if !(self.schedule.lr_min >= 0.0 && self.schedule.lr_min <= self.optimizer.lr) {
            return Err(Error::Config(format!(
                "schedule.lr_min: {} must lie in [0, optimizer.lr = {}]",
                self.schedule.lr_min, self.optimizer.lr
            )));
        }
        Ok(())
    }

    /// The learning-rate schedule over the whole run (at least one epoch
    /// long so that a zero-epoch run still has a valid schedule).
    pub fn schedule(&self) -> ScheduleConfig {
        ScheduleConfig { lr_max: self.optimizer.lr, lr_min: self.schedule.lr_min, total_epochs: self.epochs.max(1) }
    }

    /// Applies `key=value` using dotted TOML paths, e.g.
    /// `model.use_skip_connections=false` or `optimizer.lr=0.002`. The value
    /// is parsed as TOML, falling back to a bare string.
    pub fn with_override(&self, key: &str, value: &str) -> Result<Self> {
        let mut doc: toml::Value = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {value}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        let mut slot = &mut doc;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let table =
                slot.as_table_mut().ok_or_else(|| Error::Config(format!("'{key}' does not name a config field")))?;
            if i + 1 == parts.len() {
                if !table.contains_key(*part) {
                    return Err(Error::Config(format!("unknown config key '{key}'")));
                }
                table.insert(part.to_string(), parsed.clone());
                break;
            }
            slot = table.get_mut(*part).ok_or_else(|| Error::Config(format!("unknown config key '{key}'")))?;
        }
        let text = toml::to_string(&doc).map_err(|e| Error::Config(e.to_string()))?;
        RunConfig::from_toml(&text).map_err(|e| Error::Config(format!("{key}={value}: {e}")))
    }
}
