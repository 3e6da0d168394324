//! Declarative experiment profile. Every field has a default, so a config
//! file only needs the values it changes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentBounds;
use crate::denoiser::Architecture;
use crate::diffusion::{ScheduleKind, ScheduleParams};
use crate::error::{Error, Result};
use crate::train::TrainingConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    pub cuts_per_object: usize,
    pub height_low: f64,
    pub height_high: f64,
    pub max_angle: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        let b = AugmentBounds::default();
        Self {
            cuts_per_object: 4,
            height_low: b.low,
            height_high: b.high,
            max_angle: b.max_angle,
        }
    }
}

impl AugmentationConfig {
    pub fn bounds(&self) -> AugmentBounds {
        AugmentBounds {
            max_angle: self.max_angle,
            low: self.height_low,
            high: self.height_high,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub m: usize,
    pub seed: u64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { m: 820, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        let s = ScheduleParams::STANDARD;
        Self {
            steps: s.steps,
            beta_start: s.beta_start,
            beta_end: s.beta_end,
        }
    }
}

impl ScheduleConfig {
    pub fn params(&self) -> ScheduleParams {
        ScheduleParams {
            steps: self.steps,
            beta_start: self.beta_start,
            beta_end: self.beta_end,
            kind: ScheduleKind::Linear,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Surface samples per prepared object.
    pub points_complete: usize,
    /// Condition cloud size `N`.
    pub points_broken: usize,
    /// Repair cloud size `M`.
    pub points_repair: usize,
    pub train_fraction: f64,
    pub schedule: ScheduleConfig,
    pub training: TrainingConfig,
    pub architecture: Architecture,
    pub augmentation: AugmentationConfig,
    pub evaluation: EvaluationConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            points_complete: 10240,
            points_broken: 8192,
            points_repair: 820,
            train_fraction: 0.7,
            schedule: ScheduleConfig::default(),
            training: TrainingConfig::default(),
            architecture: Architecture::default(),
            augmentation: AugmentationConfig::default(),
            evaluation: EvaluationConfig::default(),
        }
    }
}

fn field(name: &str, msg: impl std::fmt::Display) -> Error {
    Error::InvalidArgument(format!("{name}: {msg}"))
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: PipelineConfig = serde_json::from_str(&text)?;
        Ok(cfg)
    }

    /// Field-level validation; the error names the offending field.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("points_complete", self.points_complete),
            ("points_broken", self.points_broken),
            ("points_repair", self.points_repair),
            ("schedule.steps", self.schedule.steps),
            ("training.epochs", self.training.epochs),
            ("training.batch_size", self.training.batch_size),
            ("augmentation.cuts_per_object", self.augmentation.cuts_per_object),
            ("evaluation.m", self.evaluation.m),
        ] {
            if v == 0 {
                return Err(field(name, "must be positive"));
            }
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(field("train_fraction", "must be in (0, 1)"));
        }
        if !(self.training.learning_rate > 0.0 && self.training.learning_rate.is_finite()) {
            return Err(field("training.learning_rate", "must be positive"));
        }
        let a = &self.augmentation;
        if !(a.height_low > 0.0 && a.height_low < 1.0) {
            return Err(field("augmentation.height_low", "must be in (0, 1)"));
        }
        if !(a.height_high > 0.0 && a.height_high < 1.0) {
            return Err(field("augmentation.height_high", "must be in (0, 1)"));
        }
        if a.height_low > a.height_high {
            return Err(field("augmentation.height_low", "must not exceed height_high"));
        }
        if !(a.max_angle > 0.0 && a.max_angle < 90.0) {
            return Err(field("augmentation.max_angle", "must be in (0, 90)"));
        }
        self.schedule
            .params()
            .build()
            .map_err(|e| field("schedule", e))?;
        self.architecture
            .validate()
            .map_err(|e| field("architecture", e))?;
        Ok(())
    }
}
