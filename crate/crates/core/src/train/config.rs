use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which parameters a run trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Whole encoder and head from random initialization.
    VitFs,
    /// Frozen encoder, head only.
    Fe,
    /// Frozen encoder with trainable query/value adapters, plus head.
    Foundpad,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::VitFs => "vit_fs",
            TrainMode::Fe => "fe",
            TrainMode::Foundpad => "foundpad",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub epochs: usize,
    pub batch_size: usize,
    /// Encoder (ViT-FS) and adapter learning rate.
    pub lr_backbone: f64,
    pub lr_head: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Standard deviation for randomly initialized encoder matrices.
    pub init_std: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Foundpad,
            epochs: 40,
            batch_size: 32,
            lr_backbone: 1e-6,
            lr_head: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
            seed: 0,
            init_std: crate::vit::INIT_STD,
        }
    }
}

impl TrainConfig {
    /// Full-scale settings: 40 epochs, batch 512.
    pub fn full_scale(mode: TrainMode) -> Self {
        Self {
            mode,
            batch_size: 512,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        for (name, v) in [("lr_backbone", self.lr_backbone), ("lr_head", self.lr_head), ("eps", self.eps)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::config(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay must be non-negative"));
        }
        if !(self.init_std > 0.0) {
            return Err(Error::config("init_std must be positive"));
        }
        Ok(())
    }
}
