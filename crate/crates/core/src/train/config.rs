use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

/// Optimizer and schedule settings. The defaults are the full-scale
/// pretraining values; [`TrainConfig::toy`] is the desk-scale preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr_max: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub final_lr_ratio: f64,
    /// Signals per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
    /// Loss curve sampling interval in steps.
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_max: 5e-4,
            betas: (0.9, 0.98),
            eps: 1e-8,
            weight_decay: 0.01,
            warmup_steps: 2000,
            total_steps: 500_000,
            final_lr_ratio: 0.1,
            batch_size: 8,
            seed: 0,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn toy() -> Self {
        Self {
            lr_max: 3e-3,
            warmup_steps: 100,
            total_steps: 2000,
            ..Self::default()
        }
    }

    pub fn lr_min(&self) -> f64 {
        self.final_lr_ratio * self.lr_max
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.final_lr_ratio > 0.0 && self.final_lr_ratio <= 1.0) {
            bail!(Config, "final_lr_ratio {} must lie in (0, 1]", self.final_lr_ratio);
        }
        if self.warmup_steps >= self.total_steps {
            bail!(
                Config,
                "warmup_steps {} must be below total_steps {}",
                self.warmup_steps,
                self.total_steps
            );
        }
        if !(self.lr_max >= 0.0 && self.lr_max.is_finite()) {
            bail!(Config, "lr_max must be finite and non-negative");
        }
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            bail!(Config, "betas must lie in [0, 1)");
        }
        if self.eps <= 0.0 || self.weight_decay < 0.0 {
            bail!(Config, "eps must be positive and weight_decay non-negative");
        }
        if self.batch_size == 0 || self.log_every == 0 {
            bail!(Config, "batch_size and log_every must be positive");
        }
        Ok(())
    }
}
