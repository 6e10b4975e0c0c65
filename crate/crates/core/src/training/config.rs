//! Optimiser, schedule and augmentation settings.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub warmup_steps: u64,
    pub peak_lr: f64,
    pub l2_weight: f64,
    /// Maximum frequency-mask width.
    #[serde(rename = "spec_F")]
    pub spec_f: usize,
    pub spec_freq_masks: usize,
    pub spec_time_masks: usize,
    /// Maximum time-mask width as a fraction of the utterance length.
    #[serde(rename = "spec_pS")]
    pub spec_ps: f64,
    pub vn_std: f64,
    /// First step at which variational noise is applied.
    pub vn_start_step: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    pub max_steps: u64,
    pub seed: u64,
    /// Steps between dev evaluations (and metrics records).
    pub eval_interval: u64,
    /// Stop as soon as a dev evaluation reaches this token error rate.
    pub target_dev_error: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            warmup_steps: 15_000,
            peak_lr: 0.0025,
            l2_weight: 1e-6,
            spec_f: 27,
            spec_freq_masks: 1,
            spec_time_masks: 10,
            spec_ps: 0.05,
            vn_std: 0.075,
            vn_start_step: 2_000,
            adam_beta1: 0.9,
            adam_beta2: 0.98,
            adam_epsilon: 1e-9,
            batch_size: 8,
            max_steps: 10_000,
            seed: 7,
            eval_interval: 250,
            target_dev_error: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("warmup_steps", self.warmup_steps as f64),
            ("peak_lr", self.peak_lr),
            ("batch_size", self.batch_size as f64),
            ("eval_interval", self.eval_interval as f64),
            ("adam_epsilon", self.adam_epsilon),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(config_err(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.l2_weight >= 0.0) || !(self.vn_std >= 0.0) {
            return Err(config_err("l2_weight and vn_std must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.spec_ps) {
            return Err(config_err(format!("spec_pS must be in [0, 1], got {}", self.spec_ps)));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(config_err(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        Ok(())
    }
}

/// `peak * min(step / warmup, sqrt(warmup / step))`.
pub fn lr_schedule(step: u64, cfg: &TrainConfig) -> Result<f64> {
    if step < 1 {
        return Err(Error::Usage("learning-rate schedule starts at step 1".into()));
    }
    let (s, w) = (step as f64, cfg.warmup_steps as f64);
    Ok(cfg.peak_lr * (s / w).min((w / s).sqrt()))
}
