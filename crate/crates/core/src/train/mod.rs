//! Losses, the optimizer, the learning-rate schedule and the training loop.

mod adam;
mod fit;
mod loss;

pub use adam::{Adam, BETA1, BETA2, EPS};
pub use fit::{fit, EpochRecord, History};
pub use loss::{distill_loss, kd_loss, true_loss};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KdConfig {
    pub temperature: f32,
    pub lambda: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub weight_decay: f32,
    pub scheduler_step: usize,
    pub scheduler_gamma: f32,
    pub seed: u64,
}

impl Default for KdConfig {
    fn default() -> Self {
        KdConfig {
            temperature: 20.0,
            lambda: 0.9,
            epochs: 15,
            batch_size: 64,
            lr: 1e-3,
            weight_decay: 0.3,
            scheduler_step: 6,
            scheduler_gamma: 0.1,
            seed: 0,
        }
    }
}

impl KdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.scheduler_step == 0 {
            return Err(Error::config(
                "epochs, batch_size and scheduler_step must be at least 1",
            ));
        }
        let rates = [self.lr, self.weight_decay, self.scheduler_gamma];
        if rates.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::config(format!(
                "lr, weight_decay and scheduler_gamma must be nonnegative, got {rates:?}"
            )));
        }
        Ok(())
    }
}

/// Step decay: `lr · γ^⌊epoch / step⌋`.
pub fn lr_at(epoch: usize, cfg: &KdConfig) -> f32 {
    let k = (epoch / cfg.scheduler_step.max(1)) as i32;
    (cfg.lr as f64 * (cfg.scheduler_gamma as f64).powi(k)) as f32
}
