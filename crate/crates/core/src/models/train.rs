//! Shared training configuration and per-epoch reporting.

use serde::{Deserialize, Serialize};

use crate::autodiff::AdamConfig;
use crate::error::{Error, Result};

/// Hyperparameters shared by the QR and flow trainers. The paper does not
/// pin any of these; all are config-exposed.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Multiplicative learning-rate decay applied after each epoch.
    pub lr_decay: f64,
    /// Monte-Carlo quantile-level draws per datum per epoch (flows only).
    pub mc_draws: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 256,
            epochs: 40,
            lr_decay: 1.0,
            mc_draws: 1,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("TrainConfig", "learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("TrainConfig", "batch_size must be >= 1"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("TrainConfig", "epochs must be >= 1"));
        }
        if self.mc_draws == 0 {
            return Err(Error::invalid("TrainConfig", "mc_draws must be >= 1"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::invalid("TrainConfig", "lr_decay must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

/// One epoch of the loss log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Running mean of the mini-batch losses seen during the epoch.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    /// Minimum observed tau'(z)/slope over the epoch's constraint probes
    /// (NLSQ flows; 1.0 for affine). Strictly positive when the
    /// monotonicity parameterization holds.
    pub min_slope_ratio: Option<f64>,
}

/// Loss trajectory of one training run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainReport {
    /// Full-pass training loss before the first update.
    pub initial_train_loss: f64,
    /// Full-pass training loss after the last update.
    pub final_train_loss: f64,
    pub epochs: Vec<EpochStats>,
}

impl TrainReport {
    /// Loss-log CSV: `epoch,train_loss,val_loss` (empty cell when no
    /// validation split was given).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss\n");
        for e in &self.epochs {
            let val = e.val_loss.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, val));
        }
        out
    }
}
