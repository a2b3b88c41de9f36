//! Per-level quantile regression networks: one net per quantile level,
//! trained by mini-batch Adam on the tilted absolute loss.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use super::train::{EpochStats, TrainConfig, TrainReport};
use super::QuantileModel;
use crate::autodiff::{AdamState, DenseNet, NetCache};
use crate::data::{read_json, write_json, Normalizer, Sample, StateFeatures};
use crate::error::{Error, Result};
use crate::quantile::{tal_unchecked, QuantileLevel};

/// Hidden architecture of the regression nets: 4 fully connected layers of
/// 64 units with ReLU.
pub const QR_HIDDEN: [usize; 4] = [64, 64, 64, 64];

pub const QR_CHECKPOINT_VERSION: u32 = 1;

/// A trained quantile regressor for one fixed level.
#[derive(Debug, Clone)]
pub struct QuantileRegressor {
    level: QuantileLevel,
    net: DenseNet,
    normalizer: Normalizer,
}

impl QuantileRegressor {
    /// Builds a regressor from parts; the net must map the normalizer's
    /// feature dimension to a single output.
    pub fn from_parts(level: QuantileLevel, net: DenseNet, normalizer: Normalizer) -> Result<Self> {
        if net.input_dim() != normalizer.feature_dim() || net.output_dim() != 1 {
            return Err(Error::ShapeMismatch {
                context: "QuantileRegressor::from_parts",
                expected: normalizer.feature_dim(),
                actual: net.input_dim(),
            });
        }
        Ok(QuantileRegressor {
            level,
            net,
            normalizer,
        })
    }

    pub fn level(&self) -> QuantileLevel {
        self.level
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    /// De-standardized quantile estimate for one state, m/s^2.
    pub fn predict(&self, state: &StateFeatures) -> Result<f64> {
        let feats = self.normalizer.standardize_features(state)?;
        let out = self.net.forward(&feats)?;
        Ok(self.normalizer.destandardize_action(0, out[0]))
    }

    /// Trains with the default architecture (`QR_HIDDEN`).
    pub fn train(
        train: &[Sample],
        level: QuantileLevel,
        config: &TrainConfig,
        normalizer: &Normalizer,
        seed: u64,
        val: Option<&[Sample]>,
    ) -> Result<(Self, TrainReport)> {
        Self::train_with_arch(train, level, config, normalizer, seed, val, &QR_HIDDEN)
    }

    /// Trains a regressor with an explicit hidden architecture.
    pub fn train_with_arch(
        train: &[Sample],
        level: QuantileLevel,
        config: &TrainConfig,
        normalizer: &Normalizer,
        seed: u64,
        val: Option<&[Sample]>,
        hidden: &[usize],
    ) -> Result<(Self, TrainReport)> {
        if train.is_empty() {
            return Err(Error::EmptyInput { context: "qr_train" });
        }
        config.validate()?;
        let alpha = level.value();
        let fd = normalizer.feature_dim();
        let n = train.len();

        let mut features = vec![0.0; n * fd];
        let mut targets = vec![0.0; n];
        for (i, s) in train.iter().enumerate() {
            let f = normalizer.standardize_features(&s.state)?;
            features[i * fd..(i + 1) * fd].copy_from_slice(&f);
            targets[i] = normalizer.standardize_action(0, s.action.longitudinal);
        }
        let val_data = val
            .map(|v| -> Result<_> {
                let mut vf = vec![0.0; v.len() * fd];
                let mut vt = vec![0.0; v.len()];
                for (i, s) in v.iter().enumerate() {
                    let f = normalizer.standardize_features(&s.state)?;
                    vf[i * fd..(i + 1) * fd].copy_from_slice(&f);
                    vt[i] = normalizer.standardize_action(0, s.action.longitudinal);
                }
                Ok((vf, vt))
            })
            .transpose()?;

        let mut arch = Vec::with_capacity(hidden.len() + 2);
        arch.push(fd);
        arch.extend_from_slice(hidden);
        arch.push(1);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = DenseNet::new(&arch, &mut rng)?;
        let mut params = Vec::with_capacity(net.param_count());
        net.flatten(&mut params);
        let mut grads = vec![0.0; params.len()];
        let mut adam = AdamState::new(params.len(), config.adam());

        let full_loss = |net: &DenseNet, xs: &[f64], ys: &[f64]| -> Result<f64> {
            let mut cache = NetCache::new();
            let mut sum = 0.0;
            for (i, &y) in ys.iter().enumerate() {
                net.forward_cached(&xs[i * fd..(i + 1) * fd], &mut cache)?;
                sum += tal_unchecked(y, cache.output()[0], alpha);
            }
            Ok(sum / ys.len() as f64)
        };

        let mut report = TrainReport {
            initial_train_loss: full_loss(&net, &features, &targets)?,
            ..TrainReport::default()
        };

        let mut order: Vec<usize> = (0..n).collect();
        let mut cache = NetCache::new();
        let mut lr = config.learning_rate;
        for epoch in 1..=config.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            let mut batches = 0usize;
            for chunk in order.chunks(config.batch_size) {
                grads.iter_mut().for_each(|g| *g = 0.0);
                let inv = 1.0 / chunk.len() as f64;
                let mut batch_loss = 0.0;
                for &i in chunk {
                    net.forward_cached(&features[i * fd..(i + 1) * fd], &mut cache)?;
                    let pred = cache.output()[0];
                    let y = targets[i];
                    batch_loss += tal_unchecked(y, pred, alpha);
                    // d tal / d pred: -alpha left of the kink, 1 - alpha
                    // right of it; the tie goes with the left branch.
                    let d = if y - pred > 0.0 { -alpha } else if y - pred < 0.0 { 1.0 - alpha } else { -alpha };
                    net.backprop(&cache, &[d * inv], &mut grads)?;
                }
                batch_loss *= inv;
                if !batch_loss.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        loss: batch_loss,
                    });
                }
                adam.step(&mut params, &grads)?;
                net.load_flat(&params)?;
                epoch_loss += batch_loss;
                batches += 1;
            }
            let val_loss = match &val_data {
                Some((vf, vt)) => Some(full_loss(&net, vf, vt)?),
                None => None,
            };
            report.epochs.push(EpochStats {
                epoch,
                train_loss: epoch_loss / batches as f64,
                val_loss,
                min_slope_ratio: None,
            });
            lr *= config.lr_decay;
            adam.set_learning_rate(lr);
        }
        report.final_train_loss = full_loss(&net, &features, &targets)?;

        Ok((
            QuantileRegressor {
                level,
                net,
                normalizer: normalizer.clone(),
            },
            report,
        ))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(
            path,
            &QrCheckpoint {
                format_version: QR_CHECKPOINT_VERSION,
                level: self.level.value(),
                net: self.net.clone(),
                normalizer: self.normalizer.clone(),
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: QrCheckpoint = read_json(path)?;
        if ck.format_version != QR_CHECKPOINT_VERSION {
            return Err(Error::FormatVersion {
                found: ck.format_version,
                supported: QR_CHECKPOINT_VERSION,
            });
        }
        QuantileRegressor::from_parts(QuantileLevel::new(ck.level)?, ck.net, ck.normalizer)
    }
}

/// Checkpoint layout: format version, level, layer sizes + row-major weights
/// + biases + activation tag (inside `net`), and normalizer statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QrCheckpoint {
    pub format_version: u32,
    pub level: f64,
    pub net: DenseNet,
    pub normalizer: Normalizer,
}

impl QuantileModel for QuantileRegressor {
    fn feature_dim(&self) -> usize {
        self.normalizer.feature_dim()
    }

    fn action_dims(&self) -> usize {
        1
    }

    fn quantile(
        &self,
        state: &StateFeatures,
        level: QuantileLevel,
        _prefix: &[f64],
    ) -> Result<f64> {
        if level.value() != self.level.value() {
            return Err(Error::MissingLevel {
                level: level.value(),
            });
        }
        self.predict(state)
    }
}

/// A family of per-level regressors served behind the common interface;
/// exactly one trained network per level.
#[derive(Debug, Clone, Default)]
pub struct QrSet {
    models: Vec<QuantileRegressor>,
}

impl QrSet {
    pub fn new(models: Vec<QuantileRegressor>) -> Self {
        QrSet { models }
    }

    pub fn push(&mut self, model: QuantileRegressor) {
        self.models.push(model);
    }

    pub fn levels(&self) -> Vec<QuantileLevel> {
        self.models.iter().map(|m| m.level()).collect()
    }

    pub fn get(&self, level: QuantileLevel) -> Result<&QuantileRegressor> {
        self.models
            .iter()
            .find(|m| m.level().value() == level.value())
            .ok_or(Error::MissingLevel {
                level: level.value(),
            })
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}

impl QuantileModel for QrSet {
    fn feature_dim(&self) -> usize {
        self.models.first().map_or(0, |m| m.feature_dim())
    }

    fn action_dims(&self) -> usize {
        1
    }

    fn quantile(
        &self,
        state: &StateFeatures,
        level: QuantileLevel,
        _prefix: &[f64],
    ) -> Result<f64> {
        self.get(level)?.predict(state)
    }
}
