//! State features, actions, and the train-split normalizer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whether models predict longitudinal acceleration only, or longitudinal
/// plus lateral. The 2D case also widens the state features with the lane
/// counts on either side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionDims {
    #[serde(rename = "1", alias = "one")]
    One,
    #[serde(rename = "2", alias = "two")]
    Two,
}

impl ActionDims {
    pub fn from_count(n: usize) -> Result<Self> {
        match n {
            1 => Ok(ActionDims::One),
            2 => Ok(ActionDims::Two),
            _ => Err(Error::invalid("ActionDims", format!("dims must be 1 or 2, got {n}"))),
        }
    }

    pub fn count(self) -> usize {
        match self {
            ActionDims::One => 1,
            ActionDims::Two => 2,
        }
    }

    pub fn feature_dim(self) -> usize {
        match self {
            ActionDims::One => 5,
            ActionDims::Two => 7,
        }
    }

    pub fn feature_names(self) -> &'static [&'static str] {
        match self {
            ActionDims::One => &FEATURE_NAMES[..5],
            ActionDims::Two => &FEATURE_NAMES,
        }
    }
}

const FEATURE_NAMES: [&str; 7] = [
    "dhw",
    "thw",
    "ttc",
    "follower_velocity",
    "leader_velocity",
    "lanes_left",
    "lanes_right",
];

/// Number of lanes on either side of the modeled vehicle (2D features only).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LaneContext {
    pub left: u32,
    pub right: u32,
}

/// State features of one car-following situation. `lanes` is present exactly
/// for 2D samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFeatures {
    /// Distance headway: net gap to the leader, m.
    pub dhw: f64,
    /// Time headway: gap over follower speed, s.
    pub thw: f64,
    /// Time to collision: gap over closing speed, s (capped when not closing).
    pub ttc: f64,
    pub follower_velocity: f64,
    pub leader_velocity: f64,
    pub lanes: Option<LaneContext>,
}

impl StateFeatures {
    pub fn feature_dim(&self) -> usize {
        if self.lanes.is_some() {
            7
        } else {
            5
        }
    }

    pub fn feature_vec(&self) -> Vec<f64> {
        let mut v = vec![
            self.dhw,
            self.thw,
            self.ttc,
            self.follower_velocity,
            self.leader_velocity,
        ];
        if let Some(l) = self.lanes {
            v.push(f64::from(l.left));
            v.push(f64::from(l.right));
        }
        v
    }
}

/// Default cap for time headway and time to collision, seconds. Applied when
/// the quantity is undefined (not closing, standing follower) and as an upper
/// bound, so the feature space agrees between data extraction and simulation.
pub const DEFAULT_TIME_CAP: f64 = 50.0;

/// Time headway from gap and follower speed.
pub fn derive_thw(dhw: f64, follower_velocity: f64, cap: f64) -> f64 {
    if follower_velocity > 0.0 {
        (dhw / follower_velocity).min(cap)
    } else {
        cap
    }
}

/// Time to collision from gap and both speeds; `cap` when not closing.
pub fn derive_ttc(dhw: f64, follower_velocity: f64, leader_velocity: f64, cap: f64) -> f64 {
    if follower_velocity > leader_velocity {
        (dhw / (follower_velocity - leader_velocity)).min(cap)
    } else {
        cap
    }
}

/// Driver action: longitudinal acceleration, optionally lateral, m/s^2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub longitudinal: f64,
    pub lateral: Option<f64>,
}

impl Action {
    pub fn dims(&self) -> usize {
        if self.lateral.is_some() {
            2
        } else {
            1
        }
    }

    /// Action component by dimension index (0 = longitudinal, 1 = lateral).
    pub fn component(&self, dim: usize) -> f64 {
        match dim {
            0 => self.longitudinal,
            1 => self.lateral.expect("lateral action requested from a 1D sample"),
            _ => panic!("action dimension {dim} out of range"),
        }
    }

    pub fn as_vec(&self) -> Vec<f64> {
        match self.lateral {
            Some(lat) => vec![self.longitudinal, lat],
            None => vec![self.longitudinal],
        }
    }
}

/// One (state-features, action) pair: the unit of supervised training,
/// treated as an i.i.d. draw from the conditional action distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub state: StateFeatures,
    pub action: Action,
}

impl Sample {
    pub fn feature_vec(&self) -> Vec<f64> {
        self.state.feature_vec()
    }
}

/// Per-feature and per-action mean/stddev, fitted on the training split only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    feature_mean: Vec<f64>,
    feature_std: Vec<f64>,
    action_mean: Vec<f64>,
    action_std: Vec<f64>,
}

const DEGENERATE_STD: f64 = 1e-12;

impl Normalizer {
    /// Fits means and stddevs on `train`. A feature with (near-)zero spread
    /// is rejected with a diagnostic naming it; a degenerate action falls
    /// back to unit scale so that constant-action training stays well
    /// defined.
    pub fn fit(train: &[Sample], dims: ActionDims) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyInput {
                context: "Normalizer::fit",
            });
        }
        let fd = dims.feature_dim();
        let n = train.len() as f64;
        let mut fmean = vec![0.0; fd];
        let mut amean = vec![0.0; dims.count()];
        for s in train {
            let fv = s.feature_vec();
            if fv.len() != fd {
                return Err(Error::ShapeMismatch {
                    context: "Normalizer::fit features",
                    expected: fd,
                    actual: fv.len(),
                });
            }
            for (m, v) in fmean.iter_mut().zip(&fv) {
                *m += v;
            }
            for (d, m) in amean.iter_mut().enumerate() {
                *m += s.action.component(d);
            }
        }
        fmean.iter_mut().for_each(|m| *m /= n);
        amean.iter_mut().for_each(|m| *m /= n);

        let mut fvar = vec![0.0; fd];
        let mut avar = vec![0.0; dims.count()];
        for s in train {
            let fv = s.feature_vec();
            for ((v, m), x) in fvar.iter_mut().zip(&fmean).zip(&fv) {
                *v += (x - m) * (x - m);
            }
            for (d, v) in avar.iter_mut().enumerate() {
                let r = s.action.component(d) - amean[d];
                *v += r * r;
            }
        }
        let fstd: Vec<f64> = fvar.iter().map(|v| (v / n).sqrt()).collect();
        let astd: Vec<f64> = avar
            .iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > DEGENERATE_STD {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        if let Some(i) = fstd.iter().position(|&s| !(s > DEGENERATE_STD)) {
            return Err(Error::invalid(
                "Normalizer::fit",
                format!(
                    "feature `{}` is degenerate (stddev {})",
                    dims.feature_names()[i],
                    fstd[i]
                ),
            ));
        }
        Ok(Normalizer {
            feature_mean: fmean,
            feature_std: fstd,
            action_mean: amean,
            action_std: astd,
        })
    }

    /// Identity transform (zero means, unit scales).
    pub fn identity(feature_dim: usize, action_dims: usize) -> Self {
        Normalizer {
            feature_mean: vec![0.0; feature_dim],
            feature_std: vec![1.0; feature_dim],
            action_mean: vec![0.0; action_dims],
            action_std: vec![1.0; action_dims],
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_mean.len()
    }

    pub fn action_dims(&self) -> usize {
        self.action_mean.len()
    }

    pub fn standardize_features(&self, state: &StateFeatures) -> Result<Vec<f64>> {
        let fv = state.feature_vec();
        if fv.len() != self.feature_dim() {
            return Err(Error::ShapeMismatch {
                context: "standardize_features",
                expected: self.feature_dim(),
                actual: fv.len(),
            });
        }
        Ok(fv
            .iter()
            .zip(self.feature_mean.iter().zip(&self.feature_std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect())
    }

    #[inline]
    pub fn standardize_action(&self, dim: usize, a: f64) -> f64 {
        (a - self.action_mean[dim]) / self.action_std[dim]
    }

    /// Inverse of `standardize_action`. The transform is affine with positive
    /// scale, so quantiles in standardized space map exactly to quantiles in
    /// raw space.
    #[inline]
    pub fn destandardize_action(&self, dim: usize, a_std: f64) -> f64 {
        a_std * self.action_std[dim] + self.action_mean[dim]
    }
}
