//! Learnable model families behind one prediction interface.

mod coupling;
mod flow;
mod qr;
mod train;

pub use coupling::{
    forward_on_tape, inverse_on_tape, log_derivative_on_tape, AffineParams, CouplingKind,
    NlsqParams, Transformer, NLSQ_BUMP_BOUND,
};
pub use flow::{
    flow_train, flow_train_with_arch, BaseKind, ConditionalFlow, FlowCheckpoint, FlowKind,
    CONDITIONER_HIDDEN, DEFAULT_STACK_DEPTH, FLOW_CHECKPOINT_VERSION,
};
pub use qr::{QrCheckpoint, QrSet, QuantileRegressor, QR_CHECKPOINT_VERSION, QR_HIDDEN};
pub use train::{EpochStats, TrainConfig, TrainReport};

use crate::data::StateFeatures;
use crate::error::Result;
use crate::quantile::QuantileLevel;

/// Common prediction interface: given a state and a level, return the
/// conditional quantile of one action dimension. `prefix` carries the
/// already-known values of earlier action dimensions (empty for dimension 1
/// and for all 1D models).
pub trait QuantileModel: Send + Sync {
    /// Expected state feature dimension.
    fn feature_dim(&self) -> usize;

    /// Number of action dimensions the model covers.
    fn action_dims(&self) -> usize;

    /// The alpha-quantile of action dimension `prefix.len()`, in raw units.
    fn quantile(&self, state: &StateFeatures, level: QuantileLevel, prefix: &[f64])
        -> Result<f64>;
}

/// The synthetic generator's analytic quantile function as a model; the
/// ground-truth policy for rollout and evaluation oracles.
pub struct SyntheticOracle(pub crate::data::SyntheticSpec);

impl QuantileModel for SyntheticOracle {
    fn feature_dim(&self) -> usize {
        5
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
        self.0.true_quantile(state, level)
    }
}
