//! Learning and evaluating tail quantiles of a driver's conditional action
//! distribution from trajectory data.
//!
//! The crate provides:
//!
//! - [`autodiff`]: a scalar reverse-mode tape, dense feed-forward nets, Adam;
//! - [`quantile`]: the tilted absolute (pinball) loss and empirical quantiles;
//! - [`data`]: highD ingestion, splits, normalization, oversampling, and a
//!   synthetic car-following generator with analytic conditional quantiles;
//! - [`models`]: per-level quantile regressors and conditional autoregressive
//!   quantile flows (affine and NLSQ couplings), plus the NLL-trained flow
//!   baseline, behind one [`models::QuantileModel`] interface;
//! - [`sim`]: deterministic vehicle-following rollouts against a log-replayed
//!   leader;
//! - [`eval`]: per-level quantile-loss tables and trace export.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod models;
pub mod quantile;
pub mod sim;

pub use error::{Error, Result};
