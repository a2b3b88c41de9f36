//! Minimal reverse-mode automatic differentiation: a scalar tape, dense
//! feed-forward networks, and an Adam optimizer. Everything trainable in this
//! crate sits on top of these three pieces.

mod adam;
mod net;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use net::{DenseNet, NetCache};
pub use tape::{Tape, Var};
