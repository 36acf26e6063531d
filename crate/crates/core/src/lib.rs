//! Beamforming lab for multi-user MIMO weighted sum-rate maximization.
//!
//! The crate is organized around a single pipeline: sample channels
//! ([`channel`]), solve for transmit beamformers with the reduced-WMMSE
//! iteration or the zero-forcing baseline ([`solvers`]), compress solver
//! state into fixed-size real tensors ([`codec`]), learn the channel-to-
//! beamformer map with a small convolutional network ([`nn`]), train it
//! supervised-then-unsupervised ([`trainer`]), and score everything
//! against the reference solver ([`eval`]).

pub mod channel;
pub mod codec;
pub mod error;
pub mod eval;
pub mod nn;
pub mod numerics;
pub mod solvers;
pub mod trainer;

pub use error::{Error, Result};
pub use numerics::CMat;
