//! Channel-free human activity recognition.
//!
//! A sample here is an unordered, variable-size set of sensor channels; a
//! single shared encoder processes each channel independently, per-channel
//! descriptors (body location, side, sensor type, axis) are injected through
//! conditionally modulated batch normalization, and per-channel features are
//! fused by masked mean pooling so the prediction is invariant to channel
//! order and count. The crate also carries the channel-fixed and
//! slot-attention baselines, a preprocessing and synthetic-data pipeline,
//! channel-perturbation protocols, and the experiment harness (training,
//! LOSO evaluation, intensity sweeps, transfer, efficiency benchmarks).

pub mod error;
pub mod rng;
pub mod tensor;
pub mod tape;
#[cfg(test)]
mod tape_tests;
pub mod nn;
pub mod optim;
pub mod gradcheck;

pub use error::{Error, Result};
pub use tensor::Tensor;
