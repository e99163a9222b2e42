//! Convolutional network training where kernels can be pinned to a shared
//! Gabor bank, with a MAC and memory-access cost model of the training run.
//!
//! * [`tensor`]: tensors, layers, back-propagation and gradient checking.
//! * [`gabor`]: Gabor kernel synthesis and orientation banks.
//! * [`policy`]: per-kernel trainability, presets and masked updates.
//! * [`cost`]: ledgers, energy, storage and memory-access reports.
//! * [`data`]: MNIST IDX loading, a synthetic stand-in and batching.
//! * [`experiment`]: architecture grammar, runs and comparison tables.

pub mod cost;
pub mod data;
mod error;
pub mod experiment;
pub mod gabor;
pub mod policy;
pub mod tensor;

pub use error::{Error, Result};
