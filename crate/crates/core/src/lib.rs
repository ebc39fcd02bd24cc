//! Deterministic simulator for federated multimodal meta-learning.
//!
//! * [`tensor_core`]: dense `f64` tensors, a reverse-mode tape and a
//!   finite-difference gradient checker.
//! * [`model`]: the three-branch (image, spectrogram, sign) classifier with
//!   per-branch modality muting.
//! * [`data`]: label alignment, splits, client partitioning, the MMTF tensor
//!   container and a synthetic aligned dataset generator.
//! * [`federated`]: client-side MAML adaptation, server rounds with meta-gradient
//!   aggregation, the missing-modality baseline trainer and evaluation.
//! * [`harness`]: experiment grids, metrics streams and summary tables.

pub mod data;
pub mod error;
pub mod federated;
pub mod harness;
pub mod model;
pub mod rng;
pub mod tensor_core;

pub use error::{Error, Result};
pub use tensor_core::{ParamSet, Tensor};
