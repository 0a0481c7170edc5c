//! Weakly supervised video anomaly detection over pre-extracted snippet
//! features: a multiple-instance ranking model with an explicit
//! video-classification head, trained and scored entirely on the CPU.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`]: a small f32 reverse-mode autodiff engine (2-D dense tensors).
//! - [`model`]: the snippet scorer, transformer and LSTM aggregators, and
//!   checkpoint serialization.
//! - [`losses`]: ranking, classification, and magnitude-based objectives.
//! - [`data`]: feature/manifest file formats, segmentation, batch pairing,
//!   and a synthetic dataset generator.
//! - [`training`]: the optimization loop with deterministic resume.
//! - [`evaluation`]: frame-level AUC/AP scoring in every supported mode.
//! - [`config`]: the key=value run configuration shared by the CLI.

pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;
