//! Core engine for multimodal longitudinal risk modeling.
//!
//! Everything in this crate is deterministic, seeded, and allocation-only:
//! no file IO, no threads, no OS clock. The companion `vlrisk-cli` crate
//! carries file formats and the command-line surface.
//!
//! Module map:
//! - [`tensor`]: dense f64 arrays with reverse-mode gradients on a recorded
//!   operation graph, plus the elementwise nonlinearities and dropout.
//! - [`rng`]: splittable counter-based RNG so every pipeline stage draws
//!   from an independent, reproducible stream.
//! - [`cohort`]: synthetic longitudinal multimodal patient generator with a
//!   closed-form posterior oracle.
//! - [`encoders`], [`alignment`], [`temporal`], [`graph`], [`risk`]: the
//!   model stages from per-visit features to calibrated predictions.
//! - [`training`]: joint loss assembly, SGD, temperature fitting, composite
//!   reward, and policy-gradient fine-tuning.
//! - [`metrics`]: AUROC / ECE / actionability evaluation primitives.
//! - [`gradcheck`]: central finite-difference verification harness.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod alignment;
pub mod cohort;
pub mod config;
pub mod encoders;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod risk;
pub mod temporal;
pub mod tensor;
pub mod training;

pub use error::{CoreError, Result};
pub use rng::Rng;
pub use tensor::Tensor;
