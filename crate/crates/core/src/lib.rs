//! Multi-task loss weighting on a shared-trunk, multi-head MLP.
//!
//! The crate is organized bottom-up:
//!
//! - [`ndnum`]: dense `f64` tensors with a reverse-mode tape.
//! - [`weighting`]: equal, adaptive-ratio, DWA, and uncertainty weighting.
//! - [`model`]: the shared-trunk classifier.
//! - [`taskdata`]: balanced task construction and data ingestion.
//! - [`trainer`]: the SGD / one-cycle training loop.
//! - `harness` (feature `harness`): experiment matrix, reports, benchmark.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
#[cfg(feature = "harness")]
pub mod harness;
pub mod model;
pub mod ndnum;
pub mod taskdata;
pub mod trainer;
pub mod weighting;

pub use error::{Error, Result};
