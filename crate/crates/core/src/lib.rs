//! Calibration toolkit built around the focal calibration loss.
//!
//! The crate is organised by concern:
//!
//! - [`data`]: prediction-log ingestion and synthetic datasets.
//! - [`losses`]: per-sample surrogate losses and their logit gradients.
//! - [`metrics`]: binned calibration errors, smooth calibration error, AUROC.
//! - [`calibrate`]: temperature scaling and the post-processing gap.
//! - [`theory`]: pointwise risk minimizers and the bound checks.
//! - [`train`]: a deterministic small MLP trainer for toy experiments.
//! - [`cli`]: the `fcl` command-line front-end.

// Negated comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibrate;
pub mod cli;
pub mod data;
mod error;
pub mod io;
pub mod losses;
pub mod metrics;
mod prob;
pub mod theory;
pub mod train;

pub use error::{CalibError, Result};
pub use prob::{softmax, softmax_scaled, ProbVector};
