//! Prior augmented data (PAD) for calibrated probabilistic predictors.
//!
//! A set-conditioned generator proposes pseudo-inputs in regions where the
//! predictor is confidently wrong about its own knowledge, and the predictor is
//! regularized toward the label prior on those inputs, gated by distance to the
//! real data.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, CLI and
//! experiment orchestration live in the `pad-cli` companion crate.
//!
//! Module map:
//!
//! - [`autodiff`]: reverse-mode differentiation over dense 2-D arrays, SGD/Adam.
//! - [`nets`]: MLP predictors, MC-dropout and ensemble predictive inference.
//! - [`generator`]: the set encoder / KNN aggregation / Gaussian decoder.
//! - [`objectives`]: generator and discriminator losses, λ weight, prior KLs.
//! - [`datashift`]: datasets, scaling, spectral clustering, shifted splits, toy data.
//! - [`metrics`]: NLL, regression calibration error, ECE, accuracy.
//! - [`train`]: baseline and PAD training loops.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod datashift;
mod error;
pub mod generator;
pub mod metrics;
pub mod nets;
pub mod objectives;
pub mod rng;
mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};
