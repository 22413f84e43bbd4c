//! Evolutionary search over spatial-temporal graph convolution modules for
//! skeleton-based action recognition.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`], [`autodiff`] and [`optim`]: a small dense tensor engine with
//!   reverse-mode differentiation and SGD with Nesterov momentum.
//! - [`graph`]: skeleton topologies, the normalized propagation matrix, its
//!   Chebyshev components, dynamic correlation graphs and the eight function
//!   modules built from them.
//! - [`net`]: the ten-block searchable network and architecture parameters.
//! - [`ceim`]: the cross-entropy method with importance mixing.
//! - [`search`]: the alternating loop that trains shared weights and
//!   updates the architecture distribution.
//! - [`data`]: skeleton clips, the `SKEL1` file format and a synthetic
//!   motion generator.
//! - [`params`]: named parameter storage with seed-derived initial values.
//! - [`train`], [`metrics`], [`checkpoint`]: training loops, accuracy
//!   metrics and model persistence.

pub mod autodiff;
pub mod ceim;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod net;
pub mod optim;
pub mod params;
pub mod search;
pub mod tensor;
pub mod train;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use optim::{sgd_nesterov_step, OptimizerState};
pub use tensor::Tensor;
