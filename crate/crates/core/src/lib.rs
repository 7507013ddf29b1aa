//! Nested multiple instance learning with gated attention.
//!
//! * [`gradcore`]: reverse-mode autodiff over dense `f64` tensors.
//! * [`bagdata`]: nested bags, label oracles, IDX loading and generation.
//! * [`model`]: feature extractor, MI blocks and classifier.
//! * [`train`]: SGD training, metrics and attention analysis.
//! * [`cli`]: the `nmil` command line.

pub mod bagdata;
pub mod cli;
pub mod error;
pub mod gradcore;
pub mod model;
pub mod train;

pub use error::{Error, Result};
