//! Classify 1-D signal windows from their STFT spectrograms and explain the
//! classifier with aggregated LIME explanations.
//!
//! Pipeline: [`synthgen`] produces labelled device signals, [`spectro`]
//! turns windows into 224x224 spectrograms, [`model`] trains the reference
//! CNN, [`quickseg`] and [`limexp`] explain individual predictions, and
//! [`aggregate`] folds explanations into frequency profiles and ensembles.

// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregate;
pub mod dataset;
pub mod error;
pub mod formats;
pub mod grid;
pub mod limexp;
pub mod model;
pub mod par;
pub mod pipeline;
pub mod plot;
pub mod quickseg;
pub mod spectro;
pub mod synthgen;

pub use dataset::Dataset;
pub use error::{Error, Result};
pub use grid::Grid;
