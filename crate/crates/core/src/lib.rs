//! Channel-decoupled EEG classification: a single-channel feature extractor
//! shared across leads, a fusion classifier over the concatenated per-channel
//! features, and the data, training and evaluation pipeline around them.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod preprocess;
pub mod rng;
pub mod signal;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use signal::{load_dataset, save_dataset, validate_dataset, Dataset, Recording, Segment, SoftLabel};
