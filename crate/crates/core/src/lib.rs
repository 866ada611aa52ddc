//! Measuring what data augmentation is worth in extra training data.
//!
//! The crate fits learning curves to accuracy-vs-dataset-size measurements,
//! converts the gap between augmented and unaugmented curves into effective
//! extra samples and exchange ratios, and ships a small trainer plus the
//! gradient-noise and flatness probes used to study the optimization side
//! of augmentation.

// `!(x > 0.0)` is deliberate: it rejects NaN too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod error;
pub mod exchange;
pub mod landscape;
pub mod rng;
pub mod scaling;
pub mod store;
pub mod trainer;

pub use error::{Error, Result};
