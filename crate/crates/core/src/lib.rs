//! Calibration and analysis of probabilistic binary-choice models.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod choice_data;
pub mod cpt;
pub mod error;
pub mod estimate;
pub mod optimize;
pub mod par;
pub mod predictability;
pub mod qdt;
pub mod report;
pub mod rng;
pub mod shift;
pub mod simulate;
pub mod stats;

pub use error::{Error, Result};
