//! Fingerprint growth modelling: minutiae geometry, shape analysis, growth-chart
//! rescaling, a size mixed model, a minutiae matcher and the evaluation
//! experiments built on them.

// Negated float comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod growth;
pub mod matcher;
pub mod mixed;
pub mod plot;
pub mod report;
pub mod shape;
pub mod stats;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
