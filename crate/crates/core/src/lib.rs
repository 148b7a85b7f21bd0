//! Self-supervised, scale-aware embeddings of terrain elevation patches.

// `!(x > 0.0)` rejects NaN as well; the rewrite clippy suggests would not.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod benchmark;
pub mod checkpoint;
pub mod error;
pub mod evaluation;
pub mod geo;
pub mod index;
pub mod labels;
pub mod models;
pub mod nn;
pub mod overpass;
pub mod patch;
pub mod raster;
pub mod rng;
pub mod svm;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
