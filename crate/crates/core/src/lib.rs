//! Task-based fMRI analysis toolkit.
//!
//! The pipeline runs slice-timing and motion correction, Gaussian smoothing,
//! a voxel-wise GLM with a canonical-HRF task regressor and cosine drift terms,
//! Benjamini–Hochberg FDR thresholding and cluster reporting. The
//! [`duration`] module compares single runs against concatenated and
//! time-averaged run pairs, and [`phantom`] produces synthetic BOLD data with
//! known ground truth for validating all of it.

// `!(x > 0.0)` is used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod design;
pub mod duration;
pub mod error;
pub mod glm;
pub mod inference;
pub mod phantom;
pub mod pipeline;
pub mod preprocess;
pub mod special;
pub mod volume_io;

pub use error::{Error, Result};
