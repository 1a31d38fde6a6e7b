//! Post-inference processing and evaluation of residual tumor segmentations
//! from early post-operative MRI.
//!
//! The crate covers the path from a voxel-wise probability map to a
//! gross-total-resection verdict, and the metric battery used to score it
//! against manual annotations across a multi-centre cohort.

pub mod baseline;
pub mod cohort;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod nifti;
pub mod post;

pub use error::{Error, Result};
