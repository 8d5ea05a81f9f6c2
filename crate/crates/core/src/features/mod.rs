//! Patch extraction and residual co-occurrence descriptors.
//!
//! The pipeline per patch is: high-pass filter a plane, quantize and truncate
//! the residual to `[-T, T]`, then histogram runs of `d` adjacent residual
//! values along each direction.

mod cooccurrence;
mod image;
mod patches;

pub use cooccurrence::{
    cooccurrence_histogram, extract_features, quantize_truncate, residual, CooccurrenceConfig,
    Direction, FilterKernel, IntPlane,
};
pub use image::{read_osim, write_osim, Plane, RgbImage};
pub use patches::{extract_patches, quality_score, Patch, PatchSpec};
