//! Universal appearance transformations (hue, saturation, lightness, contrast)
//! sampled online, plus a small person re-identification pipeline built around
//! them: striped colour descriptors, a part+global softmax classifier, Euclidean
//! ranking with CMC / mAP scoring, and an invariance analysis of trained models.
//!
//! The binary `forge` in this crate drives the pipeline from the command line;
//! see [`cli`] for the subcommand implementations.

pub mod classifier;
pub mod cli;
pub mod colorspace;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod fixture;
pub mod raster;
pub mod rng;
pub mod transform;
pub mod universality;

pub use error::{Error, Result};
pub use raster::{Image, RgbPixel};
