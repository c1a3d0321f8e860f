//! Saliency-guided segmentation toolkit for small image classifiers.
//!
//! The crate trains a compact CNN on synthetic four-class images, explains
//! its predictions with gradient-weighted class activation heatmaps, fuses
//! early-layer activation channels into a high-resolution saliency map by
//! greedy rank-correlation maximization, and turns that map into a binary
//! segmentation via Gaussian-mixture intersection thresholds. Benchmark
//! masks built from palette-coded reference images and pixel-level metric
//! reports close the loop.
//!
//! Start with the `examples/` directory; each example exercises one stage
//! of the pipeline end to end.

pub mod autodiff;
pub mod bam;
pub mod classifier;
pub mod cnn;
pub mod error;
pub mod evaluation;
pub mod gradcam;
pub mod ldi;
pub mod mask;
pub mod pipeline;
pub mod raster;
pub mod segment;
pub mod synth;
pub mod tensor;
pub mod viz;

pub use error::{Error, Result};
pub use tensor::{DType, Tensor};
