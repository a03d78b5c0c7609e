//! Self-supervised edge detection built from first principles.
//!
//! The crate covers the whole pipeline: a synthetic shapes generator with exact
//! edge ground truth, classical edge tooling (Canny, L0 smoothing), random
//! homographies and homography adaptation for pseudo-labelling, a small
//! reverse-mode tensor engine, a dual-decoder edge network with cell-wise
//! losses, BFS fusion of the two decoder outputs and a boundary-matching
//! evaluator (ODS / OIS / AP).
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`). The pipeline
//! itself runs on `f32`; the aliases below name the concrete types used there.

pub mod classical;
pub mod error;
pub mod evaluation;
pub mod homography;
pub mod imaging;
pub mod model;
pub mod postprocess;
pub mod pseudo_label;
pub mod rng;
pub mod scalar;
pub mod synthetic;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Grayscale image in `[0, 1]` used throughout the pipeline.
pub type Image = imaging::Raster<f32>;
/// Per-pixel edge probability map in `[0, 1]`.
pub type EdgeMap = imaging::Raster<f32>;
/// Double-precision raster, used by tests and numerically sensitive callers.
pub type Image64 = imaging::Raster<f64>;

pub type Tensor = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Tape = tensor::Tape<f32>;
pub type AdamState = tensor::AdamState<f32>;

pub type SuperEdge = model::SuperEdge<f32>;
pub type ModelParams = model::ModelParams<f32>;
