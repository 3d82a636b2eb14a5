//! Resource-efficient mountainous skyline extraction.
//!
//! The pipeline detects candidate edge pixels with Canny, scores each one with
//! a linear filter selected by quantized structure-tensor features, fuses the
//! score with gradient strength into a nodal cost grid, and extracts the
//! skyline as the shortest path through the resulting multistage graph.
//!
//! Modules follow the pipeline stages:
//! - [`imagecore`]: image containers, gradients, patches
//! - [`edges`]: Canny edge detection
//! - [`tensor`]: joint-color structure tensor and feature quantization
//! - [`blade`]: filter-bank learning and spatially varying inference
//! - [`dp`]: cost grids, gap filling, dynamic-programming shortest path
//! - [`eval`]: metrics, dataset I/O, synthetic data generation
//! - [`pipeline`]: end-to-end train/detect/baseline orchestration

// index loops over parallel pixel arrays read better than zipped iterators
#![allow(clippy::needless_range_loop)]

pub mod blade;
pub mod config;
pub mod dp;
pub mod edges;
pub mod eval;
pub mod imagecore;
pub mod pipeline;
pub mod tensor;

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("image too small: {width}x{height}, need at least {min}x{min}")]
    ImageTooSmall { width: usize, height: usize, min: usize },
    #[error("patch side must be odd and >= 3, got {0}")]
    BadPatchSize(usize),
    #[error("non-finite value in input field")]
    NonFiniteInput,
    #[error("bad thresholds: low {low} must be < high {high}")]
    BadThresholds { low: f64, high: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("accumulator configs differ ({0})")]
    ConfigMismatch(String),
    #[error("linear solve failed for bucket {bucket} (accumulator may be corrupt)")]
    SolveFailure { bucket: usize },
    #[error("weight {0} outside [0,1]")]
    WeightOutOfRange(f64),
    #[error("no feasible path: column {0} is fully blocked")]
    Infeasible(usize),
    #[error("length mismatch: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("missing directory: {0}")]
    MissingDirectory(PathBuf),
    #[error("malformed ground truth {path}: {reason}")]
    MalformedGroundTruth { path: PathBuf, reason: String },
    #[error("dataset contains no usable image/ground-truth pairs")]
    NoTrainingPairs,
    #[error("no matched prediction/ground-truth stems")]
    NoMatchedPairs,
    #[error("unsupported filter bank version {0}")]
    BankVersionMismatch(u16),
    #[error("bad filter bank file: {0}")]
    BankFormat(String),
    #[error("unknown baseline method {0:?} (expected \"edges\" or \"gradient\")")]
    UnknownMethod(String),
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;
