//! Intensity modeling for spatial count data on pixel grids.
//!
//! Counts on a regular grid are modeled as a log-Gaussian Cox process: each
//! pixel's count is Poisson with log-intensity built from fixed covariate
//! effects plus latent Gaussian fields (an intrinsic autoregression over
//! irregular mapping units, a random walk over binned covariate classes, and
//! exchangeable per-level effects). Inference integrates the latent field
//! with a nested Gaussian approximation and explores the hyperparameter
//! space on a grid. Because intensities are additive, pixel-level fits
//! aggregate exactly to any coarser partition, where they convert to
//! per-unit exceedance probabilities for ranking and validation.

pub mod cli;
pub mod config;
pub mod error;
pub mod gmrf;
pub mod inference;
pub mod ingest;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod predict;
pub mod simulate;

pub use error::{Error, Result};
