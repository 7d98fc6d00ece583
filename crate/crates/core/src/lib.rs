//! Forecasting laboratory for univariate flow series.
//!
//! The pipeline under study: per-window instance normalization feeds a set of
//! parallel "scales", each of which selects time steps through a learnable
//! thresholded window mask, embeds the masked sequence (convolutional token
//! embedding + trigonometric positions + calendar lookups), and attends in a
//! frequency-feature space. Scale outputs are concatenated and fused by a
//! stack of multi-head attention blocks, flattened, and projected to the
//! forecast horizon, which is then de-normalized.
//!
//! Crate layout:
//! - [`numerics`] — dense matrices, half-spectrum DFT, reverse-mode autodiff;
//! - [`dataflow`] — synthetic series, CSV ingestion, normalization, windows;
//! - [`deformable`] — learnable window masks and patch diagnostics;
//! - [`embedding`] — token/positional/calendar embedding;
//! - [`spectral`] — frequency-feature attention;
//! - [`model`] — parameter registry, variants, and the full forward pass;
//! - [`training`] — mini-batch training with an adaptive-moment optimizer;
//! - [`evalbench`] — metrics, baselines, ablation and analysis utilities;
//! - [`config`] / [`cli`] — run configuration and the command-line driver.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataflow;
pub mod deformable;
pub mod embedding;
pub mod error;
pub mod evalbench;
pub mod fusion;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod spectral;
pub mod training;

pub use error::{FcError, Result};
