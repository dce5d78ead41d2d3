//! Label-noise laboratory.
//!
//! This crate crafts label noise against classifiers (symmetric, asymmetric,
//! instance-dependent, and an adversarial flag-array attack) and trains models
//! under that noise with either standard SGD or a robust co-training procedure
//! that perturbs labels, models per-sample losses with Gaussian mixtures, and
//! cross-trains a pair of networks with MixMatch-style semi-supervised updates.
//!
//! Module map:
//! - [`nn`]: dense MLP with manual gradients, soft-label cross-entropy,
//!   entropy penalty, SGD with momentum, binary checkpoints.
//! - [`data`]: synthetic blob generation, IDX loading, label-file I/O.
//! - [`noise`]: the four noise generators plus transition-matrix audits.
//! - [`gmm`]: 1-D two-component mixtures, classical EM and variational Bayes
//!   with a convergence-speed signal.
//! - [`rdm`]: the robust co-training pipeline end to end.
//! - [`metrics`]: loss histograms, separability AUC, division quality,
//!   accuracy tracking, CSV emission.
//! - [`config`]: line-based `key = value` run configuration.

pub mod config;
pub mod data;
pub mod error;
pub mod gmm;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod noise;
pub mod rdm;

pub use error::{Error, Result};
pub use linalg::Mat;
