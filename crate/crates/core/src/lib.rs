//! Train a biased tabular classifier, derive fair counterparts with five
//! bias-mitigation strategies and audit, prediction by prediction, who the
//! debiasing changed.
//!
//! The crate is organised bottom-up:
//!
//! - [`data`] loads delimited files through a manifest and produces
//!   standardized, stratified train/test splits.
//! - [`mlp`] is a small from-scratch fully connected network used for the
//!   biased model and inside adversarial debiasing.
//! - [`metrics`] holds the group fairness and performance metrics.
//! - [`lfr`], [`adversarial`] and [`postprocess`] are the mitigation
//!   strategies (pre-, in- and post-processing).
//! - [`audit`] compares biased and fair predictions: impact, overlap,
//!   stability, direction and group rates.
//! - [`plsda`] characterizes two populations of changed instances.
//! - [`experiment`] runs the multi-seed study and renders reports.

pub mod adversarial;
pub mod audit;
pub mod data;
pub mod error;
pub mod experiment;
pub mod lfr;
pub mod metrics;
pub mod mlp;
pub mod model;
pub mod plsda;
pub mod postprocess;
pub mod predictions;
pub mod rng;

pub use error::{Error, Result};
pub use predictions::PredictionSet;
