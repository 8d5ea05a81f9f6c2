//! Open-set classification toolkit.
//!
//! Loads labeled feature vectors (or extracts residual co-occurrence features
//! from image patches), plans Closed/Open/NetOpen validation splits, trains
//! classifiers that can reject inputs as unknown, tunes them by grid search,
//! fuses patch and model votes, and scores everything with open-set metrics.

pub mod classifiers;
pub mod data;
pub mod error;
pub mod features;
pub mod fusion;
pub mod metrics;
pub mod numerics;
pub mod protocols;
pub mod report;
pub mod search;
pub mod synth;

pub use data::{ClassRegistry, Dataset, Label, Sample};
pub use error::{Error, Result};
pub use metrics::{ConfusionMatrix, MetricsReport};
