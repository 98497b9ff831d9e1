//! Core library for anomaly-aware jet classification on toy calorimeter
//! images.
//!
//! The crate covers the full study pipeline:
//!
//! - [`eventgen`] — seedable parametric generator for multi-prong jet
//!   images, plus the dataset container and export formats;
//! - [`network`] — a small convolutional classifier with hand-derived
//!   gradients and finite-difference checking;
//! - [`training`] — supervised runs over normal classes and
//!   anomaly-aware runs that add a uniformity penalty on known anomalies;
//! - [`analysis`] — classifier-output concentration scans, ROC/AUC,
//!   the window ratio statistic and significance projections.
//!
//! Everything is deterministic given explicit seeds: RNG substreams are
//! derived per image and per training phase, map-like state is ordered,
//! and artifacts serialize without timestamps.

pub mod analysis;
pub mod error;
pub mod eventgen;
pub mod network;
pub mod training;
pub mod util;

pub use error::{Error, Result};
