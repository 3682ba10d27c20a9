//! Proximity-weighted oversampling for imbalanced binary classification.
//!
//! The crate is organised bottom-up:
//!
//! * [`data`] loads and normalises datasets and builds stratified folds.
//! * [`neighbors`] provides exact Euclidean k-nearest-neighbour queries.
//! * [`partition`] splits the minority class into proximity-weighted levels.
//! * [`synth`] generates shadowsamples and random convex combinations.
//! * [`samplers`] exposes ProWRAS and the baseline oversamplers.
//! * [`classifiers`] holds the kNN and logistic-regression models used in benchmarks.
//! * [`metrics`] computes F1, Cohen's kappa, the I-score and the Wilcoxon signed-rank test.
//! * [`harness`] runs repeated stratified cross validation over datasets and oversamplers.

pub mod classifiers;
pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod neighbors;
pub mod partition;
pub mod points;
pub mod rng;
pub mod samplers;
pub mod synth;

pub use data::Dataset;
pub use error::{Error, Result};
pub use points::Points;
