//! Anomaly heterogeneity learning over pre-extracted feature vectors.
//!
//! The pipeline clusters the labeled normals, simulates a family of
//! heterogeneous anomaly distributions from them ([`hadg`]), trains one base
//! scorer per distribution and folds their query-set losses into a single
//! unified scorer, weighting each base by a self-supervised estimate of how
//! well it generalizes ([`train`]). [`eval`] hosts the open-set protocols,
//! the AUC metric and the registry of training variants used for ablations.

pub mod data;
pub mod diffnet;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod hadg;
pub mod losses;
pub mod rng;
pub mod synthgen;
pub mod train;

pub use data::{FeatureDataset, FeatureVector, Label, Sample, SplitSpec};
pub use error::{Error, Result};
