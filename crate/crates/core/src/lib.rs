//! Desk-scale laboratory for learned cardinality estimation over
//! select-project-join queries.
//!
//! The pipeline: build or load a [`relstore::Database`], generate query
//! workloads at fixed join complexities ([`workload`]), label them with the
//! exact executor ([`exec`]), encode them ([`featurize`]), and fit estimators
//! ([`histo`], [`neural`], [`forest`], [`memo`]). [`evalx`] and [`planner`]
//! measure accuracy and plan quality; [`lab`] runs grid search, budgeted model
//! selection, and batch-mode active learning.

pub mod error;
pub mod estimator;
pub mod evalx;
pub mod exec;
pub mod featurize;
pub mod forest;
pub mod histo;
pub mod lab;
pub mod memo;
pub mod neural;
pub mod planner;
pub mod relstore;
pub mod seed;
pub mod workload;

pub use error::{Error, Result};
