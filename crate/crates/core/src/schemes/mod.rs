//! Reference schemes: tree-of-thoughts Game of 24, graph-of-thoughts sorting
//! and a dynamic question decomposition.

pub mod dataset;
pub mod decomp;
pub mod go24;
pub mod harness;
pub mod registry;
pub mod sorting;

pub use dataset::Instance;
pub use harness::{run_dataset, run_dataset_with, DatasetRun, InstanceResult};
pub use registry::{apply_assignment, SchemeId};

use thiserror::Error;

use crate::ops::OpRegistry;

#[derive(Debug, Error, PartialEq)]
pub enum SchemeError {
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("decomposition fixture missing for `{0}`")]
    FixtureMissing(String),
    #[error("unknown scheme `{0}`")]
    UnknownScheme(String),
}

/// Registers scheme-specific operation kinds.
pub fn register_kinds(r: &mut OpRegistry) {
    go24::register(r);
}
