//! Experiment catalog, parameter handling and output writing for the
//! `rollsurf` command.

use std::path::PathBuf;

use thiserror::Error;

pub mod catalog;
pub mod params;
pub mod runner;
pub mod spec;

pub use catalog::{Experiment, Family, CATALOG};
pub use params::{ParamError, RunParams, Transport};
pub use runner::{config_digest, run, ResultRow, RunOutput, Table};
pub use spec::{AlgorithmChoice, ExperimentSpec};

#[derive(Debug, Error)]
pub enum ExpError {
    #[error("unknown experiment {0:?} (see `rollsurf list`)")]
    UnknownExperiment(String),
    #[error("spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("{path}: {reason}", path = .0.display(), reason = .1)]
    Io(PathBuf, String),
    #[error("scene: {0}")]
    Scene(String),
    #[error("study: {0}")]
    Study(String),
}
