//! Experiment harness for knowledge-grounded RL.
//!
//! This crate owns everything that touches the filesystem: the `KGRLPB1`
//! parameter blob and knowledge-pack files, JSON experiment configs, run
//! records, CSV curves and traces, SVG plots, and the `kgrl` command line.
//! The learning code itself lives in [`kgrl_core`].

use std::path::Path;

pub mod agent;
pub mod blob;
pub mod config;
pub mod experiment;
pub mod pack;
pub mod plot;
pub mod record;

pub use kgrl_core;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: invalid value at `{path}`: {message}")]
    Schema {
        file: String,
        path: String,
        message: String,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("corrupt parameter blob: {0}")]
    Blob(String),
    #[error("{0}")]
    Core(#[from] kgrl_core::Error),
    #[error("{0}")]
    Usage(String),
    #[error("pack files changed during evaluation: {0}")]
    PackModified(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

pub(crate) fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}
