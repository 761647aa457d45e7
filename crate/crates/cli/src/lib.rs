//! Harness companion to `causalprobe-core`: BIF ingestion, file formats for
//! runs and checkpoints, experiment configuration, and multi-seed suites.
//!
//! The core crate owns every algorithm; this crate owns everything that
//! touches a file system or a terminal. Modules:
//!
//! - [`bif`]: parser for the Bayesian Interchange Format and conversion to
//!   ground-truth SCMs,
//! - [`files`]: JSON/CSV/binary persistence for SCMs, datasets, beliefs,
//!   model checkpoints, and run logs,
//! - [`config`]: the experiment configuration consumed by the CLI,
//! - [`suite`]: parallel multi-seed execution with aggregation tables.

pub mod bif;
pub mod config;
pub mod files;
pub mod suite;

/// Errors produced by the harness layer on top of [`causalprobe_core::Error`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("syntax error at line {line}, column {col}: {msg}")]
    Syntax {
        line: usize,
        col: usize,
        msg: String,
    },
    #[error("undeclared variable `{0}` referenced in a probability block")]
    Undeclared(String),
    #[error("{0}")]
    Format(String),
    #[error("network `{name}`: expected {expected} nodes, file declares {got}")]
    NodeCount {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Core(#[from] causalprobe_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
