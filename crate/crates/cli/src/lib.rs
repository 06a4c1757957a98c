//! Configuration-driven verification suites and sweeps for `fpme-core`.
//!
//! A TOML [`ExperimentConfig`] selects an experiment kind and its checks;
//! [`run`] produces [`ResultRow`]s that are written as CSV.

pub mod config;
pub mod fit;
pub mod report;
pub mod suites;

pub use config::{ExperimentConfig, ExperimentKind};
pub use fit::fit_rate;
pub use report::{to_csv, Relation, ResultRow, Summary, CSV_HEADER};
pub use suites::{run, run_with_threads, thread_count};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {message}")]
    Config { path: String, message: String },

    #[error("{path}: {message}")]
    Io { path: String, message: String },

    #[error("experiment {experiment}: {source}")]
    Solver {
        experiment: String,
        #[source]
        source: fpme_core::Error,
    },
}

impl HarnessError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config { .. } | HarnessError::Io { .. } => 2,
            HarnessError::Solver { .. } => 3,
        }
    }
}
