//! Experiment harness: sweeps over update rules, samplers and one swept
//! parameter, with per-cell median/IQR aggregation and CSV/JSON output.

pub mod aggregate;
pub mod config;
pub mod emit;
pub mod library;
pub mod sweep;

use std::path::PathBuf;

pub use aggregate::{aggregate, aggregate_metric, percentile, Metric, Summary};
pub use config::{Cell, Controller, ExperimentConfig, SweepAxis};
pub use emit::{read_csv, write_csv, write_summaries, ExperimentRecord, CSV_HEADER};
pub use library::LcdLibrary;
pub use sweep::{run_cell_episode, run_sweep, worker_threads};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Core(#[from] trsmpc::Error),
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
    #[error("cell `{0}` has no records")]
    EmptyCell(String),
}

pub type Result<T> = std::result::Result<T, BenchError>;

pub(crate) fn file_error(path: &std::path::Path, err: impl std::fmt::Display) -> BenchError {
    BenchError::File {
        path: path.to_path_buf(),
        message: err.to_string(),
    }
}
