//! Command-line plumbing for the `icl-lab` binary: configuration files,
//! verification suites, experiment runners and CSV emission.

use std::path::PathBuf;

pub mod config;
pub mod figures;
pub mod run;
pub mod verify;

pub use config::{parse_config, parse_config_str, Experiment, ExperimentSpec};
pub use figures::{emit_figure_data, FigureName};
pub use verify::{run_verify, Category, CheckResult};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Core(#[from] icl_core::Error),
}

/// Fixed-width scientific formatting with 17 significant digits.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}
