//! Experiment harness around the smoothing library: strict TOML configs,
//! parallel Monte-Carlo trials, and deterministic CSV/manifest outputs.

pub mod config;
pub mod report;
pub mod runner;

/// Top-level failure classes, mapped onto process exit codes by the binary
/// (config errors exit 2, I/O errors exit 3).
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
}
