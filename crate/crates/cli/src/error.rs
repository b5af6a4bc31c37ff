use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error("{}: {}", .0.display(), .1)]
    Io(PathBuf, #[source] std::io::Error),

    #[error("report: {0}")]
    Report(String),

    #[error(transparent)]
    Core(#[from] gapmodes::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;
