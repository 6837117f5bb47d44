//! Scenario configuration, file formats and the simulate / process /
//! analyze commands of the `ccotdr` tool.

pub mod analyze;
pub mod capture;
pub mod config;
pub mod files;
pub mod process;
pub mod scenario;
pub mod svg;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("corrupt input: {0}")]
    Corrupt(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Corrupt(_) => 4,
        }
    }

    pub(crate) fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }
}

impl From<ccotdr::Error> for CliError {
    fn from(e: ccotdr::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
