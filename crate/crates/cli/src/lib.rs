//! Configuration, file formats and workflows for `driftqec-core`.
//!
//! The binary in `main.rs` is a thin argument parser over [`commands`].

use std::path::Path;

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod output;
pub mod runner;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
    #[error("sweep finished with {failed} of {total} cells failed")]
    PartialSweep { failed: usize, total: usize },
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Runtime(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::PartialSweep { .. } => 4,
        }
    }
}

impl From<driftqec_core::Error> for CliError {
    fn from(e: driftqec_core::Error) -> Self {
        match e {
            driftqec_core::Error::InvalidConfig(_) | driftqec_core::Error::InvalidParameter { .. } => {
                CliError::Config(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}
