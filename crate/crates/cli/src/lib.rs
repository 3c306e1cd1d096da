//! Experiment harness: JSON configs in, `report.json`, CSV files and a
//! `manifest.json` out.

pub mod config;
pub mod runner;

pub use config::{DataSource, DatasetSpec, Experiment, NetSpec, RunConfig};
pub use runner::{run, RunOutcome};

/// Environment variable that overrides the output directory.
pub const OUT_DIR_ENV: &str = "WORMHOLE_LAB_OUT";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Runtime(#[from] wormhole_core::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Runtime(_) => 3,
        }
    }
}
