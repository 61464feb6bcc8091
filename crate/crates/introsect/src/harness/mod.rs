//! Experiment orchestration: configuration, seeding, world assembly, batch
//! sweeps, report emission, and the command-line surface.

use std::path::PathBuf;

use thiserror::Error;

pub mod cli;
pub mod config;
pub mod run;
pub mod stats;
pub mod sweep;
pub mod synth;

pub use config::{AttackParams, ExperimentConfig, NetworkConfig, PlantedConfig, ScenarioConfig};
pub use run::{build_world, run_experiment, validate_trace, RunReport};
pub use sweep::{run_sweep, SweepAxis, SweepReport};
pub use synth::synthesize_snapshot;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Directory(#[from] crate::directory::DirectoryError),
    #[error(transparent)]
    Attack(#[from] crate::attack::AttackError),
    #[error(transparent)]
    Concentration(#[from] crate::concentration::ConcentrationError),
    #[error("config parse error: {0}")]
    ConfigParse(String),
    #[error("trace validation failed: {0}")]
    TraceInvalid(String),
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }
}
