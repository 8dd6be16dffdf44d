//! Experiment orchestration and reporting.
//!
//! Each experiment wires the core pieces together: generate Monte Carlo
//! datasets, train the physics-informed predictor, evaluate against the
//! closed-form oracle (or a held-out high-sample Monte Carlo grid where no
//! oracle exists), and emit a schema-stable CSV report with the full
//! resolved configuration embedded. Everything is deterministic given the
//! configuration, so re-running a report's config reproduces it byte for
//! byte.

pub mod experiments;
pub mod metrics;
pub mod oracle;
pub mod report;
pub mod systems;

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Dynamics(#[from] pipe_core::dynamics::DynamicsError),
    #[error(transparent)]
    MonteCarlo(#[from] pipe_core::montecarlo::McError),
    #[error(transparent)]
    Dataset(#[from] pipe_core::montecarlo::dataset::DatasetError),
    #[error(transparent)]
    Net(#[from] pipe_core::netcore::NetError),
    #[error(transparent)]
    Checkpoint(#[from] pipe_core::netcore::checkpoint::CheckpointError),
    #[error(transparent)]
    Physics(#[from] pipe_core::physics::PhysicsError),
    #[error(transparent)]
    Train(#[from] pipe_core::training::TrainError),
    #[error(transparent)]
    Tps(#[from] pipe_core::baselines::TpsError),
    #[error("configuration error: {0}")]
    Config(String),
}

/// Where and how an experiment runs.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub out_dir: PathBuf,
    /// Also emit per-figure long-format CSVs for external plotting.
    pub plot_data: bool,
}

impl RunContext {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self { out_dir: out_dir.into(), plot_data: false }
    }
}

/// True when `PIPE_DETERMINISTIC=1`: callers should restrict rayon to one
/// thread. Results are bit-identical either way; the switch exists so runs
/// can be audited without any scheduler in the picture.
pub fn deterministic_mode() -> bool {
    std::env::var("PIPE_DETERMINISTIC").map(|v| v == "1").unwrap_or(false)
}
