//! Experiment harness: scenario files, measurement loops, reports and
//! calibration.

pub mod calibrate;
pub mod config;
pub mod report;
pub mod runner;
pub mod soak;

use thiserror::Error;

pub use calibrate::{calibrate, CalibrationRecord};
pub use config::{ConfigError, FaultSite, Mode, ScenarioConfig, Strategy, SweepAxis};
pub use report::{parse_csv, summary, to_csv, write_csv, CsvRow, SizeStats, StatsReport};
pub use runner::{run_scenario, run_sweep};

use crate::system::SimError;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("soak case {index}: {source}")]
    Soak { index: u64, source: SimError },
    #[error("calibration unsatisfiable: {0}")]
    Unsatisfiable(String),
}

impl BenchError {
    /// Whether the run found the model in an inconsistent state, as opposed
    /// to being asked for something impossible.
    pub fn is_invariant(&self) -> bool {
        match self {
            BenchError::Sim(e) | BenchError::Soak { source: e, .. } => e.is_invariant(),
            _ => false,
        }
    }
}
