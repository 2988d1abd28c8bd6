//! Experiment runner: synthesizes measurements, runs every configured
//! method on every image and writes reconstructions, per-iteration traces
//! and `report.csv` / `report.txt`.

mod config;
mod models;
mod report;
mod run;

pub use self::config::{
    file_label, BuiltinModel, EmulatedConvention, ExperimentConfig, KernelSpec, MethodRun, ModelSpec, PriorSpec,
    SyntheticSpec, TaskSpec,
};
pub use self::models::{build_score, sample_images, SmoothGmm};
pub use self::report::{ImageInfo, MethodSummary, MetricsReport, Provenance, ReportRow};
pub use self::run::{config_hash, run_experiment};

use std::path::Path;

use crate::imaging::ImagingError;
use crate::priors::PriorError;
use crate::schedule::ScheduleError;
use crate::toy::ToyError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("report error: {0}")]
    Report(String),
}

impl HarnessError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

impl From<PriorError> for HarnessError {
    fn from(e: PriorError) -> Self {
        match e {
            PriorError::Transport(m) => HarnessError::Transport(m),
            other => HarnessError::Config(other.to_string()),
        }
    }
}

impl From<ScheduleError> for HarnessError {
    fn from(e: ScheduleError) -> Self {
        HarnessError::Config(e.to_string())
    }
}

impl From<ImagingError> for HarnessError {
    fn from(e: ImagingError) -> Self {
        HarnessError::Config(e.to_string())
    }
}

impl From<ToyError> for HarnessError {
    fn from(e: ToyError) -> Self {
        HarnessError::Config(e.to_string())
    }
}
