//! Session orchestration for gazemesh: simulated device fleets, recording
//! and live streaming through the hub, post-hoc processing, and the control
//! API.

pub mod api;
pub mod cli;
pub mod config;
pub mod device;
pub mod live;
pub mod posthoc;
pub mod session;
pub mod viz;
pub mod world;

use gazemesh::analysis::AnalysisError;
use gazemesh::projection::ProjectionError;
use gazemesh::scenesim::SceneError;
use gazemesh::streamhub::HubError;
use gazemesh::timesync::TimeSyncError;
use gazemesh::vizexport::VizError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("config error: {0}")]
    Config(String),
    #[error("unknown device {0}")]
    UnknownDevice(String),
    #[error("device {0} did not answer in time")]
    Timeout(String),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Hub(#[from] HubError),
    #[error(transparent)]
    TimeSync(#[from] TimeSyncError),
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Viz(#[from] VizError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ControlError {
    /// Process exit status: 2 for bad configuration, 3 for anything that
    /// failed while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            ControlError::Config(_)
            | ControlError::Scene(SceneError::InvalidConfig(_))
            | ControlError::Scene(SceneError::WaypointOutOfBounds { .. })
            | ControlError::Scene(SceneError::TooManyDevices { .. }) => 2,
            _ => 3,
        }
    }
}
