//! Ground-truth world simulation.
//!
//! A planar stage with moving targets is watched by a fixed central camera
//! and a fleet of head-mounted devices. Every device has a seat-derived
//! ego→central homography, its own drifting clock, and a gaze/blink behavior
//! model. Frames carry identifiable feature points instead of pixels.

mod fleet;
mod frames;
mod gaze;
pub mod io;
mod metrics;
mod scene;

pub use fleet::{device_id, place_devices, ClockSpread, FleetConfig, Seat, SimDevice};
pub use frames::{
    anchor_layout, render_central_frames, render_ego_frames, Descriptor, DropBurst, FeatureFrame,
    FeaturePoint, FrameConfig, DESCRIPTOR_DIM,
};
pub use gaze::{generate_gaze, AttentionPolicy, BlinkInterval, GazeSample, GazeTrace, GazeTruth};
pub use metrics::{stream_metrics, CentralRecorder, RecorderState, StreamMetrics};
pub use scene::{build_scene, Scene, SceneConfig, Target, TargetSpec, Waypoint};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid scene config: {0}")]
    InvalidConfig(String),
    #[error("waypoint ({x}, {y}) of target {target} lies outside the {width}x{height} frame")]
    WaypointOutOfBounds {
        target: String,
        x: f64,
        y: f64,
        width: u32,
        height: u32,
    },
    #[error("{n} devices do not fit a {rows}x{cols} seat grid")]
    TooManyDevices { n: usize, rows: usize, cols: usize },
    #[error("need at least {needed} timestamps, got {got}")]
    TooFewTimestamps { needed: usize, got: usize },
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
