//! Ego→central gaze projection.
//!
//! Ego and central feature frames are matched by descriptor, a homography is
//! estimated per ego frame with RANSAC over normalized DLT, and time-paired
//! gaze samples are mapped into central coordinates.

mod batch;
mod dlt;
mod matching;
mod ransac;
mod report;
pub mod validation;

pub use batch::{
    estimate_frame_homographies, nearest_index, project_batch, project_device, write_homography_csv,
    write_transformed_gaze, BatchOutput, DeviceInput, DeviceProjection, FrameHomography, GapMarker,
    ProjectionParams, TransformedGaze,
};
pub use dlt::normalized_dlt;
pub use matching::{match_features, Correspondence, DEFAULT_RATIO};
pub use ransac::{estimate_homography, RansacParams};
pub use report::{reprojection_report, reprojection_report_at, ReprojectionReport};

use thiserror::Error;

use crate::geometry::GeometryError;

#[derive(Debug, Error)]
pub enum ProjectionError {
    #[error("empty frame")]
    EmptyFrame,
    #[error("insufficient correspondences: {0}")]
    InsufficientCorrespondences(usize),
    #[error("degenerate configuration")]
    DegenerateConfiguration,
    #[error("no correspondences")]
    NoCorrespondences,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
