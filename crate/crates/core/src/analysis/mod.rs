//! Individual and collective gaze metrics.

mod blink;
mod collective;
mod heatmap;
pub mod output;
mod pairwise;
mod shape;
mod timeseries;

pub use blink::{blink_raster, BlinkRaster};
pub use collective::{collective_series, CollectiveFrame};
pub use heatmap::{heatmap, heatmap_cc, heatmap_sim, HeatmapGrid, DEFAULT_EGO_SIGMA_PX};
pub use pairwise::{pairwise_matrix, sim_distance_correlation, PairMatrix, SeatMap};
pub use shape::{contour_area, convex_hull, dispersion_sd, gaze_entropy, gaze_velocity, points_in_frame};
pub use timeseries::{pearson, resample_linear, rolling_mean, segment_cross_correlation, ROLLING_WINDOW};

use std::sync::Arc;

use thiserror::Error;

use crate::geometry::Point;
use crate::scenesim::GazeSample;
use crate::timesync::Nanos;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("empty input")]
    Empty,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((u32, u32), (u32, u32)),
    #[error("zero variance")]
    ZeroVariance,
    #[error("timestamps must be strictly increasing (at index {0})")]
    Unsorted(usize),
    #[error("segments must be sorted and non-overlapping")]
    BadSegments,
    #[error("seat {0:?} assigned twice")]
    DuplicateSeat((usize, usize)),
    #[error("device {0} has no seat")]
    MissingSeat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One viewer's gaze trace with blink samples removed.
#[derive(Debug, Clone, PartialEq)]
pub struct GazeSeries {
    pub device_id: Arc<str>,
    samples: Vec<(Nanos, f64, f64)>,
}

impl GazeSeries {
    pub fn new(device_id: impl Into<Arc<str>>, samples: Vec<(Nanos, f64, f64)>) -> Result<Self, AnalysisError> {
        if let Some(i) = samples.windows(2).position(|w| w[1].0 <= w[0].0) {
            return Err(AnalysisError::Unsorted(i + 1));
        }
        Ok(Self { device_id: device_id.into(), samples })
    }

    /// Open-eye samples in device time.
    pub fn from_gaze(samples: &[GazeSample]) -> Result<Self, AnalysisError> {
        let id = samples.first().map(|s| s.device_id.clone()).unwrap_or_else(|| Arc::from(""));
        Self::new(id, samples.iter().filter(|s| !s.blink).map(|s| (s.t_device_ns, s.x, s.y)).collect())
    }

    pub fn samples(&self) -> &[(Nanos, f64, f64)] {
        &self.samples
    }

    pub fn points(&self) -> Vec<Point> {
        self.samples.iter().map(|&(_, x, y)| Point::new(x, y)).collect()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}
