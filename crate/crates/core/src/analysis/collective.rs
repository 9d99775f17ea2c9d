use serde::Serialize;

use super::{contour_area, dispersion_sd, points_in_frame};
use crate::geometry::{Dims, Point};
use crate::projection::TransformedGaze;
use crate::timesync::Nanos;

/// Audience-level metrics at one central frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CollectiveFrame {
    pub t_ns: Nanos,
    pub devices: usize,
    pub in_frame: usize,
    /// Hull of the in-frame points as a fraction of the frame.
    pub contour_area: f64,
    pub sd_x: f64,
    pub sd_y: f64,
}

/// Groups transformed gaze by central timestamp. Input must be ordered by
/// time, as produced by batch projection.
pub fn collective_series(gaze: &[TransformedGaze], dims: Dims) -> Vec<CollectiveFrame> {
    gaze.chunk_by(|a, b| a.t_ref_ns == b.t_ref_ns)
        .map(|group| {
            let all: Vec<Point> = group.iter().map(TransformedGaze::point).collect();
            let inside: Vec<Point> = all.iter().copied().filter(|p| dims.contains(*p)).collect();
            let (sd_x, sd_y) = dispersion_sd(&all).unwrap_or((0.0, 0.0));
            CollectiveFrame {
                t_ns: group[0].t_ref_ns,
                devices: group.len(),
                in_frame: points_in_frame(&all, dims),
                contour_area: contour_area(&inside, dims),
                sd_x,
                sd_y,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn g(t: Nanos, x: f64, y: f64) -> TransformedGaze {
        TransformedGaze { device_id: Arc::from("d"), t_ref_ns: t, x, y, in_frame: true, source_homography_t: t }
    }

    #[test]
    fn groups_by_time() {
        let d = Dims::new(100, 100);
        let s = collective_series(
            &[g(0, 0.0, 0.0), g(0, 10.0, 0.0), g(0, 0.0, 10.0), g(5, 50.0, 50.0), g(5, 150.0, 50.0)],
            d,
        );
        assert_eq!(s.len(), 2);
        assert!((s[0].contour_area - 0.005).abs() < 1e-15);
        assert_eq!((s[1].devices, s[1].in_frame, s[1].contour_area), (2, 1, 0.0));
        assert_eq!(s[1].sd_x, 50.0);
    }
}
