use serde::{Deserialize, Serialize};

use super::Correspondence;
use crate::geometry::Homography;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReprojectionReport {
    pub mean_px: f64,
    pub sd_px: f64,
    pub max_px: f64,
    pub inlier_fraction: f64,
}

impl ReprojectionReport {
    /// Mean, population sd and max of a residual list; inliers are residuals
    /// at or below `threshold`.
    pub fn from_residuals(residuals: &[f64], threshold: f64) -> Self {
        if residuals.is_empty() {
            return Self { mean_px: 0.0, sd_px: 0.0, max_px: 0.0, inlier_fraction: 0.0 };
        }
        let n = residuals.len() as f64;
        let mean = residuals.iter().sum::<f64>() / n;
        let var = residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean_px: mean,
            sd_px: var.sqrt(),
            max_px: residuals.iter().copied().fold(0.0, f64::max),
            inlier_fraction: residuals.iter().filter(|&&r| r <= threshold).count() as f64 / n,
        }
    }
}

/// Residuals of `h` applied to each ego point against its central point.
/// A point that maps to infinity counts as an infinite residual.
pub fn reprojection_report(h: &Homography, corrs: &[Correspondence]) -> ReprojectionReport {
    reprojection_report_at(h, corrs, 3.0)
}

pub fn reprojection_report_at(h: &Homography, corrs: &[Correspondence], threshold: f64) -> ReprojectionReport {
    let r: Vec<f64> = corrs
        .iter()
        .map(|c| h.apply(c.ego_point).map_or(f64::INFINITY, |p| p.dist(c.central_point)))
        .collect();
    ReprojectionReport::from_residuals(&r, threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;
    use crate::rng::seeded;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn exact_is_zero() {
        let h = Homography::from_rows([[2.0, 0.0, 1.0], [0.0, 2.0, -3.0], [0.0, 0.0, 1.0]]).unwrap();
        let corrs: Vec<_> = (0..10)
            .map(|i| {
                let p = Point::new(i as f64, (i * i) as f64);
                Correspondence::new(p, h.apply(p).unwrap())
            })
            .collect();
        let r = reprojection_report(&h, &corrs);
        assert_eq!(r, ReprojectionReport { mean_px: 0.0, sd_px: 0.0, max_px: 0.0, inlier_fraction: 1.0 });
    }

    #[test]
    fn gaussian_residuals_follow_rayleigh_mean() {
        let sigma = 2.0;
        let mut rng = seeded(9, 0);
        let g = Normal::new(0.0, sigma).unwrap();
        let h = Homography::identity();
        let corrs: Vec<_> = (0..200_000)
            .map(|i| {
                let p = Point::new((i % 700) as f64, (i % 400) as f64);
                Correspondence::new(p, Point::new(p.x + g.sample(&mut rng), p.y + g.sample(&mut rng)))
            })
            .collect();
        let r = reprojection_report(&h, &corrs);
        let expected = sigma * (std::f64::consts::PI / 2.0).sqrt();
        // standard error of the mean is about sigma * 0.655 / sqrt(n) ≈ 0.003
        assert!((r.mean_px - expected).abs() < 0.015, "{} vs {expected}", r.mean_px);
        let expected_sd = sigma * (2.0 - std::f64::consts::PI / 2.0).sqrt();
        assert!((r.sd_px - expected_sd).abs() < 0.015);
    }
}
