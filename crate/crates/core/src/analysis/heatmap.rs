use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::geometry::{Dims, Point};

/// One visual degree in ego-camera pixels.
pub const DEFAULT_EGO_SIGMA_PX: f64 = 16.0;

/// Normalized gaze density over a cell grid, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapGrid {
    pub width: u32,
    pub height: u32,
    pub cell_size: u32,
    pub values: Vec<f64>,
    /// No point fell inside the frame; values are all zero.
    pub empty: bool,
}

impl HeatmapGrid {
    pub fn shape(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn at(&self, cx: u32, cy: u32) -> f64 {
        self.values[(cy * self.width + cx) as usize]
    }

    pub fn argmax(&self) -> (u32, u32) {
        let i = self
            .values
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
            .0 as u32;
        (i % self.width, i / self.width)
    }

    /// Centre of a cell in frame pixels.
    pub fn cell_center(&self, cx: u32, cy: u32) -> Point {
        let s = self.cell_size as f64;
        Point::new((cx as f64 + 0.5) * s, (cy as f64 + 0.5) * s)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

fn kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    (-r..=r).map(|d| (-0.5 * (d as f64 / sigma).powi(2)).exp()).collect()
}

/// Spreads each source cell's mass along one axis with the kernel clipped
/// to the grid and renormalized, so no mass leaves the grid.
fn scatter_axis(src: &[f64], dst: &mut [f64], len: usize, stride: usize, lines: usize, line_stride: usize, k: &[f64]) {
    let r = (k.len() / 2) as i64;
    for line in 0..lines {
        let base = line * line_stride;
        for i in 0..len {
            let m = src[base + i * stride];
            if m == 0.0 {
                continue;
            }
            let lo = (i as i64 - r).max(0) as usize;
            let hi = (i as i64 + r).min(len as i64 - 1) as usize;
            let kk = &k[(lo as i64 - i as i64 + r) as usize..=(hi as i64 - i as i64 + r) as usize];
            let z: f64 = kk.iter().sum();
            let scale = m / z;
            for (j, &w) in (lo..=hi).zip(kk) {
                dst[base + j * stride] += scale * w;
            }
        }
    }
}

/// Gaussian-smoothed gaze density at `cell_size` px per cell. Points
/// outside the frame are ignored.
pub fn heatmap(points: &[Point], dims: Dims, sigma_px: f64, cell_size: u32) -> Result<HeatmapGrid, AnalysisError> {
    if !(sigma_px > 0.0) || cell_size == 0 {
        return Err(AnalysisError::InvalidParameter("sigma_px and cell_size must be positive".into()));
    }
    let w = dims.width.div_ceil(cell_size).max(1);
    let h = dims.height.div_ceil(cell_size).max(1);
    let (wu, hu) = (w as usize, h as usize);
    let mut counts = vec![0.0; wu * hu];
    let mut n = 0usize;
    for p in points.iter().filter(|p| p.is_finite() && dims.contains(**p)) {
        let cx = ((p.x / cell_size as f64) as usize).min(wu - 1);
        let cy = ((p.y / cell_size as f64) as usize).min(hu - 1);
        counts[cy * wu + cx] += 1.0;
        n += 1;
    }
    if n == 0 {
        return Ok(HeatmapGrid { width: w, height: h, cell_size, values: counts, empty: true });
    }
    let k = kernel(sigma_px / cell_size as f64);
    let mut rows = vec![0.0; wu * hu];
    scatter_axis(&counts, &mut rows, wu, 1, hu, wu, &k);
    let mut out = vec![0.0; wu * hu];
    scatter_axis(&rows, &mut out, hu, wu, wu, 1, &k);
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    Ok(HeatmapGrid { width: w, height: h, cell_size, values: out, empty: false })
}

fn same_shape(a: &HeatmapGrid, b: &HeatmapGrid) -> Result<(), AnalysisError> {
    if a.shape() != b.shape() {
        return Err(AnalysisError::ShapeMismatch(a.shape(), b.shape()));
    }
    Ok(())
}

/// Histogram intersection.
pub fn heatmap_sim(a: &HeatmapGrid, b: &HeatmapGrid) -> Result<f64, AnalysisError> {
    same_shape(a, b)?;
    Ok(a.values.iter().zip(&b.values).map(|(x, y)| x.min(*y)).sum::<f64>().clamp(0.0, 1.0))
}

/// Pearson correlation of cell values.
pub fn heatmap_cc(a: &HeatmapGrid, b: &HeatmapGrid) -> Result<f64, AnalysisError> {
    same_shape(a, b)?;
    super::pearson(&a.values, &b.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;

    fn grid(values: Vec<f64>, w: u32) -> HeatmapGrid {
        let h = values.len() as u32 / w;
        HeatmapGrid { width: w, height: h, cell_size: 1, values, empty: false }
    }

    #[test]
    fn single_point_peak_and_symmetry() {
        let h = heatmap(&[Point::new(100.5, 60.5)], Dims::new(200, 120), 5.0, 1).unwrap();
        assert_eq!(h.argmax(), (100, 60));
        assert!((h.values.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for d in 1..10 {
            assert!((h.at(100 - d, 60) - h.at(100 + d, 60)).abs() < 1e-15);
            assert!((h.at(100, 60 - d) - h.at(100, 60 + d)).abs() < 1e-15);
        }
    }

    #[test]
    fn border_mass_is_kept() {
        let h = heatmap(&[Point::new(0.0, 0.0)], Dims::new(50, 50), 8.0, 1).unwrap();
        assert!((h.values.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(h.argmax(), (0, 0));
    }

    #[test]
    fn two_equal_clusters_two_equal_peaks() {
        let mut pts = vec![Point::new(50.5, 40.5); 7];
        pts.extend(vec![Point::new(150.5, 40.5); 7]);
        let h = heatmap(&pts, Dims::new(201, 81), 6.0, 1).unwrap();
        assert!((h.at(50, 40) - h.at(150, 40)).abs() < 1e-9);
        assert!(h.at(50, 40) > h.at(100, 40));
    }

    #[test]
    fn empty_is_flagged_zero() {
        let h = heatmap(&[Point::new(-5.0, 3.0)], Dims::new(20, 10), 2.0, 1).unwrap();
        assert!(h.empty && h.values.iter().all(|&v| v == 0.0));
        assert!(heatmap(&[], Dims::new(20, 10), 0.0, 1).is_err());
    }

    #[test]
    fn cell_downsampling() {
        let h = heatmap(&[Point::new(33.0, 17.0)], Dims::new(1600, 1200), 16.0, 4).unwrap();
        assert_eq!(h.shape(), (400, 300));
        assert_eq!(h.argmax(), (8, 4));
    }

    #[test]
    fn sim_boundaries() {
        let a = heatmap(&[Point::new(10.0, 10.0)], Dims::new(100, 100), 2.0, 1).unwrap();
        let b = heatmap(&[Point::new(80.0, 80.0)], Dims::new(100, 100), 2.0, 1).unwrap();
        assert!((heatmap_sim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(heatmap_sim(&a, &b).unwrap(), 0.0);
        let c = heatmap(&[Point::new(1.0, 1.0)], Dims::new(50, 100), 2.0, 1).unwrap();
        assert!(matches!(heatmap_sim(&a, &c), Err(AnalysisError::ShapeMismatch(..))));
    }

    #[test]
    fn cc_identity_complement_and_constant() {
        let a = heatmap(&[Point::new(10.0, 10.0), Point::new(30.0, 12.0)], Dims::new(40, 20), 3.0, 1).unwrap();
        assert!((heatmap_cc(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let max = a.max();
        let comp = grid(a.values.iter().map(|v| max - v).collect(), a.width);
        assert!(heatmap_cc(&a, &comp).unwrap() < 0.0);
        let flat = grid(vec![0.5; a.values.len()], a.width);
        assert!(matches!(heatmap_cc(&a, &flat), Err(AnalysisError::ZeroVariance)));
    }

    #[test]
    fn cc_against_shuffle_is_near_zero() {
        let pts: Vec<Point> = (0..20).map(|i| Point::new(5.0 + 4.0 * i as f64, 30.0 + (i % 3) as f64 * 9.0)).collect();
        let a = heatmap(&pts, Dims::new(100, 60), 3.0, 1).unwrap();
        let mean: f64 = (0..40)
            .map(|s| {
                let mut v = a.values.clone();
                v.shuffle(&mut seeded(s, 0));
                heatmap_cc(&a, &grid(v, a.width)).unwrap()
            })
            .sum::<f64>()
            / 40.0;
        assert!(mean.abs() < 0.02, "{mean}");
    }

    proptest! {
        #[test]
        fn sums_to_one_and_sim_is_symmetric(
            a in prop::collection::vec((0.0f64..120.0, 0.0f64..80.0), 1..40),
            b in prop::collection::vec((0.0f64..120.0, 0.0f64..80.0), 1..40),
            sigma in 0.5f64..12.0,
        ) {
            let d = Dims::new(120, 80);
            let pa: Vec<Point> = a.into_iter().map(Point::from).collect();
            let pb: Vec<Point> = b.into_iter().map(Point::from).collect();
            let ha = heatmap(&pa, d, sigma, 2).unwrap();
            let hb = heatmap(&pb, d, sigma, 2).unwrap();
            prop_assert!((ha.values.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let s1 = heatmap_sim(&ha, &hb).unwrap();
            let s2 = heatmap_sim(&hb, &ha).unwrap();
            prop_assert!((0.0..=1.0).contains(&s1));
            prop_assert_eq!(s1, s2);
            if let (Ok(c1), Ok(c2)) = (heatmap_cc(&ha, &hb), heatmap_cc(&hb, &ha)) {
                prop_assert!((c1 - c2).abs() < 1e-12);
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&c1));
            }
        }
    }
}
