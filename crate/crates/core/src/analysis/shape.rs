use super::AnalysisError;
use crate::geometry::{Dims, Point};

/// Mean Euclidean step between consecutive samples, in px per sample.
pub fn gaze_velocity(points: &[Point]) -> Result<f64, AnalysisError> {
    if points.len() < 2 {
        return Err(AnalysisError::TooFewSamples { needed: 2, got: points.len() });
    }
    let sum: f64 = points.windows(2).map(|w| w[0].dist(w[1])).sum();
    Ok(sum / (points.len() - 1) as f64)
}

/// Shannon entropy of a `bin_px` histogram over the whole frame, divided by
/// log2 of the bin count. Points outside the frame are skipped.
pub fn gaze_entropy(points: &[Point], dims: Dims, bin_px: u32) -> Result<f64, AnalysisError> {
    if bin_px == 0 {
        return Err(AnalysisError::InvalidParameter("bin_px must be positive".into()));
    }
    let nx = dims.width.div_ceil(bin_px).max(1) as usize;
    let ny = dims.height.div_ceil(bin_px).max(1) as usize;
    let mut counts = vec![0u64; nx * ny];
    let mut n = 0u64;
    for p in points.iter().filter(|p| p.is_finite() && dims.contains(**p)) {
        let bx = ((p.x / bin_px as f64) as usize).min(nx - 1);
        let by = ((p.y / bin_px as f64) as usize).min(ny - 1);
        counts[by * nx + bx] += 1;
        n += 1;
    }
    if n == 0 {
        return Err(AnalysisError::Empty);
    }
    if nx * ny == 1 {
        return Ok(0.0);
    }
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n as f64;
            -p * p.log2()
        })
        .sum();
    Ok((h / ((nx * ny) as f64).log2()).clamp(0.0, 1.0))
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Convex hull by monotone chain, counter-clockwise, no collinear vertices.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.iter().copied().filter(|p| p.is_finite()).collect();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

fn shoelace(poly: &[Point]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum::<f64>()
        .abs()
        / 2.0
}

/// Convex-hull area as a fraction of the frame area.
pub fn contour_area(points: &[Point], dims: Dims) -> f64 {
    let hull = convex_hull(points);
    if hull.len() < 3 {
        return 0.0;
    }
    shoelace(&hull) / dims.area()
}

/// Population standard deviation of x and y.
pub fn dispersion_sd(points: &[Point]) -> Result<(f64, f64), AnalysisError> {
    if points.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let n = points.len() as f64;
    let (mx, my) = points.iter().fold((0.0, 0.0), |(x, y), p| (x + p.x, y + p.y));
    let (mx, my) = (mx / n, my / n);
    let (vx, vy) = points
        .iter()
        .fold((0.0, 0.0), |(x, y), p| (x + (p.x - mx).powi(2), y + (p.y - my).powi(2)));
    Ok(((vx / n).sqrt(), (vy / n).sqrt()))
}

/// Count of points with 0 <= x <= width and 0 <= y <= height.
pub fn points_in_frame(points: &[Point], dims: Dims) -> usize {
    let (w, h) = (dims.width as f64, dims.height as f64);
    points.iter().filter(|p| (0.0..=w).contains(&p.x) && (0.0..=h).contains(&p.y)).count()
}
