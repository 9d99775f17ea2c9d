use nalgebra::Matrix3;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::dlt::{minimal_dlt, normalized_dlt};
use super::{Correspondence, ProjectionError};
use crate::geometry::{Homography, Point};
use crate::rng::seeded;

const CONFIDENCE: f64 = 0.999;
const REFIT_ROUNDS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacParams {
    pub inlier_threshold_px: f64,
    /// Upper bound; the adaptive stopping rule usually ends earlier.
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self { inlier_threshold_px: 3.0, max_iters: 2000, seed: 0 }
    }
}

impl RansacParams {
    pub fn estimate(&self, corrs: &[Correspondence]) -> Result<Homography, ProjectionError> {
        estimate_homography(corrs, self.inlier_threshold_px, self.max_iters, self.seed)
    }
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// True when any three of the four points are (nearly) collinear.
fn degenerate(p: [Point; 4]) -> bool {
    let scale = p
        .iter()
        .flat_map(|a| p.iter().map(move |b| (a.x - b.x).powi(2) + (a.y - b.y).powi(2)))
        .fold(0.0, f64::max);
    if scale == 0.0 {
        return true;
    }
    const TRIPLES: [[usize; 3]; 4] = [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]];
    TRIPLES
        .iter()
        .any(|t| cross(p[t[0]], p[t[1]], p[t[2]]).abs() <= 1e-6 * scale)
}

fn transfer_error(m: &Matrix3<f64>, c: &Correspondence) -> f64 {
    let (x, y) = (c.ego_point.x, c.ego_point.y);
    let w = m[(2, 0)] * x + m[(2, 1)] * y + m[(2, 2)];
    if !(w.abs() >= 1e-12) {
        return f64::INFINITY;
    }
    let u = (m[(0, 0)] * x + m[(0, 1)] * y + m[(0, 2)]) / w;
    let v = (m[(1, 0)] * x + m[(1, 1)] * y + m[(1, 2)]) / w;
    (u - c.central_point.x).hypot(v - c.central_point.y)
}

/// Inlier mask plus (count, summed inlier error).
fn score(m: &Matrix3<f64>, corrs: &[Correspondence], thr: f64, mask: &mut Vec<bool>) -> (usize, f64) {
    mask.clear();
    let (mut n, mut sum) = (0, 0.0);
    for c in corrs {
        let e = transfer_error(m, c);
        let inlier = e <= thr;
        mask.push(inlier);
        if inlier {
            n += 1;
            sum += e;
        }
    }
    (n, sum)
}

fn fit_subset(corrs: &[Correspondence], mask: &[bool]) -> Option<Matrix3<f64>> {
    let (src, dst): (Vec<Point>, Vec<Point>) = corrs
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(c, _)| (c.ego_point, c.central_point))
        .unzip();
    normalized_dlt(&src, &dst)
}

fn required_iters(inlier_ratio: f64) -> usize {
    let good = inlier_ratio.powi(4);
    if good >= 1.0 - f64::EPSILON {
        return 1;
    }
    if good <= 0.0 {
        return usize::MAX;
    }
    let n = (1.0 - CONFIDENCE).ln() / (1.0 - good).ln();
    if n.is_finite() { n.ceil().max(1.0) as usize } else { usize::MAX }
}

/// RANSAC over 4-point DLT hypotheses with forward transfer error in the
/// destination image, followed by a refit on the consensus set.
pub fn estimate_homography(
    corrs: &[Correspondence],
    inlier_threshold: f64,
    max_iters: usize,
    seed: u64,
) -> Result<Homography, ProjectionError> {
    let n = corrs.len();
    if n < 4 {
        return Err(ProjectionError::InsufficientCorrespondences(n));
    }
    let mut rng = seeded(seed, 0x484F_4D4F);
    let mut best: Option<(usize, f64, Matrix3<f64>)> = None;
    let mut mask = Vec::with_capacity(n);
    let mut budget = max_iters.max(1);
    let mut iter = 0;
    while iter < budget {
        iter += 1;
        let idx = if n == 4 { vec![0, 1, 2, 3] } else { sample(&mut rng, n, 4).into_vec() };
        let src = [0, 1, 2, 3].map(|k| corrs[idx[k]].ego_point);
        let dst = [0, 1, 2, 3].map(|k| corrs[idx[k]].central_point);
        if degenerate(src) || degenerate(dst) {
            if n == 4 {
                break;
            }
            continue;
        }
        let Some(m) = minimal_dlt(&src, &dst) else { continue };
        let (count, sum) = score(&m, corrs, inlier_threshold, &mut mask);
        let better = match &best {
            None => true,
            Some((bc, bs, _)) => count > *bc || (count == *bc && sum < *bs),
        };
        if better {
            best = Some((count, sum, m));
            budget = budget.min(required_iters(count as f64 / n as f64));
        }
        if n == 4 {
            break;
        }
    }
    let (_, _, mut m) = best.ok_or(ProjectionError::DegenerateConfiguration)?;

    let (mut count, _) = score(&m, corrs, inlier_threshold, &mut mask);
    for _ in 0..REFIT_ROUNDS {
        if count < 4 {
            break;
        }
        let Some(refit) = fit_subset(corrs, &mask) else { break };
        let mut new_mask = Vec::with_capacity(n);
        let (c, _) = score(&refit, corrs, inlier_threshold, &mut new_mask);
        if c < count {
            break;
        }
        let stable = new_mask == mask;
        m = refit;
        count = c;
        mask = new_mask;
        if stable {
            break;
        }
    }
    let mut h = Homography::from_matrix(m)?;
    let errs: Vec<f64> = corrs
        .iter()
        .zip(&mask)
        .filter(|(_, &k)| k)
        .map(|(c, _)| transfer_error(&h.m, c))
        .collect();
    h.inlier_count = errs.len();
    h.mean_reprojection_error = if errs.is_empty() { 0.0 } else { errs.iter().sum::<f64>() / errs.len() as f64 };
    Ok(h)
}
