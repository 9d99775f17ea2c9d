use serde::{Deserialize, Serialize};

use super::ProjectionError;
use crate::geometry::Point;
use crate::scenesim::{Descriptor, FeatureFrame};

pub const DEFAULT_RATIO: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub ego_point: Point,
    pub central_point: Point,
    /// `1 - d1/d2`: how far the best match beats the runner-up.
    pub match_score: f64,
    pub ego_feature: u32,
    pub central_feature: u32,
}

impl Correspondence {
    pub fn new(ego_point: Point, central_point: Point) -> Self {
        Self { ego_point, central_point, match_score: 1.0, ego_feature: 0, central_feature: 0 }
    }
}

fn dist2(a: &Descriptor, b: &Descriptor) -> i32 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as i32 - y as i32;
            d * d
        })
        .sum()
}

/// Best and second-best squared distances and the best index.
fn two_nearest<'a>(q: &Descriptor, pool: impl Iterator<Item = &'a Descriptor>) -> (usize, i32, i32) {
    let (mut bi, mut b1, mut b2) = (usize::MAX, i32::MAX, i32::MAX);
    for (i, d) in pool.enumerate() {
        let x = dist2(q, d);
        if x < b1 {
            b2 = b1;
            b1 = x;
            bi = i;
        } else if x < b2 {
            b2 = x;
        }
    }
    (bi, b1, b2)
}

/// Nearest-neighbour descriptor matching with a ratio test and a symmetric
/// cross-check, sorted by `match_score` descending.
pub fn match_features(
    ego: &FeatureFrame,
    central: &FeatureFrame,
    ratio_threshold: f64,
) -> Result<Vec<Correspondence>, ProjectionError> {
    if ego.points.is_empty() || central.points.is_empty() {
        return Err(ProjectionError::EmptyFrame);
    }
    let back: Vec<usize> = central
        .points
        .iter()
        .map(|c| two_nearest(&c.descriptor, ego.points.iter().map(|e| &e.descriptor)).0)
        .collect();
    let mut out = Vec::new();
    for (ei, e) in ego.points.iter().enumerate() {
        let (ci, d1, d2) = two_nearest(&e.descriptor, central.points.iter().map(|c| &c.descriptor));
        let (d1, d2) = ((d1 as f64).sqrt(), (d2 as f64).sqrt());
        let passes = if d2.is_finite() && d2 < i32::MAX as f64 {
            d1 < ratio_threshold * d2
        } else {
            true
        };
        if !passes || back[ci] != ei {
            continue;
        }
        let score = if d2 > 0.0 && d2 < i32::MAX as f64 { 1.0 - d1 / d2 } else { 1.0 };
        let c = &central.points[ci];
        out.push(Correspondence {
            ego_point: e.pos(),
            central_point: c.pos(),
            match_score: score,
            ego_feature: e.id,
            central_feature: c.id,
        });
    }
    if out.len() < 4 {
        return Err(ProjectionError::InsufficientCorrespondences(out.len()));
    }
    out.sort_by(|a, b| b.match_score.total_cmp(&a.match_score).then(a.ego_feature.cmp(&b.ego_feature)));
    Ok(out)
}
