//! Marker-based projection check in a simulated hall.
//!
//! A small pinhole-camera world stands in for a real venue: audience seats in
//! rows facing a raised stage, a fixed central camera, stage features at
//! mixed depths (backdrop, floor, props) and a fiducial marker presented at
//! nine positions forming an isosceles trapezium over three depth levels.
//! For every frame each device estimates an ego→central homography from noisy
//! feature matches, maps its detected marker centre, and the distance to the
//! marker centre detected in the central view is the projection error. Units
//! in the world are inches.
//!
//! The default hall has a dark backdrop, so most matchable texture sits on
//! the performer and instrument layer mid-stage. Marker centres in the wide
//! ego view are located coarsely, and a share of frames are degraded by
//! blur or low light.

use nalgebra::{Rotation3, Unit, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{estimate_homography, Correspondence, ProjectionError};
use crate::geometry::{Dims, Point};
use crate::rng::seeded;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarkerValidationConfig {
    pub devices: usize,
    pub frames_per_position: usize,
    pub seed: u64,
    pub first_row_distance_in: f64,
    pub row_gap_in: f64,
    pub rows: usize,
    pub seat_half_span_in: f64,
    pub central_dims: Dims,
    pub ego_dims: Dims,
    pub central_focal_px: f64,
    pub ego_focal_px: f64,
    pub stage_features: usize,
    /// Distance from the stage front to the backdrop.
    pub stage_depth_in: f64,
    /// Stage depth of the front, middle and back marker rows.
    pub marker_depths_in: [f64; 3],
    /// Depth band occupied by performers, instruments and set pieces.
    pub prop_depth_range_in: [f64; 2],
    /// Relative weights of backdrop, floor and prop features.
    pub feature_mix: [f64; 3],
    pub central_position_in: [f64; 3],
    /// Per-frame probability that a feature is missed in either view.
    pub feature_dropout: f64,
    pub ego_feature_noise_px: f64,
    pub central_feature_noise_px: f64,
    /// Fraction of matches pointing at a random central location.
    pub false_match_fraction: f64,
    pub ego_marker_noise_px: f64,
    pub central_marker_noise_px: f64,
    /// Per-frame probability of a degraded frame (blur, low light) whose
    /// feature noise is multiplied by `degraded_noise_scale`.
    pub degraded_frame_prob: f64,
    pub degraded_noise_scale: f64,
    /// Per-frame probability that the marker is not detected in the ego view.
    pub marker_miss_prob: f64,
    /// Per-frame head rotation jitter, degrees.
    pub head_jitter_deg: f64,
    pub max_roll_deg: f64,
    pub inlier_threshold_px: f64,
    pub max_iters: usize,
    /// Homographies with fewer inliers count as missing projections.
    pub min_inliers: usize,
    /// Devices missing more than this fraction of frames are excluded.
    pub max_missing_fraction: f64,
}

impl Default for MarkerValidationConfig {
    fn default() -> Self {
        Self {
            devices: 19,
            frames_per_position: 100,
            seed: 0,
            first_row_distance_in: 134.0,
            row_gap_in: 50.0,
            rows: 4,
            seat_half_span_in: 120.0,
            central_dims: Dims::new(640, 480),
            ego_dims: Dims::new(1600, 1200),
            central_focal_px: 560.0,
            ego_focal_px: 760.0,
            stage_features: 90,
            stage_depth_in: 240.0,
            marker_depths_in: [40.0, 100.0, 160.0],
            prop_depth_range_in: [75.0, 125.0],
            feature_mix: [1.0, 1.0, 8.0],
            central_position_in: [0.0, 100.0, -300.0],
            feature_dropout: 0.35,
            ego_feature_noise_px: 1.5,
            central_feature_noise_px: 1.0,
            false_match_fraction: 0.3,
            ego_marker_noise_px: 40.0,
            central_marker_noise_px: 4.0,
            degraded_frame_prob: 0.3,
            degraded_noise_scale: 5.0,
            marker_miss_prob: 0.1,
            head_jitter_deg: 0.3,
            max_roll_deg: 5.0,
            inlier_threshold_px: 3.0,
            max_iters: 500,
            min_inliers: 8,
            max_missing_fraction: 0.4,
        }
    }
}

/// Error statistics for one marker position or one depth level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub label: usize,
    pub frames: usize,
    pub mean_px: f64,
    pub sd_px: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerValidationReport {
    /// Positions 1..=9, front row of the trapezium first.
    pub positions: Vec<ErrorRow>,
    /// Depth levels 1..=3, 1 nearest the audience.
    pub depths: Vec<ErrorRow>,
    pub excluded_devices: Vec<usize>,
    /// Mean consensus size over all estimated homographies.
    pub mean_inliers: f64,
    pub mean_correspondences: f64,
}

impl MarkerValidationReport {
    pub fn to_table(&self) -> String {
        let mut s = String::from("position,frames,mean,std\n");
        for r in &self.positions {
            s += &format!("{},{},{:.2},{:.2}\n", r.label, r.frames, r.mean_px, r.sd_px);
        }
        s += "depth,frames,mean,std\n";
        for r in &self.depths {
            s += &format!("{},{},{:.2},{:.2}\n", r.label, r.frames, r.mean_px, r.sd_px);
        }
        s
    }
}

#[derive(Debug, Clone, Copy)]
struct Camera {
    center: Vector3<f64>,
    rot: Rotation3<f64>,
    focal: f64,
    dims: Dims,
}

impl Camera {
    /// Camera at `center` looking at `target`, image x to the world +x side
    /// and image y downward, rolled by `roll` radians.
    fn look_at(center: Vector3<f64>, target: Vector3<f64>, roll: f64, focal: f64, dims: Dims) -> Self {
        let fwd = (target - center).normalize();
        let up = Vector3::y();
        let right = up.cross(&fwd).normalize();
        let down = right.cross(&fwd);
        let base = Rotation3::from_matrix_unchecked(nalgebra::Matrix3::from_rows(&[
            right.transpose(),
            down.transpose(),
            fwd.transpose(),
        ]));
        let rolled = Rotation3::from_axis_angle(&Vector3::z_axis(), roll) * base;
        Self { center, rot: rolled, focal, dims }
    }

    fn jittered(&self, rng: &mut ChaCha8Rng, sd_rad: f64) -> Self {
        if sd_rad <= 0.0 {
            return *self;
        }
        let n = Normal::new(0.0, sd_rad).expect("finite sd");
        let axis = Unit::new_normalize(Vector3::new(1.0, 0.0, 0.0));
        let pitch = Rotation3::from_axis_angle(&axis, n.sample(rng));
        let yaw = Rotation3::from_axis_angle(&Vector3::y_axis(), n.sample(rng));
        Self { rot: pitch * yaw * self.rot, ..*self }
    }

    fn project(&self, x: &Vector3<f64>) -> Option<Point> {
        let c = self.rot * (x - self.center);
        if c.z < 1.0 {
            return None;
        }
        let p = Point::new(
            self.focal * c.x / c.z + self.dims.width as f64 / 2.0,
            self.focal * c.y / c.z + self.dims.height as f64 / 2.0,
        );
        self.dims.contains(p).then_some(p)
    }
}

const STAGE_HEIGHT: f64 = 30.0;
const STAGE_HALF_WIDTH: f64 = 260.0;
const MARKER_HEIGHT: f64 = 60.0;
const EYE_HEIGHT: f64 = 44.0;


/// Trapezium vertices, edge midpoints and centre; the wide base faces the audience.
fn marker_positions(depth_z: [f64; 3]) -> Vec<(usize, Vector3<f64>)> {
    let half_width = [150.0, 120.0, 90.0];
    let y = STAGE_HEIGHT + MARKER_HEIGHT;
    let mut out = Vec::new();
    for (d, (&z, &hw)) in depth_z.iter().zip(&half_width).enumerate() {
        for x in [-hw, 0.0, hw] {
            out.push((d, Vector3::new(x, y, z)));
        }
    }
    out
}

fn stage_features(n: usize, mix: [f64; 3], depth: f64, props: [f64; 2], rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
    let total: f64 = mix.iter().sum();
    (0..n)
        .map(|_| {
            let u = rng.random::<f64>() * total;
            let x = rng.random_range(-STAGE_HALF_WIDTH..STAGE_HALF_WIDTH);
            if u < mix[0] {
                // backdrop
                Vector3::new(x, rng.random_range(STAGE_HEIGHT..STAGE_HEIGHT + 220.0), depth)
            } else if u < mix[0] + mix[1] {
                // floor and stage lip
                Vector3::new(x, STAGE_HEIGHT, rng.random_range(0.0..depth))
            } else {
                // props and equipment
                Vector3::new(
                    x,
                    rng.random_range(STAGE_HEIGHT..STAGE_HEIGHT + 90.0),
                    rng.random_range(props[0]..props[1].max(props[0] + 1e-9)),
                )
            }
        })
        .collect()
}

fn stats(v: &[f64]) -> (f64, f64) {
    let n = v.len().max(1) as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn noisy(p: Point, n: &Normal<f64>, rng: &mut ChaCha8Rng) -> Point {
    noisy_scaled(p, n, 1.0, rng)
}

fn noisy_scaled(p: Point, n: &Normal<f64>, k: f64, rng: &mut ChaCha8Rng) -> Point {
    Point::new(p.x + k * n.sample(rng), p.y + k * n.sample(rng))
}

/// Runs the full marker procedure and tabulates errors per position and depth.
pub fn run_marker_validation(cfg: &MarkerValidationConfig) -> Result<MarkerValidationReport, ProjectionError> {
    let mut world_rng = seeded(cfg.seed, 500);
    let features = stage_features(cfg.stage_features, cfg.feature_mix, cfg.stage_depth_in, cfg.prop_depth_range_in, &mut world_rng);
    let stage_center = Vector3::new(0.0, STAGE_HEIGHT + 60.0, cfg.stage_depth_in / 2.0);
    let central = Camera::look_at(
        Vector3::from(cfg.central_position_in),
        stage_center,
        0.0,
        cfg.central_focal_px,
        cfg.central_dims,
    );
    let markers = marker_positions(cfg.marker_depths_in);

    let sd = |s: f64| Normal::new(0.0, s.max(0.0)).expect("finite sd");
    let (ego_feat_n, cen_feat_n) = (sd(cfg.ego_feature_noise_px), sd(cfg.central_feature_noise_px));
    let (ego_mark_n, cen_mark_n) = (sd(cfg.ego_marker_noise_px), sd(cfg.central_marker_noise_px));

    let (mut inlier_sum, mut corr_sum, mut estimates) = (0usize, 0usize, 0usize);
    // errors[device][position] = per-frame errors; None = missing frame
    let mut per_device: Vec<Vec<Vec<Option<f64>>>> = Vec::with_capacity(cfg.devices);
    for dev in 0..cfg.devices {
        let mut rng = seeded(cfg.seed, 600 + dev as u64);
        let row = dev % cfg.rows.max(1);
        let seat = Vector3::new(
            rng.random_range(-cfg.seat_half_span_in..cfg.seat_half_span_in),
            EYE_HEIGHT + 10.0 * row as f64,
            -(cfg.first_row_distance_in + cfg.row_gap_in * row as f64),
        );
        let roll = rng.random_range(-cfg.max_roll_deg..=cfg.max_roll_deg).to_radians();
        let mut per_pos = Vec::with_capacity(markers.len());
        for (pi, (_, marker)) in markers.iter().enumerate() {
            let aim = marker + Vector3::new(rng.random_range(-20.0..20.0), rng.random_range(-15.0..15.0), 0.0);
            let head = Camera::look_at(seat, aim, roll, cfg.ego_focal_px, cfg.ego_dims);
            let mut errs = Vec::with_capacity(cfg.frames_per_position);
            for f in 0..cfg.frames_per_position {
                let ego = head.jittered(&mut rng, cfg.head_jitter_deg.to_radians());
                let k = if rng.random::<f64>() < cfg.degraded_frame_prob { cfg.degraded_noise_scale } else { 1.0 };
                let mut corrs = Vec::with_capacity(features.len());
                for x in &features {
                    if rng.random::<f64>() < cfg.feature_dropout {
                        continue;
                    }
                    let (Some(e), Some(c)) = (ego.project(x), central.project(x)) else { continue };
                    let c = if rng.random::<f64>() < cfg.false_match_fraction {
                        Point::new(
                            rng.random_range(0.0..cfg.central_dims.width as f64),
                            rng.random_range(0.0..cfg.central_dims.height as f64),
                        )
                    } else {
                        noisy_scaled(c, &cen_feat_n, k, &mut rng)
                    };
                    corrs.push(Correspondence::new(noisy_scaled(e, &ego_feat_n, k, &mut rng), c));
                }
                let marker_ego = ego.project(marker).filter(|_| rng.random::<f64>() >= cfg.marker_miss_prob);
                let marker_central = central.project(marker);
                let err = match (marker_ego, marker_central) {
                    (Some(me), Some(mc)) if corrs.len() >= 4 => {
                        let seed = cfg.seed ^ ((dev as u64) << 32) ^ ((pi as u64) << 16) ^ f as u64;
                        estimate_homography(&corrs, cfg.inlier_threshold_px, cfg.max_iters, seed)
                            .ok()
                            .inspect(|h| {
                                inlier_sum += h.inlier_count;
                                corr_sum += corrs.len();
                                estimates += 1;
                            })
                            .filter(|h| h.inlier_count >= cfg.min_inliers)
                            .and_then(|h| h.apply(noisy(me, &ego_mark_n, &mut rng)).ok())
                            .map(|p| p.dist(noisy(mc, &cen_mark_n, &mut rng)))
                    }
                    _ => None,
                };
                errs.push(err);
            }
            per_pos.push(errs);
        }
        per_device.push(per_pos);
    }

    let mut excluded = Vec::new();
    let mut by_pos: Vec<Vec<f64>> = vec![Vec::new(); markers.len()];
    for (dev, per_pos) in per_device.iter().enumerate() {
        let total: usize = per_pos.iter().map(Vec::len).sum();
        let missing = per_pos.iter().flatten().filter(|e| e.is_none()).count();
        if total == 0 || missing as f64 > cfg.max_missing_fraction * total as f64 {
            excluded.push(dev);
            continue;
        }
        for (pi, errs) in per_pos.iter().enumerate() {
            by_pos[pi].extend(errs.iter().flatten());
        }
    }
    let positions = by_pos
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let (mean_px, sd_px) = stats(v);
            ErrorRow { label: i + 1, frames: v.len(), mean_px, sd_px }
        })
        .collect();
    let depths = (0..3)
        .map(|d| {
            let v: Vec<f64> = markers
                .iter()
                .zip(&by_pos)
                .filter(|((depth, _), _)| *depth == d)
                .flat_map(|(_, e)| e.iter().copied())
                .collect();
            let (mean_px, sd_px) = stats(&v);
            ErrorRow { label: d + 1, frames: v.len(), mean_px, sd_px }
        })
        .collect();
    let per = |x: usize| if estimates == 0 { 0.0 } else { x as f64 / estimates as f64 };
    Ok(MarkerValidationReport {
        positions,
        depths,
        excluded_devices: excluded,
        mean_inliers: per(inlier_sum),
        mean_correspondences: per(corr_sum),
    })
}
