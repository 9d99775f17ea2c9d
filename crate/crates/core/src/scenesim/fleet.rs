use nalgebra::Matrix3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Scene, SceneError};
use crate::geometry::{Dims, Homography};
use crate::rng::seeded;
use crate::timesync::{ClockModel, NS_PER_MS};

/// How device clocks are spread around the reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClockSpread {
    /// Initial offsets are uniform in ±this many milliseconds.
    pub offset_range_ms: f64,
    /// Drift magnitudes are uniform in `[drift_min, drift_max]` with a random sign.
    pub drift_min: f64,
    pub drift_max: f64,
    pub jitter_sd_ns: f64,
}

impl Default for ClockSpread {
    fn default() -> Self {
        Self {
            offset_range_ms: 300.0,
            drift_min: 1e-6,
            drift_max: 3e-6,
            jitter_sd_ns: 20_000.0,
        }
    }
}

impl ClockSpread {
    pub fn ideal() -> Self {
        Self {
            offset_range_ms: 0.0,
            drift_min: 0.0,
            drift_max: 0.0,
            jitter_sd_ns: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FleetConfig {
    pub devices: usize,
    pub rows: usize,
    pub cols: usize,
    pub ego_width: u32,
    pub ego_height: u32,
    pub gaze_rate_hz: f64,
    pub frame_rate_hz: f64,
    pub gaze_noise_sd: f64,
    pub blink_rate_per_min: f64,
    pub blink_duration_mean_ms: f64,
    pub blink_duration_sd_ms: f64,
    /// Diagonal of the stage region in central pixels.
    pub stage_diag_px: f64,
    /// Diagonal of the same region in ego pixels, front row to back row.
    /// Rows in between are interpolated linearly.
    pub row_stage_diag_px: Vec<f64>,
    pub max_roll_deg: f64,
    /// Keystone strength for seats at the ends of a row.
    pub perspective: f64,
    /// Maximum offset of the stage center from the ego image center.
    pub aim_error_px: f64,
    pub clocks: ClockSpread,
}

impl Default for FleetConfig {
    fn default() -> Self {
        Self {
            devices: 30,
            rows: 3,
            cols: 10,
            ego_width: 1600,
            ego_height: 1200,
            gaze_rate_hz: 200.0,
            frame_rate_hz: 30.0,
            gaze_noise_sd: 8.0,
            blink_rate_per_min: 12.0,
            blink_duration_mean_ms: 303.0,
            blink_duration_sd_ms: 69.0,
            stage_diag_px: 600.0,
            row_stage_diag_px: vec![515.0, 441.0, 396.0],
            max_roll_deg: 5.0,
            perspective: 0.1,
            aim_error_px: 40.0,
            clocks: ClockSpread::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Seat {
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDevice {
    pub id: String,
    pub seat: Seat,
    /// Seat column mapped to [-1, 1], left to right.
    #[serde(default)]
    pub lateral: f64,
    /// Ground-truth ego→central mapping.
    pub true_homography: Homography,
    pub ego_width: u32,
    pub ego_height: u32,
    pub gaze_rate_hz: f64,
    pub frame_rate_hz: f64,
    pub clock: ClockModel,
    pub gaze_noise_sd: f64,
    pub blink_rate_per_min: f64,
    pub blink_duration_mean_ms: f64,
    pub blink_duration_sd_ms: f64,
}

impl SimDevice {
    pub fn ego_dims(&self) -> Dims {
        Dims::new(self.ego_width, self.ego_height)
    }
}

pub fn device_id(index: usize) -> String {
    format!("d{index:02}")
}

/// Spreads `n` devices as evenly as possible over the rows, each row's
/// devices centered across its columns.
fn assign_seats(n: usize, rows: usize, cols: usize) -> Vec<Seat> {
    let rows_used = rows.min(n);
    let mut seats = Vec::with_capacity(n);
    for r in 0..rows_used {
        let k = n / rows_used + usize::from(r < n % rows_used);
        for j in 0..k {
            let col = ((j as f64 + 0.5) * cols as f64 / k as f64 - 0.5).round() as usize;
            seats.push(Seat { row: r, col: col.min(cols - 1) });
        }
    }
    seats
}

fn interp(values: &[f64], u: f64) -> f64 {
    match values.len() {
        0 => f64::NAN,
        1 => values[0],
        n => {
            let x = u.clamp(0.0, 1.0) * (n - 1) as f64;
            let i = (x.floor() as usize).min(n - 2);
            let f = x - i as f64;
            values[i] * (1.0 - f) + values[i + 1] * f
        }
    }
}

/// Seats `cfg.devices` devices and derives each one's ground-truth
/// homography: scale from row distance, roll and keystone from the column.
pub fn place_devices(scene: &Scene, cfg: &FleetConfig, seed: u64) -> Result<Vec<SimDevice>, SceneError> {
    let n = cfg.devices;
    if n == 0 {
        return Err(SceneError::InvalidConfig("need at least one device".into()));
    }
    if cfg.rows == 0 || cfg.cols == 0 || n > cfg.rows * cfg.cols {
        return Err(SceneError::TooManyDevices { n, rows: cfg.rows, cols: cfg.cols });
    }
    if !(cfg.gaze_rate_hz > 0.0 && cfg.frame_rate_hz > 0.0) {
        return Err(SceneError::InvalidConfig("rates must be > 0".into()));
    }
    if cfg.row_stage_diag_px.is_empty() || !(cfg.stage_diag_px > 0.0) {
        return Err(SceneError::InvalidConfig("stage diagonals must be set".into()));
    }
    let central = scene.dims();
    let (cw, ch) = (central.width as f64 / 2.0, central.height as f64 / 2.0);
    let ego_center = Dims::new(cfg.ego_width, cfg.ego_height).center();

    assign_seats(n, cfg.rows, cfg.cols)
        .into_iter()
        .enumerate()
        .map(|(i, seat)| {
            let mut rng = seeded(seed, 200 + i as u64);
            let u = if cfg.rows > 1 { seat.row as f64 / (cfg.rows - 1) as f64 } else { 0.0 };
            let col_norm = if cfg.cols > 1 {
                2.0 * seat.col as f64 / (cfg.cols - 1) as f64 - 1.0
            } else {
                0.0
            };
            let scale = interp(&cfg.row_stage_diag_px, u) / cfg.stage_diag_px;
            let roll_deg = (-0.8 * cfg.max_roll_deg * col_norm
                + rng.random_range(-0.2..=0.2) * cfg.max_roll_deg)
                .clamp(-cfg.max_roll_deg, cfg.max_roll_deg);
            let (s, c) = roll_deg.to_radians().sin_cos();
            let dx = rng.random_range(-1.0..=1.0) * cfg.aim_error_px;
            let dy = rng.random_range(-1.0..=1.0) * cfg.aim_error_px;

            // central → ego: recentre, keystone, scale + roll, move to ego aim point
            let to_origin = Matrix3::new(1.0, 0.0, -cw, 0.0, 1.0, -ch, 0.0, 0.0, 1.0);
            let keystone = Matrix3::new(
                1.0, 0.0, 0.0,
                0.0, 1.0, 0.0,
                cfg.perspective * col_norm / cw, 0.5 * cfg.perspective * u / ch, 1.0,
            );
            let similarity = Matrix3::new(scale * c, -scale * s, 0.0, scale * s, scale * c, 0.0, 0.0, 0.0, 1.0);
            let to_ego = Matrix3::new(1.0, 0.0, ego_center.x + dx, 0.0, 1.0, ego_center.y + dy, 0.0, 0.0, 1.0);
            let central_to_ego = Homography::from_matrix(to_ego * similarity * keystone * to_origin)?;

            let cs = &cfg.clocks;
            let offset_ns = rng.random_range(-1.0..=1.0) * cs.offset_range_ms * NS_PER_MS as f64;
            let drift = if cs.drift_max > 0.0 {
                let mag = rng.random_range(cs.drift_min..=cs.drift_max);
                if rng.random::<bool>() { mag } else { -mag }
            } else {
                0.0
            };
            let clock = ClockModel::new(offset_ns.round() as i64, drift, cs.jitter_sd_ns)
                .map_err(|e| SceneError::InvalidConfig(e.to_string()))?;

            Ok(SimDevice {
                id: device_id(i),
                seat,
                lateral: col_norm,
                true_homography: central_to_ego.inverse()?,
                ego_width: cfg.ego_width,
                ego_height: cfg.ego_height,
                gaze_rate_hz: cfg.gaze_rate_hz,
                frame_rate_hz: cfg.frame_rate_hz,
                clock,
                gaze_noise_sd: cfg.gaze_noise_sd,
                blink_rate_per_min: cfg.blink_rate_per_min,
                blink_duration_mean_ms: cfg.blink_duration_mean_ms,
                blink_duration_sd_ms: cfg.blink_duration_sd_ms,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;
    use crate::scenesim::{build_scene, SceneConfig};

    fn scene() -> Scene {
        build_scene(&SceneConfig::single_static(10.0)).unwrap()
    }

    /// Local scale of central→ego at the central frame center.
    fn local_scale(d: &SimDevice) -> f64 {
        let inv = d.true_homography.inverse().unwrap();
        let c = Point::new(360.0, 240.0);
        let eps = 1e-3;
        let p0 = inv.apply(c).unwrap();
        let px = inv.apply(Point::new(c.x + eps, c.y)).unwrap();
        let py = inv.apply(Point::new(c.x, c.y + eps)).unwrap();
        let det = ((px.x - p0.x) * (py.y - p0.y) - (px.y - p0.y) * (py.x - p0.x)) / (eps * eps);
        det.abs().sqrt()
    }

    #[test]
    fn single_centered_device_is_near_similarity() {
        let cfg = FleetConfig { devices: 1, rows: 1, cols: 1, ..FleetConfig::default() };
        let d = &place_devices(&scene(), &cfg, 3).unwrap()[0];
        assert_eq!(d.seat, Seat { row: 0, col: 0 });
        let m = d.true_homography.inverse().unwrap().m;
        let s = 515.0 / 600.0;
        // linear part is a rotation of at most 1 degree times the row scale
        assert!(m[(2, 0)].abs() < 1e-12 && m[(2, 1)].abs() < 1e-12);
        assert!((m[(0, 0)] / s - 1.0).abs() < 2e-4);
        assert!((m[(1, 1)] / s - 1.0).abs() < 2e-4);
        assert!((m[(0, 1)] / s).abs() < 0.018);
    }

    #[test]
    fn thirty_seats() {
        let devs = place_devices(&scene(), &FleetConfig::default(), 7).unwrap();
        assert_eq!(devs.len(), 30);
        let mut seats: Vec<_> = devs.iter().map(|d| (d.seat.row, d.seat.col)).collect();
        seats.sort();
        seats.dedup();
        assert_eq!(seats.len(), 30);
        for (i, a) in devs.iter().enumerate() {
            assert!(a.true_homography.m.determinant().abs() > 1e-12);
            for b in &devs[i + 1..] {
                assert!((a.true_homography.m - b.true_homography.m).norm() > 1e-6);
            }
            assert!(a.clock.drift_rate.abs() >= 1e-6 && a.clock.drift_rate.abs() <= 3e-6);
            assert!(a.clock.initial_offset_ns.abs() <= 300 * NS_PER_MS);
        }
        let row_scale = |r: usize| {
            let v: Vec<f64> = devs.iter().filter(|d| d.seat.row == r).map(local_scale).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!((row_scale(0) / row_scale(2) - 515.0 / 396.0).abs() < 1e-5);
        assert!((row_scale(1) * 600.0 - 441.0).abs() < 1e-3);
    }

    #[test]
    fn ego_corners_map_to_convex_quads() {
        let devs = place_devices(&scene(), &FleetConfig::default(), 11).unwrap();
        for d in &devs {
            let q: Vec<Point> = d
                .ego_dims()
                .corners()
                .iter()
                .map(|&c| d.true_homography.apply(c).unwrap())
                .collect();
            let mut sign = 0.0;
            for k in 0..4 {
                let (a, b, c) = (q[k], q[(k + 1) % 4], q[(k + 2) % 4]);
                let cross = (b.x - a.x) * (c.y - b.y) - (b.y - a.y) * (c.x - b.x);
                assert!(cross != 0.0);
                if sign == 0.0 {
                    sign = cross.signum();
                }
                assert_eq!(cross.signum(), sign, "device {} not convex", d.id);
            }
            for p in &q {
                assert!(p.x > -7200.0 && p.x < 7920.0 && p.y > -4800.0 && p.y < 5280.0, "{p:?}");
            }
        }
    }

    #[test]
    fn too_many_devices() {
        let cfg = FleetConfig { devices: 31, ..FleetConfig::default() };
        assert!(matches!(
            place_devices(&scene(), &cfg, 0),
            Err(SceneError::TooManyDevices { .. })
        ));
    }

    #[test]
    fn seats_are_even_across_rows() {
        let seats = assign_seats(7, 3, 10);
        let per_row: Vec<_> = (0..3).map(|r| seats.iter().filter(|s| s.row == r).count()).collect();
        assert_eq!(per_row, vec![3, 2, 2]);
    }
}
