use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SceneError;
use crate::geometry::{Dims, Point};
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub t_s: f64,
    pub x: f64,
    pub y: f64,
}

/// How a target moves, as written in the config document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetSpec {
    Waypoints {
        id: String,
        #[serde(default = "one")]
        salience: f64,
        waypoints: Vec<Waypoint>,
    },
    /// Seeded random walk: a fresh waypoint every `interval_s`, each step
    /// uniform within `step_px` per axis and reflected at `margin_px` from
    /// the frame edges.
    RandomWalk {
        id: String,
        #[serde(default = "one")]
        salience: f64,
        start: Point,
        step_px: f64,
        interval_s: f64,
        #[serde(default)]
        margin_px: f64,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    #[serde(default = "default_width")]
    pub central_width: u32,
    #[serde(default = "default_height")]
    pub central_height: u32,
    pub duration_s: f64,
    #[serde(default)]
    pub seed: u64,
    pub targets: Vec<TargetSpec>,
}

fn default_width() -> u32 {
    720
}
fn default_height() -> u32 {
    480
}

impl SceneConfig {
    /// One stationary target at the frame center.
    pub fn single_static(duration_s: f64) -> Self {
        Self {
            central_width: 720,
            central_height: 480,
            duration_s,
            seed: 0,
            targets: vec![TargetSpec::Waypoints {
                id: "t0".into(),
                salience: 1.0,
                waypoints: vec![Waypoint { t_s: 0.0, x: 360.0, y: 240.0 }],
            }],
        }
    }

    /// Two performers that stand together, then split at `split_s` and walk
    /// to opposite sides of the stage.
    pub fn two_target_split(duration_s: f64, split_s: f64) -> Self {
        let walk = 4.0_f64.min((duration_s - split_s).max(0.0));
        let path = |x_end: f64| {
            vec![
                Waypoint { t_s: 0.0, x: 360.0, y: 250.0 },
                Waypoint { t_s: split_s, x: 360.0, y: 250.0 },
                Waypoint { t_s: split_s + walk, x: x_end, y: 250.0 },
            ]
        };
        Self {
            central_width: 720,
            central_height: 480,
            duration_s,
            seed: 0,
            targets: vec![
                TargetSpec::Waypoints { id: "left".into(), salience: 1.0, waypoints: path(150.0) },
                TargetSpec::Waypoints { id: "right".into(), salience: 1.0, waypoints: path(570.0) },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub id: String,
    pub salience: f64,
    pub waypoints: Vec<Waypoint>,
}

impl Target {
    /// Piecewise-linear position, held constant outside the waypoint span.
    pub fn position_at(&self, t_s: f64) -> Point {
        let w = &self.waypoints;
        if t_s <= w[0].t_s {
            return Point::new(w[0].x, w[0].y);
        }
        let k = w.partition_point(|p| p.t_s <= t_s);
        if k >= w.len() {
            let last = w[w.len() - 1];
            return Point::new(last.x, last.y);
        }
        let (a, b) = (w[k - 1], w[k]);
        let u = if b.t_s > a.t_s { (t_s - a.t_s) / (b.t_s - a.t_s) } else { 1.0 };
        Point::new(a.x + u * (b.x - a.x), a.y + u * (b.y - a.y))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub central_width: u32,
    pub central_height: u32,
    pub targets: Vec<Target>,
    pub duration_s: f64,
    pub seed: u64,
}

impl Scene {
    pub fn dims(&self) -> Dims {
        Dims::new(self.central_width, self.central_height)
    }
}

fn reflect(v: f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    let span = hi - lo;
    let mut u = (v - lo).rem_euclid(2.0 * span);
    if u > span {
        u = 2.0 * span - u;
    }
    lo + u
}

pub fn build_scene(config: &SceneConfig) -> Result<Scene, SceneError> {
    if config.central_width == 0 || config.central_height == 0 {
        return Err(SceneError::InvalidConfig("frame dimensions must be > 0".into()));
    }
    if !(config.duration_s > 0.0) {
        return Err(SceneError::InvalidConfig("duration must be > 0".into()));
    }
    let dims = Dims::new(config.central_width, config.central_height);
    let mut targets = Vec::with_capacity(config.targets.len());
    for (k, spec) in config.targets.iter().enumerate() {
        let target = match spec {
            TargetSpec::Waypoints { id, salience, waypoints } => Target {
                id: id.clone(),
                salience: *salience,
                waypoints: waypoints.clone(),
            },
            TargetSpec::RandomWalk { id, salience, start, step_px, interval_s, margin_px } => {
                if !(*interval_s > 0.0) {
                    return Err(SceneError::InvalidConfig(format!(
                        "target {id}: interval_s must be > 0"
                    )));
                }
                let mut rng = seeded(config.seed, 100 + k as u64);
                let (lo_x, hi_x) = (*margin_px, dims.width as f64 - margin_px);
                let (lo_y, hi_y) = (*margin_px, dims.height as f64 - margin_px);
                let mut p = *start;
                let mut wps = vec![Waypoint { t_s: 0.0, x: p.x, y: p.y }];
                let mut t = 0.0;
                while t < config.duration_s {
                    t += interval_s;
                    p.x = reflect(p.x + rng.random_range(-1.0..=1.0) * step_px, lo_x, hi_x);
                    p.y = reflect(p.y + rng.random_range(-1.0..=1.0) * step_px, lo_y, hi_y);
                    wps.push(Waypoint { t_s: t, x: p.x, y: p.y });
                }
                Target { id: id.clone(), salience: *salience, waypoints: wps }
            }
        };
        validate_target(&target, dims)?;
        targets.push(target);
    }
    Ok(Scene {
        central_width: config.central_width,
        central_height: config.central_height,
        targets,
        duration_s: config.duration_s,
        seed: config.seed,
    })
}

fn validate_target(t: &Target, dims: Dims) -> Result<(), SceneError> {
    if t.waypoints.is_empty() {
        return Err(SceneError::InvalidConfig(format!("target {} has no waypoints", t.id)));
    }
    if !(t.salience >= 0.0) {
        return Err(SceneError::InvalidConfig(format!("target {} has negative salience", t.id)));
    }
    if t.waypoints.windows(2).any(|w| w[1].t_s < w[0].t_s) {
        return Err(SceneError::InvalidConfig(format!(
            "target {} waypoints are not time-sorted",
            t.id
        )));
    }
    for w in &t.waypoints {
        if !dims.contains(Point::new(w.x, w.y)) {
            return Err(SceneError::WaypointOutOfBounds {
                target: t.id.clone(),
                x: w.x,
                y: w.y,
                width: dims.width,
                height: dims.height,
            });
        }
    }
    Ok(())
}
