use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use super::{Scene, SceneError, SimDevice};
use crate::geometry::Point;
use crate::rng::{seeded, stream_for};
use crate::timesync::{Nanos, NS_PER_MS, NS_PER_S};

const MIN_BLINK_MS: f64 = 50.0;

/// One gaze sample in ego pixels, stamped by the device clock.
///
/// While `blink` is set, `x`/`y` repeat the last open-eye values and must not
/// be used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazeSample {
    pub device_id: Arc<str>,
    #[serde(rename = "t_ns")]
    pub t_device_ns: Nanos,
    pub x: f64,
    pub y: f64,
    pub blink: bool,
}

/// Noiseless latent behind one emitted sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeTruth {
    pub t_ref_ns: Nanos,
    /// Index into `Scene::targets`.
    pub target: usize,
    pub central: Point,
    pub ego: Point,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlinkInterval {
    pub start_ns: Nanos,
    pub end_ns: Nanos,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GazeTrace {
    pub samples: Vec<GazeSample>,
    /// Parallel to `samples`.
    pub truth: Vec<GazeTruth>,
    /// Blink intervals on the reference clock.
    pub blinks: Vec<BlinkInterval>,
}

/// Markov switching among targets with exponential dwell times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttentionPolicy {
    pub dwell_mean_s: f64,
    /// Per-fixation landing error around the target, central pixels.
    pub landing_sd_px: f64,
    /// Preference for targets on the viewer's side of the stage. Zero means
    /// every viewer weighs targets by salience alone.
    pub seat_affinity: f64,
}

impl Default for AttentionPolicy {
    fn default() -> Self {
        Self {
            dwell_mean_s: 1.2,
            landing_sd_px: 2.0,
            seat_affinity: 0.0,
        }
    }
}

fn pick_target<R: Rng + ?Sized>(
    scene: &Scene,
    policy: &AttentionPolicy,
    seat_x: f64,
    t_s: f64,
    current: Option<usize>,
    rng: &mut R,
) -> usize {
    let n = scene.targets.len();
    let w = scene.central_width as f64;
    let weights: Vec<f64> = scene
        .targets
        .iter()
        .enumerate()
        .map(|(k, t)| {
            if n > 1 && Some(k) == current {
                return 0.0;
            }
            let tx = 2.0 * t.position_at(t_s).x / w - 1.0;
            t.salience * (-policy.seat_affinity * (tx - seat_x).abs()).exp()
        })
        .collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return current.unwrap_or(0);
    }
    let mut u = rng.random::<f64>() * total;
    for (k, wk) in weights.iter().enumerate() {
        if u < *wk {
            return k;
        }
        u -= wk;
    }
    weights.iter().rposition(|&x| x > 0.0).unwrap_or(0)
}

fn blink_schedule<R: Rng + ?Sized>(device: &SimDevice, end_ns: Nanos, rng: &mut R) -> Vec<BlinkInterval> {
    if !(device.blink_rate_per_min > 0.0) {
        return Vec::new();
    }
    let gap = Exp::new(device.blink_rate_per_min / 60.0).expect("positive rate");
    let dur = Normal::new(device.blink_duration_mean_ms, device.blink_duration_sd_ms.max(0.0))
        .expect("finite sd");
    let mut out = Vec::new();
    let mut t = 0.0;
    loop {
        t += gap.sample(rng);
        let start = (t * NS_PER_S as f64).round() as Nanos;
        if start >= end_ns {
            break;
        }
        let ms = dur.sample(rng).max(MIN_BLINK_MS);
        let end = start + (ms * NS_PER_MS as f64).round() as Nanos;
        out.push(BlinkInterval { start_ns: start, end_ns: end });
        t = end as f64 / NS_PER_S as f64;
    }
    out
}

/// Simulates one device's gaze for the whole scene.
///
/// Latent central gaze is the attended target plus a per-fixation landing
/// error; ego gaze is its preimage under the true homography plus Gaussian
/// noise. Blinks arrive as a Poisson process. Timestamps pass through the
/// device clock.
pub fn generate_gaze(
    device: &SimDevice,
    scene: &Scene,
    policy: &AttentionPolicy,
    seed: u64,
) -> Result<GazeTrace, SceneError> {
    if scene.targets.is_empty() {
        return Err(SceneError::InvalidConfig("scene has no targets".into()));
    }
    let mut rng = seeded(seed, stream_for("gaze", &device.id));
    let dt = NS_PER_S as f64 / device.gaze_rate_hz;
    let end_ns = (scene.duration_s * NS_PER_S as f64).round() as Nanos;
    let n = (scene.duration_s * device.gaze_rate_hz).floor() as usize;
    let to_ego = device.true_homography.inverse()?;
    let noise = Normal::new(0.0, device.gaze_noise_sd.max(0.0)).expect("finite sd");
    let landing = Normal::new(0.0, policy.landing_sd_px.max(0.0)).expect("finite sd");
    let dwell = Exp::new(1.0 / policy.dwell_mean_s.max(1e-3)).expect("positive rate");
    let blinks = blink_schedule(device, end_ns, &mut rng);

    let seat_x = device.lateral;
    let id: Arc<str> = Arc::from(device.id.as_str());

    let mut samples = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    let mut target = pick_target(scene, policy, seat_x, 0.0, None, &mut rng);
    let mut land = Point::new(landing.sample(&mut rng), landing.sample(&mut rng));
    let mut next_switch = dwell.sample(&mut rng);
    let mut last_open: Option<(f64, f64)> = None;
    let mut blink_idx = 0;

    for k in 0..n {
        let t_ref = (k as f64 * dt).round() as Nanos;
        let t_s = t_ref as f64 / NS_PER_S as f64;
        while t_s >= next_switch {
            target = pick_target(scene, policy, seat_x, next_switch, Some(target), &mut rng);
            land = Point::new(landing.sample(&mut rng), landing.sample(&mut rng));
            next_switch += dwell.sample(&mut rng);
        }
        let p = scene.targets[target].position_at(t_s);
        let central = Point::new(p.x + land.x, p.y + land.y);
        let ego = to_ego.apply(central)?;
        let obs = (ego.x + noise.sample(&mut rng), ego.y + noise.sample(&mut rng));

        while blink_idx < blinks.len() && blinks[blink_idx].end_ns <= t_ref {
            blink_idx += 1;
        }
        let blink = blink_idx < blinks.len() && blinks[blink_idx].start_ns <= t_ref;
        let (x, y) = if blink {
            last_open.unwrap_or(obs)
        } else {
            last_open = Some(obs);
            obs
        };
        samples.push(GazeSample {
            device_id: id.clone(),
            t_device_ns: device.clock.device_time(t_ref),
            x,
            y,
            blink,
        });
        truth.push(GazeTruth { t_ref_ns: t_ref, target, central, ego });
    }
    Ok(GazeTrace { samples, truth, blinks })
}
