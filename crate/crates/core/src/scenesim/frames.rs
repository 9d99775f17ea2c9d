use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Scene, SceneError, SimDevice};
use crate::geometry::{Homography, Point};
use crate::rng::{seeded, stream_for};
use crate::timesync::{Nanos, NS_PER_S};

pub const DESCRIPTOR_DIM: usize = 16;

/// Quantized appearance descriptor.
pub type Descriptor = [i8; DESCRIPTOR_DIM];

const DESCRIPTOR_RANGE: f64 = 127.0;
const TARGET_ID_BASE: u32 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(u32, f64, f64, Descriptor)", into = "(u32, f64, f64, Descriptor)")]
pub struct FeaturePoint {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub descriptor: Descriptor,
}

impl From<(u32, f64, f64, Descriptor)> for FeaturePoint {
    fn from((id, x, y, descriptor): (u32, f64, f64, Descriptor)) -> Self {
        Self { id, x, y, descriptor }
    }
}

impl From<FeaturePoint> for (u32, f64, f64, Descriptor) {
    fn from(p: FeaturePoint) -> Self {
        (p.id, p.x, p.y, p.descriptor)
    }
}

impl FeaturePoint {
    pub fn pos(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

/// One camera view reduced to identifiable feature points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureFrame {
    pub source_id: Arc<str>,
    /// Device clock for ego frames, reference clock for central frames.
    pub t_ns: Nanos,
    pub points: Vec<FeaturePoint>,
}

/// A scripted run of consecutive lost frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropBurst {
    pub start_s: f64,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrameConfig {
    pub anchors: usize,
    pub features_per_target: usize,
    pub target_feature_radius_px: f64,
    /// Descriptor noise sd as a fraction of the descriptor range.
    pub descriptor_noise: f64,
    /// Ego-view position noise, ego pixels.
    pub pixel_noise_sd: f64,
    pub central_pixel_noise_sd: f64,
    /// Fraction of features hidden from each ego frame, drawn as an exact
    /// random subset per frame.
    pub occlusion: f64,
    /// Independent per-frame loss probability.
    pub drop_fraction: f64,
    /// Scripted losses on the central stream.
    pub central_drop_bursts: Vec<DropBurst>,
    pub central_rate_hz: f64,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            anchors: 120,
            features_per_target: 4,
            target_feature_radius_px: 10.0,
            descriptor_noise: 0.05,
            pixel_noise_sd: 0.5,
            central_pixel_noise_sd: 0.0,
            occlusion: 0.2,
            drop_fraction: 0.0,
            central_drop_bursts: Vec::new(),
            central_rate_hz: 60.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Anchor {
    Fixed(Point),
    OnTarget { target: usize, offset: Point },
}

#[derive(Debug, Clone)]
struct FeatureDef {
    id: u32,
    anchor: Anchor,
    base: Descriptor,
}

/// Fixed stage landmarks: ids `0..anchors`, uniform over the central frame.
pub fn anchor_layout(scene: &Scene, cfg: &FrameConfig) -> Vec<(u32, Point)> {
    let mut rng = seeded(scene.seed, 300);
    let margin = 8.0;
    let (w, h) = (scene.central_width as f64, scene.central_height as f64);
    (0..cfg.anchors as u32)
        .map(|id| {
            let x = rng.random_range(margin..(w - margin).max(margin + 1.0));
            let y = rng.random_range(margin..(h - margin).max(margin + 1.0));
            (id, Point::new(x, y))
        })
        .collect()
}

fn feature_bank(scene: &Scene, cfg: &FrameConfig) -> Vec<FeatureDef> {
    let mut rng = seeded(scene.seed, 301);
    let mut base = || -> Descriptor { std::array::from_fn(|_| rng.random_range(-100..=100)) };
    let mut defs: Vec<FeatureDef> = anchor_layout(scene, cfg)
        .into_iter()
        .map(|(id, p)| FeatureDef { id, anchor: Anchor::Fixed(p), base: base() })
        .collect();
    let f = cfg.features_per_target;
    for t in 0..scene.targets.len() {
        for k in 0..f {
            let a = std::f64::consts::TAU * k as f64 / f as f64;
            let r = cfg.target_feature_radius_px;
            defs.push(FeatureDef {
                id: TARGET_ID_BASE + (t * f + k) as u32,
                anchor: Anchor::OnTarget { target: t, offset: Point::new(r * a.cos(), r * a.sin()) },
                base: base(),
            });
        }
    }
    defs
}

fn central_position(scene: &Scene, def: &FeatureDef, t_s: f64) -> Point {
    match def.anchor {
        Anchor::Fixed(p) => p,
        Anchor::OnTarget { target, offset } => {
            let c = scene.targets[target].position_at(t_s);
            Point::new(c.x + offset.x, c.y + offset.y)
        }
    }
}

fn noisy_descriptor<R: Rng + ?Sized>(base: &Descriptor, noise: Option<&Normal<f64>>, rng: &mut R) -> Descriptor {
    match noise {
        None => *base,
        Some(n) => std::array::from_fn(|i| {
            (base[i] as f64 + n.sample(rng)).round().clamp(-DESCRIPTOR_RANGE, DESCRIPTOR_RANGE) as i8
        }),
    }
}

fn normal(sd: f64) -> Option<Normal<f64>> {
    (sd > 0.0).then(|| Normal::new(0.0, sd).expect("finite sd"))
}

fn burst_hit(bursts: &[DropBurst], k: usize, rate: f64) -> bool {
    bursts.iter().any(|b| {
        let first = (b.start_s * rate).round() as usize;
        k >= first && k < first + b.frames
    })
}

/// Central camera frames at `cfg.central_rate_hz`, reference-clock stamped.
pub fn render_central_frames(scene: &Scene, cfg: &FrameConfig, seed: u64) -> Vec<FeatureFrame> {
    let defs = feature_bank(scene, cfg);
    let mut rng = seeded(seed, 400);
    let desc_noise = normal(cfg.descriptor_noise * DESCRIPTOR_RANGE);
    let pix_noise = normal(cfg.central_pixel_noise_sd);
    let dims = scene.dims();
    let n = (scene.duration_s * cfg.central_rate_hz).floor() as usize;
    let source: Arc<str> = Arc::from("central");
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let t_ref = (k as f64 * NS_PER_S as f64 / cfg.central_rate_hz).round() as Nanos;
        let dropped = cfg.drop_fraction > 0.0 && rng.random::<f64>() < cfg.drop_fraction;
        if dropped || burst_hit(&cfg.central_drop_bursts, k, cfg.central_rate_hz) {
            continue;
        }
        let t_s = t_ref as f64 / NS_PER_S as f64;
        let points = defs
            .iter()
            .filter_map(|d| {
                let mut p = central_position(scene, d, t_s);
                if let Some(n) = &pix_noise {
                    p.x += n.sample(&mut rng);
                    p.y += n.sample(&mut rng);
                }
                let descriptor = noisy_descriptor(&d.base, desc_noise.as_ref(), &mut rng);
                dims.contains(p).then_some(FeaturePoint { id: d.id, x: p.x, y: p.y, descriptor })
            })
            .collect();
        out.push(FeatureFrame { source_id: source.clone(), t_ns: t_ref, points });
    }
    out
}

/// Ego camera frames of one device, generated lazily.
///
/// Points are the true-homography preimages of the central positions plus
/// pixel noise; a random `occlusion` subset is hidden per frame and points
/// outside the ego image are not seen. Frames are stamped by the device clock.
pub fn render_ego_frames<'a>(
    device: &'a SimDevice,
    scene: &'a Scene,
    cfg: &'a FrameConfig,
    seed: u64,
) -> Result<impl Iterator<Item = FeatureFrame> + 'a, SceneError> {
    let defs = feature_bank(scene, cfg);
    let to_ego: Homography = device.true_homography.inverse()?;
    let mut rng = seeded(seed, stream_for("ego-frames", &device.id));
    let desc_noise = normal(cfg.descriptor_noise * DESCRIPTOR_RANGE);
    let pix_noise = normal(cfg.pixel_noise_sd);
    let dims = device.ego_dims();
    let n = (scene.duration_s * device.frame_rate_hz).floor() as usize;
    let source: Arc<str> = Arc::from(device.id.as_str());
    Ok((0..n).filter_map(move |k| {
        let t_ref = (k as f64 * NS_PER_S as f64 / device.frame_rate_hz).round() as Nanos;
        if cfg.drop_fraction > 0.0 && rng.random::<f64>() < cfg.drop_fraction {
            return None;
        }
        let t_s = t_ref as f64 / NS_PER_S as f64;
        let mut hidden = vec![false; defs.len()];
        let n_hidden = ((cfg.occlusion.clamp(0.0, 1.0) * defs.len() as f64).round() as usize).min(defs.len());
        for i in rand::seq::index::sample(&mut rng, defs.len(), n_hidden) {
            hidden[i] = true;
        }
        let points = defs
            .iter()
            .zip(&hidden)
            .filter_map(|(d, &hide)| {
                if hide {
                    return None;
                }
                let c = central_position(scene, d, t_s);
                let mut p = to_ego.apply(c).ok()?;
                if let Some(n) = &pix_noise {
                    p.x += n.sample(&mut rng);
                    p.y += n.sample(&mut rng);
                }
                let descriptor = noisy_descriptor(&d.base, desc_noise.as_ref(), &mut rng);
                dims.contains(p).then_some(FeaturePoint { id: d.id, x: p.x, y: p.y, descriptor })
            })
            .collect();
        Some(FeatureFrame {
            source_id: source.clone(),
            t_ns: device.clock.device_time(t_ref),
            points,
        })
    }))
}
