//! A simulated venue: scene, seated devices and the streams they produce.

use std::sync::Arc;

use gazemesh::rng::{seeded, stream_for};
use gazemesh::scenesim::{
    build_scene, generate_gaze, place_devices, render_central_frames, render_ego_frames, AttentionPolicy,
    FeatureFrame, FleetConfig, FrameConfig, GazeTrace, Scene, SceneConfig, SceneError, SimDevice,
};
use gazemesh::timesync::{measure_offsets, OffsetSample, ProbeConfig, NS_PER_S};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub scene: SceneConfig,
    pub fleet: FleetConfig,
    pub frames: FrameConfig,
    pub attention: AttentionPolicy,
    pub probe: ProbeConfig,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::two_target_split(60.0, 30.0),
            fleet: FleetConfig::default(),
            frames: FrameConfig::default(),
            attention: AttentionPolicy::default(),
            probe: ProbeConfig::default(),
        }
    }
}

/// Everything derived from a [`WorldConfig`] and a seed. Streams are
/// generated on demand and are pure functions of (config, seed).
#[derive(Debug, Clone)]
pub struct World {
    pub config: WorldConfig,
    pub seed: u64,
    pub scene: Arc<Scene>,
    pub devices: Vec<Arc<SimDevice>>,
}

impl World {
    pub fn build(config: WorldConfig, seed: u64) -> Result<Self, SceneError> {
        let scene = build_scene(&config.scene)?;
        let devices = place_devices(&scene, &config.fleet, seed)?.into_iter().map(Arc::new).collect();
        Ok(Self { config, seed, scene: Arc::new(scene), devices })
    }

    pub fn device_index(&self, id: &str) -> Option<usize> {
        self.devices.iter().position(|d| d.id == id)
    }

    pub fn duration_ns(&self) -> i64 {
        (self.scene.duration_s * NS_PER_S as f64).round() as i64
    }

    pub fn gaze(&self, i: usize) -> Result<GazeTrace, SceneError> {
        generate_gaze(&self.devices[i], &self.scene, &self.config.attention, self.seed)
    }

    pub fn ego_frames(&self, i: usize) -> Result<impl Iterator<Item = FeatureFrame> + '_, SceneError> {
        render_ego_frames(&self.devices[i], &self.scene, &self.config.frames, self.seed)
    }

    pub fn central_frames(&self) -> Vec<FeatureFrame> {
        render_central_frames(&self.scene, &self.config.frames, self.seed)
    }

    /// Offset epochs of device `i` over the whole scene.
    pub fn offsets(&self, i: usize) -> Vec<OffsetSample> {
        let d = &self.devices[i];
        let mut rng = seeded(self.seed, stream_for("offsets", &d.id));
        measure_offsets(&d.clock, &self.config.probe, 0, self.duration_ns(), &mut rng)
    }
}
