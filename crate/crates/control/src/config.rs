use std::path::Path;

use gazemesh::streamhub::{HubConfig, Retention, TopicConfig, DEFAULT_PARTITIONS};
use serde::{Deserialize, Serialize};

use crate::posthoc::PosthocParams;
use crate::world::{World, WorldConfig};
use crate::ControlError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Persist every topic; process after the session ends.
    #[default]
    Record,
    /// Process live from ring-buffered data; nothing is persisted.
    Stream,
    Both,
}

impl Mode {
    pub fn records(self) -> bool {
        matches!(self, Mode::Record | Mode::Both)
    }

    pub fn streams(self) -> bool {
        matches!(self, Mode::Stream | Mode::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FaultKind {
    /// The device dies and publishes nothing more unless restarted.
    Kill,
    /// The device keeps its recording flag but goes silent for a while.
    Stall { duration_s: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fault {
    pub device: String,
    pub at_s: f64,
    #[serde(flatten)]
    pub kind: FaultKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedAnnotation {
    pub label: String,
    pub at_s: f64,
}

/// Linear drain and fill while recording.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StatusModel {
    pub battery_drain_pct_per_hour: f64,
    pub storage_fill_pct_per_hour: f64,
    pub stall_threshold_ms: i64,
}

impl Default for StatusModel {
    fn default() -> Self {
        Self { battery_drain_pct_per_hour: 15.0, storage_fill_pct_per_hour: 9.0, stall_threshold_ms: 1000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HubSettings {
    pub partitions: usize,
    /// Records kept in memory per partition.
    pub ring_capacity: usize,
}

impl Default for HubSettings {
    fn default() -> Self {
        Self { partitions: DEFAULT_PARTITIONS, ring_capacity: 8192 }
    }
}

impl HubSettings {
    pub fn hub_config(&self) -> HubConfig {
        HubConfig {
            default_topic: TopicConfig { partitions: self.partitions, retention: Retention::Ring(self.ring_capacity) },
            ..HubConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LiveSettings {
    /// Simulated time advanced per supervisor step.
    pub tick_ms: i64,
    /// Simulated seconds per wall-clock second; absent runs unpaced.
    pub speed: Option<f64>,
    /// How far behind the newest data live projection runs.
    pub latency_ms: i64,
    pub heatmap_cell_px: u32,
    pub heatmap_sigma_px: f64,
}

impl Default for LiveSettings {
    fn default() -> Self {
        Self { tick_ms: 100, speed: None, latency_ms: 200, heatmap_cell_px: 8, heatmap_sigma_px: 16.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub mode: Mode,
    pub world: WorldConfig,
    /// Device ids to run; empty runs the whole fleet.
    pub devices: Vec<String>,
    pub seed: u64,
    /// Start every selected device at time zero.
    pub autostart: bool,
    pub hub: HubSettings,
    pub status: StatusModel,
    pub live: LiveSettings,
    pub posthoc: PosthocParams,
    pub faults: Vec<Fault>,
    pub annotations: Vec<ScriptedAnnotation>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Record,
            world: WorldConfig::default(),
            devices: Vec::new(),
            seed: 0,
            autostart: true,
            hub: HubSettings::default(),
            status: StatusModel::default(),
            live: LiveSettings::default(),
            posthoc: PosthocParams::default(),
            faults: Vec::new(),
            annotations: Vec::new(),
        }
    }
}

fn bad(msg: impl Into<String>) -> ControlError {
    ControlError::Config(msg.into())
}

impl SessionConfig {
    pub fn load(path: &Path) -> Result<Self, ControlError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| bad(format!("{}: {e}", path.display())))
    }

    /// Builds the world and checks every reference into it.
    pub fn validate(&self) -> Result<World, ControlError> {
        let world = World::build(self.world.clone(), self.seed).map_err(|e| bad(e.to_string()))?;
        for id in &self.devices {
            world.device_index(id).ok_or_else(|| bad(format!("selected device {id} is not in the fleet")))?;
        }
        let selected = self.selected(&world);
        if selected.is_empty() {
            return Err(bad("device selection is empty"));
        }
        let duration = world.scene.duration_s;
        for f in &self.faults {
            if !selected.iter().any(|&i| world.devices[i].id == f.device) {
                return Err(bad(format!("fault targets unselected device {}", f.device)));
            }
            if !(0.0..=duration).contains(&f.at_s) {
                return Err(bad(format!("fault at {} s is outside the session", f.at_s)));
            }
            if let FaultKind::Stall { duration_s } = f.kind {
                if !(duration_s > 0.0) {
                    return Err(bad("stall duration must be positive"));
                }
            }
        }
        for a in &self.annotations {
            if a.label.trim().is_empty() || !(0.0..=duration).contains(&a.at_s) {
                return Err(bad(format!("bad scripted annotation {a:?}")));
            }
        }
        if self.hub.partitions == 0 || self.hub.ring_capacity == 0 {
            return Err(bad("hub partitions and ring capacity must be positive"));
        }
        if self.live.tick_ms <= 0 || self.live.latency_ms < 0 || self.live.speed.is_some_and(|s| !(s > 0.0)) {
            return Err(bad("live tick must be positive, latency non-negative, speed positive"));
        }
        let s = &self.status;
        if s.battery_drain_pct_per_hour < 0.0 || s.storage_fill_pct_per_hour < 0.0 || s.stall_threshold_ms <= 0 {
            return Err(bad("status model rates must be non-negative and the stall threshold positive"));
        }
        Ok(world)
    }

    /// Indices into `world.devices` of the devices this session runs.
    pub fn selected(&self, world: &World) -> Vec<usize> {
        if self.devices.is_empty() {
            (0..world.devices.len()).collect()
        } else {
            (0..world.devices.len()).filter(|&i| self.devices.contains(&world.devices[i].id)).collect()
        }
    }
}
