//! Per-device actors. Each simulated device runs on its own thread and owns
//! its streams; the supervisor and the API reach it only through its mailbox.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;

use gazemesh::rng::{seeded, stream_for};
use gazemesh::scenesim::{FeatureFrame, GazeSample};
use gazemesh::streamhub::{codec, Hub};
use gazemesh::timesync::{measure_epoch, Nanos, NS_PER_MS, NS_PER_S};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use tokio::sync::oneshot;

use crate::config::{FaultKind, StatusModel};
use crate::world::World;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Start,
    Stop,
    Cancel,
    Restart,
}

impl FromStr for Action {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "start" => Ok(Action::Start),
            "stop" => Ok(Action::Stop),
            "cancel" => Ok(Action::Cancel),
            "restart" => Ok(Action::Restart),
            other => Err(format!("unknown action {other}")),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::Start => "start",
            Action::Stop => "stop",
            Action::Cancel => "cancel",
            Action::Restart => "restart",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceState {
    Idle,
    Recording,
    Stopped,
    /// Stopped with the recording marked for discarding.
    Cancelled,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceStatus {
    pub device_id: String,
    pub state: DeviceState,
    pub battery_pct: f64,
    pub storage_pct: f64,
    /// Round trip of the latest clock probe.
    pub ping_ms: Option<f64>,
    pub recording: bool,
    /// Reference time of the newest published gaze sample.
    pub last_sample_t: Option<Nanos>,
    pub alert: Option<String>,
    /// Simulated time spent recording.
    pub recorded_ns: Nanos,
}

impl DeviceStatus {
    pub fn fresh(device_id: &str) -> Self {
        Self {
            device_id: device_id.to_string(),
            state: DeviceState::Idle,
            battery_pct: 100.0,
            storage_pct: 0.0,
            ping_ms: None,
            recording: false,
            last_sample_t: None,
            alert: None,
            recorded_ns: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionResult {
    pub device_id: String,
    pub action: Action,
    pub ok: bool,
    pub state: Option<DeviceState>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ActionResult {
    pub fn failed(device_id: &str, action: Action, error: impl Into<String>) -> Self {
        Self { device_id: device_id.into(), action, ok: false, state: None, note: None, error: Some(error.into()) }
    }
}

/// Shared, lock-protected status of every device in a session.
#[derive(Debug, Default)]
pub struct StatusBoard {
    inner: RwLock<BTreeMap<String, DeviceStatus>>,
}

impl StatusBoard {
    pub fn new(ids: impl IntoIterator<Item = String>) -> Self {
        Self { inner: RwLock::new(ids.into_iter().map(|id| (id.clone(), DeviceStatus::fresh(&id))).collect()) }
    }

    pub fn get(&self, id: &str) -> Option<DeviceStatus> {
        self.inner.read().get(id).cloned()
    }

    pub fn all(&self) -> Vec<DeviceStatus> {
        self.inner.read().values().cloned().collect()
    }

    pub fn update(&self, id: &str, f: impl FnOnce(&mut DeviceStatus)) {
        if let Some(s) = self.inner.write().get_mut(id) {
            f(s);
        }
    }
}

/// What one device did during a tick.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TickReport {
    pub device_id: Arc<str>,
    pub gaze: Vec<GazeSample>,
    /// Reference time of the newest gaze sample published.
    pub last_gaze_t: Option<Nanos>,
    pub frames: usize,
    pub state: Option<DeviceState>,
    pub error: Option<String>,
}

pub(crate) enum Msg {
    /// Publish everything with reference time in `[from, until)`.
    Tick { from: Nanos, until: Nanos, done: Sender<TickReport> },
    Command { action: Action, reply: oneshot::Sender<ActionResult> },
    Shutdown,
}

/// A scripted fault in reference nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct ScheduledFault {
    pub at: Nanos,
    pub kind: FaultKind,
}

pub(crate) struct ActorSpec {
    pub world: Arc<World>,
    pub index: usize,
    pub hub: Arc<Hub>,
    pub board: Arc<StatusBoard>,
    pub status_model: StatusModel,
    pub faults: Vec<ScheduledFault>,
}

pub(crate) struct ActorHandle {
    pub mailbox: Sender<Msg>,
    pub thread: Option<JoinHandle<()>>,
}

pub(crate) fn spawn_actor(spec: ActorSpec) -> std::io::Result<ActorHandle> {
    let (tx, rx) = mpsc::channel();
    let name = format!("device-{}", spec.world.devices[spec.index].id);
    let thread = std::thread::Builder::new().name(name).spawn(move || run_actor(spec, rx))?;
    Ok(ActorHandle { mailbox: tx, thread: Some(thread) })
}

struct Actor {
    id: Arc<str>,
    state: DeviceState,
    now: Nanos,
    recorded_ns: Nanos,
    faults: Vec<ScheduledFault>,
}

impl Actor {
    fn apply(&mut self, action: Action) -> ActionResult {
        use DeviceState::*;
        let (next, note) = match (action, self.state) {
            (Action::Start, Recording) => (Recording, Some("already recording")),
            (Action::Start, Failed) => (Failed, None),
            (Action::Start, _) => (Recording, None),
            (Action::Stop, Recording) => (Stopped, None),
            (Action::Stop, Failed) => (Failed, Some("device has failed")),
            (Action::Stop, s) => (s, Some("already stopped")),
            (Action::Cancel, Failed) => (Cancelled, Some("failed recording discarded")),
            (Action::Cancel, Cancelled) => (Cancelled, Some("already cancelled")),
            (Action::Cancel, _) => (Cancelled, None),
            (Action::Restart, _) => (Recording, None),
        };
        if action == Action::Start && self.state == Failed {
            return ActionResult {
                device_id: self.id.to_string(),
                action,
                ok: false,
                state: Some(Failed),
                note: None,
                error: Some("device has failed; use restart".into()),
            };
        }
        self.state = next;
        ActionResult {
            device_id: self.id.to_string(),
            action,
            ok: true,
            state: Some(next),
            note: note.map(str::to_string),
            error: None,
        }
    }

    /// End of the part of `[from, until)` during which this device publishes,
    /// applying a kill that falls inside it.
    fn alive_until(&mut self, from: Nanos, until: Nanos) -> Nanos {
        let mut end = until;
        for f in &self.faults {
            if f.kind == FaultKind::Kill && f.at >= from && f.at < until {
                end = end.min(f.at);
            }
        }
        end
    }

    fn stalled(&self, t: Nanos) -> bool {
        self.faults.iter().any(|f| match f.kind {
            FaultKind::Stall { duration_s } => t >= f.at && t < f.at + (duration_s * NS_PER_S as f64) as Nanos,
            FaultKind::Kill => false,
        })
    }
}

fn run_actor(spec: ActorSpec, rx: Receiver<Msg>) {
    let ActorSpec { world, index, hub, board, status_model, faults } = spec;
    let device = world.devices[index].clone();
    let id: Arc<str> = Arc::from(device.id.as_str());
    let fail = |e: String| {
        board.update(&id, |s| {
            s.state = DeviceState::Failed;
            s.recording = false;
            s.alert = Some(e.clone());
        });
    };
    let trace = match world.gaze(index) {
        Ok(t) => t,
        Err(e) => return fail(e.to_string()),
    };
    let mut frames = match world.ego_frames(index) {
        Ok(f) => f.peekable(),
        Err(e) => return fail(e.to_string()),
    };
    let probe = world.config.probe;
    let mut probe_rng = seeded(world.seed, stream_for("offsets", &device.id));
    let epoch = probe.epoch_interval_ns.max(1);
    let mut next_epoch: Nanos = 0;
    let mut gaze_cursor = 0usize;
    let frame_ref = |f: &FeatureFrame| device.clock.reference_time(f.t_ns).round() as Nanos;
    let mut actor = Actor { id: id.clone(), state: DeviceState::Idle, now: 0, recorded_ns: 0, faults };
    let per_hour = |rate: f64, ns: Nanos| rate * ns as f64 / (3600.0 * NS_PER_S as f64);

    while let Ok(msg) = rx.recv() {
        match msg {
            Msg::Shutdown => break,
            Msg::Command { action, reply } => {
                let r = actor.apply(action);
                board.update(&id, |s| {
                    s.state = actor.state;
                    s.recording = actor.state == DeviceState::Recording;
                    if action == Action::Restart {
                        s.alert = None;
                    }
                });
                let _ = reply.send(r);
            }
            Msg::Tick { from, until, done } => {
                let mut report = TickReport { device_id: id.clone(), ..TickReport::default() };
                let recording = actor.state == DeviceState::Recording;
                let end = if recording { actor.alive_until(from, until) } else { until };
                let mut errors = Vec::new();

                let start = gaze_cursor;
                while gaze_cursor < trace.samples.len() && trace.truth[gaze_cursor].t_ref_ns < until {
                    gaze_cursor += 1;
                }
                for k in start..gaze_cursor {
                    let t = trace.truth[k].t_ref_ns;
                    if !recording || t < from || t >= end || actor.stalled(t) {
                        continue;
                    }
                    let g = &trace.samples[k];
                    if let Err(e) = hub.publish("gaze", &id, g.t_device_ns, codec::encode_gaze(g)) {
                        errors.push(e.to_string());
                    }
                    report.last_gaze_t = Some(t);
                    report.gaze.push(g.clone());
                }
                while let Some(f) = frames.next_if(|f| frame_ref(f) < until) {
                    let t = frame_ref(&f);
                    if !recording || t < from || t >= end || actor.stalled(t) {
                        continue;
                    }
                    if let Err(e) = hub.publish("egoframes", &id, f.t_ns, codec::encode_frame(&f)) {
                        errors.push(e.to_string());
                    }
                    report.frames += 1;
                }
                let mut rtt = None;
                while next_epoch < until {
                    let t = next_epoch;
                    next_epoch += epoch;
                    // The probe RNG advances every epoch so that a device's
                    // measurements never depend on when it was recording.
                    let sample = measure_epoch(&device.clock, &probe, t, &mut probe_rng);
                    if !recording || t < from || t >= end || actor.stalled(t) {
                        continue;
                    }
                    if let Some(s) = sample {
                        if let Err(e) = hub.publish("offsets", &id, s.t_ref_ns, codec::encode_offset(&s)) {
                            errors.push(e.to_string());
                        }
                        rtt = Some(s.rtt_ns);
                    }
                }
                if recording {
                    actor.recorded_ns += end.max(from) - from;
                    if end < until {
                        actor.state = DeviceState::Failed;
                    }
                }
                actor.now = until;
                if !errors.is_empty() {
                    report.error = Some(errors.join("; "));
                }
                report.state = Some(actor.state);
                let recorded = actor.recorded_ns;
                board.update(&id, |s| {
                    s.state = actor.state;
                    s.recording = actor.state == DeviceState::Recording;
                    s.recorded_ns = recorded;
                    s.battery_pct = (100.0 - per_hour(status_model.battery_drain_pct_per_hour, recorded)).clamp(0.0, 100.0);
                    s.storage_pct = per_hour(status_model.storage_fill_pct_per_hour, recorded).clamp(0.0, 100.0);
                    if let Some(r) = rtt {
                        s.ping_ms = Some(r as f64 / NS_PER_MS as f64);
                    }
                    if report.last_gaze_t.is_some() {
                        s.last_sample_t = report.last_gaze_t;
                    }
                    if actor.state == DeviceState::Failed {
                        s.alert = Some(report.error.clone().unwrap_or_else(|| "device failed".into()));
                    }
                });
                let _ = done.send(report);
            }
        }
    }
}
