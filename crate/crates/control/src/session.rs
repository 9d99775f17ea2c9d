//! The supervisor. It owns simulated time, fans ticks out to the device
//! actors, publishes the central camera, watches for stalls and, once a
//! recording ends, hands the session directory to post-hoc processing.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicI64, Ordering};
use std::sync::mpsc::{self, Sender};
use std::sync::Arc;
use std::time::{Duration, Instant};

use gazemesh::scenesim::{FeatureFrame, GazeSample};
use gazemesh::streamhub::{codec, Hub, Record, SessionAnnotation, StallEvent, StallMonitor};
use gazemesh::streamhub::Session as Replay;
use gazemesh::timesync::{write_offset_log, Nanos, OffsetSample, NS_PER_MS, NS_PER_S};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, oneshot};

use crate::config::{Mode, SessionConfig};
use crate::device::{
    spawn_actor, Action, ActionResult, ActorHandle, ActorSpec, DeviceState, DeviceStatus, Msg, ScheduledFault,
    StatusBoard, TickReport,
};
use crate::live::{LiveProjector, LiveState};
use crate::posthoc::{run_posthoc, DeviceSource, ExcludedDevice, PosthocOutput, PosthocParams};
use crate::world::World;
use crate::ControlError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SESSION_DIR: &str = "session";
pub const CONFIG_FILE: &str = "config.json";
pub const DEFAULT_TRIGGER_TIMEOUT: Duration = Duration::from_secs(5);
/// Transformed points kept for the live heatmap.
pub const LIVE_HEATMAP_WINDOW_NS: Nanos = 5 * NS_PER_S;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestDevice {
    pub id: String,
    pub ego_width: u32,
    pub ego_height: u32,
    pub seat: (usize, usize),
    pub state: DeviceState,
}

/// Written next to `session/` so a recording can be processed on its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub mode: Mode,
    pub duration_ns: Nanos,
    pub central_width: u32,
    pub central_height: u32,
    pub devices: Vec<ManifestDevice>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertKind {
    Stall,
    Clear,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlertEvent {
    pub device_id: String,
    pub kind: AlertKind,
    pub t_ns: Nanos,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub last_seen_t: Option<Nanos>,
    pub message: String,
}

/// Raw ego-view gaze one device published during one tick. Times are on the
/// device clock; blink samples are left out.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GazeBatch {
    pub device_id: Arc<str>,
    pub t_ns: Vec<Nanos>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl GazeBatch {
    fn from_samples(device_id: Arc<str>, samples: &[GazeSample]) -> Self {
        let open = samples.iter().filter(|g| !g.blink);
        let mut b = GazeBatch { device_id, t_ns: Vec::new(), x: Vec::new(), y: Vec::new() };
        for g in open {
            b.t_ns.push(g.t_device_ns);
            b.x.push(g.x);
            b.y.push(g.y);
        }
        b
    }

    pub fn merge(&mut self, other: &GazeBatch) {
        self.t_ns.extend_from_slice(&other.t_ns);
        self.x.extend_from_slice(&other.x);
        self.y.extend_from_slice(&other.y);
    }
}

struct Shared {
    ids: Vec<String>,
    mailboxes: BTreeMap<String, Sender<Msg>>,
    board: Arc<StatusBoard>,
    hub: Arc<Hub>,
    now: AtomicI64,
    end: Nanos,
    finished: AtomicBool,
    live: Option<Arc<RwLock<LiveState>>>,
    gaze_tx: broadcast::Sender<Arc<GazeBatch>>,
    alert_tx: broadcast::Sender<AlertEvent>,
    timeout: Duration,
    config: SessionConfig,
}

/// Cheap, cloneable access to a running session for the API and tests.
#[derive(Clone)]
pub struct SessionHandle {
    shared: Arc<Shared>,
}

impl SessionHandle {
    pub fn device_ids(&self) -> &[String] {
        &self.shared.ids
    }

    pub fn config(&self) -> &SessionConfig {
        &self.shared.config
    }

    pub fn status(&self) -> Vec<DeviceStatus> {
        self.shared.board.all()
    }

    pub fn device_status(&self, id: &str) -> Option<DeviceStatus> {
        self.shared.board.get(id)
    }

    pub fn now_ns(&self) -> Nanos {
        self.shared.now.load(Ordering::SeqCst)
    }

    pub fn end_ns(&self) -> Nanos {
        self.shared.end
    }

    pub fn is_finished(&self) -> bool {
        self.shared.finished.load(Ordering::SeqCst)
    }

    pub fn live(&self) -> Option<Arc<RwLock<LiveState>>> {
        self.shared.live.clone()
    }

    pub fn subscribe_gaze(&self) -> broadcast::Receiver<Arc<GazeBatch>> {
        self.shared.gaze_tx.subscribe()
    }

    pub fn subscribe_alerts(&self) -> broadcast::Receiver<AlertEvent> {
        self.shared.alert_tx.subscribe()
    }

    fn send(&self, id: &str, action: Action) -> Result<oneshot::Receiver<ActionResult>, ActionResult> {
        let Some(mb) = self.shared.mailboxes.get(id) else {
            return Err(ActionResult::failed(id, action, format!("unknown device {id}")));
        };
        let (tx, rx) = oneshot::channel();
        mb.send(Msg::Command { action, reply: tx })
            .map_err(|_| ActionResult::failed(id, action, "device actor is not running"))?;
        Ok(rx)
    }

    /// Applies `action` to each device independently. Every id gets an
    /// entry; unknown ids and unresponsive actors are reported, not raised.
    pub async fn trigger(&self, action: Action, ids: &[String]) -> Vec<ActionResult> {
        let waits = ids.iter().map(|id| async move {
            let rx = match self.send(id, action) {
                Ok(rx) => rx,
                Err(r) => return r,
            };
            match tokio::time::timeout(self.shared.timeout, rx).await {
                Ok(Ok(r)) => r,
                Ok(Err(_)) => ActionResult::failed(id, action, "device actor dropped the request"),
                Err(_) => ActionResult::failed(id, action, ControlError::Timeout(id.clone()).to_string()),
            }
        });
        futures::future::join_all(waits).await
    }

    /// Blocking form of [`trigger`](Self::trigger). Safe to call from
    /// inside a runtime as well, since it does not rely on one.
    pub fn trigger_blocking(&self, action: Action, ids: &[String]) -> Vec<ActionResult> {
        let pending: Vec<_> = ids.iter().map(|id| (id, self.send(id, action))).collect();
        pending
            .into_iter()
            .map(|(id, p)| match p {
                Ok(rx) => futures::executor::block_on(rx)
                    .unwrap_or_else(|_| ActionResult::failed(id, action, "device actor dropped the request")),
                Err(r) => r,
            })
            .collect()
    }

    /// Marks the current simulated reference time with `label`.
    pub fn annotate(&self, label: &str) -> Result<SessionAnnotation, ControlError> {
        Ok(self.shared.hub.annotate(label, self.now_ns())?)
    }

    pub fn annotations(&self) -> Vec<SessionAnnotation> {
        self.shared.hub.annotations()
    }
}

/// What a finished session leaves behind.
#[derive(Debug)]
pub struct SessionArtifacts {
    pub out: Option<PathBuf>,
    pub statuses: Vec<DeviceStatus>,
    pub annotations: Vec<SessionAnnotation>,
    pub posthoc: Option<PosthocOutput>,
    pub live: Option<LiveState>,
}

pub struct Session {
    cfg: SessionConfig,
    world: Arc<World>,
    out: Option<PathBuf>,
    handle: SessionHandle,
    actors: Vec<ActorHandle>,
    central: Vec<FeatureFrame>,
    central_cursor: usize,
    scripted: Vec<(Nanos, String)>,
    scripted_cursor: usize,
    monitor: StallMonitor,
    watched: BTreeSet<Arc<str>>,
    states: BTreeMap<Arc<str>, DeviceState>,
    live: Option<LiveProjector>,
    now: Nanos,
    end: Nanos,
    tick: Nanos,
    pace: Option<(Instant, f64)>,
}

fn secs(s: f64) -> Nanos {
    (s * NS_PER_S as f64).round() as Nanos
}

impl Session {
    /// Validates `cfg`, spawns one actor per selected device and, with
    /// `autostart`, starts them all at time zero. Record and both modes
    /// need `out`.
    pub fn start(cfg: SessionConfig, out: Option<&Path>) -> Result<Self, ControlError> {
        let world = Arc::new(cfg.validate()?);
        let selected = cfg.selected(&world);
        let out = out.map(Path::to_path_buf);
        if cfg.mode.records() && out.is_none() {
            return Err(ControlError::Config("record mode needs an output directory".into()));
        }
        if let Some(dir) = &out {
            fs::create_dir_all(dir)?;
            let mut f = File::create(dir.join(CONFIG_FILE))?;
            serde_json::to_writer_pretty(&mut f, &cfg)?;
            f.write_all(b"\n")?;
        }
        let hub_cfg = cfg.hub.hub_config();
        let hub = match (&out, cfg.mode.records()) {
            (Some(dir), true) => Hub::recording(dir.join(SESSION_DIR), hub_cfg)?,
            _ => Hub::new(hub_cfg),
        };
        let hub = Arc::new(hub.with_default_topics()?);

        let ids: Vec<String> = selected.iter().map(|&i| world.devices[i].id.clone()).collect();
        let board = Arc::new(StatusBoard::new(ids.clone()));
        let mut actors = Vec::with_capacity(selected.len());
        let mut mailboxes = BTreeMap::new();
        for &i in &selected {
            let id = &world.devices[i].id;
            let faults = cfg
                .faults
                .iter()
                .filter(|f| &f.device == id)
                .map(|f| ScheduledFault { at: secs(f.at_s), kind: f.kind })
                .collect();
            let spec = ActorSpec {
                world: world.clone(),
                index: i,
                hub: hub.clone(),
                board: board.clone(),
                status_model: cfg.status,
                faults,
            };
            let actor = spawn_actor(spec)?;
            mailboxes.insert(id.clone(), actor.mailbox.clone());
            actors.push(actor);
        }

        let mut live = None;
        if cfg.mode.streams() {
            let mut params = cfg.posthoc.projection.clone();
            params.central_dims = world.scene.dims();
            live = Some(LiveProjector::new(
                &hub,
                params,
                cfg.posthoc.fit.clone(),
                cfg.live.latency_ms * NS_PER_MS,
                LIVE_HEATMAP_WINDOW_NS,
            )?);
        }
        let (gaze_tx, _) = broadcast::channel(1024);
        let (alert_tx, _) = broadcast::channel(256);
        let end = world.duration_ns() + 1;
        let shared = Shared {
            ids: ids.clone(),
            mailboxes,
            board,
            hub,
            now: AtomicI64::new(0),
            end,
            finished: AtomicBool::new(false),
            live: live.as_ref().map(LiveProjector::state),
            gaze_tx,
            alert_tx,
            timeout: DEFAULT_TRIGGER_TIMEOUT,
            config: cfg.clone(),
        };
        let mut scripted: Vec<(Nanos, String)> =
            cfg.annotations.iter().map(|a| (secs(a.at_s), a.label.clone())).collect();
        scripted.sort();
        let session = Session {
            central: world.central_frames(),
            world,
            out,
            handle: SessionHandle { shared: Arc::new(shared) },
            actors,
            central_cursor: 0,
            scripted,
            scripted_cursor: 0,
            monitor: StallMonitor::new(cfg.status.stall_threshold_ms * NS_PER_MS),
            watched: BTreeSet::new(),
            states: BTreeMap::new(),
            live,
            now: 0,
            end,
            tick: cfg.live.tick_ms * NS_PER_MS,
            pace: cfg.live.speed.map(|s| (Instant::now(), s)),
            cfg,
        };
        if session.cfg.autostart {
            for r in session.handle.trigger_blocking(Action::Start, &ids) {
                if !r.ok {
                    tracing::warn!(device = %r.device_id, "autostart failed: {:?}", r.error);
                }
            }
        }
        Ok(session)
    }

    pub fn handle(&self) -> SessionHandle {
        self.handle.clone()
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn now_ns(&self) -> Nanos {
        self.now
    }

    pub fn is_done(&self) -> bool {
        self.now >= self.end
    }

    /// Advances simulated time by one tick. Returns false once the scene
    /// has run out.
    pub fn step(&mut self) -> Result<bool, ControlError> {
        if self.is_done() {
            return Ok(false);
        }
        let from = self.now;
        let until = (from + self.tick).min(self.end);
        let hub = self.handle.shared.hub.clone();

        while let Some(f) = self.central.get(self.central_cursor).filter(|f| f.t_ns < until) {
            hub.publish("centralframes", "central", f.t_ns, codec::encode_frame(f))?;
            self.central_cursor += 1;
        }
        while let Some((t, label)) = self.scripted.get(self.scripted_cursor).filter(|a| a.0 < until) {
            hub.annotate(label, *t)?;
            self.scripted_cursor += 1;
        }

        let (done_tx, done_rx) = mpsc::channel();
        for a in &self.actors {
            let _ = a.mailbox.send(Msg::Tick { from, until, done: done_tx.clone() });
        }
        drop(done_tx);
        let mut reports: Vec<TickReport> = done_rx.iter().collect();
        reports.sort_by(|a, b| a.device_id.cmp(&b.device_id));
        for r in &reports {
            self.observe(r, from);
        }
        let board = &self.handle.shared.board;
        for ev in self.monitor.check(until) {
            match ev {
                StallEvent::Alert { key, last_seen_t, at_ns } => {
                    let message = format!("no data for {} ms", (at_ns - last_seen_t) / NS_PER_MS);
                    board.update(&key, |s| s.alert = Some(message.clone()));
                    self.alert(AlertEvent {
                        device_id: key,
                        kind: AlertKind::Stall,
                        t_ns: at_ns,
                        last_seen_t: Some(last_seen_t),
                        message,
                    });
                }
                StallEvent::Clear { .. } => {}
            }
        }
        if let Some(live) = self.live.as_mut() {
            live.advance(until)?;
        }
        self.now = until;
        self.handle.shared.now.store(until, Ordering::SeqCst);
        if let Some((start, speed)) = self.pace {
            let due = start + Duration::from_secs_f64(until as f64 / NS_PER_S as f64 / speed);
            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                std::thread::sleep(wait);
            }
        }
        Ok(!self.is_done())
    }

    fn alert(&self, ev: AlertEvent) {
        tracing::info!(device = %ev.device_id, kind = ?ev.kind, "{}", ev.message);
        let _ = self.handle.shared.alert_tx.send(ev);
    }

    fn observe(&mut self, r: &TickReport, from: Nanos) {
        let id = &r.device_id;
        let board = self.handle.shared.board.clone();
        let state = r.state.unwrap_or(DeviceState::Idle);
        let prev = self.states.insert(id.clone(), state);
        if let Some(e) = &r.error {
            tracing::warn!(device = %id, "publish failed: {e}");
            board.update(id, |s| s.alert = Some(e.clone()));
        }
        if state == DeviceState::Failed && prev != Some(DeviceState::Failed) {
            self.alert(AlertEvent {
                device_id: id.to_string(),
                kind: AlertKind::Failed,
                t_ns: r.last_gaze_t.unwrap_or(from),
                last_seen_t: r.last_gaze_t,
                message: "device failed".into(),
            });
        }
        if state == DeviceState::Recording {
            if self.watched.insert(id.clone()) {
                self.monitor.observe(id, from);
            }
            if let Some(t) = r.last_gaze_t {
                if let Some(StallEvent::Clear { at_ns, .. }) = self.monitor.observe(id, t) {
                    board.update(id, |s| s.alert = None);
                    self.alert(AlertEvent {
                        device_id: id.to_string(),
                        kind: AlertKind::Clear,
                        t_ns: at_ns,
                        last_seen_t: None,
                        message: "data flowing again".into(),
                    });
                }
            }
        } else if self.watched.remove(id) {
            let was_alerting = self.monitor.alerting().contains(&&**id);
            self.monitor.forget(id);
            if was_alerting && state != DeviceState::Failed {
                board.update(id, |s| s.alert = None);
            }
        }
        if !r.gaze.is_empty() && self.handle.shared.gaze_tx.receiver_count() > 0 {
            let _ = self.handle.shared.gaze_tx.send(Arc::new(GazeBatch::from_samples(id.clone(), &r.gaze)));
        }
    }

    pub fn run_to_end(&mut self) -> Result<(), ControlError> {
        while self.step()? {}
        Ok(())
    }

    /// Stops every actor, seals the hub and runs post-hoc processing on the
    /// recording when there is one.
    pub fn finish(mut self) -> Result<SessionArtifacts, ControlError> {
        for a in &self.actors {
            let _ = a.mailbox.send(Msg::Shutdown);
        }
        for a in &mut self.actors {
            if let Some(t) = a.thread.take() {
                t.join().map_err(|_| ControlError::Runtime("a device actor panicked".into()))?;
            }
        }
        let shared = self.handle.shared.clone();
        shared.finished.store(true, Ordering::SeqCst);
        let statuses = shared.board.all();
        if let Some(live) = self.live.as_mut() {
            live.flush()?;
        }
        shared.hub.close_all();
        shared.hub.sync()?;

        let live = shared.live.as_ref().map(|l| l.read().clone());
        let mut posthoc = None;
        if let Some(dir) = &self.out {
            let manifest = Manifest {
                seed: self.cfg.seed,
                mode: self.cfg.mode,
                duration_ns: self.world.duration_ns(),
                central_width: self.world.scene.central_width,
                central_height: self.world.scene.central_height,
                devices: statuses
                    .iter()
                    .map(|s| {
                        let d = &self.world.devices[self.world.device_index(&s.device_id).expect("selected device")];
                        ManifestDevice {
                            id: d.id.clone(),
                            ego_width: d.ego_width,
                            ego_height: d.ego_height,
                            seat: (d.seat.row, d.seat.col),
                            state: s.state,
                        }
                    })
                    .collect(),
            };
            let mut f = File::create(dir.join(MANIFEST_FILE))?;
            serde_json::to_writer_pretty(&mut f, &manifest)?;
            f.write_all(b"\n")?;
            if let Some(l) = &live {
                write_live(dir, l)?;
            }
            if self.cfg.mode.records() {
                let out = posthoc_from_dir(dir, &self.cfg.posthoc)?;
                crate::posthoc::write_posthoc(dir, &out, &self.cfg.posthoc.analysis)?;
                posthoc = Some(out);
            }
        }
        Ok(SessionArtifacts {
            out: self.out.clone(),
            statuses,
            annotations: shared.hub.annotations(),
            posthoc,
            live,
        })
    }
}

fn write_live(dir: &Path, live: &LiveState) -> Result<(), ControlError> {
    let ldir = dir.join("live");
    fs::create_dir_all(&ldir)?;
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(ldir.join("collective.csv"))?));
    for c in &live.collective {
        w.serialize(c)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs a whole session unpaced and returns what it produced.
pub fn run_session(cfg: SessionConfig, out: Option<&Path>) -> Result<SessionArtifacts, ControlError> {
    let mut s = Session::start(cfg, out)?;
    s.run_to_end()?;
    s.finish()
}

/// A persisted session and its manifest.
pub struct Recording {
    pub manifest: Manifest,
    pub replay: Replay,
}

pub fn load_recording(dir: &Path) -> Result<Recording, ControlError> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))
        .map_err(|e| ControlError::Runtime(format!("{}: {e}", dir.join(MANIFEST_FILE).display())))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let replay = Replay::load(dir.join(SESSION_DIR))?;
    Ok(Recording { manifest, replay })
}

impl Recording {
    /// Records of `topic` with `key`, in publish order.
    pub fn records(&self, topic: &str, key: &str) -> Vec<&Record> {
        self.replay
            .topics
            .get(topic)
            .map(|parts| parts.iter().flatten().filter(|r| &*r.key == key).collect())
            .unwrap_or_default()
    }

    pub fn gaze(&self, id: &str) -> Result<Vec<GazeSample>, ControlError> {
        Ok(self.records("gaze", id).into_iter().map(codec::decode_gaze).collect::<Result<_, _>>()?)
    }

    pub fn ego_frames(&self, id: &str) -> Result<Vec<FeatureFrame>, ControlError> {
        Ok(self.records("egoframes", id).into_iter().map(codec::decode_frame).collect::<Result<_, _>>()?)
    }

    pub fn offsets(&self, id: &str) -> Result<Vec<OffsetSample>, ControlError> {
        Ok(self.records("offsets", id).into_iter().map(codec::decode_offset).collect::<Result<_, _>>()?)
    }

    pub fn central_frames(&self) -> Result<Vec<FeatureFrame>, ControlError> {
        Ok(self.records("centralframes", "central").into_iter().map(codec::decode_frame).collect::<Result<_, _>>()?)
    }
}

/// Loads the recording under `dir`, writes `offsets/<id>.csv` and runs the
/// full post-hoc pipeline over every device that finished cleanly.
pub fn posthoc_from_dir(dir: &Path, params: &PosthocParams) -> Result<PosthocOutput, ControlError> {
    let rec = load_recording(dir)?;
    let odir = dir.join("offsets");
    fs::create_dir_all(&odir)?;
    let mut sources = Vec::new();
    let mut excluded = Vec::new();
    for d in &rec.manifest.devices {
        let offsets = rec.offsets(&d.id)?;
        write_offset_log(BufWriter::new(File::create(odir.join(format!("{}.csv", d.id)))?), &offsets)?;
        let reason = match d.state {
            DeviceState::Failed => Some("device failed during the session"),
            DeviceState::Cancelled => Some("recording cancelled"),
            _ => None,
        };
        if let Some(reason) = reason {
            excluded.push(ExcludedDevice { device_id: Arc::from(d.id.as_str()), reason: reason.into() });
            continue;
        }
        sources.push(DeviceSource {
            id: Arc::from(d.id.as_str()),
            gaze: rec.gaze(&d.id)?,
            ego_frames: Box::new(rec.ego_frames(&d.id)?.into_iter()),
            offsets,
            ego_dims: gazemesh::geometry::Dims::new(d.ego_width, d.ego_height),
            seat: Some(d.seat),
        });
    }
    let central = rec.central_frames()?;
    let dims = gazemesh::geometry::Dims::new(rec.manifest.central_width, rec.manifest.central_height);
    let mut out = run_posthoc(sources, &central, dims, params)?;
    excluded.append(&mut out.excluded);
    excluded.sort_by(|a, b| a.device_id.cmp(&b.device_id));
    out.excluded = excluded;
    Ok(out)
}
