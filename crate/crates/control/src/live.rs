//! Incremental projection over the ring-buffered hub topics.
//!
//! The projector trails the newest data by a fixed latency so that every
//! central frame it emits has its neighbouring gaze samples and ego-frame
//! homographies in hand. Per-frame RANSAC seeds follow the same scheme as
//! the post-hoc batch, so both paths agree wherever their clock fits agree.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use gazemesh::analysis::{collective_series, heatmap, CollectiveFrame, HeatmapGrid};
use gazemesh::geometry::{Dims, Point};
use gazemesh::projection::{estimate_frame_homographies, project_device, FrameHomography, ProjectionParams, TransformedGaze};
use gazemesh::scenesim::{FeatureFrame, GazeSample};
use gazemesh::streamhub::{codec, Consumer, Hub, Record};
use gazemesh::timesync::{map_timestamp, FitParams, Nanos, OffsetSample, TimeMap, NS_PER_S};
use parking_lot::RwLock;
use serde::Serialize;

use crate::posthoc::fit_or_constant;
use crate::ControlError;

const GROUP: &str = "live";
/// How much history the projector keeps for pairing and homography lookup.
const KEEP_NS: Nanos = NS_PER_S;

/// What the API reads: metric history and a window of recent points.
#[derive(Debug, Clone)]
pub struct LiveState {
    pub collective: Vec<CollectiveFrame>,
    pub recent: VecDeque<TransformedGaze>,
    pub transformed_total: usize,
    /// Reference time up to which central frames have been projected.
    pub projected_until: Nanos,
    pub dims: Dims,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CollectiveSeries {
    pub t_ns: Vec<Nanos>,
    pub sd_x: Vec<f64>,
    pub sd_y: Vec<f64>,
    pub contour_area: Vec<f64>,
    pub points_in_frame: Vec<usize>,
}

impl LiveState {
    pub fn series(&self, from: Option<Nanos>, to: Option<Nanos>) -> CollectiveSeries {
        let mut s = CollectiveSeries::default();
        let lo = from.unwrap_or(Nanos::MIN);
        let hi = to.unwrap_or(Nanos::MAX);
        for c in self.collective.iter().filter(|c| c.t_ns >= lo && c.t_ns <= hi) {
            s.t_ns.push(c.t_ns);
            s.sd_x.push(c.sd_x);
            s.sd_y.push(c.sd_y);
            s.contour_area.push(c.contour_area);
            s.points_in_frame.push(c.in_frame);
        }
        s
    }

    /// Heatmap of the transformed points of the last `window_ns`.
    pub fn heatmap(&self, window_ns: Nanos, sigma_px: f64, cell_px: u32) -> Result<HeatmapGrid, ControlError> {
        let since = self.projected_until - window_ns;
        let pts: Vec<Point> = self.recent.iter().filter(|g| g.t_ref_ns >= since).map(|g| g.point()).collect();
        Ok(heatmap(&pts, self.dims, sigma_px, cell_px)?)
    }
}

#[derive(Default)]
struct LiveDevice {
    offsets: Vec<OffsetSample>,
    map: Option<TimeMap>,
    refit: bool,
    gaze: VecDeque<GazeSample>,
    pending: VecDeque<FeatureFrame>,
    homs: VecDeque<FrameHomography>,
    frames_seen: u64,
}

pub struct LiveProjector {
    params: ProjectionParams,
    fit: FitParams,
    latency: Nanos,
    recent_window: Nanos,
    gaze: Consumer,
    frames: Consumer,
    offsets: Consumer,
    central_in: Consumer,
    central: VecDeque<FeatureFrame>,
    devices: BTreeMap<Arc<str>, LiveDevice>,
    done_until: Nanos,
    state: Arc<RwLock<LiveState>>,
}

fn drain(c: &Consumer) -> Vec<Arc<Record>> {
    let mut out = Vec::new();
    loop {
        let batch = c.poll(4096);
        if batch.is_empty() {
            return out;
        }
        out.extend(batch);
    }
}

impl LiveProjector {
    pub fn new(
        hub: &Hub,
        params: ProjectionParams,
        fit: FitParams,
        latency: Nanos,
        recent_window: Nanos,
    ) -> Result<Self, ControlError> {
        let dims = params.central_dims;
        Ok(Self {
            gaze: hub.consumer("gaze", GROUP)?,
            frames: hub.consumer("egoframes", GROUP)?,
            offsets: hub.consumer("offsets", GROUP)?,
            central_in: hub.consumer("centralframes", GROUP)?,
            params,
            fit,
            latency,
            recent_window,
            central: VecDeque::new(),
            devices: BTreeMap::new(),
            done_until: Nanos::MIN,
            state: Arc::new(RwLock::new(LiveState {
                collective: Vec::new(),
                recent: VecDeque::new(),
                transformed_total: 0,
                projected_until: 0,
                dims,
            })),
        })
    }

    pub fn state(&self) -> Arc<RwLock<LiveState>> {
        self.state.clone()
    }

    fn device(&mut self, key: &Arc<str>) -> &mut LiveDevice {
        self.devices.entry(key.clone()).or_default()
    }

    fn ingest(&mut self) -> Result<(), ControlError> {
        for r in drain(&self.offsets) {
            let s = codec::decode_offset(&r)?;
            let d = self.device(&r.key);
            d.offsets.push(s);
            d.refit = true;
        }
        for r in drain(&self.central_in) {
            self.central.push_back(codec::decode_frame(&r)?);
        }
        for r in drain(&self.frames) {
            let f = codec::decode_frame(&r)?;
            self.device(&r.key).pending.push_back(f);
        }
        for r in drain(&self.gaze) {
            let g = codec::decode_gaze(&r)?;
            self.device(&r.key).gaze.push_back(g);
        }
        for (id, d) in &mut self.devices {
            if d.refit {
                d.refit = false;
                match fit_or_constant(&d.offsets, &self.fit) {
                    Ok(m) => d.map = Some(m),
                    Err(e) => tracing::debug!(device = %id, "live clock fit failed: {e}"),
                }
            }
        }
        Ok(())
    }

    /// Projects everything that is at least `latency` old at `now`.
    pub fn advance(&mut self, now: Nanos) -> Result<usize, ControlError> {
        let ego_ready = now.saturating_sub(self.latency / 2);
        let target = now.saturating_sub(self.latency);
        self.project(ego_ready, target)
    }

    /// Projects everything left, for the end of a session.
    pub fn flush(&mut self) -> Result<usize, ControlError> {
        self.project(Nanos::MAX, Nanos::MAX)
    }

    fn project(&mut self, ego_ready: Nanos, target: Nanos) -> Result<usize, ControlError> {
        self.ingest()?;
        let central = self.central.make_contiguous();
        let times: Vec<Nanos> =
            central.iter().map(|f| f.t_ns).filter(|&t| t >= self.done_until && t < target).collect();
        let mut out = Vec::new();
        for (id, d) in &mut self.devices {
            let Some(map) = d.map.as_ref() else { continue };
            while d.pending.front().is_some_and(|f| map_timestamp(map, f.t_ns) < ego_ready) {
                let f = d.pending.pop_front().expect("front checked");
                let mut p = self.params.clone();
                p.ransac.seed ^= d.frames_seen;
                d.frames_seen += 1;
                d.homs.extend(estimate_frame_homographies(id, std::iter::once(f), central, map, &p));
            }
            if times.is_empty() {
                continue;
            }
            let gaze = d.gaze.make_contiguous();
            let homs = d.homs.make_contiguous();
            out.extend(project_device(id, gaze, homs, map, &times, &self.params).gaze);
            let horizon = times[times.len() - 1].saturating_sub(KEEP_NS);
            while d.gaze.front().is_some_and(|g| map_timestamp(map, g.t_device_ns) < horizon) {
                d.gaze.pop_front();
            }
            while d.homs.front().is_some_and(|h| h.t_ref_ns < horizon) {
                d.homs.pop_front();
            }
        }
        if let Some(&last) = times.last() {
            self.done_until = last + 1;
            let horizon = last.saturating_sub(KEEP_NS);
            while self.central.front().is_some_and(|f| f.t_ns < horizon) {
                self.central.pop_front();
            }
        }
        out.sort_by(|a, b| (a.t_ref_ns, &a.device_id).cmp(&(b.t_ref_ns, &b.device_id)));
        let n = out.len();
        let mut st = self.state.write();
        let dims = st.dims;
        let frames = collective_series(&out, dims);
        st.collective.extend(frames);
        st.transformed_total += n;
        if let Some(&last) = times.last() {
            st.projected_until = last;
        }
        st.recent.extend(out);
        let since = st.projected_until.saturating_sub(self.recent_window);
        while st.recent.front().is_some_and(|g| g.t_ref_ns < since) {
            st.recent.pop_front();
        }
        Ok(n)
    }
}
