use serde::{Deserialize, Serialize};

use super::SceneError;
use crate::timesync::{Nanos, NS_PER_MS, NS_PER_S};

/// Health of a frame stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamMetrics {
    pub fps: f64,
    pub jitter_mean_ms: f64,
    pub jitter_sd_ms: f64,
    pub dropped_frames: u64,
}

fn median(v: &mut [Nanos]) -> Nanos {
    v.sort_unstable();
    v[v.len() / 2]
}

/// FPS and inter-frame jitter over the trailing `window` frames; dropped
/// frames over the whole series.
///
/// The nominal interval is the median inter-frame gap. A gap longer than
/// 1.5 nominal intervals counts `round(gap / nominal) - 1` missing frames.
pub fn stream_metrics(timestamps: &[Nanos], window: usize) -> Result<StreamMetrics, SceneError> {
    if timestamps.len() < 2 {
        return Err(SceneError::TooFewTimestamps { needed: 2, got: timestamps.len() });
    }
    let mut diffs: Vec<Nanos> = timestamps.windows(2).map(|w| w[1] - w[0]).collect();
    let nominal = median(&mut diffs.clone()).max(1);
    let dropped = diffs
        .iter()
        .filter(|&&d| d as f64 > 1.5 * nominal as f64)
        .map(|&d| ((d as f64 / nominal as f64).round() as u64).saturating_sub(1))
        .sum();

    let w = window.max(2).min(timestamps.len());
    let tail = &timestamps[timestamps.len() - w..];
    let span = (tail[w - 1] - tail[0]) as f64 / NS_PER_S as f64;
    let fps = if span > 0.0 { (w - 1) as f64 / span } else { 0.0 };
    diffs.drain(..diffs.len() - (w - 1));
    let ms: Vec<f64> = diffs.iter().map(|&d| d as f64 / NS_PER_MS as f64).collect();
    let mean = ms.iter().sum::<f64>() / ms.len() as f64;
    let var = ms.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / ms.len() as f64;
    Ok(StreamMetrics {
        fps,
        jitter_mean_ms: mean,
        jitter_sd_ms: var.sqrt(),
        dropped_frames: dropped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecorderState {
    Recording,
    /// Stopped after a run of `missing` consecutive lost frames ending at `at_ns`.
    Terminated { at_ns: Nanos, missing: u64 },
}

/// Central-camera recorder that tolerates intermittent frame loss but stops
/// once `tolerance` consecutive frames have gone missing.
#[derive(Debug, Clone)]
pub struct CentralRecorder {
    nominal_ns: Nanos,
    tolerance: u64,
    last: Option<Nanos>,
    frames: Vec<Nanos>,
    state: RecorderState,
}

impl CentralRecorder {
    pub const DEFAULT_TOLERANCE: u64 = 600;

    pub fn new(rate_hz: f64, tolerance: u64) -> Self {
        Self {
            nominal_ns: (NS_PER_S as f64 / rate_hz).round() as Nanos,
            tolerance,
            last: None,
            frames: Vec::new(),
            state: RecorderState::Recording,
        }
    }

    fn missing_until(&self, t: Nanos) -> u64 {
        match self.last {
            Some(last) => (((t - last) as f64 / self.nominal_ns as f64).round() as u64).saturating_sub(1),
            None => 0,
        }
    }

    /// Records a frame arriving at `t_ns`.
    pub fn push(&mut self, t_ns: Nanos) -> RecorderState {
        if self.state != RecorderState::Recording {
            return self.state;
        }
        let missing = self.missing_until(t_ns);
        if missing >= self.tolerance {
            self.state = RecorderState::Terminated { at_ns: t_ns, missing };
            return self.state;
        }
        self.last = Some(t_ns);
        self.frames.push(t_ns);
        self.state
    }

    /// Advances the wall clock without a frame arriving.
    pub fn tick(&mut self, now_ns: Nanos) -> RecorderState {
        if self.state == RecorderState::Recording {
            // frames that should have arrived by now, strictly before `now`
            let missing = self
                .last
                .map(|last| ((now_ns - last) / self.nominal_ns).max(0) as u64)
                .unwrap_or(0);
            if missing >= self.tolerance {
                self.state = RecorderState::Terminated { at_ns: now_ns, missing };
            }
        }
        self.state
    }

    pub fn state(&self) -> RecorderState {
        self.state
    }

    pub fn frames(&self) -> &[Nanos] {
        &self.frames
    }

    pub fn metrics(&self, window: usize) -> Result<StreamMetrics, SceneError> {
        stream_metrics(&self.frames, window)
    }
}
