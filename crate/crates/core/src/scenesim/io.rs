//! JSON-lines logs for simulated gaze, frames and ground truth.

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{FeatureFrame, GazeSample, GazeTrace, SceneError, SimDevice};
use crate::geometry::{Homography, Point};
use crate::timesync::Nanos;

pub fn write_jsonl<W: Write, T: Serialize>(mut w: W, items: impl IntoIterator<Item = T>) -> Result<(), SceneError> {
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<R: BufRead, T: DeserializeOwned>(r: R) -> Result<Vec<T>, SceneError> {
    r.lines()
        .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
        .map(|l| Ok(serde_json::from_str(&l?)?))
        .collect()
}

pub fn write_gaze_log<W: Write>(w: W, samples: &[GazeSample]) -> Result<(), SceneError> {
    write_jsonl(w, samples)
}

pub fn write_frame_log<W: Write>(w: W, frames: impl IntoIterator<Item = FeatureFrame>) -> Result<(), SceneError> {
    write_jsonl(w, frames)
}

/// One ground-truth sidecar line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TruthRecord {
    Homography {
        device_id: String,
        h_true: [[f64; 3]; 3],
    },
    Gaze {
        device_id: String,
        t_ref_ns: Nanos,
        target: usize,
        x: f64,
        y: f64,
    },
}

impl TruthRecord {
    pub fn homography(d: &SimDevice) -> Self {
        TruthRecord::Homography { device_id: d.id.clone(), h_true: d.true_homography.rows() }
    }

    pub fn h_true(&self) -> Option<Homography> {
        match self {
            TruthRecord::Homography { h_true, .. } => Homography::from_rows(*h_true).ok(),
            _ => None,
        }
    }

    pub fn gaze<'a>(device_id: &str, trace: &'a GazeTrace) -> impl Iterator<Item = TruthRecord> + 'a {
        let id = device_id.to_string();
        trace.truth.iter().map(move |t| TruthRecord::Gaze {
            device_id: id.clone(),
            t_ref_ns: t.t_ref_ns,
            target: t.target,
            x: t.central.x,
            y: t.central.y,
        })
    }

    pub fn central_point(&self) -> Option<Point> {
        match self {
            TruthRecord::Gaze { x, y, .. } => Some(Point::new(*x, *y)),
            _ => None,
        }
    }
}
