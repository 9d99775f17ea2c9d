//! Fixed-layout big-endian payloads for hub records. The record key carries
//! the source id and the record timestamp carries the sample time.

use std::sync::Arc;

use bytes::{Buf, BufMut, Bytes, BytesMut};

use super::{HubError, Record};
use crate::scenesim::{FeatureFrame, FeaturePoint, GazeSample, DESCRIPTOR_DIM};
use crate::timesync::OffsetSample;

const GAZE_LEN: usize = 8 + 8 + 1;
const POINT_LEN: usize = 4 + 8 + 8 + DESCRIPTOR_DIM;

fn short(what: &str) -> HubError {
    HubError::Codec(format!("{what} payload too short"))
}

pub fn encode_gaze(g: &GazeSample) -> Bytes {
    let mut b = BytesMut::with_capacity(GAZE_LEN);
    b.put_f64(g.x);
    b.put_f64(g.y);
    b.put_u8(g.blink as u8);
    b.freeze()
}

pub fn decode_gaze(r: &Record) -> Result<GazeSample, HubError> {
    let mut p = r.payload.clone();
    if p.remaining() != GAZE_LEN {
        return Err(short("gaze"));
    }
    Ok(GazeSample {
        device_id: r.key.clone(),
        t_device_ns: r.t_ns,
        x: p.get_f64(),
        y: p.get_f64(),
        blink: p.get_u8() != 0,
    })
}

pub fn encode_frame(f: &FeatureFrame) -> Bytes {
    let mut b = BytesMut::with_capacity(4 + POINT_LEN * f.points.len());
    b.put_u32(f.points.len() as u32);
    for p in &f.points {
        b.put_u32(p.id);
        b.put_f64(p.x);
        b.put_f64(p.y);
        for &d in &p.descriptor {
            b.put_i8(d);
        }
    }
    b.freeze()
}

pub fn decode_frame(r: &Record) -> Result<FeatureFrame, HubError> {
    let mut p = r.payload.clone();
    if p.remaining() < 4 {
        return Err(short("frame"));
    }
    let n = p.get_u32() as usize;
    if p.remaining() != n * POINT_LEN {
        return Err(short("frame"));
    }
    let points = (0..n)
        .map(|_| {
            let id = p.get_u32();
            let x = p.get_f64();
            let y = p.get_f64();
            let descriptor = std::array::from_fn(|_| p.get_i8());
            FeaturePoint { id, x, y, descriptor }
        })
        .collect();
    Ok(FeatureFrame { source_id: Arc::clone(&r.key), t_ns: r.t_ns, points })
}

pub fn encode_offset(s: &OffsetSample) -> Bytes {
    let mut b = BytesMut::with_capacity(16);
    b.put_i64(s.offset_ns);
    b.put_i64(s.rtt_ns);
    b.freeze()
}

pub fn decode_offset(r: &Record) -> Result<OffsetSample, HubError> {
    let mut p = r.payload.clone();
    if p.remaining() != 16 {
        return Err(short("offset"));
    }
    Ok(OffsetSample { t_ref_ns: r.t_ns, offset_ns: p.get_i64(), rtt_ns: p.get_i64() })
}
