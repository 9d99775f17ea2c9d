use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use bytes::{Buf, BufMut, Bytes, BytesMut};

use super::{HubError, Record, SessionAnnotation, MAX_PAYLOAD};
use crate::timesync::Nanos;

const HEADER: usize = 4 + 8 + 2;

/// Writes one record in segment layout with a single `write_all`.
pub fn write_record<W: Write>(w: &mut W, key: &str, t_ns: Nanos, payload: &[u8]) -> std::io::Result<()> {
    let mut buf = BytesMut::with_capacity(HEADER + key.len() + payload.len());
    buf.put_u32(payload.len() as u32);
    buf.put_i64(t_ns);
    buf.put_u16(key.len() as u16);
    buf.put_slice(key.as_bytes());
    buf.put_slice(payload);
    w.write_all(&buf)
}

/// Records decoded from one segment, and the offset of the first record that
/// could not be decoded, if any.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentRead {
    pub records: Vec<Record>,
    pub corrupt_at: Option<u64>,
}

pub fn read_segment(path: &Path, topic: &str, partition: u32) -> Result<SegmentRead, HubError> {
    let mut data = Bytes::from(fs::read(path)?);
    let topic: Arc<str> = Arc::from(topic);
    let mut records = Vec::new();
    let mut offset = 0u64;
    while data.has_remaining() {
        if data.remaining() < HEADER {
            return Ok(SegmentRead { records, corrupt_at: Some(offset) });
        }
        let mut head = data.slice(..HEADER);
        let len = head.get_u32() as usize;
        let t_ns = head.get_i64();
        let klen = head.get_u16() as usize;
        if len > MAX_PAYLOAD || data.remaining() < HEADER + klen + len {
            return Ok(SegmentRead { records, corrupt_at: Some(offset) });
        }
        data.advance(HEADER);
        let key_bytes = data.split_to(klen);
        let Ok(key) = std::str::from_utf8(&key_bytes) else {
            return Ok(SegmentRead { records, corrupt_at: Some(offset) });
        };
        let payload = data.split_to(len);
        records.push(Record { topic: topic.clone(), partition, offset, key: Arc::from(key), t_ns, payload });
        offset += 1;
    }
    Ok(SegmentRead { records, corrupt_at: None })
}

/// A persisted session read back from disk.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Session {
    /// Topic name to partitions, each in offset order.
    pub topics: BTreeMap<String, Vec<Vec<Record>>>,
    pub annotations: Vec<SessionAnnotation>,
}

impl Session {
    /// Reads every `<topic>/<partition>.log` under `dir`. The first segment
    /// that fails to decode aborts the load with its first bad offset.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, HubError> {
        let dir = dir.as_ref();
        let mut topics = BTreeMap::new();
        let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        entries.sort();
        for tdir in entries {
            let name = tdir.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let mut segs: Vec<(u32, PathBuf)> = fs::read_dir(&tdir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter_map(|p| {
                    let stem = p.file_stem()?.to_str()?.parse::<u32>().ok()?;
                    (p.extension()? == "log").then_some((stem, p))
                })
                .collect();
            if segs.is_empty() {
                continue;
            }
            segs.sort();
            let n = segs.last().map_or(0, |s| s.0 as usize + 1);
            let mut parts = vec![Vec::new(); n];
            for (p, path) in segs {
                let read = read_segment(&path, &name, p)?;
                if let Some(offset) = read.corrupt_at {
                    return Err(HubError::CorruptSegment { path, offset });
                }
                parts[p as usize] = read.records;
            }
            topics.insert(name, parts);
        }
        let mut annotations = Vec::new();
        let ann = dir.join("annotations.jsonl");
        if ann.exists() {
            for line in BufReader::new(fs::File::open(ann)?).lines() {
                let line = line?;
                if !line.trim().is_empty() {
                    annotations.push(serde_json::from_str(&line)?);
                }
            }
        }
        Ok(Self { topics, annotations })
    }

    /// All records of a topic merged by (t_ns, partition, offset).
    pub fn merged(&self, topic: &str) -> Vec<&Record> {
        let mut v: Vec<&Record> = self.topics.get(topic).into_iter().flatten().flatten().collect();
        v.sort_by_key(|r| (r.t_ns, r.partition, r.offset));
        v
    }

    pub fn record_count(&self, topic: &str) -> usize {
        self.topics.get(topic).map_or(0, |p| p.iter().map(Vec::len).sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::streamhub::{Hub, HubConfig, TopicConfig};
    use std::fs::OpenOptions;

    fn recorded(dir: &Path, n: usize) -> Vec<Record> {
        let hub = Hub::recording(dir, HubConfig::default()).unwrap();
        hub.create_topic("gaze", TopicConfig { partitions: 2, ..Default::default() }).unwrap();
        for i in 0..n {
            hub.publish("gaze", &format!("d{}", i % 3), i as i64 * 5, vec![i as u8; i + 1]).unwrap();
        }
        hub.annotate("start", 3).unwrap();
        hub.consume("gaze", "all", None).unwrap().map(|r| (*r).clone()).collect()
    }

    #[test]
    fn layout_is_length_prefixed_big_endian() {
        let mut buf = Vec::new();
        write_record(&mut buf, "ab", 0x0102, &[9, 8, 7]).unwrap();
        assert_eq!(buf, [0, 0, 0, 3, 0, 0, 0, 0, 0, 0, 1, 2, 0, 2, b'a', b'b', 9, 8, 7]);
    }

    #[test]
    fn ten_records_replay_identically() {
        let dir = tempfile::tempdir().unwrap();
        let live = recorded(dir.path(), 10);
        let s = Session::load(dir.path()).unwrap();
        let replayed: Vec<Record> = s.topics["gaze"].iter().flatten().cloned().collect();
        assert_eq!(replayed, live);
        assert_eq!(s.annotations, vec![SessionAnnotation { label: "start".into(), t_ref: 3 }]);
        assert_eq!(s.record_count("gaze"), 10);
        assert_eq!(Session::load(dir.path()).unwrap(), s);
        assert!(dir.path().join("gaze/0.log").exists());
        let ann = fs::read_to_string(dir.path().join("annotations.jsonl")).unwrap();
        assert_eq!(ann, "{\"label\":\"start\",\"t_ns\":3}\n");
    }

    #[test]
    fn truncation_reports_first_bad_offset() {
        let dir = tempfile::tempdir().unwrap();
        recorded(dir.path(), 12);
        let seg = dir.path().join("gaze/0.log");
        let intact = read_segment(&seg, "gaze", 0).unwrap().records;
        let len = fs::metadata(&seg).unwrap().len();
        OpenOptions::new().write(true).open(&seg).unwrap().set_len(len - 2).unwrap();
        let read = read_segment(&seg, "gaze", 0).unwrap();
        let bad = intact.len() as u64 - 1;
        assert_eq!(read.corrupt_at, Some(bad));
        assert_eq!(read.records[..], intact[..bad as usize]);
        match Session::load(dir.path()) {
            Err(HubError::CorruptSegment { offset, .. }) => assert_eq!(offset, bad),
            other => panic!("{other:?}"),
        }
    }
}
