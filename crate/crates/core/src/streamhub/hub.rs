use std::collections::{HashMap, VecDeque};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use bytes::Bytes;
use parking_lot::{Condvar, Mutex, RwLock};
use serde::{Deserialize, Serialize};

use super::segment::{write_record, Session};
use super::{HubError, SessionAnnotation};
use crate::rng::fnv1a;
use crate::timesync::Nanos;

pub const DEFAULT_PARTITIONS: usize = 6;
pub const MAX_PAYLOAD: usize = 1 << 20;
pub const DEFAULT_TOPICS: [&str; 5] = ["gaze", "egoframes", "centralframes", "offsets", "annotations"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Retention {
    Unbounded,
    /// Keep at most this many records per partition, evicting the oldest.
    Ring(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopicConfig {
    pub partitions: usize,
    pub retention: Retention,
}

impl Default for TopicConfig {
    fn default() -> Self {
        Self { partitions: DEFAULT_PARTITIONS, retention: Retention::Unbounded }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HubConfig {
    pub payload_limit: usize,
    pub default_topic: TopicConfig,
}

impl Default for HubConfig {
    fn default() -> Self {
        Self { payload_limit: MAX_PAYLOAD, default_topic: TopicConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub topic: Arc<str>,
    pub partition: u32,
    pub offset: u64,
    pub key: Arc<str>,
    pub t_ns: Nanos,
    pub payload: Bytes,
}

pub fn partition_for(key: &str, partitions: usize) -> u32 {
    (fnv1a(key.as_bytes()) % partitions.max(1) as u64) as u32
}

/// Orders records from several partitions by (t_ns, partition, offset).
pub fn merge_by_time(mut records: Vec<Arc<Record>>) -> Vec<Arc<Record>> {
    records.sort_by_key(|r| (r.t_ns, r.partition, r.offset));
    records
}

struct PartitionLog {
    base: u64,
    records: VecDeque<Arc<Record>>,
    file: Option<File>,
}

impl PartitionLog {
    fn tail(&self) -> u64 {
        self.base + self.records.len() as u64
    }
}

struct Topic {
    name: Arc<str>,
    config: TopicConfig,
    partitions: Vec<Mutex<PartitionLog>>,
    groups: Mutex<HashMap<String, Arc<Mutex<Vec<u64>>>>>,
    signal: Mutex<u64>,
    cond: Condvar,
    closed: AtomicBool,
    published: AtomicU64,
    evicted: AtomicU64,
}

impl Topic {
    fn notify(&self) {
        *self.signal.lock() += 1;
        self.cond.notify_all();
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicStats {
    pub name: String,
    pub published: u64,
    pub evicted: u64,
    /// (earliest retained offset, tail) per partition.
    pub partitions: Vec<(u64, u64)>,
}

/// The broker. Cheap to share behind an `Arc`.
pub struct Hub {
    config: HubConfig,
    dir: Option<PathBuf>,
    topics: RwLock<HashMap<String, Arc<Topic>>>,
    annotations: Mutex<(Vec<SessionAnnotation>, Option<File>)>,
}

impl Hub {
    /// Memory-only hub.
    pub fn new(config: HubConfig) -> Self {
        Self { config, dir: None, topics: RwLock::new(HashMap::new()), annotations: Mutex::new((Vec::new(), None)) }
    }

    /// Hub persisting every record under `dir`, which is created if needed.
    pub fn recording(dir: impl AsRef<Path>, config: HubConfig) -> Result<Self, HubError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let ann = File::create(dir.join("annotations.jsonl"))?;
        Ok(Self {
            config,
            dir: Some(dir),
            topics: RwLock::new(HashMap::new()),
            annotations: Mutex::new((Vec::new(), Some(ann))),
        })
    }

    /// Memory-only hub pre-loaded with a replayed session.
    pub fn from_session(session: &Session, config: HubConfig) -> Result<Self, HubError> {
        let hub = Self::new(config);
        for (name, parts) in &session.topics {
            let tc = TopicConfig { partitions: parts.len().max(1), retention: Retention::Unbounded };
            hub.create_topic(name, tc)?;
            let topic = hub.topic(name)?;
            for (p, recs) in parts.iter().enumerate() {
                let mut log = topic.partitions[p].lock();
                for r in recs {
                    let mut r = r.clone();
                    r.topic = topic.name.clone();
                    log.records.push_back(Arc::new(r));
                }
                topic.published.fetch_add(recs.len() as u64, Ordering::Relaxed);
            }
        }
        hub.annotations.lock().0 = session.annotations.clone();
        Ok(hub)
    }

    pub fn session_dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn with_default_topics(self) -> Result<Self, HubError> {
        for t in DEFAULT_TOPICS {
            self.create_topic(t, self.config.default_topic)?;
        }
        Ok(self)
    }

    pub fn create_topic(&self, name: &str, config: TopicConfig) -> Result<(), HubError> {
        if config.partitions == 0 {
            return Err(HubError::InvalidConfig("partitions must be >= 1".into()));
        }
        if matches!(config.retention, Retention::Ring(0)) {
            return Err(HubError::InvalidConfig("ring size must be >= 1".into()));
        }
        if name.is_empty() || name.contains(['/', '\\']) || name == ".." || name == "." {
            return Err(HubError::InvalidConfig(format!("bad topic name {name:?}")));
        }
        let mut topics = self.topics.write();
        if topics.contains_key(name) {
            return Err(HubError::TopicExists(name.to_string()));
        }
        let mut partitions = Vec::with_capacity(config.partitions);
        for p in 0..config.partitions {
            let file = match &self.dir {
                Some(dir) => {
                    let tdir = dir.join(name);
                    fs::create_dir_all(&tdir)?;
                    Some(OpenOptions::new().create(true).write(true).truncate(true).open(tdir.join(format!("{p}.log")))?)
                }
                None => None,
            };
            partitions.push(Mutex::new(PartitionLog { base: 0, records: VecDeque::new(), file }));
        }
        topics.insert(
            name.to_string(),
            Arc::new(Topic {
                name: Arc::from(name),
                config,
                partitions,
                groups: Mutex::new(HashMap::new()),
                signal: Mutex::new(0),
                cond: Condvar::new(),
                closed: AtomicBool::new(false),
                published: AtomicU64::new(0),
                evicted: AtomicU64::new(0),
            }),
        );
        Ok(())
    }

    fn topic(&self, name: &str) -> Result<Arc<Topic>, HubError> {
        self.topics.read().get(name).cloned().ok_or_else(|| HubError::UnknownTopic(name.to_string()))
    }

    pub fn topic_names(&self) -> Vec<String> {
        let mut v: Vec<String> = self.topics.read().keys().cloned().collect();
        v.sort();
        v
    }

    pub fn partitions(&self, topic: &str) -> Result<usize, HubError> {
        Ok(self.topic(topic)?.config.partitions)
    }

    /// Appends a record to the key's partition and returns (partition, offset).
    /// With a session directory the record is written to its segment first.
    pub fn publish(
        &self,
        topic: &str,
        key: &str,
        t_ns: Nanos,
        payload: impl Into<Bytes>,
    ) -> Result<(u32, u64), HubError> {
        let payload: Bytes = payload.into();
        if payload.len() > self.config.payload_limit {
            return Err(HubError::PayloadTooLarge { size: payload.len(), limit: self.config.payload_limit });
        }
        if key.len() > u16::MAX as usize {
            return Err(HubError::KeyTooLong);
        }
        let t = self.topic(topic)?;
        let p = partition_for(key, t.config.partitions);
        let offset = {
            let mut log = t.partitions[p as usize].lock();
            if let Some(f) = log.file.as_mut() {
                write_record(f, key, t_ns, &payload)?;
            }
            let offset = log.tail();
            log.records.push_back(Arc::new(Record {
                topic: t.name.clone(),
                partition: p,
                offset,
                key: Arc::from(key),
                t_ns,
                payload,
            }));
            if let Retention::Ring(cap) = t.config.retention {
                while log.records.len() > cap {
                    log.records.pop_front();
                    log.base += 1;
                    t.evicted.fetch_add(1, Ordering::Relaxed);
                }
            }
            offset
        };
        t.published.fetch_add(1, Ordering::Relaxed);
        t.notify();
        Ok((p, offset))
    }

    /// Marks a topic finished; blocked consumers wake and drain.
    pub fn close(&self, topic: &str) -> Result<(), HubError> {
        let t = self.topic(topic)?;
        t.closed.store(true, Ordering::SeqCst);
        t.notify();
        Ok(())
    }

    pub fn close_all(&self) {
        for t in self.topics.read().values() {
            t.closed.store(true, Ordering::SeqCst);
            t.notify();
        }
    }

    /// Consumer handle for `group`; handles of one group share positions.
    pub fn consumer(&self, topic: &str, group: &str) -> Result<Consumer, HubError> {
        let t = self.topic(topic)?;
        let positions = t
            .groups
            .lock()
            .entry(group.to_string())
            .or_insert_with(|| Arc::new(Mutex::new(vec![0; t.config.partitions])))
            .clone();
        Ok(Consumer { topic: t, positions, next_partition: Mutex::new(0) })
    }

    /// Everything currently available to `group`, optionally after seeking
    /// every partition to `from_offset`. Partitions are yielded in index
    /// order, each in offset order.
    pub fn consume(
        &self,
        topic: &str,
        group: &str,
        from_offset: Option<u64>,
    ) -> Result<std::vec::IntoIter<Arc<Record>>, HubError> {
        let c = self.consumer(topic, group)?;
        if let Some(o) = from_offset {
            c.seek(o);
        }
        let mut out = Vec::new();
        for p in 0..c.topic.partitions.len() {
            out.extend(c.poll_partition(p, usize::MAX));
        }
        Ok(out.into_iter())
    }

    pub fn annotate(&self, label: &str, t_ref: Nanos) -> Result<SessionAnnotation, HubError> {
        let a = SessionAnnotation::new(label, t_ref)?;
        let line = serde_json::to_string(&a)?;
        {
            let mut guard = self.annotations.lock();
            if let Some(f) = guard.1.as_mut() {
                f.write_all(line.as_bytes())?;
                f.write_all(b"\n")?;
            }
            guard.0.push(a.clone());
        }
        if self.topics.read().contains_key("annotations") {
            self.publish("annotations", "session", t_ref, line.into_bytes())?;
        }
        Ok(a)
    }

    pub fn annotations(&self) -> Vec<SessionAnnotation> {
        self.annotations.lock().0.clone()
    }

    pub fn stats(&self, topic: &str) -> Result<TopicStats, HubError> {
        let t = self.topic(topic)?;
        Ok(TopicStats {
            name: t.name.to_string(),
            published: t.published.load(Ordering::Relaxed),
            evicted: t.evicted.load(Ordering::Relaxed),
            partitions: t
                .partitions
                .iter()
                .map(|p| {
                    let l = p.lock();
                    (l.base, l.tail())
                })
                .collect(),
        })
    }

    /// Flushes segment files to stable storage.
    pub fn sync(&self) -> Result<(), HubError> {
        for t in self.topics.read().values() {
            for p in &t.partitions {
                if let Some(f) = p.lock().file.as_mut() {
                    f.sync_data()?;
                }
            }
        }
        if let Some(f) = self.annotations.lock().1.as_mut() {
            f.sync_data()?;
        }
        Ok(())
    }
}

/// Reads a topic on behalf of one consumer group.
pub struct Consumer {
    topic: Arc<Topic>,
    positions: Arc<Mutex<Vec<u64>>>,
    next_partition: Mutex<usize>,
}

impl Consumer {
    pub fn seek(&self, offset: u64) {
        self.positions.lock().iter_mut().for_each(|p| *p = offset);
    }

    pub fn positions(&self) -> Vec<u64> {
        self.positions.lock().clone()
    }

    /// Records published but not yet consumed by this group.
    pub fn lag(&self) -> u64 {
        let pos = self.positions.lock().clone();
        self.topic
            .partitions
            .iter()
            .zip(pos)
            .map(|(p, at)| p.lock().tail().saturating_sub(at))
            .sum()
    }

    fn poll_partition(&self, p: usize, max: usize) -> Vec<Arc<Record>> {
        let mut positions = self.positions.lock();
        let out: Vec<Arc<Record>> = {
            let log = self.topic.partitions[p].lock();
            let start = positions[p].max(log.base);
            if start >= log.tail() {
                positions[p] = positions[p].max(start);
                return Vec::new();
            }
            log.records.iter().skip((start - log.base) as usize).take(max).cloned().collect()
        };
        if let Some(last) = out.last() {
            positions[p] = last.offset + 1;
        }
        out
    }

    /// Non-blocking read of up to `max` records, rotating over partitions.
    pub fn poll(&self, max: usize) -> Vec<Arc<Record>> {
        let n = self.topic.partitions.len();
        let first = {
            let mut g = self.next_partition.lock();
            let f = *g;
            *g = (f + 1) % n;
            f
        };
        let mut out = Vec::new();
        for k in 0..n {
            if out.len() >= max {
                break;
            }
            out.extend(self.poll_partition((first + k) % n, max - out.len()));
        }
        out
    }

    /// Waits until records arrive, the topic closes or `timeout` elapses.
    pub fn poll_timeout(&self, max: usize, timeout: Duration) -> Vec<Arc<Record>> {
        let deadline = Instant::now() + timeout;
        loop {
            let seen = *self.topic.signal.lock();
            let got = self.poll(max);
            if !got.is_empty() || self.is_closed() {
                return got;
            }
            let mut sig = self.topic.signal.lock();
            if *sig == seen && self.topic.cond.wait_until(&mut sig, deadline).timed_out() {
                drop(sig);
                return self.poll(max);
            }
        }
    }

    pub fn is_closed(&self) -> bool {
        self.topic.closed.load(Ordering::SeqCst)
    }

    /// Closed and fully consumed.
    pub fn is_finished(&self) -> bool {
        self.is_closed() && self.lag() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn hub() -> Hub {
        let h = Hub::new(HubConfig::default());
        h.create_topic("gaze", TopicConfig::default()).unwrap();
        h
    }

    #[test]
    fn offsets_start_at_zero_and_follow_key() {
        let h = hub();
        let (p, o) = h.publish("gaze", "d00", 1, &b"a"[..]).unwrap();
        assert_eq!(o, 0);
        let (p2, o2) = h.publish("gaze", "d00", 2, &b"b"[..]).unwrap();
        assert_eq!((p2, o2), (p, 1));
    }

    #[test]
    fn unknown_topic_and_oversize() {
        let h = hub();
        assert!(matches!(h.publish("nope", "k", 0, &b""[..]), Err(HubError::UnknownTopic(_))));
        let big = vec![0u8; MAX_PAYLOAD + 1];
        assert!(matches!(h.publish("gaze", "k", 0, big), Err(HubError::PayloadTooLarge { .. })));
        assert!(h.publish("gaze", "k", 0, vec![0u8; MAX_PAYLOAD]).is_ok());
    }

    #[test]
    fn thirty_keys_keep_their_partition_and_order() {
        let h = hub();
        let mut log: Vec<(String, u32, u64)> = Vec::new();
        for round in 0..20 {
            for d in 0..30 {
                let key = format!("d{d:02}");
                let (p, o) = h.publish("gaze", &key, round, vec![d as u8, round as u8]).unwrap();
                log.push((key, p, o));
            }
        }
        let mut by_key: BTreeMap<&str, Vec<(u32, u64)>> = BTreeMap::new();
        for (k, p, o) in &log {
            by_key.entry(k).or_default().push((*p, *o));
        }
        for (k, v) in &by_key {
            assert!(v.iter().all(|(p, _)| *p == v[0].0), "{k} moved partition");
            assert_eq!(v[0].0, partition_for(k, 6));
            assert!(v.windows(2).all(|w| w[0].1 < w[1].1));
        }
        // offsets contiguous per partition
        let mut per_part: BTreeMap<u32, Vec<u64>> = BTreeMap::new();
        for (_, p, o) in &log {
            per_part.entry(*p).or_default().push(*o);
        }
        for v in per_part.values() {
            assert_eq!(*v, (0..v.len() as u64).collect::<Vec<_>>());
        }
        // consumed per-key order equals publish order
        let recs: Vec<_> = h.consume("gaze", "g", None).unwrap().collect();
        assert_eq!(recs.len(), 600);
        for d in 0..30u8 {
            let rounds: Vec<u8> = recs.iter().filter(|r| r.payload[0] == d).map(|r| r.payload[1]).collect();
            assert_eq!(rounds, (0..20).collect::<Vec<u8>>());
        }
    }

    #[test]
    fn three_publishes_three_records() {
        let h = hub();
        for i in 0..3u8 {
            h.publish("gaze", "d01", i as i64, vec![i]).unwrap();
        }
        let v: Vec<u8> = h.consume("gaze", "g", None).unwrap().map(|r| r.payload[0]).collect();
        assert_eq!(v, vec![0, 1, 2]);
        assert_eq!(h.consume("gaze", "g", None).unwrap().count(), 0);
        assert_eq!(h.consume("gaze", "g2", Some(99)).unwrap().count(), 0);
    }

    #[test]
    fn groups_are_independent() {
        let h = Arc::new(hub());
        for i in 0..100 {
            h.publish("gaze", &format!("d{:02}", i % 7), i, vec![]).unwrap();
        }
        let a = h.consumer("gaze", "a").unwrap();
        let b = h.consumer("gaze", "b").unwrap();
        assert_eq!(a.poll(10).len(), 10);
        assert_eq!(b.poll(usize::MAX).len(), 100);
        assert_eq!(a.poll(usize::MAX).len(), 90);
    }

    #[test]
    fn ring_eviction() {
        let h = Hub::new(HubConfig::default());
        h.create_topic("s", TopicConfig { partitions: 1, retention: Retention::Ring(1000) }).unwrap();
        for i in 0..1500 {
            h.publish("s", "k", i, vec![]).unwrap();
        }
        let st = h.stats("s").unwrap();
        assert_eq!(st.partitions, vec![(500, 1500)]);
        assert_eq!(st.evicted, 500);
        let first = h.consume("s", "g", None).unwrap().next().unwrap();
        assert_eq!(first.offset, 500);
    }

    #[test]
    fn blocking_poll_wakes_on_publish_and_close() {
        let h = Arc::new(hub());
        let c = h.consumer("gaze", "g").unwrap();
        let h2 = h.clone();
        let t = std::thread::spawn(move || {
            std::thread::sleep(Duration::from_millis(30));
            h2.publish("gaze", "d00", 0, vec![1]).unwrap();
            std::thread::sleep(Duration::from_millis(30));
            h2.close("gaze").unwrap();
        });
        let got = c.poll_timeout(10, Duration::from_secs(5));
        assert_eq!(got.len(), 1);
        let start = Instant::now();
        let got = c.poll_timeout(10, Duration::from_secs(5));
        assert!(got.is_empty());
        assert!(start.elapsed() < Duration::from_secs(4));
        assert!(c.is_finished());
        t.join().unwrap();
        assert!(c.poll_timeout(1, Duration::from_millis(1)).is_empty());
    }

    #[test]
    fn annotations_validate_and_publish() {
        let h = Hub::new(HubConfig::default()).with_default_topics().unwrap();
        assert!(matches!(h.annotate("  ", 0), Err(HubError::EmptyLabel)));
        h.annotate("split", 5).unwrap();
        assert_eq!(h.annotations(), vec![SessionAnnotation { label: "split".into(), t_ref: 5 }]);
        assert_eq!(h.consume("annotations", "g", None).unwrap().count(), 1);
    }

    #[test]
    fn concurrent_producers() {
        let h = Arc::new(hub());
        let handles: Vec<_> = (0..4)
            .map(|w| {
                let h = h.clone();
                std::thread::spawn(move || {
                    for i in 0..500i64 {
                        h.publish("gaze", &format!("w{w}"), i, i.to_be_bytes().to_vec()).unwrap();
                    }
                })
            })
            .collect();
        handles.into_iter().for_each(|j| j.join().unwrap());
        let recs: Vec<_> = h.consume("gaze", "g", None).unwrap().collect();
        assert_eq!(recs.len(), 2000);
        for w in 0..4 {
            let ts: Vec<i64> = recs.iter().filter(|r| &*r.key == format!("w{w}")).map(|r| r.t_ns).collect();
            assert_eq!(ts, (0..500).collect::<Vec<_>>());
        }
    }
}
