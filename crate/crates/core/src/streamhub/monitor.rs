use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::timesync::Nanos;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StallEvent {
    /// `key` has been silent for at least the configured limit.
    Alert { key: String, last_seen_t: Nanos, at_ns: Nanos },
    Clear { key: String, at_ns: Nanos },
}

#[derive(Debug, Clone, Copy)]
struct KeyState {
    last_seen: Nanos,
    alerting: bool,
}

/// Per-key silence detector.
///
/// Alerts once per silence of at least `max_silence_ns` and clears on the
/// next record from that key. Shorter gaps never alert.
#[derive(Debug, Clone)]
pub struct StallMonitor {
    max_silence_ns: Nanos,
    keys: BTreeMap<String, KeyState>,
}

impl StallMonitor {
    pub fn new(max_silence_ns: Nanos) -> Self {
        Self { max_silence_ns, keys: BTreeMap::new() }
    }

    pub fn observe(&mut self, key: &str, t_ns: Nanos) -> Option<StallEvent> {
        match self.keys.get_mut(key) {
            Some(s) => {
                s.last_seen = s.last_seen.max(t_ns);
                if s.alerting {
                    s.alerting = false;
                    return Some(StallEvent::Clear { key: key.to_string(), at_ns: t_ns });
                }
                None
            }
            None => {
                self.keys.insert(key.to_string(), KeyState { last_seen: t_ns, alerting: false });
                None
            }
        }
    }

    /// Alerts for keys whose silence at `now_ns` reached the limit.
    pub fn check(&mut self, now_ns: Nanos) -> Vec<StallEvent> {
        let limit = self.max_silence_ns;
        self.keys
            .iter_mut()
            .filter(|(_, s)| !s.alerting && now_ns - s.last_seen >= limit)
            .map(|(k, s)| {
                s.alerting = true;
                StallEvent::Alert { key: k.clone(), last_seen_t: s.last_seen, at_ns: now_ns }
            })
            .collect()
    }

    /// Stops watching `key`, for sources that went quiet on purpose.
    pub fn forget(&mut self, key: &str) {
        self.keys.remove(key);
    }

    pub fn alerting(&self) -> Vec<&str> {
        self.keys.iter().filter(|(_, s)| s.alerting).map(|(k, _)| k.as_str()).collect()
    }

    /// Feeds a time-ordered stream of (key, t) and checks at every record and
    /// on a fixed tick, returning every event in order.
    pub fn scan(&mut self, stream: impl IntoIterator<Item = (String, Nanos)>, tick_ns: Nanos) -> Vec<StallEvent> {
        let mut out = Vec::new();
        let mut next_tick: Option<Nanos> = None;
        for (key, t) in stream {
            let nt = *next_tick.get_or_insert(t);
            let mut tick = nt;
            while tick < t {
                out.extend(self.check(tick));
                tick += tick_ns.max(1);
            }
            next_tick = Some(tick);
            out.extend(self.observe(&key, t));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timesync::{NS_PER_MS, NS_PER_S};

    fn stream(gap: Option<(Nanos, Nanos)>) -> Vec<(String, Nanos)> {
        (0..2000)
            .map(|k| k * 5 * NS_PER_MS)
            .filter(|t| gap.is_none_or(|(a, b)| *t < a || *t >= b))
            .map(|t| ("d00".to_string(), t))
            .collect()
    }

    #[test]
    fn continuous_stream_is_quiet() {
        let mut m = StallMonitor::new(500 * NS_PER_MS);
        assert!(m.scan(stream(None), 10 * NS_PER_MS).is_empty());
    }

    #[test]
    fn two_second_pause_alerts_once_and_clears_once() {
        let mut m = StallMonitor::new(500 * NS_PER_MS);
        let ev = m.scan(stream(Some((3000 * NS_PER_MS, 5000 * NS_PER_MS))), 10 * NS_PER_MS);
        assert_eq!(ev.len(), 2, "{ev:?}");
        assert!(matches!(&ev[0], StallEvent::Alert { last_seen_t, .. } if *last_seen_t == 2995 * NS_PER_MS));
        assert!(matches!(&ev[1], StallEvent::Clear { at_ns, .. } if *at_ns == 5000 * NS_PER_MS));
    }

    #[test]
    fn forgotten_key_never_alerts() {
        let mut m = StallMonitor::new(500 * NS_PER_MS);
        m.observe("d00", 0);
        m.forget("d00");
        assert!(m.check(10 * NS_PER_S).is_empty());
    }

    #[test]
    fn short_gap_is_ignored() {
        let mut m = StallMonitor::new(500 * NS_PER_MS);
        let ev = m.scan(stream(Some((3000 * NS_PER_MS, 3400 * NS_PER_MS))), 10 * NS_PER_MS);
        assert!(ev.is_empty());
    }
}
