//! In-process partitioned publish/subscribe log.
//!
//! Topics are split into partitions; a record's partition is a stable hash
//! of its key, so all records of one device stay ordered. Consumer groups
//! track their own per-partition positions. A hub opened on a session
//! directory writes every record to `<topic>/<partition>.log` before
//! `publish` returns, and [`Session::load`] replays those files.

pub mod codec;
mod hub;
mod monitor;
mod segment;

pub use hub::{
    merge_by_time, partition_for, Consumer, Hub, HubConfig, Record, Retention, TopicConfig, TopicStats,
    DEFAULT_PARTITIONS, DEFAULT_TOPICS, MAX_PAYLOAD,
};
pub use monitor::{StallEvent, StallMonitor};
pub use segment::{read_segment, write_record, Session, SegmentRead};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timesync::Nanos;

#[derive(Debug, Error)]
pub enum HubError {
    #[error("unknown topic: {0}")]
    UnknownTopic(String),
    #[error("topic already exists: {0}")]
    TopicExists(String),
    #[error("payload of {size} bytes exceeds limit of {limit}")]
    PayloadTooLarge { size: usize, limit: usize },
    #[error("key longer than 65535 bytes")]
    KeyTooLong,
    #[error("invalid topic config: {0}")]
    InvalidConfig(String),
    #[error("annotation label must be non-empty")]
    EmptyLabel,
    #[error("corrupt segment {path}: first bad offset {offset}")]
    CorruptSegment { path: PathBuf, offset: u64 },
    #[error("malformed payload: {0}")]
    Codec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// A hand-marked event on the session timeline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionAnnotation {
    pub label: String,
    #[serde(rename = "t_ns")]
    pub t_ref: Nanos,
}

impl SessionAnnotation {
    pub fn new(label: impl Into<String>, t_ref: Nanos) -> Result<Self, HubError> {
        let label = label.into();
        if label.trim().is_empty() {
            return Err(HubError::EmptyLabel);
        }
        Ok(Self { label, t_ref })
    }
}
