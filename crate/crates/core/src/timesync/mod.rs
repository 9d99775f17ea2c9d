//! Clock alignment between devices and the reference server.
//!
//! Each device periodically runs a short burst of four-timestamp probe
//! exchanges against the reference. The probe with the smallest round-trip
//! time gives the epoch's offset estimate. Offsets collected over the
//! session are then fit with a RANSAC line so any device timestamp can be
//! mapped onto the reference clock.
//!
//! All timestamps are signed 64-bit nanoseconds since an arbitrary epoch.

mod clock;
mod fit;
mod log;
mod probe;

pub use clock::{ClockModel, LinkModel, ProbeConfig};
pub use fit::{drift_series, fit_clock_map, fit_timemap, map_timestamp, FitParams, TimeMap};
pub use log::{read_offset_log, write_offset_log};
pub use probe::{measure_epoch, measure_fleet, measure_offsets, probe_offset, OffsetProbe, OffsetSample};

use thiserror::Error;

/// Nanoseconds on some clock.
pub type Nanos = i64;

pub const NS_PER_US: Nanos = 1_000;
pub const NS_PER_MS: Nanos = 1_000_000;
pub const NS_PER_S: Nanos = 1_000_000_000;

#[derive(Debug, Error)]
pub enum TimeSyncError {
    #[error("no probes")]
    NoProbes,
    #[error("need at least {needed} offset samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("degenerate abscissa")]
    DegenerateAbscissa,
    #[error("no line hypothesis reached consensus")]
    NoConsensus,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("offset log: {0}")]
    Log(#[from] csv::Error),
}
