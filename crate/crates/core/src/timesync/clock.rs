use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Nanos, TimeSyncError, NS_PER_MS, NS_PER_S, NS_PER_US};

/// A simulated device clock relative to the reference clock.
///
/// `device_time(t) = t + initial_offset + drift_rate * t`, plus Gaussian read
/// noise when sampled through [`ClockModel::read`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClockModel {
    /// Device minus reference at reference time zero.
    pub initial_offset_ns: Nanos,
    /// Dimensionless rate error, e.g. `2e-6`.
    pub drift_rate: f64,
    /// Standard deviation of per-read noise.
    pub jitter_sd_ns: f64,
}

impl Default for ClockModel {
    fn default() -> Self {
        Self::ideal()
    }
}

impl ClockModel {
    pub fn new(
        initial_offset_ns: Nanos,
        drift_rate: f64,
        jitter_sd_ns: f64,
    ) -> Result<Self, TimeSyncError> {
        if !(jitter_sd_ns >= 0.0) {
            return Err(TimeSyncError::InvalidParameter(format!(
                "jitter_sd must be >= 0, got {jitter_sd_ns}"
            )));
        }
        if !(drift_rate.abs() < 1.0) {
            return Err(TimeSyncError::InvalidParameter(format!(
                "|drift_rate| must be < 1, got {drift_rate}"
            )));
        }
        Ok(Self {
            initial_offset_ns,
            drift_rate,
            jitter_sd_ns,
        })
    }

    /// A clock that agrees with the reference exactly.
    pub const fn ideal() -> Self {
        Self {
            initial_offset_ns: 0,
            drift_rate: 0.0,
            jitter_sd_ns: 0.0,
        }
    }

    /// Device minus reference at reference time `t_ref`, without read noise.
    pub fn offset_at(&self, t_ref: Nanos) -> f64 {
        self.initial_offset_ns as f64 + self.drift_rate * t_ref as f64
    }

    /// Noiseless device reading at reference time `t_ref`.
    pub fn device_time(&self, t_ref: Nanos) -> Nanos {
        t_ref + self.offset_at(t_ref).round() as Nanos
    }

    /// Device reading with read noise.
    pub fn read<R: Rng + ?Sized>(&self, t_ref: Nanos, rng: &mut R) -> Nanos {
        let noise = if self.jitter_sd_ns > 0.0 {
            Normal::new(0.0, self.jitter_sd_ns)
                .expect("finite sd")
                .sample(rng)
        } else {
            0.0
        };
        t_ref + (self.offset_at(t_ref) + noise).round() as Nanos
    }

    /// Exact inverse of [`ClockModel::device_time`] before rounding.
    pub fn reference_time(&self, t_device: Nanos) -> f64 {
        (t_device as f64 - self.initial_offset_ns as f64) / (1.0 + self.drift_rate)
    }
}

/// One-way network path model for probe packets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkModel {
    /// Mean one-way latency.
    pub one_way_mean_ns: f64,
    /// Standard deviation of each one-way latency draw.
    pub one_way_sd_ns: f64,
    /// Floor on any one-way latency.
    pub one_way_min_ns: f64,
    /// Time the server spends between receive and send.
    pub turnaround_ns: f64,
    /// Probability that a probe exchange is lost.
    pub loss_prob: f64,
}

impl Default for LinkModel {
    fn default() -> Self {
        // 0.5 ms round trips with 0.2 ms sd, split evenly over both legs.
        Self {
            one_way_mean_ns: 250.0 * NS_PER_US as f64,
            one_way_sd_ns: 200.0 * NS_PER_US as f64 / std::f64::consts::SQRT_2,
            one_way_min_ns: 20.0 * NS_PER_US as f64,
            turnaround_ns: 10.0 * NS_PER_US as f64,
            loss_prob: 0.0,
        }
    }
}

impl LinkModel {
    pub(crate) fn sample_one_way<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let d = if self.one_way_sd_ns > 0.0 {
            Normal::new(self.one_way_mean_ns, self.one_way_sd_ns)
                .expect("finite sd")
                .sample(rng)
        } else {
            self.one_way_mean_ns
        };
        d.max(self.one_way_min_ns)
    }
}

/// How often and how densely offsets are measured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub probes_per_epoch: usize,
    pub epoch_interval_ns: Nanos,
    /// Spacing between probes within one epoch.
    pub probe_spacing_ns: Nanos,
    pub link: LinkModel,
    /// Probability that a whole epoch is corrupted by a transient
    /// reference-side timestamp glitch.
    pub glitch_prob: f64,
    /// Magnitude of a glitch; the sign is drawn uniformly.
    pub glitch_magnitude_ns: Nanos,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            probes_per_epoch: 8,
            epoch_interval_ns: 10 * NS_PER_S,
            probe_spacing_ns: 5 * NS_PER_MS,
            link: LinkModel::default(),
            glitch_prob: 0.0,
            glitch_magnitude_ns: 50 * NS_PER_MS,
        }
    }
}
