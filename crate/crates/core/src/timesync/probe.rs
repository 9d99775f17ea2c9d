use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ClockModel, Nanos, ProbeConfig, TimeSyncError};
use crate::rng::seeded;

/// One four-timestamp exchange.
///
/// `t1`/`t4` are client send/receive on the device clock, `t2`/`t3` are
/// server receive/send on the reference clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OffsetProbe {
    pub t1: Nanos,
    pub t2: Nanos,
    pub t3: Nanos,
    pub t4: Nanos,
}

impl OffsetProbe {
    /// Reference minus device, with the path delay factored out.
    pub fn offset(&self) -> Nanos {
        ((self.t2 - self.t1) + (self.t3 - self.t4)) / 2
    }

    pub fn rtt(&self) -> Nanos {
        (self.t4 - self.t1) - (self.t3 - self.t2)
    }
}

/// Result of one measurement epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OffsetSample {
    /// Reference time of the selected exchange (its `t3`).
    pub t_ref_ns: Nanos,
    /// Reference minus device.
    pub offset_ns: Nanos,
    pub rtt_ns: Nanos,
}

/// Selects the exchange with minimal round-trip time; the earliest wins ties.
pub fn probe_offset(probes: &[OffsetProbe]) -> Result<OffsetSample, TimeSyncError> {
    let best = probes
        .iter()
        .enumerate()
        .min_by_key(|(i, p)| (p.rtt(), *i))
        .map(|(_, p)| p)
        .ok_or(TimeSyncError::NoProbes)?;
    Ok(OffsetSample {
        t_ref_ns: best.t3,
        offset_ns: best.offset(),
        rtt_ns: best.rtt().max(0),
    })
}

fn exchange<R: Rng + ?Sized>(
    clock: &ClockModel,
    cfg: &ProbeConfig,
    t_send: Nanos,
    glitch_ns: Nanos,
    rng: &mut R,
) -> Option<OffsetProbe> {
    let lost = cfg.link.loss_prob > 0.0 && rng.random::<f64>() < cfg.link.loss_prob;
    let up = cfg.link.sample_one_way(rng);
    let down = cfg.link.sample_one_way(rng);
    if lost {
        return None;
    }
    let t1 = clock.read(t_send, rng);
    let recv = t_send + up.round() as Nanos;
    let send = recv + cfg.link.turnaround_ns.round() as Nanos;
    let back = send + down.round() as Nanos;
    let t4 = clock.read(back, rng);
    Some(OffsetProbe {
        t1,
        t2: recv + glitch_ns,
        t3: send + glitch_ns,
        t4,
    })
}

/// Runs one burst of probe exchanges starting at reference time `t_ref`.
///
/// Lost exchanges are dropped; `None` if every exchange in the epoch was lost.
pub fn measure_epoch<R: Rng + ?Sized>(
    clock: &ClockModel,
    cfg: &ProbeConfig,
    t_ref: Nanos,
    rng: &mut R,
) -> Option<OffsetSample> {
    let glitch = if cfg.glitch_prob > 0.0 && rng.random::<f64>() < cfg.glitch_prob {
        if rng.random::<bool>() {
            cfg.glitch_magnitude_ns
        } else {
            -cfg.glitch_magnitude_ns
        }
    } else {
        0
    };
    let probes: Vec<OffsetProbe> = (0..cfg.probes_per_epoch)
        .filter_map(|k| {
            let t_send = t_ref + k as Nanos * cfg.probe_spacing_ns;
            exchange(clock, cfg, t_send, glitch, rng)
        })
        .collect();
    probe_offset(&probes).ok()
}

/// Measures one epoch every `cfg.epoch_interval_ns` over `[start, end]`.
pub fn measure_offsets<R: Rng + ?Sized>(
    clock: &ClockModel,
    cfg: &ProbeConfig,
    start: Nanos,
    end: Nanos,
    rng: &mut R,
) -> Vec<OffsetSample> {
    let step = cfg.epoch_interval_ns.max(1);
    let mut out = Vec::new();
    let mut t = start;
    while t <= end {
        if let Some(s) = measure_epoch(clock, cfg, t, rng) {
            out.push(s);
        }
        t += step;
    }
    out
}

/// Independent probe loop per device. Device `i` draws from RNG stream `i`.
pub fn measure_fleet(
    clocks: &[ClockModel],
    cfg: &ProbeConfig,
    start: Nanos,
    end: Nanos,
    seed: u64,
) -> Vec<Vec<OffsetSample>> {
    clocks
        .par_iter()
        .enumerate()
        .map(|(i, clock)| {
            let mut rng = seeded(seed, 0x5EED_0000 + i as u64);
            measure_offsets(clock, cfg, start, end, &mut rng)
        })
        .collect()
}
