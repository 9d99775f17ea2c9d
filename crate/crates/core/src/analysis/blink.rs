use std::sync::Arc;

use serde::Serialize;

use super::AnalysisError;
use crate::scenesim::BlinkInterval;
use crate::timesync::Nanos;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlinkRaster {
    pub bin_starts: Vec<Nanos>,
    pub bin_ns: Nanos,
    pub devices: Vec<Arc<str>>,
    /// Per device, the fraction of each bin spent blinking.
    pub occupancy: Vec<Vec<f64>>,
    /// Mean occupancy across devices per bin.
    pub density: Vec<f64>,
}

impl BlinkRaster {
    pub fn mean_density(&self) -> f64 {
        if self.density.is_empty() {
            return 0.0;
        }
        self.density.iter().sum::<f64>() / self.density.len() as f64
    }
}

/// Bins blink intervals over `[start, end)` on a shared timeline.
pub fn blink_raster(
    per_device: &[(Arc<str>, Vec<BlinkInterval>)],
    start: Nanos,
    end: Nanos,
    bin_ns: Nanos,
) -> Result<BlinkRaster, AnalysisError> {
    if bin_ns <= 0 || end <= start {
        return Err(AnalysisError::InvalidParameter("need bin_ns > 0 and end > start".into()));
    }
    if per_device.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let nbins = ((end - start) + bin_ns - 1) / bin_ns;
    let bin_starts: Vec<Nanos> = (0..nbins).map(|k| start + k * bin_ns).collect();
    let bin_len = |k: i64| ((start + (k + 1) * bin_ns).min(end) - (start + k * bin_ns)) as f64;
    let occupancy: Vec<Vec<f64>> = per_device
        .iter()
        .map(|(_, blinks)| {
            let mut covered = vec![0i64; nbins as usize];
            for b in blinks {
                let (s, e) = (b.start_ns.max(start), b.end_ns.min(end));
                if e <= s {
                    continue;
                }
                let (k0, k1) = ((s - start) / bin_ns, (e - 1 - start) / bin_ns);
                for k in k0..=k1 {
                    let lo = s.max(start + k * bin_ns);
                    let hi = e.min(start + (k + 1) * bin_ns);
                    covered[k as usize] += hi - lo;
                }
            }
            covered.iter().enumerate().map(|(k, &c)| (c as f64 / bin_len(k as i64)).min(1.0)).collect()
        })
        .collect();
    let n = occupancy.len() as f64;
    let density = (0..nbins as usize).map(|k| occupancy.iter().map(|o| o[k]).sum::<f64>() / n).collect();
    Ok(BlinkRaster {
        bin_starts,
        bin_ns,
        devices: per_device.iter().map(|(id, _)| id.clone()).collect(),
        occupancy,
        density,
    })
}
