use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Nanos, OffsetSample, TimeSyncError, NS_PER_MS};
use crate::rng::seeded;

/// Line hypotheses steeper than this are rejected: no oscillator drifts by
/// more than a part per thousand, and such lines only arise from pairing an
/// outlier with a neighbouring sample.
const MAX_DRIFT_RATE: f64 = 1e-3;

const MIN_SAMPLES: usize = 2;

/// Linear map from device time to the device-minus-reference offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeMap {
    pub slope: f64,
    pub intercept_ns: f64,
    pub inlier_mask: Vec<bool>,
    /// Coefficient of determination over the inliers, clamped to [0, 1].
    pub score: f64,
}

impl TimeMap {
    pub fn identity() -> Self {
        Self {
            slope: 0.0,
            intercept_ns: 0.0,
            inlier_mask: Vec::new(),
            score: 1.0,
        }
    }

    pub fn inlier_count(&self) -> usize {
        self.inlier_mask.iter().filter(|&&b| b).count()
    }

    pub fn offset_at(&self, t: Nanos) -> f64 {
        self.intercept_ns + self.slope * t as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitParams {
    pub threshold_ns: Nanos,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for FitParams {
    fn default() -> Self {
        Self {
            threshold_ns: 2 * NS_PER_MS,
            max_iters: 500,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy)]
struct Line {
    // y = a + b * x, x relative to the abscissa pivot
    a: f64,
    b: f64,
}

impl Line {
    fn through(p: (f64, f64), q: (f64, f64)) -> Option<Self> {
        let dx = q.0 - p.0;
        if dx == 0.0 {
            return None;
        }
        let b = (q.1 - p.1) / dx;
        Some(Self { a: p.1 - b * p.0, b })
    }

    fn residual(&self, p: (f64, f64)) -> f64 {
        p.1 - (self.a + self.b * p.0)
    }
}

fn least_squares(pts: &[(f64, f64)], mask: &[bool]) -> Option<Line> {
    let (mut n, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for (p, _) in pts.iter().zip(mask).filter(|(_, &m)| m) {
        n += 1.0;
        sx += p.0;
        sy += p.1;
    }
    if n < MIN_SAMPLES as f64 {
        return None;
    }
    let (mx, my) = (sx / n, sy / n);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (p, _) in pts.iter().zip(mask).filter(|(_, &m)| m) {
        let dx = p.0 - mx;
        sxx += dx * dx;
        sxy += dx * (p.1 - my);
    }
    if sxx == 0.0 {
        return None;
    }
    let b = sxy / sxx;
    Some(Line { a: my - b * mx, b })
}

fn r_squared(pts: &[(f64, f64)], mask: &[bool], line: &Line) -> f64 {
    let sel: Vec<_> = pts.iter().zip(mask).filter(|(_, &m)| m).map(|(p, _)| *p).collect();
    let mean = sel.iter().map(|p| p.1).sum::<f64>() / sel.len() as f64;
    let ss_tot: f64 = sel.iter().map(|p| (p.1 - mean).powi(2)).sum();
    let ss_res: f64 = sel.iter().map(|p| line.residual(*p).powi(2)).sum();
    if ss_res == 0.0 || ss_tot == 0.0 {
        // an exact fit, or a perfectly flat one, explains everything it can
        return if ss_res <= f64::EPSILON * ss_tot.max(1.0) { 1.0 } else { 0.0 };
    }
    (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
}

fn consensus(pts: &[(f64, f64)], line: &Line, threshold: f64) -> (Vec<bool>, usize, f64) {
    let mut count = 0;
    let mut sse = 0.0;
    let mask = pts
        .iter()
        .map(|p| {
            let r = line.residual(*p);
            let inlier = r.abs() <= threshold;
            if inlier {
                count += 1;
                sse += r * r;
            }
            inlier
        })
        .collect();
    (mask, count, sse)
}

/// RANSAC line fit over `(t_ref, offset)` pairs.
///
/// When every pair of samples fits within `max_iters`, all pairs are tried in
/// order; otherwise `max_iters` random pairs are drawn from a generator
/// seeded with `seed`. The largest consensus set wins, with lower inlier SSE
/// breaking ties. The winner is refit by least squares and its inlier set
/// re-evaluated until stable.
pub fn fit_timemap(
    samples: &[OffsetSample],
    threshold: Nanos,
    max_iters: usize,
    seed: u64,
) -> Result<TimeMap, TimeSyncError> {
    if samples.len() < MIN_SAMPLES {
        return Err(TimeSyncError::TooFewSamples {
            needed: MIN_SAMPLES,
            got: samples.len(),
        });
    }
    if threshold <= 0 {
        return Err(TimeSyncError::InvalidParameter(format!(
            "threshold must be > 0, got {threshold}"
        )));
    }
    let t0 = samples[0].t_ref_ns;
    if samples.iter().all(|s| s.t_ref_ns == t0) {
        return Err(TimeSyncError::DegenerateAbscissa);
    }
    // pivot on the mean abscissa for conditioning; i128 keeps the sum exact
    let pivot = (samples.iter().map(|s| s.t_ref_ns as i128).sum::<i128>()
        / samples.len() as i128) as Nanos;
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .map(|s| ((s.t_ref_ns - pivot) as f64, s.offset_ns as f64))
        .collect();
    let thr = threshold as f64;
    let n = pts.len();

    let mut best: Option<(usize, f64, Vec<bool>)> = None;
    let mut consider = |i: usize, j: usize| {
        let Some(line) = Line::through(pts[i], pts[j]) else {
            return;
        };
        if line.b.abs() > MAX_DRIFT_RATE {
            return;
        }
        let (mask, count, sse) = consensus(&pts, &line, thr);
        let better = match &best {
            None => true,
            Some((c, e, _)) => count > *c || (count == *c && sse < *e),
        };
        if better {
            best = Some((count, sse, mask));
        }
    };

    let pairs = n * (n - 1) / 2;
    if pairs <= max_iters {
        for i in 0..n {
            for j in i + 1..n {
                consider(i, j);
            }
        }
    } else {
        let mut rng = seeded(seed, 0);
        for _ in 0..max_iters {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            consider(i.min(j), i.max(j));
        }
    }

    let (_, _, mut mask) = best.ok_or(TimeSyncError::NoConsensus)?;
    let mut line = least_squares(&pts, &mask).ok_or(TimeSyncError::NoConsensus)?;
    for _ in 0..4 {
        let (next, count, _) = consensus(&pts, &line, thr);
        if next == mask || count < MIN_SAMPLES {
            break;
        }
        match least_squares(&pts, &next) {
            Some(l) => {
                line = l;
                mask = next;
            }
            None => break,
        }
    }

    let score = r_squared(&pts, &mask, &line);
    Ok(TimeMap {
        slope: line.b,
        intercept_ns: line.a - line.b * pivot as f64,
        inlier_mask: mask,
        score,
    })
}

/// Fits the map used to correct device timestamps from probe results.
///
/// Probe offsets are reference minus device, while [`map_timestamp`]
/// subtracts a device-minus-reference offset, so the samples are negated
/// before fitting.
pub fn fit_clock_map(samples: &[OffsetSample], params: &FitParams) -> Result<TimeMap, TimeSyncError> {
    let lead: Vec<OffsetSample> = samples
        .iter()
        .map(|s| OffsetSample {
            offset_ns: -s.offset_ns,
            ..*s
        })
        .collect();
    fit_timemap(&lead, params.threshold_ns, params.max_iters, params.seed)
}

/// Device time corrected onto the reference clock.
pub fn map_timestamp(map: &TimeMap, t_device: Nanos) -> Nanos {
    t_device - map.offset_at(t_device).round() as Nanos
}

/// Offset change relative to the first sample.
pub fn drift_series(samples: &[OffsetSample]) -> Result<Vec<(Nanos, Nanos)>, TimeSyncError> {
    let first = samples.first().ok_or(TimeSyncError::TooFewSamples {
        needed: 1,
        got: 0,
    })?;
    Ok(samples
        .iter()
        .map(|s| (s.t_ref_ns, s.offset_ns - first.offset_ns))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timesync::NS_PER_S;
    use proptest::prelude::*;

    fn on_line(intercept: Nanos, slope_ppb: i64, ts: impl Iterator<Item = Nanos>) -> Vec<OffsetSample> {
        ts.map(|t| OffsetSample {
            t_ref_ns: t,
            offset_ns: intercept + slope_ppb * (t / 1_000_000_000),
            rtt_ns: 500_000,
        })
        .collect()
    }

    #[test]
    fn exact_line() {
        let s = on_line(20 * NS_PER_MS, 2000, (0..360).map(|k| k * 10 * NS_PER_S));
        let m = fit_timemap(&s, 2 * NS_PER_MS, 500, 1).unwrap();
        assert!((m.slope - 2e-6).abs() < 1e-15);
        assert!((m.intercept_ns - 20e6).abs() < 1e-3);
        assert_eq!(m.score, 1.0);
        assert!(m.inlier_mask.iter().all(|&b| b));
    }

    #[test]
    fn wild_outlier_of_three_is_rejected() {
        let s = vec![
            OffsetSample { t_ref_ns: 0, offset_ns: 19_000_000, rtt_ns: 500_000 },
            OffsetSample { t_ref_ns: 10 * NS_PER_S, offset_ns: 277_300_000, rtt_ns: 500_000 },
            OffsetSample { t_ref_ns: 20 * NS_PER_S, offset_ns: 19_040_000, rtt_ns: 500_000 },
        ];
        let m = fit_timemap(&s, 2 * NS_PER_MS, 500, 3).unwrap();
        assert_eq!(m.inlier_mask, vec![true, false, true]);
    }

    #[test]
    fn errors() {
        let one = on_line(0, 0, std::iter::once(0));
        assert!(matches!(
            fit_timemap(&one, 1, 10, 0),
            Err(TimeSyncError::TooFewSamples { .. })
        ));
        let same = on_line(0, 0, [5, 5, 5].into_iter());
        assert!(matches!(
            fit_timemap(&same, 1, 10, 0),
            Err(TimeSyncError::DegenerateAbscissa)
        ));
        let two = on_line(0, 0, [0, 5].into_iter());
        assert!(fit_timemap(&two, 0, 10, 0).is_err());
    }

    #[test]
    fn map_identity_and_offset() {
        assert_eq!(map_timestamp(&TimeMap::identity(), 12345), 12345);
        let m = TimeMap {
            intercept_ns: 19.58e6,
            ..TimeMap::identity()
        };
        assert_eq!(map_timestamp(&m, NS_PER_S), NS_PER_S - 19_580_000);
    }

    #[test]
    fn drift_examples() {
        let mk = |v: &[Nanos]| -> Vec<OffsetSample> {
            v.iter()
                .enumerate()
                .map(|(i, &o)| OffsetSample { t_ref_ns: i as Nanos, offset_ns: o, rtt_ns: 0 })
                .collect()
        };
        let d = drift_series(&mk(&[7, 7, 7])).unwrap();
        assert!(d.iter().all(|&(_, v)| v == 0));
        let d = drift_series(&mk(&[20_000_000, 23_000_000, 28_580_000])).unwrap();
        let v: Vec<_> = d.iter().map(|x| x.1).collect();
        assert_eq!(v, vec![0, 3_000_000, 8_580_000]);
        assert!(drift_series(&[]).is_err());

        let lin = on_line(0, 2000, (0..=360).map(|k| k * 10 * NS_PER_S));
        let d = drift_series(&lin).unwrap();
        assert_eq!(d.last().unwrap().1, 7_200_000);
    }

    #[test]
    fn random_sampling_path_is_seeded() {
        let mut s = on_line(3 * NS_PER_MS, 1500, (0..200).map(|k| k * 10 * NS_PER_S));
        for (i, x) in s.iter_mut().enumerate() {
            if i % 5 == 0 {
                x.offset_ns += 50 * NS_PER_MS;
            }
        }
        let a = fit_timemap(&s, 2 * NS_PER_MS, 300, 17).unwrap();
        let b = fit_timemap(&s, 2 * NS_PER_MS, 300, 17).unwrap();
        assert_eq!(a, b);
        assert!((a.slope - 1.5e-6).abs() < 1e-12);
        assert_eq!(a.inlier_count(), 160);
    }

    proptest! {
        #[test]
        fn noiseless_line_reproduced(
            intercept in -300_000_000i64..300_000_000,
            slope_ppb in -3000i64..3000,
            n in 2usize..80,
            start in 0i64..1_000_000,
        ) {
            let s = on_line(intercept, slope_ppb, (0..n as i64).map(|k| (start + k * 10) * NS_PER_S));
            let m = fit_timemap(&s, 2 * NS_PER_MS, 200, 5).unwrap();
            let slope = slope_ppb as f64 * 1e-9;
            prop_assert!((m.slope - slope).abs() <= 1e-9 * slope.abs().max(1e-9));
            let want_at_start = intercept as f64 + slope * (start * NS_PER_S) as f64;
            let got = m.offset_at(start * NS_PER_S);
            prop_assert!((got - want_at_start).abs() <= 1e-9 * want_at_start.abs().max(1.0));
            prop_assert_eq!(m.score, 1.0);
        }
    }
}
