use super::AnalysisError;
use crate::timesync::Nanos;

/// Default centered smoothing window, in samples.
pub const ROLLING_WINDOW: usize = 150;

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64, AnalysisError> {
    if a.len() != b.len() {
        return Err(AnalysisError::InvalidParameter(format!("length mismatch {} vs {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(AnalysisError::TooFewSamples { needed: 2, got: a.len() });
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    let scale = ma.abs().max(mb.abs()).max(1e-300);
    if saa <= (1e-12 * scale).powi(2) * n || sbb <= (1e-12 * scale).powi(2) * n {
        return Err(AnalysisError::ZeroVariance);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Linear interpolation of `v` onto `n` evenly spaced positions spanning
/// the same index range.
pub fn resample_linear(v: &[f64], n: usize) -> Vec<f64> {
    match (v.len(), n) {
        (_, 0) | (0, _) => Vec::new(),
        (1, _) => vec![v[0]; n],
        (m, 1) => vec![v[m / 2]],
        (m, _) => (0..n)
            .map(|i| {
                let pos = i as f64 * (m - 1) as f64 / (n - 1) as f64;
                let lo = (pos.floor() as usize).min(m - 2);
                let f = pos - lo as f64;
                v[lo] * (1.0 - f) + v[lo + 1] * f
            })
            .collect(),
    }
}

/// Centered moving average. Near the ends the window is truncated to the
/// samples that exist.
pub fn rolling_mean(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let before = window / 2;
    let after = window - 1 - before;
    let mut prefix = Vec::with_capacity(values.len() + 1);
    prefix.push(0.0);
    for v in values {
        prefix.push(prefix.last().unwrap() + v);
    }
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(before);
            let hi = (i + after).min(values.len() - 1);
            (prefix[hi + 1] - prefix[lo]) / (hi + 1 - lo) as f64
        })
        .collect()
}

/// Pairwise Pearson correlation between the parts of `series` that fall in
/// each `[start, end)` segment. Each pair is compared after resampling both
/// to the longer length.
pub fn segment_cross_correlation(
    series: &[(Nanos, f64)],
    segments: &[(Nanos, Nanos)],
) -> Result<Vec<Vec<f64>>, AnalysisError> {
    if segments.iter().any(|(a, b)| b <= a) || segments.windows(2).any(|w| w[1].0 < w[0].1) {
        return Err(AnalysisError::BadSegments);
    }
    let parts: Vec<Vec<f64>> = segments
        .iter()
        .map(|&(a, b)| series.iter().filter(|(t, _)| *t >= a && *t < b).map(|(_, v)| *v).collect())
        .collect();
    if let Some(p) = parts.iter().find(|p| p.len() < 2) {
        return Err(AnalysisError::TooFewSamples { needed: 2, got: p.len() });
    }
    let k = parts.len();
    let mut out = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i..k {
            let n = parts[i].len().max(parts[j].len());
            let r = pearson(&resample_linear(&parts[i], n), &resample_linear(&parts[j], n))?;
            out[i][j] = r;
            out[j][i] = r;
        }
    }
    Ok(out)
}
