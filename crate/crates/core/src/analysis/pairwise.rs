use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::{pearson, AnalysisError};

/// Symmetric metric over every unordered pair of items.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairMatrix {
    pub ids: Vec<Arc<str>>,
    /// Row-major n×n; the diagonal is the metric of an item with itself.
    pub values: Vec<f64>,
}

impl PairMatrix {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.ids.len() + j]
    }

    /// `(i, j, value)` for i < j in row order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let n = self.ids.len();
        (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j, self.get(i, j))))
    }

    pub fn mean_off_diagonal(&self) -> f64 {
        let (s, c) = self.pairs().fold((0.0, 0usize), |(s, c), (_, _, v)| (s + v, c + 1));
        if c == 0 { f64::NAN } else { s / c as f64 }
    }
}

/// Evaluates `f` once per unordered pair and once per item on the diagonal.
pub fn pairwise_matrix<T, F>(ids: &[Arc<str>], items: &[T], f: F) -> Result<PairMatrix, AnalysisError>
where
    T: Sync,
    F: Fn(&T, &T) -> Result<f64, AnalysisError> + Sync,
{
    if ids.len() != items.len() {
        return Err(AnalysisError::InvalidParameter("ids and items differ in length".into()));
    }
    let n = items.len();
    let cells: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let vals = cells
        .par_iter()
        .map(|&(i, j)| f(&items[i], &items[j]))
        .collect::<Result<Vec<f64>, _>>()?;
    let mut values = vec![0.0; n * n];
    for (&(i, j), v) in cells.iter().zip(vals) {
        values[i * n + j] = v;
        values[j * n + i] = v;
    }
    Ok(PairMatrix { ids: ids.to_vec(), values })
}

/// Seat grid positions keyed by device id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SeatMap {
    seats: BTreeMap<Arc<str>, (usize, usize)>,
}

impl SeatMap {
    pub fn new(entries: impl IntoIterator<Item = (Arc<str>, (usize, usize))>) -> Result<Self, AnalysisError> {
        let mut seen = HashSet::new();
        let mut seats = BTreeMap::new();
        for (id, seat) in entries {
            if !seen.insert(seat) {
                return Err(AnalysisError::DuplicateSeat(seat));
            }
            seats.insert(id, seat);
        }
        Ok(Self { seats })
    }

    pub fn get(&self, id: &str) -> Option<(usize, usize)> {
        self.seats.get(id).copied()
    }

    pub fn distance(&self, a: &str, b: &str) -> Result<f64, AnalysisError> {
        let sa = self.get(a).ok_or_else(|| AnalysisError::MissingSeat(a.into()))?;
        let sb = self.get(b).ok_or_else(|| AnalysisError::MissingSeat(b.into()))?;
        let dr = sa.0 as f64 - sb.0 as f64;
        let dc = sa.1 as f64 - sb.1 as f64;
        Ok((dr * dr + dc * dc).sqrt())
    }
}

/// Pearson r between pairwise metric values and seat distances, with a
/// two-sided p-value from the t distribution on n − 2 degrees of freedom.
pub fn sim_distance_correlation(m: &PairMatrix, seats: &SeatMap) -> Result<(f64, f64), AnalysisError> {
    let mut sims = Vec::new();
    let mut dists = Vec::new();
    for (i, j, v) in m.pairs() {
        sims.push(v);
        dists.push(seats.distance(&m.ids[i], &m.ids[j])?);
    }
    if sims.len() < 3 {
        return Err(AnalysisError::TooFewSamples { needed: 3, got: sims.len() });
    }
    let r = pearson(&sims, &dists)?;
    let df = (sims.len() - 2) as f64;
    let p = if r.abs() >= 1.0 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| AnalysisError::InvalidParameter(e.to_string()))?;
        (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
    };
    Ok((r, p))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<Arc<str>> {
        (0..n).map(|i| Arc::from(format!("d{i:02}"))).collect()
    }

    #[test]
    fn thirty_devices_give_435_pairs() {
        let items: Vec<f64> = (0..30).map(f64::from).collect();
        let m = pairwise_matrix(&ids(30), &items, |a, b| Ok(-(a - b).abs())).unwrap();
        assert_eq!(m.pairs().count(), 435);
        assert_eq!(m.get(3, 7), m.get(7, 3));
        assert_eq!(m.get(4, 4), 0.0);
    }

    #[test]
    fn errors_propagate() {
        let r = pairwise_matrix(&ids(3), &[1, 2, 3], |a, _| {
            if *a == 2 { Err(AnalysisError::ZeroVariance) } else { Ok(0.0) }
        });
        assert!(matches!(r, Err(AnalysisError::ZeroVariance)));
    }

    #[test]
    fn seats_must_be_unique() {
        let e = SeatMap::new([(Arc::from("a"), (0, 0)), (Arc::from("b"), (0, 0))]);
        assert!(matches!(e, Err(AnalysisError::DuplicateSeat((0, 0)))));
        let s = SeatMap::new([(Arc::from("a"), (0, 0)), (Arc::from("b"), (3, 4))]).unwrap();
        assert_eq!(s.distance("a", "b").unwrap(), 5.0);
        assert!(s.distance("a", "z").is_err());
    }

    #[test]
    fn similarity_falling_with_distance_is_negative_and_significant() {
        let n = 12;
        let id = ids(n);
        let seats = SeatMap::new(id.iter().enumerate().map(|(i, d)| (d.clone(), (i / 4, i % 4)))).unwrap();
        let items: Vec<usize> = (0..n).collect();
        let m = pairwise_matrix(&id, &items, |a, b| {
            let d = seats.distance(&id[*a], &id[*b])?;
            Ok(1.0 / (1.0 + d) + 0.01 * ((a * 7 + b * 3) % 5) as f64)
        })
        .unwrap();
        let (r, p) = sim_distance_correlation(&m, &seats).unwrap();
        assert!(r < -0.8 && p < 1e-6, "{r} {p}");
    }

    #[test]
    fn p_value_matches_reference() {
        // 5 pairs with r = 0.8: t = 0.8 * sqrt(3 / 0.36), two-sided p on 3 df.
        let id = ids(5);
        let seats = SeatMap::new(id.iter().enumerate().map(|(i, d)| (d.clone(), (0, i)))).unwrap();
        let m = PairMatrix { ids: id.clone(), values: vec![0.0; 25] };
        assert!(matches!(sim_distance_correlation(&m, &seats), Err(AnalysisError::ZeroVariance)));
        let t: f64 = 0.8 * (3.0f64 / 0.36).sqrt();
        let p = 2.0 * (1.0 - StudentsT::new(0.0, 1.0, 3.0).unwrap().cdf(t));
        assert!((p - 0.104088).abs() < 1e-5, "{p}");
    }
}
