use nalgebra::{Matrix3, SMatrix, SVector, SymmetricEigen};

use crate::geometry::Point;

/// Similarity that moves the centroid to the origin and scales the mean
/// distance from it to √2.
fn normalizer(pts: impl Iterator<Item = Point> + Clone) -> Option<Matrix3<f64>> {
    let n = pts.clone().count() as f64;
    let (sx, sy) = pts.clone().fold((0.0, 0.0), |(a, b), p| (a + p.x, b + p.y));
    let (cx, cy) = (sx / n, sy / n);
    let mean = pts.map(|p| (p.x - cx).hypot(p.y - cy)).sum::<f64>() / n;
    if !(mean > 1e-12) {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean;
    Some(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

fn tf(t: &Matrix3<f64>, p: Point) -> (f64, f64) {
    (t[(0, 0)] * p.x + t[(0, 2)], t[(1, 1)] * p.y + t[(1, 2)])
}

/// Direct linear transform on normalized coordinates mapping `src[i]` onto
/// `dst[i]`. Needs at least four pairs; the null vector comes from the
/// eigen decomposition of the 9×9 normal matrix.
pub fn normalized_dlt(src: &[Point], dst: &[Point]) -> Option<Matrix3<f64>> {
    if src.len() < 4 || src.len() != dst.len() {
        return None;
    }
    let ts = normalizer(src.iter().copied())?;
    let td = normalizer(dst.iter().copied())?;
    let mut ata = SMatrix::<f64, 9, 9>::zeros();
    for (s, d) in src.iter().zip(dst) {
        let (x, y) = tf(&ts, *s);
        let (u, v) = tf(&td, *d);
        let r1 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r2 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for i in 0..9 {
            for j in i..9 {
                ata[(i, j)] += r1[i] * r1[j] + r2[i] * r2[j];
            }
        }
    }
    for i in 0..9 {
        for j in 0..i {
            ata[(i, j)] = ata[(j, i)];
        }
    }
    let eig = SymmetricEigen::new(ata);
    let k = eig.eigenvalues.imin();
    let h = eig.eigenvectors.column(k);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let m = td.try_inverse()? * hn * ts;
    m.iter().all(|v| v.is_finite()).then_some(m)
}

/// Exact homography through four correspondences, solved as an 8×8 linear
/// system with the last entry fixed to 1 after normalization. Falls back to
/// the eigen route when that system is singular.
pub fn minimal_dlt(src: &[Point; 4], dst: &[Point; 4]) -> Option<Matrix3<f64>> {
    let ts = normalizer(src.iter().copied())?;
    let td = normalizer(dst.iter().copied())?;
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for k in 0..4 {
        let (x, y) = tf(&ts, src[k]);
        let (u, v) = tf(&td, dst[k]);
        let (r1, r2) = (2 * k, 2 * k + 1);
        a.row_mut(r1).copy_from_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]);
        a.row_mut(r2).copy_from_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]);
        b[r1] = u;
        b[r2] = v;
    }
    let Some(h) = a.lu().solve(&b) else {
        return normalized_dlt(src, dst);
    };
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0);
    let m = td.try_inverse()? * hn * ts;
    m.iter().all(|v| v.is_finite()).then_some(m)
}
