//! Points and projective transforms in image coordinates.
//!
//! Origin top-left, x rightward, y downward, units pixels.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

const SINGULAR_W: f64 = 1e-12;
const SINGULAR_DET: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("projective singularity")]
    ProjectiveSingularity,
    #[error("homography is not invertible (det = {0:e})")]
    NotInvertible(f64),
    #[error("non-finite homography entries")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, o: Point) -> f64 {
        (self.x - o.x).hypot(self.y - o.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<(f64, f64)> for Point {
    fn from((x, y): (f64, f64)) -> Self {
        Self { x, y }
    }
}

/// Width and height of an image plane in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub width: u32,
    pub height: u32,
}

impl Dims {
    pub const fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }

    /// Inclusive bounds check.
    pub fn contains(&self, p: Point) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x <= self.width as f64 && p.y <= self.height as f64
    }

    pub fn area(&self) -> f64 {
        self.width as f64 * self.height as f64
    }

    pub fn center(&self) -> Point {
        Point::new(self.width as f64 / 2.0, self.height as f64 / 2.0)
    }

    pub fn corners(&self) -> [Point; 4] {
        let (w, h) = (self.width as f64, self.height as f64);
        [
            Point::new(0.0, 0.0),
            Point::new(w, 0.0),
            Point::new(w, h),
            Point::new(0.0, h),
        ]
    }
}

/// 3x3 projective transform with estimation diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Homography {
    #[serde(serialize_with = "ser_rows", deserialize_with = "de_rows")]
    pub m: Matrix3<f64>,
    pub inlier_count: usize,
    pub mean_reprojection_error: f64,
}

fn ser_rows<S: Serializer>(m: &Matrix3<f64>, s: S) -> Result<S::Ok, S::Error> {
    let rows: [[f64; 3]; 3] = std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]));
    rows.serialize(s)
}

fn de_rows<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix3<f64>, D::Error> {
    let rows = <[[f64; 3]; 3]>::deserialize(d)?;
    Ok(Matrix3::from_fn(|r, c| rows[r][c]))
}

/// Scales `m` so `m[2][2] = 1`, or to unit Frobenius norm when that entry
/// is near zero.
pub fn normalize_matrix(m: &Matrix3<f64>) -> Matrix3<f64> {
    let norm = m.norm();
    if norm == 0.0 {
        return *m;
    }
    let h22 = m[(2, 2)];
    if h22.abs() > 1e-9 * norm {
        m / h22
    } else {
        m / norm
    }
}

impl Homography {
    pub fn identity() -> Self {
        Self::from_matrix(Matrix3::identity()).expect("identity is invertible")
    }

    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let m = normalize_matrix(&m);
        let det = m.determinant();
        if !(det.abs() > SINGULAR_DET) {
            return Err(GeometryError::NotInvertible(det));
        }
        Ok(Self {
            m,
            inlier_count: 0,
            mean_reprojection_error: 0.0,
        })
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self, GeometryError> {
        Self::from_matrix(Matrix3::from_fn(|r, c| rows[r][c]))
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        std::array::from_fn(|r| std::array::from_fn(|c| self.m[(r, c)]))
    }

    /// Homogeneous multiply followed by the perspective divide.
    pub fn apply(&self, p: Point) -> Result<Point, GeometryError> {
        apply_matrix(&self.m, p)
    }

    pub fn inverse(&self) -> Result<Homography, GeometryError> {
        let inv = self
            .m
            .try_inverse()
            .ok_or(GeometryError::NotInvertible(self.m.determinant()))?;
        Self::from_matrix(inv)
    }

    /// `self ∘ first`: applies `first`, then `self`.
    pub fn after(&self, first: &Homography) -> Result<Homography, GeometryError> {
        Self::from_matrix(self.m * first.m)
    }
}

pub(crate) fn apply_matrix(m: &Matrix3<f64>, p: Point) -> Result<Point, GeometryError> {
    let v = m * Vector3::new(p.x, p.y, 1.0);
    if !(v.z.abs() >= SINGULAR_W) {
        return Err(GeometryError::ProjectiveSingularity);
    }
    Ok(Point::new(v.x / v.z, v.y / v.z))
}

/// Applies `h` to an ego-view point. Alias kept for call sites that read as
/// gaze mapping.
pub fn transform_gaze(h: &Homography, p: Point) -> Result<Point, GeometryError> {
    h.apply(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_and_scale() {
        let p = Point::new(100.0, 50.0);
        assert_eq!(transform_gaze(&Homography::identity(), p).unwrap(), p);
        let h = Homography::from_rows([[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        assert_eq!(transform_gaze(&h, p).unwrap(), Point::new(200.0, 100.0));
    }

    #[test]
    fn singular_w() {
        let h = Homography::from_rows([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.01, 0.0, 1.0]]).unwrap();
        assert_eq!(
            transform_gaze(&h, Point::new(-100.0, 3.0)),
            Err(GeometryError::ProjectiveSingularity)
        );
    }

    #[test]
    fn rejects_singular_matrix() {
        assert!(matches!(
            Homography::from_rows([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 0.0, 1.0]]),
            Err(GeometryError::NotInvertible(_))
        ));
        assert!(matches!(
            Homography::from_rows([[f64::NAN, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]),
            Err(GeometryError::NonFinite)
        ));
    }

    #[test]
    fn zero_h22_uses_frobenius() {
        let h = Homography::from_rows([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]]).unwrap();
        assert!((h.m.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn serde_is_row_major() {
        let h = Homography::from_rows([[1.0, 2.0, 3.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        let s = serde_json::to_string(&h).unwrap();
        assert!(s.starts_with(r#"{"m":[[1.0,2.0,3.0],"#), "{s}");
        let back: Homography = serde_json::from_str(&s).unwrap();
        assert_eq!(back, h);
    }

    fn arb_h() -> impl Strategy<Value = Homography> {
        (
            0.3f64..3.0,
            -0.3f64..0.3,
            -200.0f64..200.0,
            -200.0f64..200.0,
            -2e-4f64..2e-4,
            -2e-4f64..2e-4,
            0.5f64..2.0,
        )
            .prop_map(|(s, r, tx, ty, p, q, ay)| {
                Homography::from_rows([
                    [s * r.cos(), -s * r.sin(), tx],
                    [s * r.sin() * ay, s * r.cos() * ay, ty],
                    [p, q, 1.0],
                ])
                .unwrap()
            })
    }

    proptest! {
        #[test]
        fn scale_covariance(h in arb_h(), s in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0],
                            x in 0.0f64..720.0, y in 0.0f64..480.0) {
            let p = Point::new(x, y);
            let scaled = Homography { m: h.m * s, ..h.clone() };
            let a = transform_gaze(&h, p).unwrap();
            let b = transform_gaze(&scaled, p).unwrap();
            prop_assert!(a.dist(b) < 1e-9);
        }

        #[test]
        fn inverse_composes_to_identity(h in arb_h(), x in 0.0f64..720.0, y in 0.0f64..480.0) {
            let p = Point::new(x, y);
            let q = transform_gaze(&h, p).unwrap();
            let back = transform_gaze(&h.inverse().unwrap(), q).unwrap();
            prop_assert!(back.dist(p) < 1e-6);
        }
    }
}
