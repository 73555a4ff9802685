use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landmarks::Point;

/// Rotation, uniform scale and translation:
/// `[[s cos t, -s sin t, tx], [s sin t, s cos t, ty]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    /// Radians, counter-clockwise in a y-up frame.
    pub angle: f64,
    pub scale: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Default for SimilarityTransform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl SimilarityTransform {
    pub const IDENTITY: SimilarityTransform = SimilarityTransform {
        angle: 0.0,
        scale: 1.0,
        tx: 0.0,
        ty: 0.0,
    };

    pub fn new(angle: f64, scale: f64, tx: f64, ty: f64) -> Self {
        Self {
            angle,
            scale,
            tx,
            ty,
        }
    }

    /// Build from the linear coefficients `a = s cos t`, `b = s sin t`.
    pub fn from_coefficients(a: f64, b: f64, tx: f64, ty: f64) -> Self {
        Self {
            angle: b.atan2(a),
            scale: a.hypot(b),
            tx,
            ty,
        }
    }

    fn coefficients(&self) -> (f64, f64) {
        (
            self.scale * self.angle.cos(),
            self.scale * self.angle.sin(),
        )
    }

    pub fn matrix(&self) -> [[f64; 3]; 2] {
        let (a, b) = self.coefficients();
        [[a, -b, self.tx], [b, a, self.ty]]
    }

    pub fn apply(&self, p: Point) -> Point {
        let (a, b) = self.coefficients();
        Point::new(a * p.x - b * p.y + self.tx, b * p.x + a * p.y + self.ty)
    }

    pub fn inverse(&self) -> SimilarityTransform {
        let inv_s = 1.0 / self.scale;
        let back = SimilarityTransform::new(-self.angle, inv_s, 0.0, 0.0);
        let t = back.apply(Point::new(self.tx, self.ty));
        SimilarityTransform::new(-self.angle, inv_s, -t.x, -t.y)
    }

    /// `self` after `first`: `p -> self(first(p))`.
    pub fn compose(&self, first: &SimilarityTransform) -> SimilarityTransform {
        let (a1, b1) = first.coefficients();
        let (a2, b2) = self.coefficients();
        let a = a2 * a1 - b2 * b1;
        let b = b2 * a1 + a2 * b1;
        let t = self.apply(Point::new(first.tx, first.ty));
        SimilarityTransform::from_coefficients(a, b, t.x, t.y)
    }

    pub fn angle_degrees(&self) -> f64 {
        self.angle.to_degrees()
    }

    /// Singular values of the linear part (equal by construction).
    pub fn singular_values(&self) -> (f64, f64) {
        let [[a, b, _], [c, d, _]] = self.matrix();
        let s1 = 0.5 * ((a + d).hypot(c - b) + (a - d).hypot(c + b));
        let s2 = 0.5 * ((a + d).hypot(c - b) - (a - d).hypot(c + b)).abs();
        (s1, s2)
    }

    pub fn residuals(&self, src: &[Point], dst: &[Point]) -> Vec<f64> {
        src.iter()
            .zip(dst)
            .map(|(s, d)| self.apply(*s).distance(d))
            .collect()
    }

    pub fn sum_squared_error(&self, src: &[Point], dst: &[Point]) -> f64 {
        self.residuals(src, dst).iter().map(|r| r * r).sum()
    }
}

/// Least-squares similarity from the centered cross-covariance.
pub fn fit_similarity(src: &[Point], dst: &[Point]) -> Result<SimilarityTransform> {
    if src.len() != dst.len() {
        return Err(Error::SizeMismatch(format!(
            "{} source vs {} destination points",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "similarity fit needs at least 2 correspondences, got {}",
            src.len()
        )));
    }
    let n = src.len() as f64;
    let mean = |pts: &[Point]| {
        let (x, y) = pts.iter().fold((0.0, 0.0), |(x, y), p| (x + p.x, y + p.y));
        Point::new(x / n, y / n)
    };
    let (ms, md) = (mean(src), mean(dst));
    let (mut sxx, mut dot, mut cross) = (0.0, 0.0, 0.0);
    for (s, d) in src.iter().zip(dst) {
        let (sx, sy) = (s.x - ms.x, s.y - ms.y);
        let (dx, dy) = (d.x - md.x, d.y - md.y);
        sxx += sx * sx + sy * sy;
        dot += sx * dx + sy * dy;
        cross += sx * dy - sy * dx;
    }
    if sxx <= f64::EPSILON * (ms.x.abs() + ms.y.abs() + 1.0).powi(2) {
        return Err(Error::Degenerate("all source points coincide".into()));
    }
    let a = dot / sxx;
    let b = cross / sxx;
    let tx = md.x - (a * ms.x - b * ms.y);
    let ty = md.y - (b * ms.x + a * ms.y);
    Ok(SimilarityTransform::from_coefficients(a, b, tx, ty))
}
