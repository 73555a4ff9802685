//! Thin-plate-spline displacement fields with kernel `U(r) = r^2 log r^2`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landmarks::Point;
use crate::raster::{Border, Image};

/// `U(r) = r^2 log(r^2)` evaluated from the squared distance, `U(0) = 0`.
#[inline]
pub fn kernel(r2: f64) -> f64 {
    if r2 <= 0.0 {
        0.0
    } else {
        r2 * r2.ln()
    }
}

/// A displacement field `d(p) = A [1, x, y]^T + sum_k w_k U(|p - c_k|)`
/// interpolating `control_dst - control_src` at `control_src`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TpsField {
    control_src: Vec<Point>,
    control_dst: Vec<Point>,
    /// Per output axis: `[a0, ax, ay]`.
    affine: [[f64; 3]; 2],
    /// Per control point: `[w_x, w_y]`.
    weights: Vec<[f64; 2]>,
    regularization: f64,
}

impl TpsField {
    /// Fit the field. `regularization` is added to the kernel diagonal in a
    /// frame where the control points are centered with unit RMS radius, so
    /// it is independent of image resolution.
    pub fn fit(src: &[Point], dst: &[Point], regularization: f64) -> Result<TpsField> {
        let k = src.len();
        if k != dst.len() {
            return Err(Error::SizeMismatch(format!(
                "{k} source vs {} destination control points",
                dst.len()
            )));
        }
        if k < 3 {
            return Err(Error::Degenerate(format!(
                "thin-plate spline needs at least 3 control points, got {k}"
            )));
        }
        if !(regularization >= 0.0 && regularization.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "regularization must be non-negative, got {regularization}"
            )));
        }
        if let Some(i) = src.iter().chain(dst).position(|p| !p.is_finite()) {
            return Err(Error::NonFinite { index: i % k });
        }

        // Normalize the source frame for conditioning.
        let n = k as f64;
        let mean = Point::new(
            src.iter().map(|p| p.x).sum::<f64>() / n,
            src.iter().map(|p| p.y).sum::<f64>() / n,
        );
        let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
        for p in src {
            let (dx, dy) = (p.x - mean.x, p.y - mean.y);
            sxx += dx * dx;
            sxy += dx * dy;
            syy += dy * dy;
        }
        let scale = ((sxx + syy) / n).sqrt();
        if scale == 0.0 {
            return Err(Error::Degenerate("all control points coincide".into()));
        }
        let (sxx, sxy, syy) = (sxx / n / (scale * scale), sxy / n / (scale * scale), syy / n / (scale * scale));
        let trace = sxx + syy;
        let det = sxx * syy - sxy * sxy;
        let min_eig = trace / 2.0 - ((trace * trace / 4.0 - det).max(0.0)).sqrt();
        if min_eig < 1e-10 {
            return Err(Error::Degenerate("control points are collinear".into()));
        }
        let norm: Vec<Point> = src
            .iter()
            .map(|p| Point::new((p.x - mean.x) / scale, (p.y - mean.y) / scale))
            .collect();
        for i in 0..k {
            for j in 0..i {
                if norm[i].distance(&norm[j]) < 1e-9 {
                    return Err(Error::Degenerate(format!(
                        "duplicate control points {j} and {i}"
                    )));
                }
            }
        }

        let size = k + 3;
        let mut l = DMatrix::<f64>::zeros(size, size);
        for i in 0..k {
            for j in 0..k {
                let dx = norm[i].x - norm[j].x;
                let dy = norm[i].y - norm[j].y;
                l[(i, j)] = kernel(dx * dx + dy * dy);
            }
            l[(i, i)] += regularization;
            for (c, v) in [1.0, norm[i].x, norm[i].y].into_iter().enumerate() {
                l[(i, k + c)] = v;
                l[(k + c, i)] = v;
            }
        }
        let lu = l.lu();
        let mut solved = [DVector::zeros(size), DVector::zeros(size)];
        for (axis, out) in solved.iter_mut().enumerate() {
            let mut rhs = DVector::<f64>::zeros(size);
            for i in 0..k {
                rhs[i] = if axis == 0 {
                    dst[i].x - src[i].x
                } else {
                    dst[i].y - src[i].y
                };
            }
            *out = lu
                .solve(&rhs)
                .ok_or_else(|| Error::Degenerate("singular thin-plate-spline system".into()))?;
            if out.iter().any(|v| !v.is_finite()) {
                return Err(Error::Degenerate("singular thin-plate-spline system".into()));
            }
        }

        // Express the solution in pixel coordinates:
        // U(s r) = s^2 U(r) + s^2 ln(s^2) r^2, and with the side conditions
        // sum_k w_k |p - c_k|^2 is the constant sum_k w_k |c_k|^2.
        let s2 = scale * scale;
        let log_s2 = s2.ln();
        let mut weights = vec![[0.0; 2]; k];
        let mut affine = [[0.0; 3]; 2];
        for axis in 0..2 {
            let sol = &solved[axis];
            let mut bias = 0.0;
            for i in 0..k {
                let wn = sol[i];
                weights[i][axis] = wn / s2;
                let c2 = norm[i].x * norm[i].x + norm[i].y * norm[i].y;
                bias -= log_s2 * wn * c2;
            }
            let (a0, ax, ay) = (sol[k], sol[k + 1], sol[k + 2]);
            affine[axis] = [
                a0 + bias - (ax * mean.x + ay * mean.y) / scale,
                ax / scale,
                ay / scale,
            ];
        }
        Ok(TpsField {
            control_src: src.to_vec(),
            control_dst: dst.to_vec(),
            affine,
            weights,
            regularization,
        })
    }

    /// Field whose displacement is zero everywhere.
    pub fn identity() -> TpsField {
        TpsField {
            control_src: Vec::new(),
            control_dst: Vec::new(),
            affine: [[0.0; 3]; 2],
            weights: Vec::new(),
            regularization: 0.0,
        }
    }

    pub fn control_src(&self) -> &[Point] {
        &self.control_src
    }

    pub fn control_dst(&self) -> &[Point] {
        &self.control_dst
    }

    pub fn affine(&self) -> [[f64; 3]; 2] {
        self.affine
    }

    pub fn weights(&self) -> &[[f64; 2]] {
        &self.weights
    }

    pub fn regularization(&self) -> f64 {
        self.regularization
    }

    pub fn displacement(&self, p: Point) -> Point {
        let [ax, ay] = self.affine;
        let mut dx = ax[0] + ax[1] * p.x + ax[2] * p.y;
        let mut dy = ay[0] + ay[1] * p.x + ay[2] * p.y;
        for (c, w) in self.control_src.iter().zip(&self.weights) {
            let u = kernel((p.x - c.x).powi(2) + (p.y - c.y).powi(2));
            dx += w[0] * u;
            dy += w[1] * u;
        }
        Point::new(dx, dy)
    }

    /// `p + d(p)`.
    pub fn map(&self, p: Point) -> Point {
        let d = self.displacement(p);
        Point::new(p.x + d.x, p.y + d.y)
    }

    /// Largest distance between `map(control_src_k)` and `control_dst_k`.
    pub fn max_control_residual(&self) -> f64 {
        self.control_src
            .iter()
            .zip(&self.control_dst)
            .map(|(s, d)| self.map(*s).distance(d))
            .fold(0.0, f64::max)
    }

    /// `[sum w, sum w x, sum w y]` per axis.
    pub fn side_conditions(&self) -> [[f64; 3]; 2] {
        let mut out = [[0.0; 3]; 2];
        for (c, w) in self.control_src.iter().zip(&self.weights) {
            for axis in 0..2 {
                out[axis][0] += w[axis];
                out[axis][1] += w[axis] * c.x;
                out[axis][2] += w[axis] * c.y;
            }
        }
        out
    }
}

/// Backward warp: output pixel `q` samples the input at `field.map(q)`
/// (bilinear, edge replication). The field must map output to input
/// coordinates, i.e. be fitted from displaced to original positions.
pub fn tps_warp_image(image: &Image, field: &TpsField) -> Image {
    image.warp(image.width(), image.height(), Border::Replicate, |q| {
        field.map(q)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> Vec<Point> {
        vec![
            Point::new(0.0, 0.0),
            Point::new(100.0, 0.0),
            Point::new(100.0, 100.0),
            Point::new(0.0, 100.0),
        ]
    }

    #[test]
    fn identity_controls_give_zero_field() {
        let src = square();
        let f = TpsField::fit(&src, &src, 0.0).unwrap();
        assert!(f.weights().iter().all(|w| w[0] == 0.0 && w[1] == 0.0));
        assert_eq!(f.affine(), [[0.0; 3]; 2]);
        assert_eq!(f.displacement(Point::new(37.0, -12.0)), Point::new(0.0, 0.0));
    }

    #[test]
    fn pure_translation_is_absorbed_by_affine_part() {
        let src = square();
        let dst: Vec<Point> = src.iter().map(|p| p.offset(7.0, -3.0)).collect();
        let f = TpsField::fit(&src, &dst, 0.0).unwrap();
        for q in [Point::new(50.0, 50.0), Point::new(-300.0, 1000.0), Point::new(3.0, 4.0)] {
            let d = f.displacement(q);
            assert!((d.x - 7.0).abs() < 1e-9 && (d.y + 3.0).abs() < 1e-9, "{d:?}");
        }
    }

    #[test]
    fn degenerate_configurations() {
        let line = vec![Point::new(0.0, 0.0), Point::new(1.0, 1.0), Point::new(2.0, 2.0)];
        assert!(matches!(TpsField::fit(&line, &line, 0.0), Err(Error::Degenerate(_))));
        let dup = vec![
            Point::new(0.0, 0.0),
            Point::new(5.0, 0.0),
            Point::new(0.0, 5.0),
            Point::new(5.0, 0.0),
        ];
        assert!(matches!(TpsField::fit(&dup, &dup, 0.0), Err(Error::Degenerate(_))));
        assert!(TpsField::fit(&square()[..2], &square()[..2], 0.0).is_err());
        assert!(TpsField::fit(&square(), &square(), -1.0).is_err());
    }

    #[test]
    fn regularization_smooths_instead_of_interpolating() {
        let src = vec![
            Point::new(0.0, 0.0),
            Point::new(100.0, 0.0),
            Point::new(100.0, 100.0),
            Point::new(0.0, 100.0),
            Point::new(50.0, 50.0),
        ];
        let mut dst = src.clone();
        dst[4] = dst[4].offset(20.0, 0.0);
        let exact = TpsField::fit(&src, &dst, 0.0).unwrap();
        let smooth = TpsField::fit(&src, &dst, 1.0).unwrap();
        assert!(exact.max_control_residual() < 1e-9);
        assert!(smooth.max_control_residual() > 1.0);
        assert!(smooth.displacement(src[4]).x < 20.0);
    }

    #[test]
    fn pixel_frame_conversion_matches_normalized_solution_at_large_scales() {
        let src: Vec<Point> = (0..12)
            .map(|i| {
                let a = i as f64 * 0.7;
                Point::new(512.0 + 300.0 * a.cos() + i as f64, 480.0 + 250.0 * a.sin())
            })
            .collect();
        let dst: Vec<Point> = src
            .iter()
            .enumerate()
            .map(|(i, p)| p.offset((i as f64).sin() * 9.0, (i as f64 * 1.3).cos() * 6.0))
            .collect();
        let f = TpsField::fit(&src, &dst, 0.0).unwrap();
        assert!(f.max_control_residual() < 1e-6);
        let sc = f.side_conditions();
        for axis in sc {
            assert!(axis.iter().all(|v| v.abs() < 1e-8), "{axis:?}");
        }
    }

    #[test]
    fn constant_field_shifts_image_left() {
        let mut img = Image::new(40, 8, 1);
        for y in 0..8 {
            for x in 0..40 {
                img.set(0, x, y, x as f32 / 40.0);
            }
        }
        let src = square();
        let dst: Vec<Point> = src.iter().map(|p| p.offset(10.0, 0.0)).collect();
        let f = TpsField::fit(&src, &dst, 0.0).unwrap();
        let out = tps_warp_image(&img, &f);
        for y in 0..8 {
            for x in 0..40 {
                let expect = img.get(0, (x + 10).min(39), y);
                assert!((out.get(0, x, y) - expect).abs() < 1e-5);
            }
        }
    }
}
