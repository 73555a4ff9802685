//! Landmark-driven registration of portrait pairs and comparison overlays.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ransac_similarity, RansacConfig, SimilarityTransform};
use crate::landmarks::{Group, LandmarkSet, Point};
use crate::raster::{Border, Image};
use crate::synthetic::{disc, stroke};

pub const INLIER_COLOR: [f32; 3] = [0.0, 1.0, 0.0];
pub const OUTLIER_COLOR: [f32; 3] = [1.0, 0.0, 0.0];

/// Outcome of registering a source portrait onto a target frame.
#[derive(Debug, Clone)]
pub struct RegistrationResult {
    /// Maps source pixels to target pixels.
    pub transform: SimilarityTransform,
    pub inlier_mask: Vec<bool>,
    pub inliers: Vec<(Point, Point)>,
    pub outliers: Vec<(Point, Point)>,
    pub num_trials: usize,
    pub threshold_px: f64,
    /// Source image resampled into the target frame.
    pub warped: Image,
}

/// Fit a similarity on the 41 eye, nose and mouth landmarks with RANSAC and
/// warp `src_image` into a `target_w x target_h` frame (bilinear, zero border).
/// With `ransac = None` the threshold is 1% of the target diagonal.
pub fn register(
    src_landmarks: &LandmarkSet,
    dst_landmarks: &LandmarkSet,
    src_image: &Image,
    target_w: usize,
    target_h: usize,
    ransac: Option<RansacConfig>,
) -> Result<RegistrationResult> {
    let cfg = ransac.unwrap_or_else(|| RansacConfig::for_image(target_w as u32, target_h as u32));
    let src = src_landmarks.select(Group::Registration41);
    let dst = dst_landmarks.select(Group::Registration41);
    let fit = ransac_similarity(&src, &dst, &cfg)?;
    let inverse = fit.transform.inverse();
    let warped = src_image.warp(target_w, target_h, Border::Zero, |q| inverse.apply(q));
    let mut inliers = Vec::new();
    let mut outliers = Vec::new();
    for ((s, d), &m) in src.iter().zip(&dst).zip(&fit.inlier_mask) {
        if m {
            inliers.push((*s, *d));
        } else {
            outliers.push((*s, *d));
        }
    }
    Ok(RegistrationResult {
        transform: fit.transform,
        inlier_mask: fit.inlier_mask,
        inliers,
        outliers,
        num_trials: fit.num_trials,
        threshold_px: cfg.threshold_px,
        warped,
    })
}

/// Per-pixel `alpha * target + (1 - alpha) * warped`.
pub fn blend_overlay(target: &Image, warped: &Image, alpha: f64) -> Result<Image> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha must be in [0, 1], got {alpha}")));
    }
    let shape = |i: &Image| (i.width(), i.height(), i.channels());
    if shape(target) != shape(warped) {
        return Err(Error::SizeMismatch(format!(
            "target {:?} vs warped {:?}",
            shape(target),
            shape(warped)
        )));
    }
    let a = alpha as f32;
    let data = target
        .data()
        .iter()
        .zip(warped.data())
        .map(|(t, w)| a * t + (1.0 - a) * w)
        .collect();
    Image::from_planes(target.width(), target.height(), target.channels(), data)
}

/// Binary contour map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContourMap {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl ContourMap {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::SizeMismatch(format!("{} cells for {width}x{height}", data.len())));
        }
        Ok(Self { width, height, data })
    }

    /// Threshold the mean intensity at 50%; foreground is bright unless `invert`.
    pub fn from_image(img: &Image, invert: bool) -> Self {
        let (w, h, c) = (img.width(), img.height(), img.channels().max(1));
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let v: f32 = (0..img.channels()).map(|k| img.get(k, x, y)).sum::<f32>() / c as f32;
                data.push((v >= 0.5) != invert);
            }
        }
        Self { width: w, height: h, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    /// Dilation by a disc of the given radius in pixels.
    pub fn dilate(&self, radius: usize) -> ContourMap {
        if radius == 0 {
            return self.clone();
        }
        let r = radius as i64;
        let offsets: Vec<(i64, i64)> = (-r..=r)
            .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
            .filter(|(dx, dy)| dx * dx + dy * dy <= r * r)
            .collect();
        let (w, h) = (self.width as i64, self.height as i64);
        let mut out = vec![false; self.data.len()];
        for y in 0..h {
            for x in 0..w {
                if !self.data[(y * w + x) as usize] {
                    continue;
                }
                for (dx, dy) in &offsets {
                    let (u, v) = (x + dx, y + dy);
                    if u >= 0 && v >= 0 && u < w && v < h {
                        out[(v * w + u) as usize] = true;
                    }
                }
            }
        }
        ContourMap {
            width: self.width,
            height: self.height,
            data: out,
        }
    }
}

/// Contour pixels are white where at least two maps cover them (after
/// dilation by `radius`), otherwise the color of the map that owns them;
/// the background is black.
pub fn intersection_contour_overlay(maps: &[ContourMap], colors: &[[f32; 3]], radius: usize) -> Result<Image> {
    if maps.len() < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 contour maps, got {}", maps.len())));
    }
    if colors.len() != maps.len() {
        return Err(Error::InvalidArgument(format!(
            "{} colors for {} maps",
            colors.len(),
            maps.len()
        )));
    }
    let (w, h) = (maps[0].width, maps[0].height);
    if maps.iter().any(|m| m.width != w || m.height != h) {
        return Err(Error::SizeMismatch("contour maps differ in size".into()));
    }
    let dilated: Vec<ContourMap> = maps.iter().map(|m| m.dilate(radius)).collect();
    let mut out = Image::new(w, h, 3);
    for y in 0..h {
        for x in 0..w {
            let owner = match maps.iter().position(|m| m.get(x, y)) {
                Some(o) => o,
                None => continue,
            };
            let covering = dilated.iter().filter(|m| m.get(x, y)).count();
            let color = if covering >= 2 { [1.0; 3] } else { colors[owner] };
            for (c, v) in color.iter().enumerate() {
                out.set(c, x, y, *v);
            }
        }
    }
    Ok(out)
}

/// Default distinct colors for contour overlays.
pub fn palette(n: usize) -> Vec<[f32; 3]> {
    const BASE: [[f32; 3]; 6] = [
        [1.0, 0.2, 0.2],
        [0.2, 0.6, 1.0],
        [1.0, 0.8, 0.1],
        [0.3, 0.9, 0.3],
        [0.8, 0.3, 1.0],
        [0.1, 0.9, 0.9],
    ];
    (0..n).map(|i| BASE[i % BASE.len()]).collect()
}

/// Source and target side by side with correspondence lines, green for
/// inliers and red for outliers.
pub fn draw_matches(src_image: &Image, target: &Image, result: &RegistrationResult) -> Image {
    let w = src_image.width() + target.width();
    let h = src_image.height().max(target.height());
    let mut canvas = src_image.pad(w, h, 0, 0);
    for c in 0..3.min(target.channels()) {
        for y in 0..target.height() {
            for x in 0..target.width() {
                canvas.set(c, x + src_image.width(), y, target.get(c, x, y));
            }
        }
    }
    let off = src_image.width() as f64;
    let r = (w.max(h) as f64 / 800.0).max(0.5);
    for (pairs, color) in [(&result.outliers, OUTLIER_COLOR), (&result.inliers, INLIER_COLOR)] {
        for (s, d) in pairs.iter() {
            let d = d.offset(off, 0.0);
            stroke(&mut canvas, &[*s, d], false, r, &color);
            disc(&mut canvas, *s, 2.0 * r, &color);
            disc(&mut canvas, d, 2.0 * r, &color);
        }
    }
    canvas
}

/// Serialized form of a registration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformReport {
    pub angle_rad: f64,
    pub angle_deg: f64,
    pub scale: f64,
    pub tx: f64,
    pub ty: f64,
    pub matrix: [[f64; 3]; 2],
    pub num_inliers: usize,
    pub inlier_mask: Vec<bool>,
    pub threshold_px: f64,
    pub num_trials: usize,
}

impl TransformReport {
    pub fn of(result: &RegistrationResult) -> Self {
        let t = &result.transform;
        Self {
            angle_rad: t.angle,
            angle_deg: t.angle_degrees(),
            scale: t.scale,
            tx: t.tx,
            ty: t.ty,
            matrix: t.matrix(),
            num_inliers: result.inliers.len(),
            inlier_mask: result.inlier_mask.clone(),
            threshold_px: result.threshold_px,
            num_trials: result.num_trials,
        }
    }
}

/// Write `transform.json`, `overlay.png`, `matches.png` and, when contour
/// maps are given, `intersection.png`.
pub fn write_artifacts(
    out_dir: &Path,
    result: &RegistrationResult,
    src_image: &Image,
    target: &Image,
    alpha: f64,
    contours: Option<(&[ContourMap], usize)>,
) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let json = serde_json::to_string_pretty(&TransformReport::of(result))?;
    let p = out_dir.join("transform.json");
    fs::write(&p, json).map_err(|e| Error::io(&p, e))?;
    blend_overlay(target, &result.warped, alpha)?.save(&out_dir.join("overlay.png"))?;
    draw_matches(src_image, target, result).save(&out_dir.join("matches.png"))?;
    if let Some((maps, radius)) = contours {
        intersection_contour_overlay(maps, &palette(maps.len()), radius)?.save(&out_dir.join("intersection.png"))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::random_face;

    #[test]
    fn self_registration_is_identity() {
        let (img, lm) = random_face(128, 1);
        let r = register(&lm, &lm, &img, 128, 128, None).unwrap();
        assert_eq!(r.inliers.len(), 41);
        let t = r.transform;
        assert!(t.angle.abs() < 1e-9 && (t.scale - 1.0).abs() < 1e-9 && t.tx.abs() < 1e-7 && t.ty.abs() < 1e-7);
        assert!(r.warped.max_abs_diff(&img) < 1e-4);
    }

    #[test]
    fn recovers_synthetic_transform() {
        let (img, lm) = random_face(128, 2);
        let truth = SimilarityTransform::new(0.2, 0.9, 10.0, -6.0);
        let dst = lm.map_points(128, 128, |p| truth.apply(p)).unwrap();
        let r = register(&lm, &dst, &img, 128, 128, None).unwrap();
        let t = r.transform;
        assert!((t.angle - 0.2).abs() < 1e-3 && (t.scale - 0.9).abs() < 1e-3);
        assert!((t.tx - 10.0).abs() < 1e-3 && (t.ty + 6.0).abs() < 1e-3);
        let inv = truth.inverse();
        let expected = img.warp(128, 128, Border::Zero, |q| inv.apply(q));
        assert!(r.warped.max_abs_diff(&expected) < 1e-2);
    }

    #[test]
    fn blend_examples() {
        let t = Image::filled(4, 3, &[100.0, 100.0, 100.0]);
        let w = Image::filled(4, 3, &[200.0, 200.0, 200.0]);
        assert_eq!(blend_overlay(&t, &w, 1.0).unwrap(), t);
        assert_eq!(blend_overlay(&t, &w, 0.0).unwrap(), w);
        assert!(blend_overlay(&t, &w, 0.5).unwrap().data().iter().all(|&v| v == 150.0));
        assert!(blend_overlay(&t, &Image::new(3, 3, 3), 0.5).is_err());
        assert!(blend_overlay(&t, &w, 1.5).is_err());
    }

    fn line(w: usize, h: usize, f: impl Fn(usize, usize) -> bool) -> ContourMap {
        let data = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        ContourMap::new(w, h, data).unwrap()
    }

    #[test]
    fn overlay_cases() {
        let a = line(20, 20, |x, y| x == y);
        let colors = palette(2);
        let same = intersection_contour_overlay(&[a.clone(), a.clone()], &colors, 1).unwrap();
        for i in 0..20 {
            assert_eq!([same.get(0, i, i), same.get(1, i, i), same.get(2, i, i)], [1.0; 3]);
        }
        let b = line(20, 20, |x, y| x == 19 - y);
        let cross = intersection_contour_overlay(&[a.clone(), b.clone()], &colors, 0).unwrap();
        for y in 0..20 {
            for x in 0..20 {
                let white = (0..3).all(|c| cross.get(c, x, y) == 1.0);
                assert_eq!(white, a.get(x, y) && b.get(x, y));
            }
        }
        let far = line(20, 20, |x, _| x == 0);
        let near = line(20, 20, |x, _| x == 10);
        let disjoint = intersection_contour_overlay(&[far, near], &colors, 1).unwrap();
        assert_eq!(disjoint.get(0, 0, 5), colors[0][0]);
        assert_eq!(disjoint.get(2, 10, 5), colors[1][2]);
        assert_eq!(disjoint.get(0, 5, 5), 0.0);
        assert!(intersection_contour_overlay(&[a], &colors[..1], 1).is_err());
    }

    #[test]
    fn contour_threshold_and_invert() {
        let mut img = Image::filled(3, 1, &[0.9, 0.9, 0.9]);
        img.set(0, 1, 0, 0.0);
        img.set(1, 1, 0, 0.0);
        img.set(2, 1, 0, 0.0);
        let m = ContourMap::from_image(&img, false);
        assert!(m.get(0, 0) && !m.get(1, 0));
        let inv = ContourMap::from_image(&img, true);
        assert!(!inv.get(0, 0) && inv.get(1, 0));
    }

    #[test]
    fn artifacts_written() {
        let (img, lm) = random_face(64, 3);
        let r = register(&lm, &lm, &img, 64, 64, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let maps = [ContourMap::from_image(&img, false), ContourMap::from_image(&r.warped, false)];
        write_artifacts(dir.path(), &r, &img, &img, 0.5, Some((&maps, 1))).unwrap();
        for f in ["transform.json", "overlay.png", "matches.png", "intersection.png"] {
            assert!(dir.path().join(f).is_file(), "{f}");
        }
        let t: TransformReport =
            serde_json::from_str(&fs::read_to_string(dir.path().join("transform.json")).unwrap()).unwrap();
        assert_eq!(t.num_inliers, 41);
    }
}
