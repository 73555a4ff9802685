//! Region crops around coarse landmarks, fused region inputs, and the mapping
//! of refined local coordinates back to the high-resolution frame.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landmarks::{mirror_index, Group, LandmarkSet, Point};
use crate::raster::{matmul, Image, ResampleWeights};

/// Side of the square patch fed to region networks.
pub const PATCH_SIZE: usize = 256;
/// Ratio between the high-resolution frame and the global network frame.
pub const UPSCALE_FACTOR: f64 = 4.0;
/// Fixed padding used at inference.
pub const INFERENCE_PADDING: f64 = 0.25;
/// Range of the randomized training padding.
pub const TRAINING_PADDING: (f64, f64) = (0.25, 0.5);

/// The three region network architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionKind {
    Eye,
    Nose,
    Mouth,
}

impl RegionKind {
    pub const ALL: [RegionKind; 3] = [RegionKind::Eye, RegionKind::Nose, RegionKind::Mouth];

    pub fn name(self) -> &'static str {
        match self {
            RegionKind::Eye => "eye",
            RegionKind::Nose => "nose",
            RegionKind::Mouth => "mouth",
        }
    }

    /// Landmarks predicted by a network of this kind.
    pub fn num_landmarks(self) -> usize {
        match self {
            RegionKind::Eye => 11,
            RegionKind::Nose => 9,
            RegionKind::Mouth => 20,
        }
    }

    pub fn input_channels(self) -> usize {
        3 + self.num_landmarks()
    }

    /// Global landmark indices of the network's output channels in the
    /// canonical (unmirrored) orientation.
    pub fn canonical_indices(self) -> Vec<usize> {
        match self {
            RegionKind::Eye => Region::LeftEye.group().indices(),
            RegionKind::Nose => Region::Nose.group().indices(),
            RegionKind::Mouth => Region::Mouth.group().indices(),
        }
    }
}

impl FromStr for RegionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eye" => Ok(RegionKind::Eye),
            "nose" => Ok(RegionKind::Nose),
            "mouth" => Ok(RegionKind::Mouth),
            other => Err(Error::UnknownRegion(other.to_string())),
        }
    }
}

/// The four facial regions refined at high resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    #[serde(rename = "left_eye_region")]
    LeftEye,
    #[serde(rename = "right_eye_region")]
    RightEye,
    #[serde(rename = "nose")]
    Nose,
    #[serde(rename = "mouth")]
    Mouth,
}

impl Region {
    pub const ALL: [Region; 4] = [Region::LeftEye, Region::RightEye, Region::Nose, Region::Mouth];

    pub fn name(self) -> &'static str {
        match self {
            Region::LeftEye => "left_eye_region",
            Region::RightEye => "right_eye_region",
            Region::Nose => "nose",
            Region::Mouth => "mouth",
        }
    }

    pub fn group(self) -> Group {
        match self {
            Region::LeftEye => Group::LeftEyeRegion,
            Region::RightEye => Group::RightEyeRegion,
            Region::Nose => Group::Nose,
            Region::Mouth => Group::Mouth,
        }
    }

    pub fn kind(self) -> RegionKind {
        match self {
            Region::LeftEye | Region::RightEye => RegionKind::Eye,
            Region::Nose => RegionKind::Nose,
            Region::Mouth => RegionKind::Mouth,
        }
    }

    /// Right-eye crops are mirrored so one eye network serves both eyes.
    pub fn mirrored(self) -> bool {
        self == Region::RightEye
    }

    pub fn num_landmarks(self) -> usize {
        self.kind().num_landmarks()
    }

    /// Global landmark index carried by each network channel, in network order.
    pub fn network_indices(self) -> Vec<usize> {
        let canonical = self.kind().canonical_indices();
        if self.mirrored() {
            canonical.into_iter().map(mirror_index).collect()
        } else {
            canonical
        }
    }
}

impl FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Region::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::UnknownRegion(s.to_string()))
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A square crop of the high-resolution image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionCrop {
    pub region: Region,
    /// `(x0, y0, w, h)` in high-resolution pixels.
    pub bbox: (f64, f64, f64, f64),
    pub patch_size: (usize, usize),
    /// `(w / patch_w, h / patch_h)`.
    pub scale: (f64, f64),
    pub padding_fraction: f64,
}

impl RegionCrop {
    pub fn origin(&self) -> Point {
        Point::new(self.bbox.0, self.bbox.1)
    }

    pub fn mirrored(&self) -> bool {
        self.region.mirrored()
    }

    /// `origin + local * scale`.
    pub fn local_to_global(&self, local: Point) -> Point {
        Point::new(
            self.bbox.0 + local.x * self.scale.0,
            self.bbox.1 + local.y * self.scale.1,
        )
    }

    pub fn global_to_local(&self, global: Point) -> Point {
        Point::new(
            (global.x - self.bbox.0) / self.scale.0,
            (global.y - self.bbox.1) / self.scale.1,
        )
    }

    /// Local coordinate as seen by the network (horizontally mirrored for
    /// mirrored regions). The map is its own inverse.
    pub fn to_network_frame(&self, local: Point) -> Point {
        if self.mirrored() {
            Point::new((self.patch_size.0 - 1) as f64 - local.x, local.y)
        } else {
            local
        }
    }

    /// High-resolution sampling positions of the network's patch columns and rows.
    pub fn sample_positions(&self) -> (Vec<f64>, Vec<f64>) {
        let xs = (0..self.patch_size.0)
            .map(|p| {
                let local = self.to_network_frame(Point::new(p as f64, 0.0)).x;
                self.bbox.0 + local * self.scale.0
            })
            .collect();
        let ys = (0..self.patch_size.1)
            .map(|q| self.bbox.1 + q as f64 * self.scale.1)
            .collect();
        (xs, ys)
    }

    /// Per-axis resampling weights from a high-resolution image of the given size.
    pub fn resample_weights(&self, hr_w: usize, hr_h: usize) -> (ResampleWeights, ResampleWeights) {
        let (xs, ys) = self.sample_positions();
        (
            ResampleWeights::triangle(hr_w, &xs, self.scale.0.max(1.0)),
            ResampleWeights::triangle(hr_h, &ys, self.scale.1.max(1.0)),
        )
    }

    /// Per-axis linear maps from the low-resolution global feature map straight
    /// to the patch: crop-resampling composed with bilinear upscaling by
    /// `factor`. Row-major `(patch x low_len)` matrices.
    pub fn feature_matrices(&self, low_w: usize, low_h: usize, factor: f64) -> (Vec<f64>, Vec<f64>) {
        let hr_w = (low_w as f64 * factor).round() as usize;
        let hr_h = (low_h as f64 * factor).round() as usize;
        let up = |low: usize, hr: usize| {
            let pos: Vec<f64> = (0..hr).map(|x| x as f64 / factor).collect();
            ResampleWeights::bilinear(low, &pos).to_dense()
        };
        let (cx, cy) = self.resample_weights(hr_w, hr_h);
        let mx = matmul(&cx.to_dense(), &up(low_w, hr_w), self.patch_size.0, hr_w, low_w);
        let my = matmul(&cy.to_dense(), &up(low_h, hr_h), self.patch_size.1, hr_h, low_h);
        (mx, my)
    }
}

/// Scale landmark coordinates from the global network frame to the
/// high-resolution frame.
pub fn upscale_global(points: &[Point], factor: f64) -> Vec<Point> {
    points.iter().map(|p| p.scaled(factor, factor)).collect()
}

pub fn downscale_global(points: &[Point], factor: f64) -> Vec<Point> {
    points.iter().map(|p| p.scaled(1.0 / factor, 1.0 / factor)).collect()
}

/// Tight box of the group, padded per side by `padding_fraction` of its
/// extent, made square about its center, then shifted (and only if needed
/// shrunk) to lie inside the image.
pub fn compute_region_bbox(
    region: Region,
    group_points: &[Point],
    padding_fraction: f64,
    image_w: u32,
    image_h: u32,
) -> Result<RegionCrop> {
    compute_region_bbox_with_patch(region, group_points, padding_fraction, image_w, image_h, PATCH_SIZE)
}

pub fn compute_region_bbox_with_patch(
    region: Region,
    group_points: &[Point],
    padding_fraction: f64,
    image_w: u32,
    image_h: u32,
    patch: usize,
) -> Result<RegionCrop> {
    if group_points.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "region {region} needs at least 2 points, got {}",
            group_points.len()
        )));
    }
    if !(padding_fraction >= 0.0 && padding_fraction.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "padding must be non-negative, got {padding_fraction}"
        )));
    }
    if let Some(index) = group_points.iter().position(|p| !p.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let min_x = group_points.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
    let max_x = group_points.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
    let min_y = group_points.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let max_y = group_points.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
    let (w, h) = (max_x - min_x, max_y - min_y);
    if w <= 0.0 && h <= 0.0 {
        return Err(Error::Degenerate(format!("region {region} has zero extent")));
    }
    let padded_w = w * (1.0 + 2.0 * padding_fraction);
    let padded_h = h * (1.0 + 2.0 * padding_fraction);
    let (cx, cy) = ((min_x + max_x) / 2.0, (min_y + max_y) / 2.0);
    let (iw, ih) = (image_w as f64, image_h as f64);
    let side = padded_w.max(padded_h).min(iw).min(ih);
    let x0 = (cx - side / 2.0).clamp(0.0, iw - side);
    let y0 = (cy - side / 2.0).clamp(0.0, ih - side);
    Ok(RegionCrop {
        region,
        bbox: (x0, y0, side, side),
        patch_size: (patch, patch),
        scale: (side / patch as f64, side / patch as f64),
        padding_fraction,
    })
}

/// Crop for a region from a full landmark set.
pub fn crop_for(region: Region, landmarks: &[Point], padding: f64, image_w: u32, image_h: u32, patch: usize) -> Result<RegionCrop> {
    let pts: Vec<Point> = region.group().indices().iter().map(|&i| landmarks[i]).collect();
    compute_region_bbox_with_patch(region, &pts, padding, image_w, image_h, patch)
}

/// Training-time padding, uniform in `[0.25, 0.5]`.
pub fn sample_padding(rng: &mut impl Rng) -> f64 {
    rng.gen_range(TRAINING_PADDING.0..=TRAINING_PADDING.1)
}

/// Resample the RGB patch of a crop in network orientation.
pub fn crop_rgb(image_hr: &Image, crop: &RegionCrop) -> Image {
    let (wx, wy) = crop.resample_weights(image_hr.width(), image_hr.height());
    image_hr.resample_separable(&wx, &wy)
}

/// Stack the RGB patch with the region's own channels of the upscaled global
/// feature maps, both resampled to the patch size: `3 + N_r` channels in
/// network channel order.
pub fn crop_and_fuse(image_hr: &Image, features_hr: &Image, crop: &RegionCrop) -> Result<Image> {
    if features_hr.channels() != crate::landmarks::NUM_LANDMARKS {
        return Err(Error::SizeMismatch(format!(
            "expected 68 feature channels, got {}",
            features_hr.channels()
        )));
    }
    let (x0, y0, w, h) = crop.bbox;
    let fits = |img: &Image| {
        x0 >= 0.0 && y0 >= 0.0 && x0 + w <= img.width() as f64 + 1e-9 && y0 + h <= img.height() as f64 + 1e-9
    };
    if !fits(features_hr) || !fits(image_hr) {
        return Err(Error::Internal(format!(
            "crop {:?} outside the {}x{} frame",
            crop.bbox,
            features_hr.width(),
            features_hr.height()
        )));
    }
    let rgb = crop_rgb(image_hr, crop);
    let (wx, wy) = crop.resample_weights(features_hr.width(), features_hr.height());
    let (pw, ph) = crop.patch_size;
    let indices = crop.region.network_indices();
    let mut data = Vec::with_capacity((3 + indices.len()) * pw * ph);
    data.extend_from_slice(rgb.data());
    for &i in &indices {
        let plane = Image::from_planes(
            features_hr.width(),
            features_hr.height(),
            1,
            features_hr.plane(i).to_vec(),
        )?;
        data.extend_from_slice(plane.resample_separable(&wx, &wy).data());
    }
    Image::from_planes(pw, ph, 3 + indices.len(), data)
}

/// Refined points for one region, in the region's group index order and
/// high-resolution pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionPrediction {
    pub region: Region,
    pub points: Vec<Point>,
}

/// Full 68-point result; regions without a refinement keep the global points
/// and are listed in `fallback_regions`.
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledPrediction {
    pub landmarks: LandmarkSet,
    pub fallback_regions: Vec<Region>,
}

impl AssembledPrediction {
    pub fn has_fallback(&self) -> bool {
        !self.fallback_regions.is_empty()
    }
}

/// Jaw from the global prediction; inner points from the refined regions.
pub fn assemble_full_prediction(
    global_hr: &LandmarkSet,
    refined: &[RegionPrediction],
) -> Result<AssembledPrediction> {
    let mut points = global_hr.points().to_vec();
    let mut fallback = Vec::new();
    for region in Region::ALL {
        match refined.iter().find(|r| r.region == region) {
            Some(r) => {
                let idx = region.group().indices();
                if r.points.len() != idx.len() {
                    return Err(Error::PointCount {
                        expected: idx.len(),
                        found: r.points.len(),
                    });
                }
                for (&i, &p) in idx.iter().zip(&r.points) {
                    points[i] = p;
                }
            }
            None => fallback.push(region),
        }
    }
    Ok(AssembledPrediction {
        landmarks: LandmarkSet::new(points, global_hr.width(), global_hr.height())?,
        fallback_regions: fallback,
    })
}
