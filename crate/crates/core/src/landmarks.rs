//! 68-point landmark model in the 300-W markup, its index groups, coordinate
//! normalization, and the `.pts` / JSON sidecar file formats.
//!
//! Coordinates are continuous, in pixels, with the origin at the center of the
//! top-left pixel.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of landmarks in the 300-W markup.
pub const NUM_LANDMARKS: usize = 68;

/// A 2-D point in pixel (or normalized) units.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn scaled(&self, sx: f64, sy: f64) -> Point {
        Point::new(self.x * sx, self.y * sy)
    }

    pub fn offset(&self, dx: f64, dy: f64) -> Point {
        Point::new(self.x + dx, self.y + dy)
    }
}

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Self {
        Point { x, y }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// The seven disjoint parts of the 300-W markup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaseGroup {
    Jaw,
    RightBrow,
    LeftBrow,
    Nose,
    RightEye,
    LeftEye,
    Mouth,
}

impl BaseGroup {
    pub const ALL: [BaseGroup; 7] = [
        BaseGroup::Jaw,
        BaseGroup::RightBrow,
        BaseGroup::LeftBrow,
        BaseGroup::Nose,
        BaseGroup::RightEye,
        BaseGroup::LeftEye,
        BaseGroup::Mouth,
    ];

    pub fn range(self) -> std::ops::Range<usize> {
        match self {
            BaseGroup::Jaw => 0..17,
            BaseGroup::RightBrow => 17..22,
            BaseGroup::LeftBrow => 22..27,
            BaseGroup::Nose => 27..36,
            BaseGroup::RightEye => 36..42,
            BaseGroup::LeftEye => 42..48,
            BaseGroup::Mouth => 48..68,
        }
    }

    pub fn indices(self) -> Vec<usize> {
        self.range().collect()
    }

    pub fn of_index(index: usize) -> Option<BaseGroup> {
        BaseGroup::ALL
            .into_iter()
            .find(|g| g.range().contains(&index))
    }
}

/// Named index subsets that can be selected from a [`LandmarkSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Group {
    Jaw,
    Brows,
    Nose,
    Eyes,
    LeftEyeRegion,
    RightEyeRegion,
    Mouth,
    Inner51,
    Registration41,
}

impl Group {
    /// Indices of the group in 300-W order.
    pub fn indices(self) -> Vec<usize> {
        use BaseGroup as B;
        let cat = |groups: &[BaseGroup]| -> Vec<usize> {
            let mut v: Vec<usize> = groups.iter().flat_map(|g| g.range()).collect();
            v.sort_unstable();
            v
        };
        match self {
            Group::Jaw => B::Jaw.indices(),
            Group::Brows => cat(&[B::RightBrow, B::LeftBrow]),
            Group::Nose => B::Nose.indices(),
            Group::Eyes => cat(&[B::RightEye, B::LeftEye]),
            Group::LeftEyeRegion => cat(&[B::LeftBrow, B::LeftEye]),
            Group::RightEyeRegion => cat(&[B::RightBrow, B::RightEye]),
            Group::Mouth => B::Mouth.indices(),
            Group::Inner51 => (17..68).collect(),
            Group::Registration41 => cat(&[B::RightEye, B::LeftEye, B::Nose, B::Mouth]),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Group::Jaw => "jaw",
            Group::Brows => "brows",
            Group::Nose => "nose",
            Group::Eyes => "eyes",
            Group::LeftEyeRegion => "left_eye_region",
            Group::RightEyeRegion => "right_eye_region",
            Group::Mouth => "mouth",
            Group::Inner51 => "inner51",
            Group::Registration41 => "registration41",
        }
    }
}

impl FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "jaw" => Group::Jaw,
            "brows" => Group::Brows,
            "nose" => Group::Nose,
            "eyes" => Group::Eyes,
            "left_eye_region" => Group::LeftEyeRegion,
            "right_eye_region" => Group::RightEyeRegion,
            "mouth" => Group::Mouth,
            "inner51" => Group::Inner51,
            "registration41" => Group::Registration41,
            other => return Err(Error::UnknownGroup(other.to_string())),
        })
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Horizontal mirror counterpart of each landmark index (left/right swap).
pub fn mirror_index(index: usize) -> usize {
    const JAW: usize = 16;
    match index {
        0..=16 => JAW - index,
        17..=26 => 17 + 26 - index,
        27..=30 => index,
        31..=35 => 31 + 35 - index,
        36..=39 => 36 + 45 - index, // 36<->45 .. 39<->42
        40 | 41 => 40 + 47 - index, // 40<->47, 41<->46
        42..=45 => 36 + 45 - index,
        46 | 47 => 40 + 47 - index,
        48..=54 => 48 + 54 - index,
        55..=59 => 55 + 59 - index,
        60..=64 => 60 + 64 - index,
        65..=67 => 65 + 67 - index,
        _ => index,
    }
}

/// Exactly 68 finite points with the frame they were annotated in.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    points: Vec<Point>,
    width: u32,
    height: u32,
}

impl LandmarkSet {
    pub fn new(points: Vec<Point>, width: u32, height: u32) -> Result<Self> {
        validate_points(&points)?;
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image size must be positive, got {width}x{height}"
            )));
        }
        Ok(Self {
            points,
            width,
            height,
        })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn size(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn select(&self, group: Group) -> Vec<Point> {
        group.indices().into_iter().map(|i| self.points[i]).collect()
    }

    /// Apply a coordinate map to every point, producing a set in a new frame.
    pub fn map_points(
        &self,
        width: u32,
        height: u32,
        f: impl Fn(Point) -> Point,
    ) -> Result<LandmarkSet> {
        LandmarkSet::new(self.points.iter().map(|&p| f(p)).collect(), width, height)
    }

    /// Scale points and frame by the given per-axis factors.
    pub fn rescaled(&self, sx: f64, sy: f64) -> Result<LandmarkSet> {
        let w = (self.width as f64 * sx).round().max(1.0) as u32;
        let h = (self.height as f64 * sy).round().max(1.0) as u32;
        self.map_points(w, h, |p| p.scaled(sx, sy))
    }

    pub fn centroid(&self) -> Point {
        centroid(&self.points)
    }
}

pub(crate) fn validate_points(points: &[Point]) -> Result<()> {
    if points.len() != NUM_LANDMARKS {
        return Err(Error::PointCount {
            expected: NUM_LANDMARKS,
            found: points.len(),
        });
    }
    if let Some(index) = points.iter().position(|p| !p.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    Ok(())
}

pub fn centroid(points: &[Point]) -> Point {
    let n = points.len().max(1) as f64;
    let (sx, sy) = points
        .iter()
        .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
    Point::new(sx / n, sy / n)
}

/// Select an index subset by group name.
pub fn select_group(landmarks: &LandmarkSet, group_name: &str) -> Result<Vec<Point>> {
    let group: Group = group_name.parse()?;
    Ok(landmarks.select(group))
}

/// Landmarks mapped into `[-0.5, 0.5]` relative to a reference size.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedLandmarkSet {
    pub points: Vec<Point>,
    pub ref_width: f64,
    pub ref_height: f64,
}

fn check_reference(ref_w: f64, ref_h: f64) -> Result<()> {
    if !(ref_w > 0.0 && ref_h > 0.0 && ref_w.is_finite() && ref_h.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "reference dimensions must be positive, got {ref_w}x{ref_h}"
        )));
    }
    Ok(())
}

pub fn normalize_point(p: Point, ref_w: f64, ref_h: f64) -> Point {
    Point::new(p.x / ref_w - 0.5, p.y / ref_h - 0.5)
}

pub fn denormalize_point(p: Point, ref_w: f64, ref_h: f64) -> Point {
    Point::new((p.x + 0.5) * ref_w, (p.y + 0.5) * ref_h)
}

pub fn normalize(landmarks: &LandmarkSet, ref_w: f64, ref_h: f64) -> Result<NormalizedLandmarkSet> {
    normalize_points(landmarks.points(), ref_w, ref_h)
}

pub fn normalize_points(points: &[Point], ref_w: f64, ref_h: f64) -> Result<NormalizedLandmarkSet> {
    check_reference(ref_w, ref_h)?;
    Ok(NormalizedLandmarkSet {
        points: points
            .iter()
            .map(|&p| normalize_point(p, ref_w, ref_h))
            .collect(),
        ref_width: ref_w,
        ref_height: ref_h,
    })
}

impl NormalizedLandmarkSet {
    pub fn denormalize(&self) -> Vec<Point> {
        self.points
            .iter()
            .map(|&p| denormalize_point(p, self.ref_width, self.ref_height))
            .collect()
    }
}

/// Coordinate origin used by a `.pts` file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PtsConvention {
    /// Standard 300-W files: the first pixel is at (1, 1).
    #[default]
    OneBased,
    ZeroBased,
}

impl PtsConvention {
    fn offset(self) -> f64 {
        match self {
            PtsConvention::OneBased => 1.0,
            PtsConvention::ZeroBased => 0.0,
        }
    }
}

/// Parse the body of a `.pts` file into 0-based points.
pub fn parse_pts(text: &str, convention: PtsConvention, path: &Path) -> Result<Vec<Point>> {
    let malformed = |reason: String| Error::Malformed {
        path: path.to_path_buf(),
        reason,
    };
    let mut declared = None;
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    for line in lines.by_ref() {
        if line == "{" {
            break;
        }
        if let Some(rest) = line.strip_prefix("n_points:") {
            let n: usize = rest
                .trim()
                .parse()
                .map_err(|_| malformed(format!("bad n_points line `{line}`")))?;
            declared = Some(n);
        } else if !line.starts_with("version:") {
            return Err(malformed(format!("unexpected header line `{line}`")));
        }
    }
    let declared = declared.ok_or_else(|| malformed("missing n_points header".into()))?;
    if declared != NUM_LANDMARKS {
        return Err(Error::PointCount {
            expected: NUM_LANDMARKS,
            found: declared,
        });
    }
    let offset = convention.offset();
    let mut points = Vec::with_capacity(declared);
    let mut closed = false;
    for line in lines {
        if line == "}" {
            closed = true;
            break;
        }
        let mut it = line.split_whitespace();
        let (Some(xs), Some(ys), None) = (it.next(), it.next(), it.next()) else {
            return Err(malformed(format!("expected `x y`, got `{line}`")));
        };
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| malformed(format!("bad coordinate `{s}`")))
        };
        points.push(Point::new(parse(xs)? - offset, parse(ys)? - offset));
    }
    if !closed {
        return Err(malformed("missing closing `}`".into()));
    }
    if points.len() != declared {
        return Err(Error::PointCount {
            expected: declared,
            found: points.len(),
        });
    }
    validate_points(&points)?;
    Ok(points)
}

pub fn format_pts(points: &[Point], convention: PtsConvention) -> String {
    let offset = convention.offset();
    let mut out = format!("version: 1\nn_points: {}\n{{\n", points.len());
    for p in points {
        out.push_str(&format!("{} {}\n", p.x + offset, p.y + offset));
    }
    out.push_str("}\n");
    out
}

/// Where a landmark annotation came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LandmarkSource {
    #[default]
    Manual,
    Model,
    Augmented,
}

/// JSON sidecar stored next to an image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub image: String,
    pub width: u32,
    pub height: u32,
    pub points: Vec<Point>,
    #[serde(default)]
    pub source: LandmarkSource,
}

impl Sidecar {
    pub fn new(image: impl Into<String>, landmarks: &LandmarkSet, source: LandmarkSource) -> Self {
        Sidecar {
            image: image.into(),
            width: landmarks.width(),
            height: landmarks.height(),
            points: landmarks.points().to_vec(),
            source,
        }
    }

    pub fn landmarks(&self) -> Result<LandmarkSet> {
        LandmarkSet::new(self.points.clone(), self.width, self.height)
    }

    /// Parse sidecar JSON, reporting non-finite coordinates by index.
    pub fn from_json(text: &str) -> Result<Sidecar> {
        #[derive(Deserialize)]
        struct Loose {
            image: String,
            width: u32,
            height: u32,
            points: Vec<[Option<f64>; 2]>,
            #[serde(default)]
            source: LandmarkSource,
        }
        let cleaned = replace_nonfinite_tokens(text);
        let loose: Loose = serde_json::from_str(&cleaned)?;
        let mut points = Vec::with_capacity(loose.points.len());
        for (index, [x, y]) in loose.points.into_iter().enumerate() {
            match (x, y) {
                (Some(x), Some(y)) if x.is_finite() && y.is_finite() => {
                    points.push(Point::new(x, y))
                }
                _ => return Err(Error::NonFinite { index }),
            }
        }
        if points.len() != NUM_LANDMARKS {
            return Err(Error::PointCount {
                expected: NUM_LANDMARKS,
                found: points.len(),
            });
        }
        Ok(Sidecar {
            image: loose.image,
            width: loose.width,
            height: loose.height,
            points,
            source: loose.source,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn read(path: &Path) -> Result<Sidecar> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Sidecar::from_json(&text).map_err(|e| match e {
            Error::Json(j) => Error::Malformed {
                path: path.to_path_buf(),
                reason: j.to_string(),
            },
            other => other,
        })
    }
}

/// Rewrite bare `NaN` / `Infinity` tokens (as emitted by some JSON writers)
/// to `null` so the document parses and the offending index can be reported.
fn replace_nonfinite_tokens(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut in_string = false;
    let mut escaped = false;
    let mut rest = text;
    while let Some(c) = rest.chars().next() {
        if in_string {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            rest = &rest[c.len_utf8()..];
            continue;
        }
        if c == '"' {
            in_string = true;
        }
        let token = ["-Infinity", "Infinity", "NaN"]
            .into_iter()
            .find(|t| rest.starts_with(t));
        match token {
            Some(t) => {
                out.push_str("null");
                rest = &rest[t.len()..];
            }
            None => {
                out.push(c);
                rest = &rest[c.len_utf8()..];
            }
        }
    }
    out
}

/// Options for [`read_landmarks`].
#[derive(Debug, Clone, Default)]
pub struct ReadOptions {
    pub pts_convention: PtsConvention,
    /// Frame size for `.pts` files, which do not record it. When absent, a
    /// sibling image with the same stem is probed.
    pub image_size: Option<(u32, u32)>,
}

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "PNG"];

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

/// Read a landmark file (`.pts` or JSON sidecar).
pub fn read_landmarks(path: &Path, opts: &ReadOptions) -> Result<LandmarkSet> {
    if is_json(path) {
        return Sidecar::read(path)?.landmarks();
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let points = parse_pts(&text, opts.pts_convention, path)?;
    let (w, h) = match opts.image_size {
        Some(size) => size,
        None => probe_sibling_image(path).ok_or_else(|| Error::Malformed {
            path: path.to_path_buf(),
            reason: "image size unknown: no sibling image and no explicit size".into(),
        })?,
    };
    LandmarkSet::new(points, w, h)
}

fn probe_sibling_image(path: &Path) -> Option<(u32, u32)> {
    IMAGE_EXTENSIONS
        .iter()
        .map(|ext| path.with_extension(ext))
        .find(|p| p.exists())
        .and_then(|p| image::image_dimensions(p).ok())
}

/// Write landmarks as `.pts` (1-based) or JSON sidecar depending on extension.
pub fn write_landmarks(landmarks: &LandmarkSet, path: &Path) -> Result<()> {
    let body = if is_json(path) {
        let image = path
            .with_extension("png")
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        Sidecar::new(image, landmarks, LandmarkSource::Manual).to_json()?
    } else {
        format_pts(landmarks.points(), PtsConvention::OneBased)
    };
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Write a sidecar with an explicit image reference and source.
pub fn write_sidecar(sidecar: &Sidecar, path: &Path) -> Result<()> {
    std::fs::write(path, sidecar.to_json()?).map_err(|e| Error::io(path, e))
}

pub fn sidecar_path_for(image: &Path) -> PathBuf {
    image.with_extension("json")
}
