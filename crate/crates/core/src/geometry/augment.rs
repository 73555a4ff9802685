//! Geometric landmark augmentation: per-group shifts and resizes plus a
//! whole-face stretch, with a thin-plate-spline field for warping the image
//! consistently.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tps::TpsField;
use crate::error::{Error, Result};
use crate::landmarks::{centroid, BaseGroup, LandmarkSet, Point};

/// Groups that can be moved independently.
pub const AUGMENTABLE_GROUPS: [BaseGroup; 6] = [
    BaseGroup::RightBrow,
    BaseGroup::LeftBrow,
    BaseGroup::RightEye,
    BaseGroup::LeftEye,
    BaseGroup::Nose,
    BaseGroup::Mouth,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Maximum group shift per axis as a fraction of the face bounding-box diagonal.
    pub group_shift_fraction: f64,
    /// Uniform range for per-group resizing about the group centroid.
    pub group_scale: (f64, f64),
    /// Uniform range for the per-axis whole-face stretch.
    pub stretch: (f64, f64),
    /// Probability that a given group is moved.
    pub group_probability: f64,
    pub max_retries: usize,
    /// Pin the image corners and edge midpoints so the frame border stays fixed.
    pub border_anchors: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            group_shift_fraction: 0.02,
            group_scale: (0.93, 1.07),
            stretch: (0.92, 1.08),
            group_probability: 0.5,
            max_retries: 10,
            border_anchors: true,
        }
    }
}

impl AugmentConfig {
    /// All magnitudes zero: the identity augmentation.
    pub fn none() -> Self {
        Self {
            group_shift_fraction: 0.0,
            group_scale: (1.0, 1.0),
            stretch: (1.0, 1.0),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok_range = |(lo, hi): (f64, f64)| lo > 0.0 && lo <= hi && hi.is_finite();
        if !(self.group_shift_fraction >= 0.0
            && ok_range(self.group_scale)
            && ok_range(self.stretch)
            && (0.0..=1.0).contains(&self.group_probability))
        {
            return Err(Error::InvalidArgument(format!(
                "invalid augmentation config {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupOp {
    #[serde(with = "group_serde")]
    pub group: BaseGroup,
    pub shift: Point,
    pub scale: f64,
}

mod group_serde {
    use super::BaseGroup;
    use serde::{Deserialize, Deserializer, Serializer};

    fn name(g: BaseGroup) -> &'static str {
        match g {
            BaseGroup::Jaw => "jaw",
            BaseGroup::RightBrow => "right_brow",
            BaseGroup::LeftBrow => "left_brow",
            BaseGroup::Nose => "nose",
            BaseGroup::RightEye => "right_eye",
            BaseGroup::LeftEye => "left_eye",
            BaseGroup::Mouth => "mouth",
        }
    }

    pub fn serialize<S: Serializer>(g: &BaseGroup, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(name(*g))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BaseGroup, D::Error> {
        let s = String::deserialize(d)?;
        BaseGroup::ALL
            .into_iter()
            .find(|g| name(*g) == s)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown group {s}")))
    }
}

/// A concrete, deterministic deformation of a landmark set.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AugmentPlan {
    pub group_ops: Vec<GroupOp>,
    /// Per-axis stretch about the face center, `(1, 1)` for none.
    pub stretch: (f64, f64),
}

impl AugmentPlan {
    pub fn identity() -> Self {
        Self {
            group_ops: Vec::new(),
            stretch: (1.0, 1.0),
        }
    }

    /// Draw a random plan.
    pub fn sample(landmarks: &LandmarkSet, config: &AugmentConfig, rng: &mut impl Rng) -> Self {
        let (lo, hi) = bbox(landmarks.points());
        let diag = (hi.x - lo.x).hypot(hi.y - lo.y);
        let max_shift = config.group_shift_fraction * diag;
        let uniform = |rng: &mut dyn rand::RngCore, (a, b): (f64, f64)| {
            if a == b {
                a
            } else {
                rng.gen_range(a..=b)
            }
        };
        let mut ops = Vec::new();
        for group in AUGMENTABLE_GROUPS {
            // draw every value regardless of the coin so the stream layout is fixed
            let apply = rng.gen_bool(config.group_probability);
            let sx = uniform(rng, (-max_shift, max_shift));
            let sy = uniform(rng, (-max_shift, max_shift));
            let scale = uniform(rng, config.group_scale);
            if apply {
                ops.push(GroupOp {
                    group,
                    shift: Point::new(sx, sy),
                    scale,
                });
            }
        }
        let stretch = (uniform(rng, config.stretch), uniform(rng, config.stretch));
        AugmentPlan {
            group_ops: ops,
            stretch,
        }
    }

    /// Apply group moves, then the whole-face stretch.
    pub fn apply(&self, landmarks: &LandmarkSet) -> Result<LandmarkSet> {
        let mut pts = landmarks.points().to_vec();
        for op in &self.group_ops {
            let range = op.group.range();
            let c = centroid(&pts[range.clone()]);
            for p in &mut pts[range] {
                *p = Point::new(
                    c.x + (p.x - c.x) * op.scale + op.shift.x,
                    c.y + (p.y - c.y) * op.scale + op.shift.y,
                );
            }
        }
        let (sx, sy) = self.stretch;
        if (sx, sy) != (1.0, 1.0) {
            let (lo, hi) = bbox(&pts);
            let c = Point::new((lo.x + hi.x) / 2.0, (lo.y + hi.y) / 2.0);
            for p in &mut pts {
                *p = Point::new(c.x + (p.x - c.x) * sx, c.y + (p.y - c.y) * sy);
            }
        }
        LandmarkSet::new(pts, landmarks.width(), landmarks.height())
    }
}

fn bbox(points: &[Point]) -> (Point, Point) {
    let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        lo = Point::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Point::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    (lo, hi)
}

/// Result of augmenting one landmark set.
#[derive(Debug, Clone)]
pub struct Augmentation {
    pub plan: AugmentPlan,
    /// Ground truth for the warped image.
    pub landmarks: LandmarkSet,
    /// Maps warped-image coordinates back to original-image coordinates,
    /// suitable for [`super::tps::tps_warp_image`].
    pub field: TpsField,
}

fn border_anchors(w: u32, h: u32) -> Vec<Point> {
    let (w, h) = ((w - 1) as f64, (h - 1) as f64);
    vec![
        Point::new(0.0, 0.0),
        Point::new(w / 2.0, 0.0),
        Point::new(w, 0.0),
        Point::new(w, h / 2.0),
        Point::new(w, h),
        Point::new(w / 2.0, h),
        Point::new(0.0, h),
        Point::new(0.0, h / 2.0),
    ]
}

fn check_plausible(original: &LandmarkSet, displaced: &LandmarkSet) -> Result<()> {
    for g in BaseGroup::ALL {
        let spread = |pts: &[Point]| {
            let c = centroid(pts);
            (pts.iter().map(|p| p.distance(&c).powi(2)).sum::<f64>() / pts.len() as f64).sqrt()
        };
        let before = spread(&original.points()[g.range()]);
        let after = spread(&displaced.points()[g.range()]);
        if after < 0.25 * before || after < 0.5 {
            return Err(Error::Degenerate(format!("group {g:?} collapsed")));
        }
    }
    let (w, h) = (displaced.width() as f64, displaced.height() as f64);
    let margin = 0.1;
    if displaced.points().iter().any(|p| {
        p.x < -margin * w || p.y < -margin * h || p.x > (1.0 + margin) * w || p.y > (1.0 + margin) * h
    }) {
        return Err(Error::Degenerate("landmarks displaced far outside the image".into()));
    }
    Ok(())
}

/// Apply a given plan and fit the image-warping field.
pub fn augment_with_plan(
    landmarks: &LandmarkSet,
    plan: &AugmentPlan,
    config: &AugmentConfig,
) -> Result<Augmentation> {
    let displaced = plan.apply(landmarks)?;
    check_plausible(landmarks, &displaced)?;
    if displaced == *landmarks {
        return Ok(Augmentation {
            plan: plan.clone(),
            landmarks: displaced,
            field: TpsField::identity(),
        });
    }
    let mut src = displaced.points().to_vec();
    let mut dst = landmarks.points().to_vec();
    if config.border_anchors {
        let anchors = border_anchors(landmarks.width(), landmarks.height());
        src.extend_from_slice(&anchors);
        dst.extend_from_slice(&anchors);
    }
    let field = TpsField::fit(&src, &dst, 0.0)?;
    Ok(Augmentation {
        plan: plan.clone(),
        landmarks: displaced,
        field,
    })
}

/// Sample and apply a random augmentation; implausible draws are resampled
/// up to `config.max_retries` times.
pub fn augment_landmarks(
    landmarks: &LandmarkSet,
    config: &AugmentConfig,
    seed: u64,
) -> Result<Augmentation> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last = None;
    for _ in 0..=config.max_retries {
        let plan = AugmentPlan::sample(landmarks, config, &mut rng);
        match augment_with_plan(landmarks, &plan, config) {
            Ok(a) => return Ok(a),
            Err(e @ Error::Degenerate(_)) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::Degenerate("augmentation retries exhausted".into())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::template_landmarks;

    #[test]
    fn zero_magnitudes_are_identity() {
        let lm = template_landmarks(1024);
        let a = augment_landmarks(&lm, &AugmentConfig::none(), 5).unwrap();
        assert_eq!(a.landmarks, lm);
        assert_eq!(a.field.displacement(Point::new(100.0, 700.0)), Point::new(0.0, 0.0));
    }

    #[test]
    fn mouth_shift_moves_only_mouth() {
        let lm = template_landmarks(1024);
        let plan = AugmentPlan {
            group_ops: vec![GroupOp {
                group: BaseGroup::Mouth,
                shift: Point::new(0.0, 10.0),
                scale: 1.0,
            }],
            stretch: (1.0, 1.0),
        };
        let a = augment_with_plan(&lm, &plan, &AugmentConfig::default()).unwrap();
        for i in 0..68 {
            let d = Point::new(
                a.landmarks.points()[i].x - lm.points()[i].x,
                a.landmarks.points()[i].y - lm.points()[i].y,
            );
            if (48..68).contains(&i) {
                assert!(d.x.abs() < 1e-9 && (d.y - 10.0).abs() < 1e-9);
            } else {
                assert_eq!(d, Point::new(0.0, 0.0), "index {i}");
            }
        }
        // the field pulls displaced positions back to the originals
        for (p, q) in a.landmarks.points().iter().zip(lm.points()) {
            assert!(a.field.map(*p).distance(q) < 1e-6);
        }
    }

    #[test]
    fn same_seed_same_output() {
        let lm = template_landmarks(1024);
        let cfg = AugmentConfig::default();
        let a = augment_landmarks(&lm, &cfg, 42).unwrap();
        let b = augment_landmarks(&lm, &cfg, 42).unwrap();
        assert_eq!(a.landmarks, b.landmarks);
        assert_eq!(a.plan, b.plan);
        let c = augment_landmarks(&lm, &cfg, 43).unwrap();
        assert_ne!(a.landmarks, c.landmarks);
    }

    #[test]
    fn collapsed_group_rejected() {
        let lm = template_landmarks(1024);
        let plan = AugmentPlan {
            group_ops: vec![GroupOp {
                group: BaseGroup::Nose,
                shift: Point::default(),
                scale: 0.01,
            }],
            stretch: (1.0, 1.0),
        };
        assert!(matches!(
            augment_with_plan(&lm, &plan, &AugmentConfig::default()),
            Err(Error::Degenerate(_))
        ));
        let always_collapse = AugmentConfig {
            group_scale: (0.01, 0.02),
            group_probability: 1.0,
            max_retries: 3,
            ..AugmentConfig::default()
        };
        assert!(augment_landmarks(&lm, &always_collapse, 1).is_err());
    }

    #[test]
    fn stretch_scales_about_face_center() {
        let lm = template_landmarks(1024);
        let plan = AugmentPlan {
            group_ops: vec![],
            stretch: (1.1, 0.9),
        };
        let out = plan.apply(&lm).unwrap();
        let (lo, hi) = bbox(lm.points());
        let (lo2, hi2) = bbox(out.points());
        assert!(((hi2.x - lo2.x) - 1.1 * (hi.x - lo.x)).abs() < 1e-9);
        assert!(((hi2.y - lo2.y) - 0.9 * (hi.y - lo.y)).abs() < 1e-9);
    }
}
