//! Mean Euclidean error, per-part breakdown and report rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{load_split, DatasetManifest, LoadOptions, Medium, Split};
use crate::error::{Error, Result};
use crate::landmarks::{BaseGroup, Group, LandmarkSet};
use crate::pipeline::Detector;

/// Facial parts of the per-part breakdown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Jaw,
    Brows,
    Nose,
    Eyes,
    Mouth,
}

impl Part {
    pub const ALL: [Part; 5] = [Part::Jaw, Part::Brows, Part::Nose, Part::Eyes, Part::Mouth];

    pub fn name(self) -> &'static str {
        match self {
            Part::Jaw => "jaw",
            Part::Brows => "brows",
            Part::Nose => "nose",
            Part::Eyes => "eyes",
            Part::Mouth => "mouth",
        }
    }

    pub fn indices(self) -> Vec<usize> {
        match self {
            Part::Jaw => BaseGroup::Jaw.indices(),
            Part::Brows => Group::Brows.indices(),
            Part::Nose => BaseGroup::Nose.indices(),
            Part::Eyes => Group::Eyes.indices(),
            Part::Mouth => BaseGroup::Mouth.indices(),
        }
    }
}

/// Arithmetic mean of per-point Euclidean distances over `subset`, in pixels.
pub fn mean_error(pred: &LandmarkSet, gt: &LandmarkSet, subset: &[usize]) -> Result<f64> {
    if pred.size() != gt.size() {
        return Err(Error::SizeMismatch(format!(
            "prediction frame {:?} differs from ground truth frame {:?}",
            pred.size(),
            gt.size()
        )));
    }
    if subset.is_empty() {
        return Err(Error::InvalidArgument("empty landmark subset".into()));
    }
    let (p, g) = (pred.points(), gt.points());
    let mut sum = 0.0;
    for &i in subset {
        if i >= p.len() {
            return Err(Error::InvalidArgument(format!("landmark index {i} out of range")));
        }
        sum += p[i].distance(&g[i]);
    }
    Ok(sum / subset.len() as f64)
}

/// Errors of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEval {
    pub id: String,
    pub medium: Medium,
    pub me68: f64,
    pub me51: f64,
    /// In [`Part::ALL`] order.
    pub parts: [f64; 5],
}

impl ImageEval {
    pub fn compute(id: impl Into<String>, medium: Medium, pred: &LandmarkSet, gt: &LandmarkSet) -> Result<Self> {
        let all: Vec<usize> = (0..68).collect();
        let mut parts = [0.0; 5];
        for (slot, part) in parts.iter_mut().zip(Part::ALL) {
            *slot = mean_error(pred, gt, &part.indices())?;
        }
        Ok(Self {
            id: id.into(),
            medium,
            me68: mean_error(pred, gt, &all)?,
            me51: mean_error(pred, gt, &Group::Inner51.indices())?,
            parts,
        })
    }
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
                n,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std, n }
    }

    /// `mean ± std` with two decimals.
    pub fn display(&self) -> String {
        format!("{:.2} ± {:.2}", self.mean, self.std)
    }
}

/// One report row: a medium, or `all`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub group: String,
    pub images: usize,
    pub me68: Aggregate,
    pub me51: Aggregate,
    pub parts: [Aggregate; 5],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub id: String,
    pub medium: Medium,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub images: Vec<ImageEval>,
    pub failures: Vec<Failure>,
    pub rows: Vec<ReportRow>,
}

fn row(group: &str, evals: &[&ImageEval]) -> ReportRow {
    let col = |f: &dyn Fn(&ImageEval) -> f64| Aggregate::of(&evals.iter().map(|e| f(e)).collect::<Vec<_>>());
    ReportRow {
        group: group.into(),
        images: evals.len(),
        me68: col(&|e| e.me68),
        me51: col(&|e| e.me51),
        parts: std::array::from_fn(|k| col(&|e| e.parts[k])),
    }
}

impl EvalReport {
    /// Aggregate rows per medium followed by an `all` row. Failures are
    /// excluded from the aggregates but counted.
    pub fn build(images: Vec<ImageEval>, failures: Vec<Failure>) -> Self {
        let mut by: BTreeMap<Medium, Vec<&ImageEval>> = BTreeMap::new();
        for e in &images {
            by.entry(e.medium).or_default().push(e);
        }
        let mut rows: Vec<ReportRow> = by.iter().map(|(m, v)| row(m.name(), v)).collect();
        let all: Vec<&ImageEval> = images.iter().collect();
        rows.push(row("all", &all));
        Self {
            images,
            failures,
            rows,
        }
    }

    pub fn failures_in(&self, group: &str) -> usize {
        self.failures
            .iter()
            .filter(|f| group == "all" || f.medium.name() == group)
            .count()
    }

    /// Report CSV with one row per group.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("group,images,failures,me68_mean,me68_std,me51_mean,me51_std");
        for p in Part::ALL {
            let _ = write!(s, ",{0}_mean,{0}_std", p.name());
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(
                s,
                "{},{},{},{:.4},{:.4},{:.4},{:.4}",
                r.group,
                r.images,
                self.failures_in(&r.group),
                r.me68.mean,
                r.me68.std,
                r.me51.mean,
                r.me51.std
            );
            for a in &r.parts {
                let _ = write!(s, ",{:.4},{:.4}", a.mean, a.std);
            }
            s.push('\n');
        }
        s
    }

    /// Per-part bar data, one line per group and part.
    pub fn parts_csv(&self) -> String {
        let mut s = String::from("group,part,mean,std\n");
        for r in &self.rows {
            for (p, a) in Part::ALL.iter().zip(&r.parts) {
                let _ = writeln!(s, "{},{},{:.4},{:.4}", r.group, p.name(), a.mean, a.std);
            }
        }
        s
    }

    /// Per-image errors.
    pub fn images_csv(&self) -> String {
        let mut s = String::from("id,medium,me68,me51");
        for p in Part::ALL {
            let _ = write!(s, ",{}", p.name());
        }
        s.push('\n');
        for e in &self.images {
            let _ = write!(s, "{},{},{:.4},{:.4}", e.id, e.medium.name(), e.me68, e.me51);
            for v in e.parts {
                let _ = write!(s, ",{v:.4}");
            }
            s.push('\n');
        }
        s
    }

    /// Fixed-width table with `mean ± std` cells.
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<10}{:>7}{:>10}{:>18}{:>18}\n",
            "group", "images", "failures", "68 landmarks", "51 landmarks"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<10}{:>7}{:>10}{:>18}{:>18}",
                r.group,
                r.images,
                self.failures_in(&r.group),
                r.me68.display(),
                r.me51.display()
            );
        }
        s
    }
}

/// Run the detector over a split and report errors in the working frame.
pub fn evaluate(manifest: &DatasetManifest, split: Split, detector: &Detector<'_>) -> Result<EvalReport> {
    let opts = LoadOptions {
        size: detector.geometry.hr_size,
        ..Default::default()
    };
    let mut images = Vec::new();
    let mut failures = Vec::new();
    for sample in load_split(manifest, split, opts) {
        let sample = sample?;
        let id = sample.record.image.to_string_lossy().into_owned();
        let medium = sample.record.provenance.medium();
        match detector.forward_full(&sample.image) {
            Ok(pred) if pred.refined.points().iter().all(|p| p.is_finite()) => {
                images.push(ImageEval::compute(id, medium, &pred.refined, &sample.landmarks)?);
            }
            Ok(_) => failures.push(Failure {
                id,
                medium,
                reason: "non-finite prediction".into(),
            }),
            Err(e) => failures.push(Failure {
                id,
                medium,
                reason: e.to_string(),
            }),
        }
    }
    if images.is_empty() && failures.is_empty() {
        return Err(Error::EmptySplit(split.name().into()));
    }
    Ok(EvalReport::build(images, failures))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landmarks::Point;
    use proptest::prelude::*;

    fn set(points: Vec<Point>) -> LandmarkSet {
        LandmarkSet::new(points, 256, 256).unwrap()
    }

    #[test]
    fn examples() {
        let gt = set((0..68).map(|i| Point::new(i as f64, 2.0 * i as f64)).collect());
        let all: Vec<usize> = (0..68).collect();
        assert_eq!(mean_error(&gt, &gt, &all).unwrap(), 0.0);
        let mut p = gt.points().to_vec();
        p[5] = p[5].offset(3.0, 4.0);
        let me = mean_error(&set(p), &gt, &all).unwrap();
        assert!((me - 5.0 / 68.0).abs() < 1e-15);
        let other = LandmarkSet::new(gt.points().to_vec(), 128, 256).unwrap();
        assert!(mean_error(&other, &gt, &all).is_err());
        assert_eq!(Part::Jaw.indices().len(), 17);
        let sizes: Vec<usize> = Part::ALL.iter().map(|p| p.indices().len()).collect();
        assert_eq!(sizes, vec![17, 10, 9, 12, 20]);
    }

    #[test]
    fn aggregate_and_format() {
        let a = Aggregate::of(&[1.0, 2.0, 3.0]);
        assert_eq!(a.mean, 2.0);
        assert_eq!(a.std, 1.0);
        assert_eq!(a.display(), "2.00 ± 1.00");
        assert_eq!(Aggregate::of(&[4.0]).std, 0.0);
    }

    #[test]
    fn report_rows_and_failures() {
        let gt = set((0..68).map(|i| Point::new(i as f64, 1.0)).collect());
        let pred = set(gt.points().iter().map(|p| p.offset(1.0, 0.0)).collect());
        let a = ImageEval::compute("a", Medium::Paintings, &pred, &gt).unwrap();
        let b = ImageEval::compute("b", Medium::Prints, &gt, &gt).unwrap();
        let r = EvalReport::build(
            vec![a, b],
            vec![Failure {
                id: "c".into(),
                medium: Medium::Prints,
                reason: "x".into(),
            }],
        );
        assert_eq!(r.rows.iter().map(|r| r.group.as_str()).collect::<Vec<_>>(), ["paintings", "prints", "all"]);
        assert_eq!(r.rows[0].me68.mean, 1.0);
        assert_eq!(r.failures_in("prints"), 1);
        assert_eq!(r.failures_in("all"), 1);
        let csv = r.to_csv();
        assert!(csv.starts_with("group,images,failures,me68_mean,me68_std,me51_mean,me51_std,jaw_mean"));
        assert!(r.to_table().contains("1.00 ± 0.00"));
        assert_eq!(r.parts_csv().lines().count(), 1 + 3 * 5);
    }

    fn arb_points() -> impl Strategy<Value = Vec<Point>> {
        prop::collection::vec((-50.0..300.0f64, -50.0..300.0f64), 68)
            .prop_map(|v| v.into_iter().map(|(x, y)| Point::new(x, y)).collect())
    }

    proptest! {
        #[test]
        fn me68_is_size_weighted_part_mix(p in arb_points(), g in arb_points()) {
            let (p, g) = (set(p), set(g));
            let e = ImageEval::compute("x", Medium::Other, &p, &g).unwrap();
            let mix: f64 = Part::ALL.iter().zip(e.parts).map(|(part, v)| v * part.indices().len() as f64).sum::<f64>() / 68.0;
            prop_assert!((mix - e.me68).abs() < 1e-9);
        }

        #[test]
        fn me_translation_invariant(p in arb_points(), g in arb_points(), dx in -20.0..20.0f64, dy in -20.0..20.0f64) {
            let all: Vec<usize> = (0..68).collect();
            let a = mean_error(&set(p.clone()), &set(g.clone()), &all).unwrap();
            let shift = |v: &[Point]| set(v.iter().map(|q| q.offset(dx, dy)).collect());
            let b = mean_error(&shift(&p), &shift(&g), &all).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
