//! Dataset manifests, split loading, and synthetic dataset assembly.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{augment_landmarks, tps_warp_image, AugmentConfig};
use crate::landmarks::{
    read_landmarks, sidecar_path_for, write_sidecar, LandmarkSet, LandmarkSource, PtsConvention, ReadOptions,
    Sidecar,
};
use crate::raster::{fit_square, Image, SquareFit};

pub const MANIFEST_HEADER: [&str; 5] = ["image", "landmarks", "split", "provenance", "source"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown split {s:?}")))
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Artistic medium used to group report rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Medium {
    Paintings,
    Prints,
    Other,
}

impl Medium {
    pub fn name(self) -> &'static str {
        match self {
            Medium::Paintings => "paintings",
            Medium::Prints => "prints",
            Medium::Other => "other",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    RealPainting,
    RealPrint,
    SynAdainPainting,
    SynAdainPrint,
    SynCycleganPainting,
    SynCycleganPrint,
    Augmented,
}

impl Provenance {
    pub const ALL: [Provenance; 7] = [
        Provenance::RealPainting,
        Provenance::RealPrint,
        Provenance::SynAdainPainting,
        Provenance::SynAdainPrint,
        Provenance::SynCycleganPainting,
        Provenance::SynCycleganPrint,
        Provenance::Augmented,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Provenance::RealPainting => "real_painting",
            Provenance::RealPrint => "real_print",
            Provenance::SynAdainPainting => "syn_adain_painting",
            Provenance::SynAdainPrint => "syn_adain_print",
            Provenance::SynCycleganPainting => "syn_cyclegan_painting",
            Provenance::SynCycleganPrint => "syn_cyclegan_print",
            Provenance::Augmented => "augmented",
        }
    }

    pub fn medium(self) -> Medium {
        match self {
            Provenance::RealPainting | Provenance::SynAdainPainting | Provenance::SynCycleganPainting => {
                Medium::Paintings
            }
            Provenance::RealPrint | Provenance::SynAdainPrint | Provenance::SynCycleganPrint => Medium::Prints,
            Provenance::Augmented => Medium::Other,
        }
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Provenance::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown provenance {s:?}")))
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One manifest row; paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub image: PathBuf,
    pub landmarks: PathBuf,
    pub split: Split,
    pub provenance: Provenance,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

#[derive(Deserialize, Serialize)]
struct Row {
    image: String,
    landmarks: String,
    split: String,
    provenance: String,
    source: String,
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>, records: Vec<ManifestRecord>) -> Self {
        Self {
            root: root.into(),
            records,
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                reason: format!("expected header {}", MANIFEST_HEADER.join(",")),
            });
        }
        let mut records = Vec::new();
        for (line, row) in rdr.deserialize::<Row>().enumerate() {
            let row = row?;
            let bad = |e: Error| Error::Malformed {
                path: path.to_path_buf(),
                reason: format!("row {}: {e}", line + 1),
            };
            records.push(ManifestRecord {
                image: PathBuf::from(row.image),
                landmarks: PathBuf::from(row.landmarks),
                split: row.split.parse().map_err(bad)?,
                provenance: row.provenance.parse().map_err(bad)?,
                source: row.source,
            });
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { root, records })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        for r in &self.records {
            w.serialize(Row {
                image: r.image.to_string_lossy().into_owned(),
                landmarks: r.landmarks.to_string_lossy().into_owned(),
                split: r.split.name().into(),
                provenance: r.provenance.name().into(),
                source: r.source.clone(),
            })?;
        }
        if self.records.is_empty() {
            w.write_record(MANIFEST_HEADER)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Referential integrity and split disjointness in one pass.
    pub fn validate(&self) -> Result<()> {
        let mut seen: HashMap<&Path, Split> = HashMap::new();
        for r in &self.records {
            for p in [&r.image, &r.landmarks] {
                let full = self.resolve(p);
                if !full.is_file() {
                    return Err(Error::io(
                        full,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "referenced file is missing"),
                    ));
                }
            }
            if let Some(prev) = seen.insert(&r.image, r.split) {
                if prev != r.split {
                    return Err(Error::InvalidArgument(format!(
                        "{} is in both {prev} and {}",
                        r.image.display(),
                        r.split
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn records_in(&self, split: Split) -> Vec<&ManifestRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    /// Image counts per provenance and split.
    pub fn counts(&self) -> BTreeMap<Provenance, BTreeMap<Split, usize>> {
        let mut out: BTreeMap<Provenance, BTreeMap<Split, usize>> = BTreeMap::new();
        for r in &self.records {
            *out.entry(r.provenance).or_default().entry(r.split).or_default() += 1;
        }
        out
    }

    /// Counts rendered as a small text table.
    pub fn counts_table(&self) -> String {
        let mut s = format!("{:<24}{:>8}{:>8}{:>8}{:>8}\n", "provenance", "train", "val", "test", "total");
        for (p, by) in self.counts() {
            let get = |sp| by.get(&sp).copied().unwrap_or(0);
            let total: usize = by.values().sum();
            s.push_str(&format!(
                "{:<24}{:>8}{:>8}{:>8}{:>8}\n",
                p.name(),
                get(Split::Train),
                get(Split::Val),
                get(Split::Test),
                total
            ));
        }
        s
    }
}

/// An image with its landmarks, brought to a square working frame.
#[derive(Debug, Clone)]
pub struct LoadedSample {
    pub record: ManifestRecord,
    pub image: Image,
    pub landmarks: LandmarkSet,
    /// Mapping from the file's frame into the working frame.
    pub fit: SquareFit,
}

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    pub size: usize,
    pub pts_convention: PtsConvention,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            size: 1024,
            pts_convention: PtsConvention::OneBased,
        }
    }
}

/// Load one image and its landmarks, padding to a centered square and
/// scaling to `size`. Landmarks follow the same transform.
pub fn load_pair(image_path: &Path, landmark_path: &Path, opts: &LoadOptions) -> Result<(Image, LandmarkSet, SquareFit)> {
    let image = Image::load(image_path)?;
    let (w, h) = (image.width() as u32, image.height() as u32);
    let landmarks = read_landmarks(
        landmark_path,
        &ReadOptions {
            pts_convention: opts.pts_convention,
            image_size: Some((w, h)),
        },
    )?;
    if landmarks.size() != (w, h) {
        return Err(Error::SizeMismatch(format!(
            "{} is {w}x{h} but {} describes {}x{}",
            image_path.display(),
            landmark_path.display(),
            landmarks.width(),
            landmarks.height()
        )));
    }
    let (image, fit) = fit_square(&image, opts.size);
    let s = opts.size as u32;
    let landmarks = landmarks.map_points(s, s, |p| fit.apply(p))?;
    Ok((image, landmarks, fit))
}

/// Lazily load the records of one split.
pub fn load_split<'a>(
    manifest: &'a DatasetManifest,
    split: Split,
    opts: LoadOptions,
) -> impl Iterator<Item = Result<LoadedSample>> + 'a {
    manifest
        .records
        .iter()
        .filter(move |r| r.split == split)
        .map(move |r| {
            let (image, landmarks, fit) =
                load_pair(&manifest.resolve(&r.image), &manifest.resolve(&r.landmarks), &opts)?;
            Ok(LoadedSample {
                record: r.clone(),
                image,
                landmarks,
                fit,
            })
        })
}

/// A base image for synthetic assembly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BaseItem {
    pub image: PathBuf,
    pub landmarks: PathBuf,
}

/// Image files in `dir` with a `.json` or `.pts` landmark file of the same stem.
pub fn scan_base_dir(dir: &Path) -> Result<Vec<BaseItem>> {
    let mut out = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    paths.sort();
    for p in paths {
        let ext = p.extension().map(|e| e.to_string_lossy().to_lowercase());
        if !matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) {
            continue;
        }
        let json = sidecar_path_for(&p);
        let pts = p.with_extension("pts");
        let landmarks = if json.is_file() {
            json
        } else if pts.is_file() {
            pts
        } else {
            continue;
        };
        out.push(BaseItem { image: p, landmarks });
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticConfig {
    /// External `<cmd> <in> <out>` stylizer; `None` keeps images unchanged.
    pub stylizer: Option<String>,
    pub augment: AugmentConfig,
    pub augmentations_per_image: usize,
    pub seed: u64,
    pub size: usize,
    pub split: Split,
    pub provenance: Provenance,
    pub source: String,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            stylizer: None,
            augment: AugmentConfig::default(),
            augmentations_per_image: 1,
            seed: 0,
            size: 1024,
            split: Split::Train,
            provenance: Provenance::Augmented,
            source: "synthetic".into(),
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of augmentation `k` of base image `index`.
pub fn augmentation_seed(seed: u64, index: usize, k: usize) -> u64 {
    splitmix(splitmix(seed ^ splitmix(index as u64)) ^ k as u64)
}

/// Run the external stylizer on one file.
pub fn run_stylizer(command: &str, input: &Path, output: &Path) -> Result<()> {
    let mut parts = command.split_whitespace();
    let program = parts
        .next()
        .ok_or_else(|| Error::Stylizer("empty stylizer command".into()))?;
    let status = Command::new(program)
        .args(parts)
        .arg(input)
        .arg(output)
        .status()
        .map_err(|e| Error::Stylizer(format!("cannot run {program}: {e}")))?;
    if !status.success() {
        return Err(Error::Stylizer(format!(
            "{command} exited with {} on {}",
            status,
            input.display()
        )));
    }
    if !output.is_file() {
        return Err(Error::Stylizer(format!("{command} produced no {}", output.display())));
    }
    Ok(())
}

fn stem_of(path: &Path, index: usize) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into());
    format!("{index:05}_{stem}")
}

fn build_one(index: usize, base: &BaseItem, out_dir: &Path, cfg: &SyntheticConfig) -> Result<Vec<ManifestRecord>> {
    let opts = LoadOptions {
        size: cfg.size,
        ..Default::default()
    };
    let (image, landmarks, _) = load_pair(&base.image, &base.landmarks, &opts)?;
    let stem = stem_of(&base.image, index);
    let styled = match &cfg.stylizer {
        None => image,
        Some(cmd) => {
            let work = out_dir.join("work");
            fs::create_dir_all(&work).map_err(|e| Error::io(&work, e))?;
            let input = work.join(format!("{stem}_in.png"));
            let output = work.join(format!("{stem}_styled.png"));
            image.save(&input)?;
            run_stylizer(cmd, &input, &output)?;
            let styled = Image::load(&output)?;
            fit_square(&styled, cfg.size).0
        }
    };
    let mut rows = Vec::with_capacity(cfg.augmentations_per_image);
    for k in 0..cfg.augmentations_per_image {
        let aug = augment_landmarks(&landmarks, &cfg.augment, augmentation_seed(cfg.seed, index, k))?;
        let warped = tps_warp_image(&styled, &aug.field);
        let image_rel = PathBuf::from(format!("{stem}_{k}.png"));
        let lm_rel = sidecar_path_for(&image_rel);
        warped.save(&out_dir.join(&image_rel))?;
        let sidecar = Sidecar::new(
            image_rel.to_string_lossy().into_owned(),
            &aug.landmarks,
            LandmarkSource::Augmented,
        );
        write_sidecar(&sidecar, &out_dir.join(&lm_rel))?;
        rows.push(ManifestRecord {
            image: image_rel,
            landmarks: lm_rel,
            split: cfg.split,
            provenance: cfg.provenance,
            source: cfg.source.clone(),
        });
    }
    Ok(rows)
}

/// Stylize, then geometrically augment every base image
/// `augmentations_per_image` times, writing images, sidecars and
/// `manifest.csv` into `out_dir`. Images are processed in parallel; rows keep
/// input order.
pub fn build_synthetic(bases: &[BaseItem], out_dir: &Path, cfg: &SyntheticConfig) -> Result<DatasetManifest> {
    cfg.augment.validate()?;
    if cfg.size == 0 {
        return Err(Error::InvalidArgument("output size must be positive".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let rows: Vec<Vec<ManifestRecord>> = bases
        .par_iter()
        .enumerate()
        .map(|(i, b)| build_one(i, b, out_dir, cfg))
        .collect::<Result<_>>()?;
    let manifest = DatasetManifest::new(out_dir, rows.into_iter().flatten().collect());
    manifest.write(&out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landmarks::{write_landmarks, Point};
    use crate::synthetic::{disc, random_face};

    fn write_base(dir: &Path, name: &str, w: usize, h: usize, seed: u64) -> BaseItem {
        let (face, lm) = random_face(w.min(h) as u32, seed);
        let img = face.pad(w, h, 0, 0);
        let lm = LandmarkSet::new(lm.into_points(), w as u32, h as u32).unwrap();
        let ip = dir.join(format!("{name}.png"));
        img.save(&ip).unwrap();
        let lp = dir.join(format!("{name}.json"));
        write_landmarks(&lm, &lp).unwrap();
        BaseItem {
            image: ip,
            landmarks: lp,
        }
    }

    #[test]
    fn manifest_round_trip_and_counts() {
        let dir = tempfile::tempdir().unwrap();
        let b = write_base(dir.path(), "a", 64, 64, 1);
        let rec = |split, prov| ManifestRecord {
            image: b.image.file_name().unwrap().into(),
            landmarks: b.landmarks.file_name().unwrap().into(),
            split,
            provenance: prov,
            source: "unit".into(),
        };
        let m = DatasetManifest::new(dir.path(), vec![rec(Split::Test, Provenance::RealPainting)]);
        let path = dir.path().join("manifest.csv");
        m.write(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("image,landmarks,split,provenance,source\n"));
        let back = DatasetManifest::read(&path).unwrap();
        assert_eq!(back, m);
        back.validate().unwrap();
        assert_eq!(back.counts()[&Provenance::RealPainting][&Split::Test], 1);
        assert!(back.counts_table().contains("real_painting"));
        let overlap = DatasetManifest::new(
            dir.path(),
            vec![rec(Split::Test, Provenance::RealPainting), rec(Split::Train, Provenance::RealPainting)],
        );
        assert!(overlap.validate().is_err());
        let mut missing = m.clone();
        missing.records[0].image = "nope.png".into();
        assert!(missing.validate().is_err());
    }

    #[test]
    fn load_split_resizes_consistently() {
        let dir = tempfile::tempdir().unwrap();
        let same = write_base(dir.path(), "same", 128, 128, 2);
        let half = write_base(dir.path(), "half", 64, 64, 3);
        let rect = write_base(dir.path(), "rect", 80, 100, 4);
        let rec = |b: &BaseItem| ManifestRecord {
            image: b.image.file_name().unwrap().into(),
            landmarks: b.landmarks.file_name().unwrap().into(),
            split: Split::Val,
            provenance: Provenance::RealPrint,
            source: "unit".into(),
        };
        let m = DatasetManifest::new(dir.path(), vec![rec(&same), rec(&half), rec(&rect)]);
        let opts = LoadOptions {
            size: 128,
            ..Default::default()
        };
        let loaded: Vec<LoadedSample> = load_split(&m, Split::Val, opts).collect::<Result<_>>().unwrap();
        assert_eq!(loaded.len(), 3);
        let orig = Image::load(&same.image).unwrap();
        assert_eq!(loaded[0].image, orig);
        let lm_half = read_landmarks(&half.landmarks, &ReadOptions::default()).unwrap();
        for (a, b) in loaded[1].landmarks.points().iter().zip(lm_half.points()) {
            assert!(a.distance(&b.scaled(2.0, 2.0)) < 1e-9);
        }
        // the center of an 80x100 frame maps to the center of the square frame
        assert!(loaded[2].fit.apply(Point::new(40.0, 50.0)).distance(&Point::new(64.0, 64.0)) < 1e-6);
        assert_eq!(load_split(&m, Split::Train, opts).count(), 0);
    }

    #[test]
    fn dot_stays_under_landmark_after_loading() {
        let dir = tempfile::tempdir().unwrap();
        let (w, h) = (300usize, 240usize);
        let mut img = Image::new(w, h, 3);
        let p = Point::new(171.0, 88.0);
        disc(&mut img, p, 3.0, &[1.0, 1.0, 1.0]);
        let pts = vec![p; 68];
        let lm = LandmarkSet::new(pts, w as u32, h as u32).unwrap();
        img.save(&dir.path().join("d.png")).unwrap();
        write_landmarks(&lm, &dir.path().join("d.pts")).unwrap();
        let (out, lm2, _) = load_pair(
            &dir.path().join("d.png"),
            &dir.path().join("d.pts"),
            &LoadOptions {
                size: 512,
                ..Default::default()
            },
        )
        .unwrap();
        // intensity-weighted centroid of the dot
        let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
        for y in 0..512 {
            for x in 0..512 {
                let v = out.get(0, x, y) as f64;
                sx += v * x as f64;
                sy += v * y as f64;
                sw += v;
            }
        }
        let c = Point::new(sx / sw, sy / sw);
        assert!(c.distance(&lm2.points()[0]) <= 1.0, "{c:?} vs {:?}", lm2.points()[0]);
    }

    #[test]
    fn synthetic_identity_and_accounting() {
        let dir = tempfile::tempdir().unwrap();
        let bases: Vec<BaseItem> = (0..3).map(|i| write_base(dir.path(), &format!("b{i}"), 64, 64, i)).collect();
        let out = dir.path().join("out");
        let cfg = SyntheticConfig {
            augment: AugmentConfig::none(),
            size: 64,
            ..Default::default()
        };
        let m = build_synthetic(&bases, &out, &cfg).unwrap();
        assert_eq!(m.records.len(), 3);
        m.validate().unwrap();
        let first = Image::load(&out.join(&m.records[0].image)).unwrap();
        assert_eq!(first, Image::load(&bases[0].image).unwrap());
        let lm = read_landmarks(&out.join(&m.records[0].landmarks), &ReadOptions::default()).unwrap();
        let base_lm = read_landmarks(&bases[0].landmarks, &ReadOptions::default()).unwrap();
        assert_eq!(lm, base_lm);

        let cfg = SyntheticConfig {
            augmentations_per_image: 2,
            size: 64,
            seed: 5,
            ..Default::default()
        };
        let a = build_synthetic(&bases, &dir.path().join("a"), &cfg).unwrap();
        let b = build_synthetic(&bases, &dir.path().join("b"), &cfg).unwrap();
        assert_eq!(a.records.len(), 6);
        for (ra, rb) in a.records.iter().zip(&b.records) {
            let x = fs::read(dir.path().join("a").join(&ra.landmarks)).unwrap();
            let y = fs::read(dir.path().join("b").join(&rb.landmarks)).unwrap();
            assert_eq!(x, y);
        }
    }

    #[test]
    fn stylizer_hook() {
        let dir = tempfile::tempdir().unwrap();
        let bases = vec![write_base(dir.path(), "s", 64, 64, 9)];
        let cfg = SyntheticConfig {
            stylizer: Some("cp".into()),
            augment: AugmentConfig::none(),
            size: 64,
            ..Default::default()
        };
        let m = build_synthetic(&bases, &dir.path().join("o"), &cfg).unwrap();
        let img = Image::load(&dir.path().join("o").join(&m.records[0].image)).unwrap();
        assert_eq!(img, Image::load(&bases[0].image).unwrap());
        let cfg = SyntheticConfig {
            stylizer: Some("false".into()),
            ..cfg
        };
        assert!(matches!(
            build_synthetic(&bases, &dir.path().join("f"), &cfg),
            Err(Error::Stylizer(_))
        ));
    }
}
