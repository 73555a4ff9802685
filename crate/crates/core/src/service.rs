//! HTTP annotation service: serves a corpus of images, initializes
//! landmarks with a predictor and persists corrections.
//!
//! Records live in `<corpus>/annotations/<id>.json` and carry the same
//! `image`, `width`, `height`, `points` and `source` fields as landmark
//! sidecars. A missing record means the image is unlabeled.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::DatasetManifest;
use crate::landmarks::{LandmarkSet, LandmarkSource, Point};
use crate::model::ModelBundle;
use crate::raster::Image;

pub const ANNOTATION_DIR: &str = "annotations";
const INDEX_FILE: &str = "index.json";
const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Unlabeled,
    Predicted,
    Corrected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub id: String,
    /// Image path relative to the corpus root.
    pub image: String,
    pub width: u32,
    pub height: u32,
    pub status: Status,
    pub revision: u64,
    pub modified: Option<DateTime<Utc>>,
    /// Empty while unlabeled, otherwise 68 points.
    pub points: Vec<Point>,
    pub source: LandmarkSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_error: Option<String>,
}

impl AnnotationRecord {
    pub fn landmarks(&self) -> Option<LandmarkSet> {
        LandmarkSet::new(self.points.clone(), self.width, self.height).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageSummary {
    pub id: String,
    pub image: String,
    pub status: Status,
    pub revision: u64,
    pub modified: Option<DateTime<Utc>>,
}

/// Service-level failure, mapped onto an HTTP status.
#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("unknown image id `{0}`")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Unavailable(String),
    #[error("{0}")]
    Inference(String),
    #[error("{0}")]
    Internal(String),
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Unavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
            ServiceError::Inference(_) | ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::NotFound(_) => "not_found",
            ServiceError::Conflict(_) => "conflict",
            ServiceError::Invalid(_) => "invalid",
            ServiceError::Unavailable(_) => "unavailable",
            ServiceError::Inference(_) => "inference_failed",
            ServiceError::Internal(_) => "internal",
        }
    }
}

impl From<io::Error> for ServiceError {
    fn from(e: io::Error) -> Self {
        ServiceError::Internal(e.to_string())
    }
}

impl From<crate::Error> for ServiceError {
    fn from(e: crate::Error) -> Self {
        ServiceError::Internal(e.to_string())
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub detail: String,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.code().to_string(),
            detail: self.to_string(),
        };
        (self.status(), Json(body)).into_response()
    }
}

pub type ServiceResult<T> = std::result::Result<T, ServiceError>;

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

fn temp_path(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let n = TEMP_COUNTER.fetch_add(1, Ordering::Relaxed);
    path.with_file_name(format!(".{name}.{}.{n}.tmp", std::process::id()))
}

/// Write to a temporary sibling, fsync, then rename over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = temp_path(path);
    let result = (|| {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        drop(f);
        fs::rename(&tmp, path)?;
        if let Some(dir) = path.parent() {
            // Directory fsync is unsupported on some platforms.
            let _ = File::open(dir).and_then(|d| d.sync_all());
        }
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

/// Crash simulation: the first `cut_at` bytes reach the temporary file and
/// the process "dies" before the rename. Returns the temporary path.
pub fn atomic_write_interrupted(path: &Path, bytes: &[u8], cut_at: usize) -> io::Result<PathBuf> {
    let tmp = temp_path(path);
    let mut f = File::create(&tmp)?;
    f.write_all(&bytes[..cut_at.min(bytes.len())])?;
    f.sync_all()?;
    Ok(tmp)
}

/// Produces initial landmarks for an image.
pub trait Predictor: Send {
    fn predict(&mut self, image: &Image) -> crate::Result<LandmarkSet>;
}

impl<F> Predictor for F
where
    F: FnMut(&Image) -> crate::Result<LandmarkSet> + Send,
{
    fn predict(&mut self, image: &Image) -> crate::Result<LandmarkSet> {
        self(image)
    }
}

/// Runs the full coarse-to-fine pipeline of a bundle.
pub struct BundlePredictor(pub ModelBundle);

impl Predictor for BundlePredictor {
    fn predict(&mut self, image: &Image) -> crate::Result<LandmarkSet> {
        Ok(self.0.detector().forward_full(image)?.refined)
    }
}

/// Stable image id: the first 12 hex digits of SHA-256 over the relative path.
pub fn image_id(rel: &str) -> String {
    hex::encode(Sha256::digest(rel.as_bytes()))[..12].to_string()
}

fn rel_string(rel: &Path) -> String {
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

fn scan_images(root: &Path, dir: &Path, out: &mut Vec<String>) -> io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            if path.file_name().is_some_and(|n| n == ANNOTATION_DIR) {
                continue;
            }
            scan_images(root, &path, out)?;
        } else if path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        {
            out.push(rel_string(path.strip_prefix(root).unwrap_or(&path)));
        }
    }
    Ok(())
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct IndexEntry {
    image: String,
    status: Option<Status>,
    revision: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    last_error: Option<String>,
}

/// File-backed annotation records for a corpus directory.
pub struct AnnotationStore {
    root: PathBuf,
    dir: PathBuf,
    images: BTreeMap<String, String>,
    /// Serializes writes; holds the last inference error per id.
    writes: Mutex<HashMap<String, String>>,
}

impl AnnotationStore {
    /// Image ids come from `<root>/manifest.csv` when present, otherwise from
    /// every PNG or JPEG below `root`.
    pub fn open(root: &Path) -> ServiceResult<Self> {
        let root = root.to_path_buf();
        if !root.is_dir() {
            return Err(ServiceError::Invalid(format!("corpus {} is not a directory", root.display())));
        }
        let manifest = root.join("manifest.csv");
        let mut rels = Vec::new();
        if manifest.is_file() {
            let m = DatasetManifest::read(&manifest)?;
            for r in &m.records {
                let full = m.resolve(&r.image);
                rels.push(rel_string(full.strip_prefix(&root).unwrap_or(&r.image)));
            }
        } else {
            scan_images(&root, &root, &mut rels)?;
        }
        rels.sort();
        rels.dedup();
        let mut images = BTreeMap::new();
        for rel in rels {
            let id = image_id(&rel);
            if let Some(prev) = images.insert(id.clone(), rel.clone()) {
                return Err(ServiceError::Internal(format!("id collision between {prev} and {rel}")));
            }
        }
        let dir = root.join(ANNOTATION_DIR);
        fs::create_dir_all(&dir)?;
        // Leftovers of interrupted writes are never valid records.
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "tmp") {
                fs::remove_file(&path)?;
            }
        }
        let mut errors = HashMap::new();
        if let Ok(text) = fs::read_to_string(dir.join(INDEX_FILE)) {
            if let Ok(index) = serde_json::from_str::<BTreeMap<String, IndexEntry>>(&text) {
                for (id, e) in index {
                    if let Some(err) = e.last_error {
                        errors.insert(id, err);
                    }
                }
            }
        }
        Ok(Self {
            root,
            dir,
            images,
            writes: Mutex::new(errors),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.images.keys().map(String::as_str)
    }

    pub fn record_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.json"))
    }

    pub fn image_path(&self, id: &str) -> ServiceResult<PathBuf> {
        let rel = self.images.get(id).ok_or_else(|| ServiceError::NotFound(id.to_string()))?;
        Ok(self.root.join(rel))
    }

    fn lock(&self) -> MutexGuard<'_, HashMap<String, String>> {
        self.writes.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn read_record(&self, id: &str, errors: &HashMap<String, String>) -> ServiceResult<AnnotationRecord> {
        let rel = self.images.get(id).ok_or_else(|| ServiceError::NotFound(id.to_string()))?;
        let path = self.record_path(id);
        let mut record = match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str::<AnnotationRecord>(&text)
                .map_err(|e| ServiceError::Internal(format!("corrupt record {}: {e}", path.display())))?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                let (width, height) = image::image_dimensions(self.root.join(rel))
                    .map_err(|e| ServiceError::Internal(format!("cannot read {rel}: {e}")))?;
                AnnotationRecord {
                    id: id.to_string(),
                    image: rel.clone(),
                    width,
                    height,
                    status: Status::Unlabeled,
                    revision: 0,
                    modified: None,
                    points: Vec::new(),
                    source: LandmarkSource::Manual,
                    last_error: None,
                }
            }
            Err(e) => return Err(e.into()),
        };
        record.last_error = errors.get(id).cloned();
        Ok(record)
    }

    pub fn get(&self, id: &str) -> ServiceResult<AnnotationRecord> {
        let errors = self.lock();
        self.read_record(id, &errors)
    }

    pub fn list(&self) -> ServiceResult<Vec<ImageSummary>> {
        let errors = self.lock();
        self.images
            .keys()
            .map(|id| {
                let r = self.read_record(id, &errors)?;
                Ok(ImageSummary {
                    id: r.id,
                    image: r.image,
                    status: r.status,
                    revision: r.revision,
                    modified: r.modified,
                })
            })
            .collect()
    }

    fn commit(
        &self,
        errors: &mut HashMap<String, String>,
        mut record: AnnotationRecord,
    ) -> ServiceResult<AnnotationRecord> {
        record.last_error = None;
        errors.remove(&record.id);
        atomic_write(&self.record_path(&record.id), &serde_json::to_vec_pretty(&record).map_err(crate::Error::from)?)?;
        self.write_index(errors)?;
        Ok(record)
    }

    fn write_index(&self, errors: &HashMap<String, String>) -> ServiceResult<()> {
        let mut index = BTreeMap::new();
        for (id, rel) in &self.images {
            let stored = fs::read_to_string(self.record_path(id))
                .ok()
                .and_then(|t| serde_json::from_str::<AnnotationRecord>(&t).ok());
            index.insert(
                id.clone(),
                IndexEntry {
                    image: rel.clone(),
                    status: Some(stored.as_ref().map_or(Status::Unlabeled, |r| r.status)),
                    revision: stored.map_or(0, |r| r.revision),
                    last_error: errors.get(id).cloned(),
                },
            );
        }
        let bytes = serde_json::to_vec_pretty(&index).map_err(crate::Error::from)?;
        atomic_write(&self.dir.join(INDEX_FILE), &bytes)?;
        Ok(())
    }

    /// Human correction, accepted only if `expected_revision` is current.
    pub fn put(&self, id: &str, points: Vec<Point>, expected_revision: u64) -> ServiceResult<AnnotationRecord> {
        let mut errors = self.lock();
        let current = self.read_record(id, &errors)?;
        let landmarks = LandmarkSet::new(points, current.width, current.height)
            .map_err(|e| ServiceError::Invalid(e.to_string()))?;
        if current.revision != expected_revision {
            return Err(ServiceError::Conflict(format!(
                "revision {expected_revision} is stale, current revision is {}",
                current.revision
            )));
        }
        let record = AnnotationRecord {
            status: Status::Corrected,
            revision: current.revision + 1,
            modified: Some(Utc::now()),
            points: landmarks.into_points(),
            source: LandmarkSource::Manual,
            ..current
        };
        self.commit(&mut errors, record)
    }

    /// Run `predictor` on the image and store the result as `predicted`.
    /// Corrected records are never overwritten.
    pub fn predict(&self, id: &str, predictor: &mut dyn Predictor) -> ServiceResult<AnnotationRecord> {
        let before = self.get(id)?;
        if before.status == Status::Corrected {
            return Err(ServiceError::Conflict(format!("image {id} is already corrected")));
        }
        let outcome = Image::load(&self.image_path(id)?).and_then(|img| {
            let lm = predictor.predict(&img)?;
            if (lm.width(), lm.height()) != (img.width() as u32, img.height() as u32) {
                return Err(crate::Error::SizeMismatch(format!(
                    "prediction frame {}x{} for a {}x{} image",
                    lm.width(),
                    lm.height(),
                    img.width(),
                    img.height()
                )));
            }
            Ok(lm)
        });
        let mut errors = self.lock();
        let landmarks = match outcome {
            Ok(lm) => lm,
            Err(e) => {
                errors.insert(id.to_string(), e.to_string());
                self.write_index(&errors)?;
                return Err(ServiceError::Inference(e.to_string()));
            }
        };
        let current = self.read_record(id, &errors)?;
        if current.status == Status::Corrected {
            return Err(ServiceError::Conflict(format!("image {id} was corrected during inference")));
        }
        let record = AnnotationRecord {
            status: Status::Predicted,
            revision: current.revision + 1,
            modified: Some(Utc::now()),
            points: landmarks.into_points(),
            source: LandmarkSource::Model,
            ..current
        };
        self.commit(&mut errors, record)
    }
}

/// Shared state behind the router.
pub struct ServiceState {
    pub store: AnnotationStore,
    /// Inference is exclusive.
    pub predictor: Option<Mutex<Box<dyn Predictor>>>,
}

impl ServiceState {
    pub fn new(store: AnnotationStore, predictor: Option<Box<dyn Predictor>>) -> Arc<Self> {
        Arc::new(Self {
            store,
            predictor: predictor.map(Mutex::new),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PutBody {
    pub points: Vec<Point>,
    pub revision: u64,
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/images", get(list_images))
        .route("/images/{id}", get(get_image))
        .route("/images/{id}/landmarks", get(get_landmarks).put(put_landmarks))
        .route("/images/{id}/predict", post(predict_landmarks))
        .with_state(state)
}

async fn blocking<T, F>(f: F) -> ServiceResult<T>
where
    F: FnOnce() -> ServiceResult<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?
}

async fn list_images(State(s): State<Arc<ServiceState>>) -> ServiceResult<Json<Vec<ImageSummary>>> {
    blocking(move || s.store.list()).await.map(Json)
}

async fn get_image(State(s): State<Arc<ServiceState>>, UrlPath(id): UrlPath<String>) -> ServiceResult<Response> {
    let path = s.store.image_path(&id)?;
    let read_path = path.clone();
    let bytes = blocking(move || Ok(fs::read(&read_path)?)).await?;
    let mime = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        _ => "image/jpeg",
    };
    Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
}

async fn get_landmarks(
    State(s): State<Arc<ServiceState>>,
    UrlPath(id): UrlPath<String>,
) -> ServiceResult<Json<AnnotationRecord>> {
    blocking(move || s.store.get(&id)).await.map(Json)
}

async fn put_landmarks(
    State(s): State<Arc<ServiceState>>,
    UrlPath(id): UrlPath<String>,
    body: std::result::Result<Json<PutBody>, JsonRejection>,
) -> ServiceResult<Json<AnnotationRecord>> {
    s.store.image_path(&id)?;
    let Json(body) = body.map_err(|e| ServiceError::Invalid(e.body_text()))?;
    blocking(move || s.store.put(&id, body.points, body.revision)).await.map(Json)
}

async fn predict_landmarks(
    State(s): State<Arc<ServiceState>>,
    UrlPath(id): UrlPath<String>,
) -> ServiceResult<Json<AnnotationRecord>> {
    s.store.image_path(&id)?;
    blocking(move || {
        let predictor = s
            .predictor
            .as_ref()
            .ok_or_else(|| ServiceError::Unavailable("no model loaded".into()))?;
        let mut guard = predictor.lock().unwrap_or_else(|p| p.into_inner());
        s.store.predict(&id, guard.as_mut())
    })
    .await
    .map(Json)
}

/// Bind and serve until ctrl-c.
pub async fn serve(state: Arc<ServiceState>, addr: std::net::SocketAddr) -> io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("annotation service listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::random_face;

    fn corpus(n: usize) -> (tempfile::TempDir, Vec<LandmarkSet>) {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("sub")).unwrap();
        let mut truth = Vec::new();
        for i in 0..n {
            let (img, lm) = random_face(64, i as u64);
            let rel = if i % 2 == 0 { format!("face{i}.png") } else { format!("sub/face{i}.png") };
            img.save(&dir.path().join(rel)).unwrap();
            truth.push(lm);
        }
        (dir, truth)
    }

    #[test]
    fn ids_are_stable_and_fresh_corpus_is_unlabeled() {
        let (dir, _) = corpus(3);
        let a = AnnotationStore::open(dir.path()).unwrap();
        let b = AnnotationStore::open(dir.path()).unwrap();
        assert_eq!(a.ids().collect::<Vec<_>>(), b.ids().collect::<Vec<_>>());
        let list = a.list().unwrap();
        assert_eq!(list.len(), 3);
        assert!(list.iter().all(|s| s.status == Status::Unlabeled && s.revision == 0));
        assert!(list.iter().any(|s| s.image == "sub/face1.png"));
        assert_eq!(image_id("face0.png").len(), 12);
        assert!(matches!(a.get("nope"), Err(ServiceError::NotFound(_))));
    }

    #[test]
    fn status_only_moves_forward() {
        let (dir, truth) = corpus(1);
        let store = AnnotationStore::open(dir.path()).unwrap();
        let id = store.ids().next().unwrap().to_string();
        let lm = truth[0].clone();
        let mut pred = move |_: &Image| Ok(lm.clone());
        let r1 = store.predict(&id, &mut pred).unwrap();
        assert_eq!((r1.status, r1.revision, r1.points.len()), (Status::Predicted, 1, 68));
        let r2 = store.predict(&id, &mut pred).unwrap();
        assert_eq!(r2.revision, 2);
        let r3 = store.put(&id, truth[0].points().to_vec(), 2).unwrap();
        assert_eq!((r3.status, r3.revision), (Status::Corrected, 3));
        assert!(matches!(store.predict(&id, &mut pred), Err(ServiceError::Conflict(_))));
        assert_eq!(store.get(&id).unwrap(), r3);
        // the record on disk is a readable landmark sidecar
        let sidecar = crate::landmarks::Sidecar::read(&store.record_path(&id)).unwrap();
        assert_eq!(sidecar.points, r3.points);
    }

    #[test]
    fn put_validation_and_conflicts() {
        let (dir, truth) = corpus(1);
        let store = AnnotationStore::open(dir.path()).unwrap();
        let id = store.ids().next().unwrap().to_string();
        let pts = truth[0].points().to_vec();
        assert!(matches!(store.put(&id, pts[..67].to_vec(), 0), Err(ServiceError::Invalid(_))));
        let mut bad = pts.clone();
        bad[3].x = f64::NAN;
        assert!(matches!(store.put(&id, bad, 0), Err(ServiceError::Invalid(_))));
        store.put(&id, pts.clone(), 0).unwrap();
        assert!(matches!(store.put(&id, pts.clone(), 0), Err(ServiceError::Conflict(_))));
        assert_eq!(store.put(&id, pts, 1).unwrap().revision, 2);
    }

    #[test]
    fn inference_failure_is_recorded() {
        let (dir, _) = corpus(1);
        let store = AnnotationStore::open(dir.path()).unwrap();
        let id = store.ids().next().unwrap().to_string();
        let mut failing = |_: &Image| -> crate::Result<LandmarkSet> { Err(crate::Error::Model("boom".into())) };
        assert!(matches!(store.predict(&id, &mut failing), Err(ServiceError::Inference(_))));
        let r = store.get(&id).unwrap();
        assert_eq!(r.status, Status::Unlabeled);
        assert!(r.last_error.unwrap().contains("boom"));
        let reopened = AnnotationStore::open(dir.path()).unwrap();
        assert!(reopened.get(&id).unwrap().last_error.is_some());
    }

    #[test]
    fn interrupted_write_keeps_old_record() {
        let (dir, truth) = corpus(1);
        let store = AnnotationStore::open(dir.path()).unwrap();
        let id = store.ids().next().unwrap().to_string();
        let old = store.put(&id, truth[0].points().to_vec(), 0).unwrap();
        let mut newer = old.clone();
        newer.revision = 2;
        let bytes = serde_json::to_vec(&newer).unwrap();
        for cut in [0, 1, bytes.len() / 2, bytes.len() - 1] {
            atomic_write_interrupted(&store.record_path(&id), &bytes, cut).unwrap();
            let reopened = AnnotationStore::open(dir.path()).unwrap();
            assert_eq!(reopened.get(&id).unwrap(), old);
        }
        let leftovers = fs::read_dir(dir.path().join(ANNOTATION_DIR))
            .unwrap()
            .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "tmp"))
            .count();
        assert_eq!(leftovers, 0);
    }

    #[test]
    fn manifest_defines_ids() {
        let (dir, _) = corpus(2);
        fs::write(
            dir.path().join("manifest.csv"),
            "image,landmarks,split,provenance,source\nface0.png,face0.json,train,augmented,test\n",
        )
        .unwrap();
        let store = AnnotationStore::open(dir.path()).unwrap();
        assert_eq!(store.ids().collect::<Vec<_>>(), vec![image_id("face0.png").as_str()]);
    }
}
