use std::fs;
use std::path::Path;

use artmarks::landmarks::{LandmarkSet, Point};
use artmarks::raster::Image;
use artmarks::service::{
    atomic_write_interrupted, image_id, router, AnnotationRecord, AnnotationStore, ErrorBody, ImageSummary, Predictor,
    ServiceState, Status,
};
use artmarks::synthetic::random_face;
use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn corpus(dir: &Path, n: usize) -> Vec<LandmarkSet> {
    (0..n)
        .map(|i| {
            let (img, lm) = random_face(64, 100 + i as u64);
            img.save(&dir.join(format!("img{i}.png"))).unwrap();
            lm
        })
        .collect()
}

fn app(dir: &Path, predictor: Option<Box<dyn Predictor>>) -> Router {
    router(ServiceState::new(AnnotationStore::open(dir).unwrap(), predictor))
}

fn template_predictor() -> Box<dyn Predictor> {
    Box::new(|img: &Image| {
        let (_, lm) = random_face(img.width() as u32, 0);
        Ok(lm)
    })
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => req.header("content-type", "application/json").body(Body::from(v.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn json_call<T: serde::de::DeserializeOwned>(
    app: &Router,
    method: Method,
    uri: &str,
    body: Option<Value>,
) -> (StatusCode, T) {
    let (status, bytes) = call(app, method, uri, body).await;
    let parsed = serde_json::from_slice(&bytes).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&bytes)));
    (status, parsed)
}

fn points_json(points: &[Point]) -> Value {
    Value::Array(points.iter().map(|p| json!([p.x, p.y])).collect())
}

#[tokio::test]
async fn listing_and_image_bytes() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), 3);
    let app = app(dir.path(), None);
    let (status, list): (_, Vec<ImageSummary>) = json_call(&app, Method::GET, "/images", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(list.len(), 3);
    assert!(list.iter().all(|s| s.status == Status::Unlabeled));
    let id = image_id("img1.png");
    let (status, bytes) = call(&app, Method::GET, &format!("/images/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(bytes, fs::read(dir.path().join("img1.png")).unwrap());
    let (status, err): (_, ErrorBody) = json_call(&app, Method::GET, "/images/ffffffffffff", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err.error, "not_found");
    let (status, _) = call(&app, Method::GET, "/images/ffffffffffff/landmarks", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn predict_then_correct() {
    let dir = tempfile::tempdir().unwrap();
    let truth = corpus(dir.path(), 1);
    let app = app(dir.path(), Some(template_predictor()));
    let id = image_id("img0.png");
    let lm_uri = format!("/images/{id}/landmarks");
    let predict_uri = format!("/images/{id}/predict");

    let (status, r1): (_, AnnotationRecord) = json_call(&app, Method::POST, &predict_uri, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!((r1.status, r1.revision, r1.points.len()), (Status::Predicted, 1, 68));
    let (_, r2): (_, AnnotationRecord) = json_call(&app, Method::POST, &predict_uri, None).await;
    assert_eq!(r2.revision, 2);

    let body = json!({ "points": points_json(truth[0].points()), "revision": 2 });
    let (status, r3): (_, AnnotationRecord) = json_call(&app, Method::PUT, &lm_uri, Some(body)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!((r3.status, r3.revision), (Status::Corrected, 3));
    assert_eq!(r3.points, truth[0].points());

    // the sidecar on disk matches the response and reads back identically
    let on_disk: AnnotationRecord =
        serde_json::from_slice(&fs::read(dir.path().join("annotations").join(format!("{id}.json"))).unwrap()).unwrap();
    assert_eq!(on_disk, r3);
    let (_, fetched): (_, AnnotationRecord) = json_call(&app, Method::GET, &lm_uri, None).await;
    assert_eq!(fetched, r3);

    let (status, err): (_, ErrorBody) = json_call(&app, Method::POST, &predict_uri, None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err.error, "conflict");
}

#[tokio::test]
async fn validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let truth = corpus(dir.path(), 1);
    let app = app(dir.path(), None);
    let uri = format!("/images/{}/landmarks", image_id("img0.png"));
    let short = json!({ "points": points_json(&truth[0].points()[..67]), "revision": 0 });
    let (status, err): (_, ErrorBody) = json_call(&app, Method::PUT, &uri, Some(short)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(err.detail.contains("68"), "{}", err.detail);
    let (status, err): (_, ErrorBody) = json_call(&app, Method::PUT, &uri, Some(json!({ "points": [] }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err.error, "invalid");
    let (status, _): (_, ErrorBody) =
        json_call(&app, Method::POST, &format!("/images/{}/predict", image_id("img0.png")), None).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
}

#[tokio::test]
async fn failed_inference_leaves_record_unlabeled() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), 1);
    let failing: Box<dyn Predictor> =
        Box::new(|_: &Image| -> artmarks::Result<LandmarkSet> { Err(artmarks::Error::Model("no face".into())) });
    let app = app(dir.path(), Some(failing));
    let id = image_id("img0.png");
    let (status, err): (_, ErrorBody) = json_call(&app, Method::POST, &format!("/images/{id}/predict"), None).await;
    assert_eq!(status, StatusCode::INTERNAL_SERVER_ERROR);
    assert_eq!(err.error, "inference_failed");
    let (_, rec): (_, AnnotationRecord) = json_call(&app, Method::GET, &format!("/images/{id}/landmarks"), None).await;
    assert_eq!((rec.status, rec.revision), (Status::Unlabeled, 0));
    assert!(rec.last_error.unwrap().contains("no face"));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_stale_writers() {
    let dir = tempfile::tempdir().unwrap();
    let truth = corpus(dir.path(), 1);
    let app = app(dir.path(), None);
    let uri = format!("/images/{}/landmarks", image_id("img0.png"));
    for round in 0..5u64 {
        let tasks: Vec<_> = (0..8)
            .map(|k| {
                let app = app.clone();
                let uri = uri.clone();
                let pts: Vec<Point> = truth[0].points().iter().map(|p| p.offset(k as f64 * 0.1, 0.0)).collect();
                let body = json!({ "points": points_json(&pts), "revision": round });
                tokio::spawn(async move { call(&app, Method::PUT, &uri, Some(body)).await.0 })
            })
            .collect();
        let mut statuses = Vec::new();
        for t in tasks {
            statuses.push(t.await.unwrap());
        }
        assert_eq!(statuses.iter().filter(|s| **s == StatusCode::OK).count(), 1, "{statuses:?}");
        assert_eq!(statuses.iter().filter(|s| **s == StatusCode::CONFLICT).count(), 7);
        let (_, rec): (_, AnnotationRecord) = json_call(&app, Method::GET, &uri, None).await;
        assert_eq!(rec.revision, round + 1);
    }
}

#[tokio::test]
async fn torn_write_leaves_previous_revision() {
    let dir = tempfile::tempdir().unwrap();
    let truth = corpus(dir.path(), 1);
    let id = image_id("img0.png");
    let uri = format!("/images/{id}/landmarks");
    let first = app(dir.path(), None);
    let body = json!({ "points": points_json(truth[0].points()), "revision": 0 });
    let (_, old): (_, AnnotationRecord) = json_call(&first, Method::PUT, &uri, Some(body)).await;
    let record = dir.path().join("annotations").join(format!("{id}.json"));
    let mut newer = old.clone();
    newer.revision += 1;
    let bytes = serde_json::to_vec_pretty(&newer).unwrap();
    for cut in (0..bytes.len()).step_by(97) {
        atomic_write_interrupted(&record, &bytes, cut).unwrap();
        let restarted = app(dir.path(), None);
        let (status, rec): (_, AnnotationRecord) = json_call(&restarted, Method::GET, &uri, None).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(rec, old);
    }
}
