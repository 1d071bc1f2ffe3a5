mod common;

use attr2face::service::{router, AppState, ProgressionResponse, SynthesisResponse};
use attr2face::synth::Synthesizer;
use attr2face_core::attributes::{FACE_ATTRS, PROGRESSION_WEIGHTS};
use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn model() -> Synthesizer {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    common::random_model(&path);
    Synthesizer::load(&path).unwrap()
}

fn state() -> AppState {
    AppState::new(Some(model()), 8)
}

async fn call(state: &AppState, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn attrs(v: f64) -> Vec<f64> {
    vec![v; FACE_ATTRS]
}

#[tokio::test]
async fn health_reports_model_state() {
    let s = state();
    let (status, body) = call(&s, "GET", "/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
    assert_eq!(body["model_hash"].as_str().unwrap().len(), 64);
    let empty = AppState::new(None, 8);
    let (_, body) = call(&empty, "GET", "/health", None).await;
    assert_eq!(body["status"], "no_model");
}

#[tokio::test]
async fn attributes_lists_the_curated_schema() {
    let (status, body) = call(&AppState::new(None, 8), "GET", "/attributes", None).await;
    assert_eq!(status, StatusCode::OK);
    let list = body["attributes"].as_array().unwrap();
    assert_eq!(list.len(), FACE_ATTRS);
    assert_eq!(list.iter().filter(|a| a["group"] == "texture").count(), 17);
    assert_eq!(list.iter().filter(|a| a["group"] == "color").count(), 6);
    for (i, a) in list.iter().enumerate() {
        assert_eq!(a["index"], i);
    }
}

#[tokio::test]
async fn synthesis_is_deterministic_per_seed() {
    let s = state();
    let req = json!({ "attributes": attrs(-1.0), "seed": 42, "return_sketch": true });
    let (status, a) = call(&s, "POST", "/synthesize", Some(req.clone())).await;
    assert_eq!(status, StatusCode::OK);
    let (_, b) = call(&s, "POST", "/synthesize", Some(req)).await;
    let a: SynthesisResponse = serde_json::from_value(a).unwrap();
    let b: SynthesisResponse = serde_json::from_value(b).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.seed_used, 42);
    assert_eq!(a.images.len(), 1);
    assert_eq!(a.sketches.as_ref().map(Vec::len), Some(1));
    let (_, c) = call(&s, "POST", "/synthesize", Some(json!({ "attributes": attrs(-1.0), "seed": 43 }))).await;
    let c: SynthesisResponse = serde_json::from_value(c).unwrap();
    assert_ne!(a.images, c.images);
    assert!(c.sketches.is_none());
}

#[tokio::test]
async fn count_yields_distinct_images_and_clamps_attributes() {
    let s = state();
    let mut a = attrs(0.0);
    a[0] = 3.0;
    let (status, body) = call(&s, "POST", "/synthesize", Some(json!({ "attributes": a, "seed": 1, "count": 3 }))).await;
    assert_eq!(status, StatusCode::OK);
    let r: SynthesisResponse = serde_json::from_value(body).unwrap();
    assert_eq!(r.images.len(), 3);
    assert!(r.images[0] != r.images[1] && r.images[1] != r.images[2] && r.images[0] != r.images[2]);
    assert_eq!(r.attributes[0], 1.0);
}

#[tokio::test]
async fn missing_seed_is_drawn_and_reported() {
    let s = state();
    let (status, body) = call(&s, "POST", "/synthesize", Some(json!({ "attributes": attrs(1.0) }))).await;
    assert_eq!(status, StatusCode::OK);
    let r: SynthesisResponse = serde_json::from_value(body).unwrap();
    let (_, again) = call(&s, "POST", "/synthesize", Some(json!({ "attributes": attrs(1.0), "seed": r.seed_used }))).await;
    let again: SynthesisResponse = serde_json::from_value(again).unwrap();
    assert_eq!(r.images, again.images);
}

#[tokio::test]
async fn bad_requests_are_rejected() {
    let s = state();
    let cases = [
        json!({ "attributes": vec![0.0; 22] }),
        json!({ "attributes": attrs(0.0), "count": 0 }),
        json!({ "attributes": attrs(0.0), "count": 9 }),
        json!({ "attributes": attrs(0.0), "colour": true }),
        json!({ "seed": 1 }),
        json!("not an object"),
    ];
    for body in cases {
        let (status, resp) = call(&s, "POST", "/synthesize", Some(body.clone())).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        assert!(resp["error"].is_string());
    }
    let req = Request::builder().method("POST").uri("/synthesize").body(Body::from("{oops")).unwrap();
    let resp = router(s.clone()).oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
    let (status, _) =
        call(&s, "POST", "/progression", Some(json!({ "attribute_name": "Mustache", "base_attributes": attrs(0.0) }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn no_model_means_unavailable() {
    let s = AppState::new(None, 8);
    let (status, _) = call(&s, "POST", "/synthesize", Some(json!({ "attributes": attrs(0.0), "seed": 1 }))).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    s.swap(Some(model()));
    let (status, _) = call(&s, "POST", "/synthesize", Some(json!({ "attributes": attrs(0.0), "seed": 1 }))).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn progression_returns_one_image_per_weight() {
    let s = state();
    let req = json!({ "attribute_name": "Smiling", "base_attributes": attrs(-1.0), "seed": 5 });
    let (status, body) = call(&s, "POST", "/progression", Some(req.clone())).await;
    assert_eq!(status, StatusCode::OK);
    let r: ProgressionResponse = serde_json::from_value(body).unwrap();
    assert_eq!(r.weights, PROGRESSION_WEIGHTS.to_vec());
    assert_eq!(r.images.len(), 6);
    let (_, again) = call(&s, "POST", "/progression", Some(req)).await;
    assert_eq!(serde_json::from_value::<ProgressionResponse>(again).unwrap(), r);
}
