//! HTTP synthesis service.
//!
//! `GET /health`, `GET /attributes`, `POST /synthesize`, `POST /progression`.
//! Handlers share a read-only model snapshot; [`AppState::swap`] replaces it
//! atomically.

use std::sync::{Arc, RwLock};

use attr2face_core::attributes::{curated_names, group_of, AttributeGroup};
use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::dataset::encode_png;
use crate::error::Error;
use crate::synth::{checked_attributes, Synthesis, Synthesizer};

pub const DEFAULT_MAX_COUNT: usize = 16;

#[derive(Clone)]
pub struct AppState {
    model: Arc<RwLock<Option<Arc<Synthesizer>>>>,
    pub max_count: usize,
}

impl AppState {
    pub fn new(model: Option<Synthesizer>, max_count: usize) -> Self {
        Self { model: Arc::new(RwLock::new(model.map(Arc::new))), max_count }
    }

    pub fn snapshot(&self) -> Option<Arc<Synthesizer>> {
        self.model.read().expect("model lock").clone()
    }

    pub fn swap(&self, model: Option<Synthesizer>) {
        *self.model.write().expect("model lock") = model.map(Arc::new);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisRequest {
    pub attributes: Vec<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "one")]
    pub count: usize,
    #[serde(default)]
    pub return_sketch: bool,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisResponse {
    /// Base64-encoded PNGs.
    pub images: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sketches: Option<Vec<String>>,
    pub seed_used: u64,
    pub model_hash: String,
    /// The clamped attribute vector that was used.
    pub attributes: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProgressionRequest {
    pub attribute_name: String,
    pub base_attributes: Vec<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProgressionResponse {
    pub attribute_name: String,
    pub weights: Vec<f64>,
    pub images: Vec<String>,
    pub seed_used: u64,
    pub model_hash: String,
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(ErrorBody { error: message.into() })).into_response()
}

fn parse<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, Response> {
    serde_json::from_slice(body).map_err(|e| error(StatusCode::BAD_REQUEST, format!("malformed request: {e}")))
}

fn model(state: &AppState) -> Result<Arc<Synthesizer>, Response> {
    state.snapshot().ok_or_else(|| error(StatusCode::SERVICE_UNAVAILABLE, "no model loaded"))
}

fn encode_all(images: &[attr2face_core::data::Image]) -> Result<Vec<String>, Error> {
    images.iter().map(|i| Ok(base64::engine::general_purpose::STANDARD.encode(encode_png(i)?))).collect()
}

fn internal(e: impl std::fmt::Display) -> Response {
    error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
}

async fn run_blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, Error> + Send + 'static) -> Result<T, Response> {
    tokio::task::spawn_blocking(f).await.map_err(internal)?.map_err(internal)
}

async fn health(State(state): State<AppState>) -> Response {
    let snap = state.snapshot();
    Json(serde_json::json!({
        "status": if snap.is_some() { "ok" } else { "no_model" },
        "model_hash": snap.map(|s| s.model_hash.clone()),
    }))
    .into_response()
}

async fn attributes() -> Response {
    let list: Vec<_> = curated_names()
        .enumerate()
        .map(|(i, name)| {
            let group = match group_of(i) {
                Some(AttributeGroup::Texture) => "texture",
                _ => "color",
            };
            serde_json::json!({ "index": i, "name": name, "group": group })
        })
        .collect();
    Json(serde_json::json!({ "attributes": list })).into_response()
}

fn fresh_seed() -> u64 {
    rand::random()
}

async fn synthesize(State(state): State<AppState>, body: Bytes) -> Response {
    let req: SynthesisRequest = match parse(&body) {
        Ok(r) => r,
        Err(r) => return r,
    };
    let attributes = match checked_attributes(&req.attributes) {
        Ok(a) => a,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string()),
    };
    if req.count == 0 || req.count > state.max_count {
        return error(StatusCode::BAD_REQUEST, format!("count must be in 1..={}", state.max_count));
    }
    let m = match model(&state) {
        Ok(m) => m,
        Err(r) => return r,
    };
    let seed = req.seed.unwrap_or_else(fresh_seed);
    let attrs = attributes.clone();
    let result = run_blocking(move || {
        let out: Synthesis = m.synthesize(&attrs, seed, req.count)?;
        let images = encode_all(&out.faces)?;
        let sketches = if req.return_sketch { Some(encode_all(&out.sketches)?) } else { None };
        Ok(SynthesisResponse { images, sketches, seed_used: seed, model_hash: m.model_hash.clone(), attributes: attrs })
    })
    .await;
    match result {
        Ok(r) => Json(r).into_response(),
        Err(r) => r,
    }
}

async fn progression(State(state): State<AppState>, body: Bytes) -> Response {
    let req: ProgressionRequest = match parse(&body) {
        Ok(r) => r,
        Err(r) => return r,
    };
    if let Err(e) = attr2face_core::attributes::curated_index(&req.attribute_name) {
        return error(StatusCode::BAD_REQUEST, e.to_string());
    }
    if let Err(e) = checked_attributes(&req.base_attributes) {
        return error(StatusCode::BAD_REQUEST, e.to_string());
    }
    let m = match model(&state) {
        Ok(m) => m,
        Err(r) => return r,
    };
    let seed = req.seed.unwrap_or_else(fresh_seed);
    let result = run_blocking(move || {
        let (weights, out) = m.progression(&req.attribute_name, &req.base_attributes, seed)?;
        Ok(ProgressionResponse {
            attribute_name: req.attribute_name,
            weights,
            images: encode_all(&out.faces)?,
            seed_used: seed,
            model_hash: m.model_hash.clone(),
        })
    })
    .await;
    match result {
        Ok(r) => Json(r).into_response(),
        Err(r) => r,
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/attributes", get(attributes))
        .route("/synthesize", post(synthesize))
        .route("/progression", post(progression))
        .with_state(state)
}

/// Serves until interrupted.
pub async fn serve(state: AppState, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
