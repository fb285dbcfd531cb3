//! HTTP API for descendant synthesis.
//!
//! | method | path            | body                  | response                                  |
//! |--------|-----------------|-----------------------|-------------------------------------------|
//! | POST   | `/v1/synthesize` | [`SynthesizeBody`]   | base64 PNG, model id, timing              |
//! | POST   | `/v1/tree`       | generation tree JSON | base64 PNG per child, synthesis order     |
//! | GET    | `/v1/health`     |                      | model id and canvas; 503 while loading    |
//! | GET    | `/v1/config`     |                      | network config and request defaults       |
//!
//! Validation failures answer 400 with `{"error", "fields": [{field, message}]}`.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;

use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::Serialize;
use serde_json::{json, Map, Value};

use kinsynth::face_geometry::{parse_control_vector, LandmarkSet};
use kinsynth::image_io::{decode_image, encode_png};
use kinsynth::inference::{synthesize_tree, GenerationTree, ParentFace, SynthesisControls, SynthesisRequest, Synthesizer};
use kinsynth::networks::{AgeStage, Gender};
use kinsynth::{Error, Result};

mod body;

pub use body::{parse_synthesize, FieldError, SynthesizeBody};

const BODY_LIMIT: usize = 32 * 1024 * 1024;

struct Loaded {
    synth: Mutex<Synthesizer>,
    model_id: String,
    canvas: usize,
    config: Value,
}

/// Shared service state. The model slot is empty until a checkpoint has
/// been installed; installing a new one swaps it between requests.
#[derive(Default)]
pub struct AppState {
    slot: RwLock<Option<Arc<Loaded>>>,
}

impl AppState {
    pub fn new() -> Arc<Self> {
        Arc::new(AppState::default())
    }

    pub fn install(&self, synth: Synthesizer) {
        let loaded = Loaded {
            model_id: synth.model_id().to_string(),
            canvas: synth.canvas(),
            config: json!({
                "format": synth.meta().format,
                "model_id": synth.model_id(),
                "canvas": synth.canvas(),
                "net": synth.meta().net,
            }),
            synth: Mutex::new(synth),
        };
        *self.slot.write().unwrap_or_else(|e| e.into_inner()) = Some(Arc::new(loaded));
    }

    pub fn is_loaded(&self) -> bool {
        self.current().is_some()
    }

    fn current(&self) -> Option<Arc<Loaded>> {
        self.slot.read().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

/// Loads `path` on a blocking thread and installs it when ready.
pub fn load_in_background(state: Arc<AppState>, path: PathBuf) -> tokio::task::JoinHandle<Result<()>> {
    tokio::task::spawn_blocking(move || {
        let synth = Synthesizer::load(&path)?;
        log::info!("loaded model {} from {}", synth.model_id(), path.display());
        state.install(synth);
        Ok(())
    })
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/config", get(config))
        .route("/v1/synthesize", post(synthesize))
        .route("/v1/tree", post(tree))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state)
}

/// Binds `addr`, starts loading `ckpt` and serves until the process exits.
pub async fn serve(addr: &str, ckpt: PathBuf) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    let state = AppState::new();
    let loader = load_in_background(state.clone(), ckpt);
    tokio::spawn(async move {
        match loader.await {
            Ok(Err(e)) => log::error!("model load failed: {e}"),
            Err(e) => log::error!("model loader panicked: {e}"),
            Ok(Ok(())) => {}
        }
    });
    axum::serve(listener, router(state)).await
}

pub enum ApiError {
    Fields(Vec<FieldError>),
    Unavailable,
    Unprocessable(String),
    Internal(String),
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::Validation { field, message } => ApiError::Fields(vec![FieldError { field, message }]),
            Error::Image(err) => ApiError::Fields(vec![FieldError::new("image", err.to_string())]),
            Error::Incompatible(m) | Error::ShapeMismatch(m) | Error::DegenerateGeometry(m) => ApiError::Unprocessable(m),
            other => ApiError::Internal(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        match self {
            ApiError::Fields(fields) => (
                StatusCode::BAD_REQUEST,
                Json(json!({ "error": "validation failed", "fields": fields })),
            )
                .into_response(),
            ApiError::Unavailable => (
                StatusCode::SERVICE_UNAVAILABLE,
                Json(json!({ "status": "loading", "error": "model not loaded yet" })),
            )
                .into_response(),
            ApiError::Unprocessable(m) => (StatusCode::UNPROCESSABLE_ENTITY, Json(json!({ "error": m }))).into_response(),
            ApiError::Internal(m) => {
                log::error!("request failed: {m}");
                (StatusCode::INTERNAL_SERVER_ERROR, Json(json!({ "error": m }))).into_response()
            }
        }
    }
}

fn loaded(state: &AppState) -> std::result::Result<Arc<Loaded>, ApiError> {
    state.current().ok_or(ApiError::Unavailable)
}

fn body_object(body: std::result::Result<Json<Value>, axum::extract::rejection::JsonRejection>) -> std::result::Result<Map<String, Value>, ApiError> {
    match body {
        Ok(Json(Value::Object(m))) => Ok(m),
        Ok(_) => Err(ApiError::Fields(vec![FieldError::new("body", "expected a JSON object")])),
        Err(e) => Err(ApiError::Fields(vec![FieldError::new("body", e.body_text())])),
    }
}

async fn health(State(state): State<Arc<AppState>>) -> std::result::Result<Json<Value>, ApiError> {
    let m = loaded(&state)?;
    Ok(Json(json!({ "status": "ok", "model_id": m.model_id, "canvas": m.canvas })))
}

async fn config(State(state): State<Arc<AppState>>) -> std::result::Result<Json<Value>, ApiError> {
    let m = loaded(&state)?;
    let defaults = SynthesisControls::default();
    let mut out = m.config.clone();
    out["components"] = json!(["left_eye_brow", "right_eye_brow", "nose", "mouth", "profile"]);
    out["age_stages"] = json!(AgeStage::ALL.iter().map(|a| a.to_string()).collect::<Vec<_>>());
    out["genders"] = json!([Gender::M.to_string(), Gender::F.to_string()]);
    out["defaults"] = json!({
        "age_stage": defaults.age_stage,
        "gender": defaults.gender,
        "seed": defaults.seed,
        "noise_scale": defaults.noise_scale,
        "noise_components": defaults.noise_components,
        "decoder_noise": defaults.decoder_noise,
    });
    Ok(Json(out))
}

#[derive(Serialize)]
struct SynthesizeResponse {
    image: String,
    width: usize,
    height: usize,
    model_id: String,
    vector: String,
    age_stage: AgeStage,
    gender: Gender,
    seed: u64,
    timing_ms: Timing,
}

#[derive(Serialize)]
struct Timing {
    synthesis: f64,
    total: f64,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

async fn run_blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T> + Send + 'static) -> std::result::Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(format!("worker failed: {e}")))?
        .map_err(ApiError::from)
}

async fn synthesize(
    State(state): State<Arc<AppState>>,
    body: std::result::Result<Json<Value>, axum::extract::rejection::JsonRejection>,
) -> std::result::Result<Json<Value>, ApiError> {
    let start = Instant::now();
    let m = loaded(&state)?;
    let req = parse_synthesize(&body_object(body)?).map_err(ApiError::Fields)?;
    let controls = req.controls.clone();
    let worker = m.clone();
    let (png, synth_ms) = run_blocking(move || {
        let t = Instant::now();
        let face = worker.synth.lock().unwrap_or_else(|e| e.into_inner()).synthesize(&req)?;
        let dt = ms(t);
        Ok((encode_png(&face)?, dt))
    })
    .await?;
    let resp = SynthesizeResponse {
        image: B64.encode(png),
        width: m.canvas,
        height: m.canvas,
        model_id: m.model_id.clone(),
        vector: controls.vector.to_string(),
        age_stage: controls.age_stage,
        gender: controls.gender,
        seed: controls.seed,
        timing_ms: Timing {
            synthesis: synth_ms,
            total: ms(start),
        },
    };
    Ok(Json(serde_json::to_value(resp).map_err(|e| ApiError::Internal(e.to_string()))?))
}

async fn tree(
    State(state): State<Arc<AppState>>,
    body: std::result::Result<Json<Value>, axum::extract::rejection::JsonRejection>,
) -> std::result::Result<Json<Value>, ApiError> {
    let start = Instant::now();
    let m = loaded(&state)?;
    let obj = body_object(body)?;
    let tree: GenerationTree = serde_json::from_value(Value::Object(obj))
        .map_err(|e| ApiError::Fields(vec![FieldError::new("body", e.to_string())]))?;
    tree.validate()?;
    let worker = m.clone();
    let order: Vec<String> = tree.order()?.iter().map(|c| c.id.clone()).collect();
    let images = run_blocking(move || {
        let synth = worker.synth.lock().unwrap_or_else(|e| e.into_inner());
        let faces = synthesize_tree(&tree, &synth, |f| {
            let bytes = B64
                .decode(f.image.trim())
                .map_err(|e| Error::validation(format!("faces.{}.image", f.id), format!("invalid base64: {e}")))?;
            decode_image(&bytes).map_err(|e| Error::validation(format!("faces.{}.image", f.id), e.to_string()))
        })?;
        faces
            .into_iter()
            .map(|(id, face)| Ok((id, B64.encode(encode_png(&face)?))))
            .collect::<Result<BTreeMap<_, _>>>()
    })
    .await?;
    Ok(Json(json!({
        "images": images,
        "order": order,
        "model_id": m.model_id,
        "canvas": m.canvas,
        "timing_ms": { "total": ms(start) },
    })))
}

/// Builds a parent from base64 PNG bytes and optional landmarks.
fn parent_from(field: &str, data: &str, landmarks: Option<LandmarkSet>) -> std::result::Result<ParentFace, FieldError> {
    let bytes = B64
        .decode(data.trim())
        .map_err(|e| FieldError::new(field, format!("invalid base64: {e}")))?;
    let pixels = decode_image(&bytes).map_err(|e| FieldError::new(field, format!("undecodable image: {e}")))?;
    Ok(ParentFace { pixels, landmarks })
}

/// The request a body describes, for callers that build bodies directly.
pub fn request_from(body: &SynthesizeBody) -> std::result::Result<SynthesisRequest, Vec<FieldError>> {
    let mut errors = Vec::new();
    let vector = parse_control_vector(&body.vector).map_err(|e| errors.push(FieldError::from_error(e))).ok();
    let male = parent_from("parent_male", &body.parent_male, body.landmarks_male.clone())
        .map_err(|e| errors.push(e))
        .ok();
    let female = parent_from("parent_female", &body.parent_female, body.landmarks_female.clone())
        .map_err(|e| errors.push(e))
        .ok();
    let controls = SynthesisControls {
        vector: vector.unwrap_or_default(),
        age_stage: body.age_stage,
        gender: body.gender,
        seed: body.seed,
        noise_scale: body.noise_scale,
        noise_components: body.noise_components.clone(),
        decoder_noise: body.decoder_noise,
    };
    if let Err(e) = controls.validate() {
        errors.push(FieldError::from_error(e));
    }
    match (male, female, errors.is_empty()) {
        (Some(male), Some(female), true) => Ok(SynthesisRequest { male, female, controls }),
        _ => Err(errors),
    }
}
