//! The /v1 HTTP service over loaded checkpoint sets.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use anyhow::{bail, Context};
use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::de::DeserializeOwned;
use tokio::sync::{OwnedSemaphorePermit, Semaphore};
use tower_http::cors::{Any, CorsLayer};

use sceneformer_core::assembly::Catalog;
use sceneformer_core::codec::ModelKind;
use sceneformer_core::model::set::ModelSet;
use sceneformer_core::scene::rasterize_floor;
use sceneformer_core::text::{load_embedding_table, EmbeddingTable};
use sceneformer_core::Error;

use crate::api::*;
use crate::pipeline::{self, Settings};

pub const DEFAULT_RESOLUTION: usize = 64;
pub const DEFAULT_EXTENT: f64 = 6.0;
pub const MAX_RESOLUTION: usize = 1024;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// One checkpoint directory per conditioning mode.
    pub checkpoints: Vec<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    /// Concurrent generations; further requests get 503.
    pub workers: usize,
    pub settings: Settings,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { checkpoints: Vec::new(), embeddings: None, catalog: None, workers: 4, settings: Settings::default() }
    }
}

/// Read-only models shared by every request.
pub struct Models {
    pub sets: BTreeMap<Mode, Arc<ModelSet>>,
    pub embeddings: Option<Arc<EmbeddingTable>>,
    pub catalog: Arc<Catalog>,
}

impl Models {
    pub fn new(sets: Vec<ModelSet>, embeddings: Option<EmbeddingTable>, catalog: Catalog) -> anyhow::Result<Self> {
        let mut by_mode = BTreeMap::new();
        for set in sets {
            let mode = Mode::from(set.conditioning);
            if by_mode.insert(mode, Arc::new(set)).is_some() {
                bail!("two checkpoint sets for mode `{}`", mode.name());
            }
        }
        Ok(Self { sets: by_mode, embeddings: embeddings.map(Arc::new), catalog: Arc::new(catalog) })
    }

    pub fn load(cfg: &ServiceConfig) -> anyhow::Result<Self> {
        let sets = cfg
            .checkpoints
            .iter()
            .map(|dir| ModelSet::load(dir).with_context(|| format!("loading checkpoints from {}", dir.display())))
            .collect::<anyhow::Result<_>>()?;
        let embeddings = cfg.embeddings.as_deref().map(load_embedding_table).transpose()?;
        let catalog = match &cfg.catalog {
            Some(p) => Catalog::load(p)?,
            None => Catalog::bundled(),
        };
        Self::new(sets, embeddings, catalog)
    }

    fn set(&self, mode: Mode) -> Result<Arc<ModelSet>, ApiError> {
        self.sets.get(&mode).cloned().ok_or_else(|| {
            let loaded: Vec<&str> = self.sets.keys().map(|m| m.name()).collect();
            ApiError::new(
                StatusCode::CONFLICT,
                "mode_mismatch",
                format!("no `{}` checkpoint is loaded (loaded: {})", mode.name(), loaded.join(", ")),
            )
        })
    }

    fn any_set(&self) -> Option<&Arc<ModelSet>> {
        self.sets.values().next()
    }
}

pub struct AppState {
    models: RwLock<Arc<Models>>,
    workers: Arc<Semaphore>,
    config: ServiceConfig,
}

impl AppState {
    pub fn new(models: Models, config: ServiceConfig) -> Arc<Self> {
        Arc::new(Self {
            models: RwLock::new(Arc::new(models)),
            workers: Arc::new(Semaphore::new(config.workers.max(1))),
            config,
        })
    }

    /// The models a request works with from start to end.
    pub fn snapshot(&self) -> Arc<Models> {
        self.models.read().expect("model lock poisoned").clone()
    }

    /// Loads every checkpoint anew and swaps all of them in at once.
    pub fn reload(&self) -> anyhow::Result<Vec<Mode>> {
        if self.config.checkpoints.is_empty() {
            bail!("the service was started without checkpoint directories");
        }
        let fresh = Arc::new(Models::load(&self.config)?);
        let modes = fresh.sets.keys().copied().collect();
        *self.models.write().expect("model lock poisoned") = fresh;
        Ok(modes)
    }

    /// Takes one worker slot until the permit is dropped.
    pub fn reserve_worker(&self) -> Option<OwnedSemaphorePermit> {
        self.workers.clone().try_acquire_owned().ok()
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, kind: &str, error: impl Into<String>) -> Self {
        Self { status, body: ErrorBody { error: error.into(), kind: kind.to_string(), path: None } }
    }

    fn schema(path: String, error: String) -> Self {
        let mut e = Self::new(StatusCode::BAD_REQUEST, "schema", format!("at `{path}`: {error}"));
        e.body.path = Some(path);
        e
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, kind) = match &e {
            Error::ModeMismatch(_) => (StatusCode::CONFLICT, "mode_mismatch"),
            Error::DegeneratePolygon(_) => (StatusCode::UNPROCESSABLE_ENTITY, "degenerate_polygon"),
            Error::Unsatisfiable(_) => (StatusCode::UNPROCESSABLE_ENTITY, "unsatisfiable"),
            Error::Unsorted(_) => (StatusCode::UNPROCESSABLE_ENTITY, "unsorted"),
            Error::TooManyObjects { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "too_many_objects"),
            Error::UnknownCategory(_) => (StatusCode::UNPROCESSABLE_ENTITY, "unknown_category"),
            Error::InvalidArgument(_) | Error::Shape(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_argument"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        Self::new(status, kind, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn parse<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| ApiError::schema(e.path().to_string(), e.inner().to_string()))
}

/// Runs `work` on the blocking pool if a worker slot is free.
async fn on_worker<T: Send + 'static>(
    state: &AppState,
    work: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    let permit = state
        .reserve_worker()
        .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "busy", "every worker is busy, retry later"))?;
    tokio::task::spawn_blocking(move || {
        let _permit = permit;
        work()
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

fn seed_or_fresh(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(rand::random)
}

async fn health(State(state): State<Arc<AppState>>) -> Json<HealthResponse> {
    let models = state.snapshot();
    Json(HealthResponse { status: "ok".into(), loaded_modes: models.sets.keys().copied().collect() })
}

async fn rasterize(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<RasterizeResponse> {
    let req: RasterizeRequest = parse(&body)?;
    let models = state.snapshot();
    let set = models.any_set();
    let resolution = req
        .resolution
        .or_else(|| set.map(|s| s.model(ModelKind::Category).config.floor_resolution))
        .unwrap_or(DEFAULT_RESOLUTION);
    if resolution == 0 || resolution > MAX_RESOLUTION {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "invalid_argument",
            format!("resolution must lie in 1..={MAX_RESOLUTION}, got {resolution}"),
        ));
    }
    let extent = set.map_or(DEFAULT_EXTENT, |s| s.extent);
    let mask = rasterize_floor(&req.polygon, extent, resolution)?;
    let bytes: Vec<u8> = mask.pixels().iter().map(|&p| if p { 255 } else { 0 }).collect();
    Ok(Json(RasterizeResponse {
        mask_base64: base64::engine::general_purpose::STANDARD.encode(bytes),
        resolution,
        extent,
    }))
}

async fn generate(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<GenerateResponse> {
    let req: GenerateRequest = parse(&body)?;
    let models = state.snapshot();
    let set = models.set(req.mode)?;
    let seed = seed_or_fresh(req.seed);
    let settings = state.config.settings.clone();
    let out = on_worker(&state, move || {
        Ok(pipeline::generate(
            &set,
            models.embeddings.as_deref(),
            &models.catalog,
            req.mode,
            req.floor.as_ref(),
            req.text.as_deref(),
            &settings,
            seed,
        )?)
    })
    .await?;
    Ok(Json(out))
}

async fn complete(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<CompleteResponse> {
    let req: CompleteRequest = parse(&body)?;
    let models = state.snapshot();
    let set = models.set(req.mode)?;
    let seed = seed_or_fresh(req.seed);
    let settings = state.config.settings.clone();
    let out = on_worker(&state, move || {
        Ok(pipeline::complete(
            &set,
            models.embeddings.as_deref(),
            &models.catalog,
            req.mode,
            &req.scene,
            req.condition.text.as_deref(),
            req.max_new,
            &settings,
            seed,
        )?)
    })
    .await?;
    Ok(Json(out))
}

async fn describe(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<DescribeResponse> {
    let req: DescribeRequest = parse(&body)?;
    let models = state.snapshot();
    let seed = seed_or_fresh(req.seed);
    let table = models.any_set().map(|s| s.table.clone());
    Ok(Json(pipeline::describe(&req.scene, table.as_ref(), seed)?))
}

async fn reload(State(state): State<Arc<AppState>>) -> ApiResult<HealthResponse> {
    let worker = state.clone();
    let modes = tokio::task::spawn_blocking(move || worker.reload())
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(|e| ApiError::new(StatusCode::CONFLICT, "reload_failed", format!("{e:#}")))?;
    Ok(Json(HealthResponse { status: "reloaded".into(), loaded_modes: modes }))
}

pub fn router(state: Arc<AppState>) -> Router {
    let cors = CorsLayer::new().allow_origin(Any).allow_methods(Any).allow_headers(Any);
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/rasterize", post(rasterize))
        .route("/v1/generate", post(generate))
        .route("/v1/complete", post(complete))
        .route("/v1/describe", post(describe))
        .route("/v1/reload", post(reload))
        .layer(cors)
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, state: Arc<AppState>) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
