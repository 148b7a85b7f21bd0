//! Read-only HTTP front end over one embedding model, one embedding index and
//! one elevation raster: point embeddings, similarity retrieval and
//! multi-scale grid classification.
//!
//! Artifacts load once, in the background; until then every endpoint answers
//! 503. After loading nothing is mutated, so handlers share them freely.

// `!(x > 0.0)` rejects NaN as well; the rewrite clippy suggests would not.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;

use std::sync::{Arc, OnceLock};

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use terrain_embed::baselines::EmbeddingModel;
use terrain_embed::checkpoint::sha256_file;
use terrain_embed::evaluation::{grid_classify, ClassProbe, GridOptions, ProbeSet};
use terrain_embed::geo::{BoundingBox, GeoCoordinate};
use terrain_embed::index::{knn_retrieve, EmbeddingIndex, Neighbor};
use terrain_embed::patch::{extract_patch, normalize_patch, ScaleSpec};
use terrain_embed::raster::ElevationRaster;
use tower_http::cors::{AllowOrigin, CorsLayer};

pub use config::{ServiceConfig, DEFAULT_BIND, DEFAULT_MAX_AREA_DEG2, DEFAULT_MAX_BATCH};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Artifact(#[from] terrain_embed::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Everything a request may read.
#[derive(Debug)]
pub struct Artifacts {
    pub model: EmbeddingModel,
    pub index: EmbeddingIndex,
    pub raster: ElevationRaster,
    pub probes: Vec<ClassProbe>,
    /// SHA-256 of the checkpoint blob; `None` for the parameter-free model.
    pub checkpoint_hash: Option<String>,
}

impl Artifacts {
    pub fn load(config: &ServiceConfig) -> Result<Self, ServiceError> {
        let model = EmbeddingModel::open(&config.checkpoint)?;
        let checkpoint_hash = match config.checkpoint.as_str() {
            "id" => None,
            path => Some(sha256_file(path.as_ref())?),
        };
        let index = EmbeddingIndex::load(&config.index)?;
        let raster = ElevationRaster::read_geotiff(&config.raster)?;
        let probes = match &config.probes {
            Some(path) => ProbeSet::load(path)?.probes,
            None => Vec::new(),
        };
        Self::new(model, index, raster, probes, checkpoint_hash)
    }

    /// Bundle artifacts after checking they were built for the same model.
    pub fn new(
        model: EmbeddingModel,
        index: EmbeddingIndex,
        raster: ElevationRaster,
        probes: Vec<ClassProbe>,
        checkpoint_hash: Option<String>,
    ) -> Result<Self, ServiceError> {
        let label = model.label();
        if index.model != label {
            return Err(ServiceError::Config(format!("index was built with `{}`, the checkpoint is `{label}`", index.model)));
        }
        if let (Some(a), Some(b)) = (&index.checkpoint_sha256, &checkpoint_hash) {
            if a != b {
                return Err(ServiceError::Config(format!("index was built from checkpoint {a}, loaded {b}")));
            }
        }
        if let Some(p) = probes.iter().find(|p| p.model != label) {
            return Err(ServiceError::Config(format!("probe `{}` was fitted on `{}`, not `{label}`", p.class_name, p.model)));
        }
        Ok(Self { model, index, raster, probes, checkpoint_hash })
    }
}

#[derive(Clone)]
pub struct AppState {
    config: Arc<ServiceConfig>,
    artifacts: Arc<OnceLock<Arc<Artifacts>>>,
}

impl AppState {
    /// State that answers 503 until [`AppState::install`] runs.
    pub fn new(config: ServiceConfig) -> Self {
        Self { config: Arc::new(config), artifacts: Arc::new(OnceLock::new()) }
    }

    pub fn with_artifacts(config: ServiceConfig, artifacts: Artifacts) -> Self {
        let state = Self::new(config);
        state.install(artifacts);
        state
    }

    /// First call wins; later calls are ignored.
    pub fn install(&self, artifacts: Artifacts) {
        let _ = self.artifacts.set(Arc::new(artifacts));
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    fn ready(&self) -> Result<Arc<Artifacts>, ApiError> {
        self.artifacts
            .get()
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "model and index are still loading"))
    }
}

pub fn router(state: AppState) -> Router {
    let cors = cors_layer(&state.config.cors_origins);
    let app = Router::new()
        .route("/health", get(health))
        .route("/embed", post(embed))
        .route("/retrieve", post(retrieve))
        .route("/grid-classify", get(grid))
        .with_state(state);
    match cors {
        Some(layer) => app.layer(layer),
        None => app,
    }
}

fn cors_layer(origins: &[String]) -> Option<CorsLayer> {
    if origins.is_empty() {
        return None;
    }
    let allow = if origins.iter().any(|o| o == "*") {
        AllowOrigin::any()
    } else {
        AllowOrigin::list(origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()))
    };
    Some(CorsLayer::new().allow_origin(allow).allow_methods([Method::GET, Method::POST]).allow_headers([header::CONTENT_TYPE]))
}

/// Status lines go to stderr; a closed stderr must not take the server down.
fn log(line: std::fmt::Arguments) {
    use std::io::Write;
    let _ = writeln!(std::io::stderr(), "{line}");
}

/// Bind `config.bind`, then serve while the artifacts load.
pub async fn serve(config: ServiceConfig) -> Result<(), ServiceError> {
    config.validate()?;
    let listener = tokio::net::TcpListener::bind(config.bind_addr()?).await?;
    serve_on(listener, config).await
}

/// Serve on an already bound listener. Fails if the artifacts cannot be
/// loaded.
pub async fn serve_on(listener: tokio::net::TcpListener, config: ServiceConfig) -> Result<(), ServiceError> {
    log(format_args!("listening on {}", listener.local_addr()?));
    let state = AppState::new(config);
    let app = router(state.clone());
    let server = tokio::spawn(async move { axum::serve(listener, app).await });
    let loading = state.config.as_ref().clone();
    let loaded = tokio::task::spawn_blocking(move || Artifacts::load(&loading))
        .await
        .map_err(|e| ServiceError::Config(format!("artifact loader panicked: {e}")))?;
    match loaded {
        Ok(artifacts) => {
            log(format_args!("loaded {} index entries", artifacts.index.len()));
            state.install(artifacts);
        }
        Err(e) => {
            server.abort();
            return Err(e);
        }
    }
    server.await.map_err(|e| ServiceError::Config(format!("server task failed: {e}")))??;
    Ok(())
}

#[derive(Debug)]
struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }
}

impl From<terrain_embed::Error> for ApiError {
    fn from(e: terrain_embed::Error) -> Self {
        use terrain_embed::Error as E;
        let status = match e {
            E::Domain(_) | E::Contract(_) => StatusCode::BAD_REQUEST,
            E::Boundary(_) | E::DataQuality(_) | E::Capacity { .. } | E::EmptyClass(_) | E::Degenerate(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({"error": self.message}))).into_response()
    }
}

/// Run CPU-bound work off the async workers.
async fn compute<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}")))?
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed request body: {e}")))
}

fn coordinate(lon: f64, lat: f64) -> Result<GeoCoordinate, ApiError> {
    GeoCoordinate::new(lon, lat).map_err(|e| ApiError::bad_request(e.to_string()))
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    checkpoint_hash: Option<String>,
    index_size: usize,
    model: String,
    index_resolution: f64,
    /// `[min_lon, min_lat, max_lon, max_lat]` of the raster's pixel centers.
    raster_bounds: [f64; 4],
}

async fn health(State(state): State<AppState>) -> Response {
    match state.ready() {
        Ok(a) => {
            let b = a.raster.center_bounds();
            Json(Health {
                status: "ok",
                checkpoint_hash: a.checkpoint_hash.clone(),
                index_size: a.index.len(),
                model: a.model.label(),
                index_resolution: a.index.resolution,
                raster_bounds: [b.min_lon, b.min_lat, b.max_lon, b.max_lat],
            })
            .into_response()
        }
        Err(_) => (StatusCode::SERVICE_UNAVAILABLE, Json(serde_json::json!({"status": "loading"}))).into_response(),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EmbedRequest {
    lon: f64,
    lat: f64,
    scale_m_per_px: f64,
}

#[derive(Serialize)]
struct EmbedResponse {
    embedding: Vec<f64>,
}

async fn embed(State(state): State<AppState>, body: Bytes) -> Result<Json<EmbedResponse>, ApiError> {
    let a = state.ready()?;
    let req: EmbedRequest = parse_body(&body)?;
    let center = coordinate(req.lon, req.lat)?;
    let scale = ScaleSpec::at_resolution(req.scale_m_per_px).map_err(|e| ApiError::bad_request(e.to_string()))?;
    compute(move || {
        let patch = normalize_patch(&extract_patch(&a.raster, &center, &scale)?);
        let embedding = a.model.embed(&[patch.values.view()])?.row(0).to_vec();
        Ok(Json(EmbedResponse { embedding }))
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Point {
    lon: f64,
    lat: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RetrieveRequest {
    points: Vec<Point>,
    k: usize,
}

#[derive(Serialize)]
struct RetrieveResponse {
    neighbors: Vec<Neighbor>,
}

async fn retrieve(State(state): State<AppState>, body: Bytes) -> Result<Json<RetrieveResponse>, ApiError> {
    let a = state.ready()?;
    let req: RetrieveRequest = parse_body(&body)?;
    let max = state.config.max_batch;
    if req.points.is_empty() || req.points.len() > max {
        return Err(ApiError::bad_request(format!("between 1 and {max} query points are required, got {}", req.points.len())));
    }
    let query = req.points.iter().map(|p| coordinate(p.lon, p.lat)).collect::<Result<Vec<_>, _>>()?;
    if req.k > a.index.len() {
        return Err(ApiError::unprocessable(format!("k = {} exceeds the index size {}", req.k, a.index.len())));
    }
    compute(move || {
        let neighbors = knn_retrieve(&a.index, &a.model, &a.raster, &query, req.k)?;
        Ok(Json(RetrieveResponse { neighbors }))
    })
    .await
}

#[derive(Deserialize)]
struct GridQuery {
    bbox: Option<String>,
    scale: Option<String>,
    class: Option<String>,
}

async fn grid(State(state): State<AppState>, Query(q): Query<GridQuery>) -> Result<Response, ApiError> {
    let a = state.ready()?;
    let missing = |name: &str| ApiError::bad_request(format!("query parameter `{name}` is required"));
    let bbox: BoundingBox = q.bbox.ok_or_else(|| missing("bbox"))?.parse().map_err(|e: terrain_embed::Error| ApiError::bad_request(e.to_string()))?;
    let scales = q
        .scale
        .ok_or_else(|| missing("scale"))?
        .split(',')
        .map(|s| s.trim().parse::<f64>().ok().filter(|v| *v > 0.0 && v.is_finite()))
        .collect::<Option<Vec<f64>>>()
        .ok_or_else(|| ApiError::bad_request("scale must be a comma-separated list of positive numbers"))?;
    let class = q.class.ok_or_else(|| missing("class"))?;
    let probe = a
        .probes
        .iter()
        .find(|p| p.class_name == class)
        .cloned()
        .ok_or_else(|| ApiError::unprocessable(format!("no probe loaded for class `{class}`")))?;
    let cap = state.config.max_area_deg2;
    if bbox.area_deg2() > cap {
        return Err(ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            format!("bbox covers {:.4} square degrees, the limit is {cap}", bbox.area_deg2()),
        ));
    }
    let opts = GridOptions { stride_m: state.config.grid_stride_m, threshold: state.config.detection_threshold };
    let body = compute(move || Ok(grid_classify(&bbox.to_polygon(), &scales, &a.model, &[probe], &opts, &a.raster)?.to_geojson_string())).await?;
    Ok(([(header::CONTENT_TYPE, "application/geo+json")], body).into_response())
}
