//! HTTP interface over a precomputed run directory.
//!
//! The server loads the observed tree, its codes, the heatmap bundle and the
//! ensemble's code tables once, then answers read-only requests. It never
//! samples: every reliability answer is a scan over the stored ensemble.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ceda::hclust::Merge;
use ceda::pipeline::Session;
use ceda::reliability::{QuerySpec, ReportDocument};
use ceda::{Measure, Scheme, VarianceSource};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

pub const API_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeDocument {
    pub schema_version: u32,
    /// Population labels in input order; merge indices below `labels.len()` refer to them.
    pub labels: Vec<String>,
    pub merges: Vec<Merge>,
    pub leaf_order: Vec<usize>,
    pub newick: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodesDocument {
    pub schema_version: u32,
    pub labels: Vec<String>,
    pub codes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMeta {
    pub schema_version: u32,
    pub replicates: usize,
    pub scheme: Scheme,
    pub master_seed: u64,
    pub measure: Measure,
    pub variance: VarianceSource,
    pub floor: f64,
    pub populations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub session_loaded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDocument {
    pub error: String,
}

/// Shared, immutable server state.
#[derive(Clone)]
pub struct AppState {
    session: Option<Arc<Session>>,
}

impl AppState {
    pub fn new(session: Option<Session>) -> Self {
        Self { session: session.map(Arc::new) }
    }
}

#[derive(Debug)]
pub enum ApiError {
    NotLoaded,
    BadRequest(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, error) = match self {
            ApiError::NotLoaded => (StatusCode::SERVICE_UNAVAILABLE, "no session loaded".to_string()),
            ApiError::BadRequest(msg) => (StatusCode::BAD_REQUEST, msg),
        };
        (status, Json(ErrorDocument { error })).into_response()
    }
}

fn session(state: &AppState) -> Result<&Session, ApiError> {
    state.session.as_deref().ok_or(ApiError::NotLoaded)
}

async fn health(State(state): State<AppState>) -> Json<Health> {
    Json(Health { status: "ok".into(), session_loaded: state.session.is_some() })
}

async fn tree(State(state): State<AppState>) -> Result<Json<TreeDocument>, ApiError> {
    let s = session(&state)?;
    let labels = s.labels().populations.clone();
    let d = &s.observed.dendrogram;
    Ok(Json(TreeDocument {
        schema_version: API_SCHEMA_VERSION,
        newick: d.to_newick(&labels),
        merges: d.merges().to_vec(),
        leaf_order: d.leaf_order(),
        labels,
    }))
}

async fn heatmap(State(state): State<AppState>) -> Result<Json<ceda::HeatmapBundle>, ApiError> {
    Ok(Json(session(&state)?.heatmap.clone()))
}

async fn codes(State(state): State<AppState>) -> Result<Json<CodesDocument>, ApiError> {
    let s = session(&state)?;
    Ok(Json(CodesDocument {
        schema_version: API_SCHEMA_VERSION,
        labels: s.labels().populations.clone(),
        codes: s.observed.codes.codes().iter().map(ToString::to_string).collect(),
    }))
}

async fn ensemble_meta(State(state): State<AppState>) -> Result<Json<EnsembleMeta>, ApiError> {
    let s = session(&state)?;
    let config = s.ensemble.config();
    Ok(Json(EnsembleMeta {
        schema_version: API_SCHEMA_VERSION,
        replicates: s.ensemble.len(),
        scheme: config.scheme,
        master_seed: config.master_seed,
        measure: config.measure.measure,
        variance: config.measure.variance,
        floor: config.measure.floor,
        populations: s.labels().populations.len(),
    }))
}

async fn reliability(
    State(state): State<AppState>,
    body: Result<Json<QuerySpec>, JsonRejection>,
) -> Result<Json<ReportDocument>, ApiError> {
    let s = session(&state)?;
    let Json(query) = body.map_err(|e| ApiError::BadRequest(e.body_text()))?;
    s.evaluate(&query).map(Json).map_err(|e| ApiError::BadRequest(e.to_string()))
}

const PLACEHOLDER_INDEX: &str = "<!doctype html>
<html><head><meta charset=\"utf-8\"><title>ceda</title></head>
<body>
<h1>ceda</h1>
<p>No UI assets were configured. The API is available at
<code>/health</code>, <code>/tree</code>, <code>/heatmap</code>, <code>/codes</code>,
<code>/ensemble/meta</code> and <code>POST /reliability</code>.</p>
</body></html>
";

async fn placeholder_index() -> Html<&'static str> {
    Html(PLACEHOLDER_INDEX)
}

/// The full application. `assets`, when given, is served at `/` as static files.
pub fn router(state: AppState, assets: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/health", get(health))
        .route("/tree", get(tree))
        .route("/heatmap", get(heatmap))
        .route("/codes", get(codes))
        .route("/ensemble/meta", get(ensemble_meta))
        .route("/reliability", post(reliability))
        .with_state(state);
    match assets {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(placeholder_index)),
    }
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(addr: SocketAddr, app: Router) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, app).await
}
