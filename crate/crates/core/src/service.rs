//! HTTP detection endpoint.
//!
//! `POST /v1/detect` scores a snippet; `GET /v1/health` reports model version,
//! uptime, request count and latency percentiles. The model sits behind an
//! `RwLock<Arc<_>>` so it can be replaced between requests.

use std::collections::VecDeque;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;

use crate::classifier::ModelParams;
use crate::corpus::Cwe;
use crate::detection::Verdict;
use crate::language::LanguageId;

pub const DEFAULT_MAX_SNIPPET_BYTES: usize = 64 * 1024;
pub const DEFAULT_BLOCK_WINDOW_LINES: usize = 10;
const LATENCY_WINDOW: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: String,
    pub model_path: Option<PathBuf>,
    /// Falls back to the threshold stored with the model.
    pub default_threshold: Option<f64>,
    pub max_snippet_bytes: usize,
    pub block_window_lines: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            listen: "127.0.0.1:8080".into(),
            model_path: None,
            default_threshold: None,
            max_snippet_bytes: DEFAULT_MAX_SNIPPET_BYTES,
            block_window_lines: DEFAULT_BLOCK_WINDOW_LINES,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: String, message: String },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid value for `{field}`: {message}")]
    Field { field: &'static str, message: String },
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Reads an optional TOML file, then applies `EDITVULN_*` environment
    /// overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ConfigError::Read { path: p.display().to_string(), message: e.to_string() })?;
                Self::from_toml(&text)?
            }
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        fn parse<T: std::str::FromStr>(field: &'static str, v: &str) -> Result<T, ConfigError> {
            v.parse().map_err(|_| ConfigError::Field { field, message: format!("cannot parse `{v}`") })
        }
        if let Some(v) = get("EDITVULN_LISTEN") {
            self.listen = v;
        }
        if let Some(v) = get("EDITVULN_MODEL_PATH") {
            self.model_path = Some(PathBuf::from(v));
        }
        if let Some(v) = get("EDITVULN_THRESHOLD") {
            self.default_threshold = Some(parse("default_threshold", &v)?);
        }
        if let Some(v) = get("EDITVULN_MAX_SNIPPET_BYTES") {
            self.max_snippet_bytes = parse("max_snippet_bytes", &v)?;
        }
        if let Some(v) = get("EDITVULN_BLOCK_WINDOW_LINES") {
            self.block_window_lines = parse("block_window_lines", &v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if let Some(t) = self.default_threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(ConfigError::Field { field: "default_threshold", message: "must lie in [0, 1]".into() });
            }
        }
        if self.block_window_lines == 0 {
            return Err(ConfigError::Field { field: "block_window_lines", message: "must be positive".into() });
        }
        self.listen
            .parse::<SocketAddr>()
            .map_err(|e| ConfigError::Field { field: "listen", message: e.to_string() })?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectRequest {
    pub language: LanguageId,
    #[serde(default)]
    pub snippet: Option<String>,
    #[serde(default)]
    pub context: Option<String>,
    #[serde(default)]
    pub block: Option<String>,
    #[serde(default)]
    pub threshold_override: Option<f64>,
    #[serde(default)]
    pub client_id: Option<String>,
    /// Opt-in: include the snippet in service logs.
    #[serde(default)]
    pub log_snippet: bool,
}

impl DetectRequest {
    pub fn snippet(language: LanguageId, snippet: impl Into<String>) -> Self {
        DetectRequest {
            language,
            snippet: Some(snippet.into()),
            context: None,
            block: None,
            threshold_override: None,
            client_id: None,
            log_snippet: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectResponse {
    pub verdict: Verdict,
    pub score: f64,
    pub threshold: f64,
    pub cwe: Option<Cwe>,
    pub model_version: String,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthStatus {
    pub status: String,
    pub model_version: Option<String>,
    pub uptime_seconds: f64,
    pub request_count: u64,
    pub p50_ms: f64,
    pub p95_ms: f64,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ServiceError {
    #[error("snippet is {size} bytes; the limit is {max}")]
    TooLarge { size: usize, max: usize },
    #[error("no model is loaded")]
    NotLoaded,
    #[error("{0}")]
    BadRequest(String),
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match self {
            ServiceError::TooLarge { .. } => StatusCode::PAYLOAD_TOO_LARGE,
            ServiceError::NotLoaded => StatusCode::SERVICE_UNAVAILABLE,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
        };
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

struct LoadedModel {
    params: ModelParams,
    version: String,
}

#[derive(Default)]
struct Stats {
    count: u64,
    latencies_ms: VecDeque<f64>,
}

pub struct DetectionService {
    config: ServiceConfig,
    model: RwLock<Option<Arc<LoadedModel>>>,
    stats: Mutex<Stats>,
    started: Instant,
}

/// Splits a snippet into (context, block) with the block holding the last
/// `window` lines. A trailing newline does not start an extra line.
pub fn split_snippet(snippet: &str, window: usize) -> (&str, &str) {
    let body_end = snippet.strip_suffix('\n').map_or(snippet.len(), str::len);
    let mut start = body_end;
    for _ in 0..window {
        match snippet[..start].rfind('\n') {
            Some(p) => start = p,
            None => return ("", snippet),
        }
    }
    snippet.split_at(start + 1)
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

impl DetectionService {
    pub fn new(config: ServiceConfig, model: Option<ModelParams>) -> Self {
        let svc = DetectionService { config, model: RwLock::new(None), stats: Mutex::default(), started: Instant::now() };
        if let Some(m) = model {
            svc.swap_model(m);
        }
        svc
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    /// Replaces the model; in-flight requests finish on the old one.
    pub fn swap_model(&self, params: ModelParams) {
        let version = params.fingerprint();
        *self.model.write().expect("model lock") = Some(Arc::new(LoadedModel { params, version }));
    }

    pub fn handle_detect(&self, req: &DetectRequest) -> Result<DetectResponse, ServiceError> {
        let started = Instant::now();
        let size = req.snippet.as_ref().map_or(0, String::len)
            + req.context.as_ref().map_or(0, String::len)
            + req.block.as_ref().map_or(0, String::len);
        if size > self.config.max_snippet_bytes {
            return Err(ServiceError::TooLarge { size, max: self.config.max_snippet_bytes });
        }
        let (context, block) = match (&req.snippet, &req.context, &req.block) {
            (Some(s), None, None) => split_snippet(s, self.config.block_window_lines),
            (None, c, b) => (c.as_deref().unwrap_or(""), b.as_deref().unwrap_or("")),
            _ => return Err(ServiceError::BadRequest("send either `snippet` or `context`/`block`, not both".into())),
        };
        let model = self.model.read().expect("model lock").clone().ok_or(ServiceError::NotLoaded)?;
        let threshold = req
            .threshold_override
            .or(self.config.default_threshold)
            .unwrap_or(model.params.threshold);
        if !(0.0..=1.0).contains(&threshold) {
            return Err(ServiceError::BadRequest(format!("threshold {threshold} outside [0, 1]")));
        }
        let det = model.params.detect(context, block, threshold);
        if req.log_snippet {
            tracing::info!(client = ?req.client_id, %context, %block, score = det.score, "detect");
        }
        let elapsed_ms = started.elapsed().as_secs_f64() * 1e3;
        {
            let mut stats = self.stats.lock().expect("stats lock");
            stats.count += 1;
            if stats.latencies_ms.len() == LATENCY_WINDOW {
                stats.latencies_ms.pop_front();
            }
            stats.latencies_ms.push_back(elapsed_ms);
        }
        Ok(DetectResponse {
            verdict: det.verdict,
            score: det.score,
            threshold,
            cwe: det.cwe,
            model_version: model.version.clone(),
            elapsed_ms,
        })
    }

    pub fn handle_health(&self) -> HealthStatus {
        let version = self.model.read().expect("model lock").as_ref().map(|m| m.version.clone());
        let stats = self.stats.lock().expect("stats lock");
        let mut sorted: Vec<f64> = stats.latencies_ms.iter().copied().collect();
        sorted.sort_by(f64::total_cmp);
        HealthStatus {
            status: if version.is_some() { "ok" } else { "no_model" }.into(),
            model_version: version,
            uptime_seconds: self.started.elapsed().as_secs_f64(),
            request_count: stats.count,
            p50_ms: percentile(&sorted, 0.50),
            p95_ms: percentile(&sorted, 0.95),
        }
    }
}

async fn detect_route(
    State(svc): State<Arc<DetectionService>>,
    Json(req): Json<DetectRequest>,
) -> Result<Json<DetectResponse>, ServiceError> {
    svc.handle_detect(&req).map(Json)
}

async fn health_route(State(svc): State<Arc<DetectionService>>) -> Json<HealthStatus> {
    Json(svc.handle_health())
}

pub fn router(service: Arc<DetectionService>) -> Router {
    Router::new()
        .route("/v1/detect", post(detect_route))
        .route("/v1/health", get(health_route))
        .layer(CorsLayer::permissive())
        .with_state(service)
}

/// Serves until ctrl-c.
pub async fn serve(service: Arc<DetectionService>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(&service.config().listen).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
