//! HTTP API over the QA chain: chat sessions, answers with their sources,
//! the model list, and human rankings of answers.
//!
//! Errors are JSON `{"code", "message"}` bodies; `not_found`, `bad_request`,
//! `backend_unavailable` and `internal` map to 404, 400, 502 and 500.

mod error;
mod rankings;
mod sessions;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use litrag::eval::{annotations_csv, Rank, RankAnnotation, Rater};
use litrag::llm::{ModelRegistry, Pricing, TemplateKind};
use litrag::qa::{AnswerMode, ChatTurn, QaEngine, QaError};
use litrag::vector_store::RetrieverConfig;
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, CorsLayer};
use tower_http::services::ServeDir;
use tracing::info;

pub use error::ApiError;
pub use rankings::RankingStore;
pub use sessions::SessionStore;

pub const DEFAULT_SESSION_TTL: Duration = Duration::from_secs(3600);

/// Shared server state. The index inside `engine` is immutable.
pub struct AppState {
    pub engine: QaEngine,
    pub registry: ModelRegistry,
    pub retriever: RetrieverConfig,
    pub sessions: SessionStore,
    pub rankings: RankingStore,
}

impl AppState {
    pub fn new(engine: QaEngine, registry: ModelRegistry, rankings: RankingStore) -> Self {
        Self {
            engine,
            registry,
            retriever: RetrieverConfig::default(),
            sessions: SessionStore::new(DEFAULT_SESSION_TTL),
            rankings,
        }
    }

    pub fn with_session_ttl(mut self, ttl: Duration) -> Self {
        self.sessions = SessionStore::new(ttl);
        self
    }
}

#[derive(Debug, Clone, Default)]
pub struct ServerOptions {
    /// Directory of built UI assets served for unmatched paths.
    pub static_dir: Option<PathBuf>,
    /// Allowed browser origin; any origin when unset.
    pub cors_origin: Option<String>,
}

pub fn router(state: Arc<AppState>, opts: &ServerOptions) -> Result<Router, ApiError> {
    let cors = match &opts.cors_origin {
        Some(origin) => {
            let value = HeaderValue::from_str(origin)
                .map_err(|_| ApiError::bad_request(format!("invalid CORS origin {origin:?}")))?;
            CorsLayer::new().allow_origin(AllowOrigin::exact(value))
        }
        None => CorsLayer::new().allow_origin(AllowOrigin::any()),
    }
    .allow_methods([axum::http::Method::GET, axum::http::Method::POST])
    .allow_headers([header::CONTENT_TYPE]);

    let mut app = Router::new()
        .route("/health", get(health))
        .route("/models", get(models))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/ask", post(ask))
        .route("/rankings", post(submit_ranking))
        .route("/rankings/export", get(export_rankings))
        .with_state(state);
    if let Some(dir) = &opts.static_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    Ok(app.layer(cors))
}

pub async fn serve(state: Arc<AppState>, addr: SocketAddr, opts: ServerOptions) -> std::io::Result<()> {
    let app = router(state, &opts).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e.message))?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, app).await
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    payload
        .map(|Json(v)| v)
        .map_err(|e| ApiError::bad_request(e.body_text()))
}

async fn health(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(serde_json::json!({"status": "ok", "chunks": state.engine.index.len()}))
}

/// Public view of a model. Deliberately omits the api key variable.
#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ModelSummary {
    pub name: String,
    pub template_kind: TemplateKind,
    pub temperature: f64,
    pub max_tokens: u32,
    pub pricing: Pricing,
}

async fn models(State(state): State<Arc<AppState>>) -> Json<Vec<ModelSummary>> {
    Json(
        state
            .registry
            .models
            .iter()
            .map(|m| ModelSummary {
                name: m.name.clone(),
                template_kind: m.template_kind,
                temperature: m.temperature,
                max_tokens: m.max_tokens,
                pricing: m.pricing,
            })
            .collect(),
    )
}

#[derive(Debug, Deserialize)]
pub struct CreateSession {
    pub model_name: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub model_name: String,
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    payload: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionCreated>), ApiError> {
    let req = body(payload)?;
    let model = state
        .registry
        .get(&req.model_name)
        .ok_or_else(|| ApiError::bad_request(format!("unknown model {:?}", req.model_name)))?;
    let session_id = state.sessions.create(model.clone(), state.retriever.clone());
    info!(%session_id, model = %model.name, "session created");
    Ok((
        StatusCode::CREATED,
        Json(SessionCreated {
            session_id,
            model_name: model.name.clone(),
        }),
    ))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub model_name: String,
    pub turns: Vec<ChatTurn>,
}

async fn get_session(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<SessionView>, ApiError> {
    let slot = state.sessions.get(&id).ok_or_else(|| ApiError::session_not_found(&id))?;
    let session = slot.lock().map_err(|_| ApiError::internal("session lock poisoned"))?;
    Ok(Json(SessionView {
        session_id: session.session_id.clone(),
        model_name: session.model.name.clone(),
        turns: session.turns.clone(),
    }))
}

#[derive(Debug, Deserialize)]
pub struct AskRequest {
    pub question: String,
    #[serde(default)]
    pub mode: AnswerMode,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SourceView {
    pub doc_id: String,
    pub chunk_id: String,
    pub score: f64,
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AskResponse {
    pub answer: String,
    pub sources: Vec<SourceView>,
    pub condensed_query: String,
    pub latency_s: f64,
    pub degraded: bool,
    pub cost_usd: rust_decimal::Decimal,
}

async fn ask(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    payload: Result<Json<AskRequest>, JsonRejection>,
) -> Result<Json<AskResponse>, ApiError> {
    let req = body(payload)?;
    let slot = state.sessions.get(&id).ok_or_else(|| ApiError::session_not_found(&id))?;
    let engine = state.engine.clone();
    // the session lock is held for the whole chain so asks on one session
    // run one at a time
    let answer = tokio::task::spawn_blocking(move || {
        let mut session = slot.lock().map_err(|_| ApiError::internal("session lock poisoned"))?;
        engine.answer(&mut session, &req.question, req.mode).map_err(ApiError::from)
    })
    .await
    .map_err(|e| ApiError::internal(format!("answer task failed: {e}")))??;
    Ok(Json(AskResponse {
        answer: answer.text,
        sources: answer
            .sources
            .into_iter()
            .map(|h| SourceView {
                doc_id: h.doc_id().to_string(),
                chunk_id: h.chunk_id,
                score: h.score,
                text: h.chunk_text,
            })
            .collect(),
        condensed_query: answer.condensed_query,
        latency_s: answer.latency_s,
        degraded: answer.degraded,
        cost_usd: answer.cost_usd,
    }))
}

impl From<QaError> for ApiError {
    fn from(e: QaError) -> Self {
        match e {
            QaError::EmptyQuestion => ApiError::bad_request(e.to_string()),
            QaError::Llm(_) | QaError::Embed(litrag::embedding::EmbedError::BackendUnavailable(_)) => {
                ApiError::backend_unavailable(e.to_string())
            }
            QaError::Embed(_) | QaError::Retrieval(_) => ApiError::internal(e.to_string()),
        }
    }
}

#[derive(Debug, Deserialize)]
pub struct RankingRequest {
    pub item_id: String,
    pub model_name: String,
    pub rank: String,
}

async fn submit_ranking(
    State(state): State<Arc<AppState>>,
    payload: Result<Json<RankingRequest>, JsonRejection>,
) -> Result<Json<RankAnnotation>, ApiError> {
    let req = body(payload)?;
    let rank: Rank = req.rank.parse().map_err(ApiError::bad_request)?;
    if req.item_id.trim().is_empty() || req.model_name.trim().is_empty() {
        return Err(ApiError::bad_request("item_id and model_name are required"));
    }
    let annotation = RankAnnotation {
        item_id: req.item_id,
        model_name: req.model_name,
        rater: Rater::Human,
        rank,
    };
    state.rankings.submit(annotation.clone())?;
    Ok(Json(annotation))
}

async fn export_rankings(State(state): State<Arc<AppState>>) -> Response {
    (
        [(header::CONTENT_TYPE, "text/csv; charset=utf-8")],
        annotations_csv(&state.rankings.all()),
    )
        .into_response()
}
