//! HTTP surface of the gateway.

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::Deserialize;
use serde_json::json;

use semgate_core::audit::AuditError;
use semgate_core::epa::EpaGraph;
use semgate_core::firewall::SourceTag;
use semgate_core::gateway::{Gateway, GatewayError, IntentRequest};
use semgate_core::hitl::HitlError;

pub struct AppState {
    pub gateway: Gateway,
    pub graph: EpaGraph,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/intent", post(intent))
        .route("/audit", get(audit))
        .route("/epa", get(epa))
        .route("/health", get(health))
        .route("/approvals", get(approvals))
        .route("/approvals/:id/approve", post(approve))
        .route("/approvals/:id/deny", post(deny))
        .with_state(state)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, r.body_text())
    }
}

impl From<GatewayError> for ApiError {
    fn from(e: GatewayError) -> Self {
        let status = match &e {
            GatewayError::EmptyIntent => StatusCode::BAD_REQUEST,
            GatewayError::UnknownRun(_) => StatusCode::NOT_FOUND,
            GatewayError::Approval(h) => match h {
                HitlError::UnknownChallenge(_) => StatusCode::NOT_FOUND,
                HitlError::BadSignature | HitlError::UnknownOperator(_) => StatusCode::FORBIDDEN,
                HitlError::AlreadyTerminal(_) => StatusCode::CONFLICT,
                HitlError::Expired => StatusCode::GONE,
                _ => StatusCode::UNPROCESSABLE_ENTITY,
            },
            GatewayError::Audit(AuditError::RangeOutOfBounds { .. }) => StatusCode::BAD_REQUEST,
            GatewayError::Audit(_) | GatewayError::Setup(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl From<AuditError> for ApiError {
    fn from(e: AuditError) -> Self {
        GatewayError::from(e).into()
    }
}

type ApiResult = Result<Response, ApiError>;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntentBody {
    pub intent: String,
    pub agent_id: String,
    #[serde(default)]
    pub context: Vec<ContextBody>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextBody {
    pub text: String,
    pub source: SourceTag,
}

/// Gateway calls may block on the planner backend, so they run off the
/// async executor.
async fn blocking<T, F>(state: Arc<AppState>, f: F) -> Result<T, ApiError>
where
    F: FnOnce(&Gateway) -> Result<T, GatewayError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&state.gateway))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(ApiError::from)
}

async fn intent(State(state): State<Arc<AppState>>, body: Result<Json<IntentBody>, JsonRejection>) -> ApiResult {
    let Json(body) = body?;
    if body.intent.trim().is_empty() {
        return Err(GatewayError::EmptyIntent.into());
    }
    let agent = state
        .gateway
        .identity(&body.agent_id)
        .ok_or_else(|| ApiError::new(StatusCode::FORBIDDEN, format!("unknown agent '{}'", body.agent_id)))?;
    let mut request = IntentRequest::new(body.intent, agent);
    for c in body.context {
        request = request.with_context(c.text, c.source);
    }
    let trace = blocking(state, move |g| g.handle_intent(request)).await?;
    Ok(Json(trace).into_response())
}

#[derive(Debug, Deserialize)]
pub struct AuditQuery {
    pub start: Option<u64>,
    pub end: Option<u64>,
}

async fn audit(State(state): State<Arc<AppState>>, Query(q): Query<AuditQuery>) -> ApiResult {
    let ledger = state.gateway.ledger();
    // Verify first so the reported status covers at least the exported prefix.
    let verification = ledger.verify_chain()?;
    let records = ledger.export(q.start.unwrap_or(0)..q.end.unwrap_or_else(|| ledger.len()))?;
    Ok(Json(json!({
        "backend": ledger.backend(),
        "count": records.len(),
        "verification": verification,
        "records": records,
    }))
    .into_response())
}

#[derive(Debug, Deserialize)]
pub struct EpaQuery {
    pub format: Option<String>,
}

async fn epa(State(state): State<Arc<AppState>>, Query(q): Query<EpaQuery>) -> ApiResult {
    match q.format.as_deref() {
        None | Some("json") => Ok(Json(state.graph.view()).into_response()),
        Some("dot") => Ok((
            [(axum::http::header::CONTENT_TYPE, "text/vnd.graphviz")],
            semgate_core::epa::export_dot(&state.graph),
        )
            .into_response()),
        Some(other) => Err(ApiError::new(StatusCode::BAD_REQUEST, format!("unknown format '{other}'"))),
    }
}

async fn health(State(state): State<Arc<AppState>>) -> ApiResult {
    let mut body = state.gateway.health();
    body["components"]["epa"] = json!({
        "ready": true,
        "graph": state.graph.name(),
        "transitions": state.graph.edge_count(),
    });
    Ok(Json(body).into_response())
}

async fn approvals(State(state): State<Arc<AppState>>) -> ApiResult {
    let pending = blocking(state, |g| g.pending_approvals()).await?;
    Ok(Json(pending).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionBody {
    pub operator_id: String,
    /// Base64 Ed25519 signature over the 32-byte evidence digest.
    pub signature: String,
}

fn decode_signature(body: &DecisionBody) -> Result<Vec<u8>, ApiError> {
    BASE64
        .decode(body.signature.trim())
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("signature is not base64: {e}")))
}

async fn approve(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<DecisionBody>, JsonRejection>,
) -> ApiResult {
    let Json(body) = body?;
    let sig = decode_signature(&body)?;
    let trace = blocking(state, move |g| g.approve(&id, &body.operator_id, &sig)).await?;
    Ok(Json(trace).into_response())
}

async fn deny(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<DecisionBody>, JsonRejection>,
) -> ApiResult {
    let Json(body) = body?;
    let sig = decode_signature(&body)?;
    let trace = blocking(state, move |g| g.deny(&id, &body.operator_id, &sig)).await?;
    Ok(Json(trace).into_response())
}
