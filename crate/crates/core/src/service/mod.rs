//! HTTP front door.
//!
//! JSON in, JSON out; `/api/generate` streams one JSON event per line. The
//! version workspace is picked per request with the `X-Steer-Workspace`
//! header (a subdirectory of the configured root).

use std::convert::Infallible;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use axum::body::{Body, Bytes};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::attribution::{self, AttributionError, DEFAULT_EPSILON};
use crate::backend::{
    demo, answer_logits_request, BackendError, LogitBackend, LogitsRequest, RemoteBackend,
    RemoteConfig, ToyModel, ToyModelSpec, Vocabulary,
};
use crate::decoder::{DecodeError, TraceDetail};
use crate::graph::{EncodingAssignment, GraphError};
use crate::modularizer::{builtin_lexicon, find_phrase, ExtractError, Extractor, RemoteExtractor};
use crate::prompt::{Attribute, AttributeKind, MalleablePrompt, PromptError, Span, SteeringConfig};

pub mod generate;
pub mod workspace;

pub use generate::{GenerateEvent, GenerateRequest, Outcome};
pub use workspace::{Workspace, WorkspaceLocks};

pub const WORKSPACE_HEADER: &str = "x-steer-workspace";

/// An error with its HTTP status.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} ({})", self.message, self.status)
    }
}

impl std::error::Error for ApiError {}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

fn backend_status(e: &BackendError) -> StatusCode {
    match e {
        BackendError::Tokenize(_) | BackendError::UnknownToken { .. } | BackendError::EmptyContext => {
            StatusCode::UNPROCESSABLE_ENTITY
        }
        _ => StatusCode::BAD_GATEWAY,
    }
}

impl From<BackendError> for ApiError {
    fn from(e: BackendError) -> Self {
        Self::new(backend_status(&e), e.to_string())
    }
}

impl From<PromptError> for ApiError {
    fn from(e: PromptError) -> Self {
        Self::invalid(e.to_string())
    }
}

impl From<ExtractError> for ApiError {
    fn from(e: ExtractError) -> Self {
        let status = match e {
            ExtractError::Remote(_) => StatusCode::BAD_GATEWAY,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        Self::new(status, e.to_string())
    }
}

impl From<DecodeError> for ApiError {
    fn from(e: DecodeError) -> Self {
        match e {
            DecodeError::Backend(b) => b.into(),
            DecodeError::Failed(_) => Self::new(StatusCode::BAD_GATEWAY, e.to_string()),
            _ => Self::invalid(e.to_string()),
        }
    }
}

impl From<GraphError> for ApiError {
    fn from(e: GraphError) -> Self {
        let status = match e {
            GraphError::UnknownNode(_) => StatusCode::NOT_FOUND,
            GraphError::Deleted(_) => StatusCode::GONE,
            GraphError::Io(_) | GraphError::Json(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        Self::new(status, e.to_string())
    }
}

impl From<AttributionError> for ApiError {
    fn from(e: AttributionError) -> Self {
        match e {
            AttributionError::InsufficientTrace => Self::new(StatusCode::CONFLICT, e.to_string()),
            AttributionError::Extract(x) => x.into(),
            _ => Self::invalid(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    /// A toy model from a spec file, or the built-in demo model.
    #[default]
    Toy,
    Remote,
}

impl FromStr for BackendKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "toy" => Ok(Self::Toy),
            "remote" => Ok(Self::Remote),
            _ => Err(format!("unknown backend {s:?} (toy | remote)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractorKind {
    #[default]
    Rules,
    Remote,
}

impl FromStr for ExtractorKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "rules" => Ok(Self::Rules),
            "remote" => Ok(Self::Remote),
            _ => Err(format!("unknown extractor {s:?} (rules | remote)")),
        }
    }
}

/// Backend, extractor and workspace selection shared by the CLI and server.
#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    pub backend: BackendKind,
    pub model_spec: Option<PathBuf>,
    pub remote_endpoint: Option<String>,
    /// Token list (JSON array) for the remote backend.
    pub vocab: Option<PathBuf>,
    pub extractor: ExtractorKind,
    pub extractor_endpoint: Option<String>,
    pub workspace: PathBuf,
    /// Generations up to this many tokens keep full traces.
    pub full_trace_limit: usize,
    pub default_max_tokens: usize,
    pub epsilon: f64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: SocketAddr::from(([127, 0, 0, 1], 8787)),
            backend: BackendKind::Toy,
            model_spec: None,
            remote_endpoint: None,
            vocab: None,
            extractor: ExtractorKind::Rules,
            extractor_endpoint: None,
            workspace: PathBuf::from("steer-workspace"),
            full_trace_limit: 256,
            default_max_tokens: crate::prompt::DEFAULT_MAX_TOKENS,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl ServiceConfig {
    pub fn build_backend(&self) -> Result<Arc<dyn LogitBackend>, BackendError> {
        match self.backend {
            BackendKind::Toy => Ok(match &self.model_spec {
                Some(p) => Arc::new(ToyModel::new(ToyModelSpec::load(p)?)?),
                None => Arc::new(demo::demo_model()),
            }),
            BackendKind::Remote => {
                let endpoint = self
                    .remote_endpoint
                    .clone()
                    .ok_or_else(|| BackendError::Spec("remote backend needs an endpoint".into()))?;
                let tokens: Vec<String> = match (&self.vocab, &self.model_spec) {
                    (Some(p), _) => {
                        let text = std::fs::read_to_string(p)
                            .map_err(|e| BackendError::Vocabulary(format!("{}: {e}", p.display())))?;
                        serde_json::from_str(&text)
                            .map_err(|e| BackendError::Vocabulary(e.to_string()))?
                    }
                    (None, Some(p)) => ToyModelSpec::load(p)?.tokens,
                    (None, None) => demo::demo_tokens(),
                };
                let config = RemoteConfig::new(endpoint, Vocabulary::new(tokens)?);
                Ok(Arc::new(RemoteBackend::new(config)?))
            }
        }
    }

    pub fn build_extractor(&self) -> Result<Extractor, ExtractError> {
        match self.extractor {
            ExtractorKind::Rules => Ok(Extractor::rules()),
            ExtractorKind::Remote => {
                let endpoint = self.extractor_endpoint.clone().ok_or_else(|| {
                    ExtractError::Remote("remote extractor needs an endpoint".into())
                })?;
                Ok(Extractor::Remote(Arc::new(RemoteExtractor::new(
                    endpoint,
                    builtin_lexicon(),
                    Duration::from_secs(60),
                )?)))
            }
        }
    }
}

pub struct AppState {
    pub backend: Arc<dyn LogitBackend>,
    pub extractor: Extractor,
    pub workspace_root: PathBuf,
    pub locks: WorkspaceLocks,
    pub full_trace_limit: usize,
    pub default_max_tokens: usize,
    pub epsilon: f64,
}

impl AppState {
    pub fn new(backend: Arc<dyn LogitBackend>, extractor: Extractor, workspace_root: impl Into<PathBuf>) -> Self {
        let d = ServiceConfig::default();
        Self {
            backend,
            extractor,
            workspace_root: workspace_root.into(),
            locks: WorkspaceLocks::default(),
            full_trace_limit: d.full_trace_limit,
            default_max_tokens: d.default_max_tokens,
            epsilon: d.epsilon,
        }
    }

    pub fn from_config(config: &ServiceConfig) -> Result<Self, crate::Error> {
        let mut s = Self::new(
            config.build_backend()?,
            config.build_extractor()?,
            config.workspace.clone(),
        );
        s.full_trace_limit = config.full_trace_limit;
        s.default_max_tokens = config.default_max_tokens;
        s.epsilon = config.epsilon;
        Ok(s)
    }

    fn workspace(&self, headers: &HeaderMap) -> Result<Workspace, ApiError> {
        let Some(v) = headers.get(WORKSPACE_HEADER) else {
            return Ok(Workspace::new(self.workspace_root.clone()));
        };
        let name = v
            .to_str()
            .ok()
            .filter(|n| !n.is_empty() && n.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_'))
            .ok_or_else(|| ApiError::invalid("workspace name must be [A-Za-z0-9_-]+"))?;
        Ok(Workspace::new(self.workspace_root.join(name)))
    }
}

type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/api/parse", post(parse))
        .route("/api/bind", post(bind))
        .route("/api/enrich", post(enrich))
        .route("/api/options", post(options))
        .route("/api/generate", post(generate_handler))
        .route("/api/versions", get(versions))
        .route("/api/versions/encoding", post(set_encoding))
        .route("/api/versions/{id}", axum::routing::delete(delete_version))
        .route("/api/versions/{id}/revert", post(revert))
        .route("/api/record/{id}", get(record))
        .route("/api/record/{id}/attribution", get(attribution_report))
        .route("/api/logprobs", post(logprobs))
        .with_state(state)
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(state: Shared, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state)).await
}

/// Serves on a dedicated thread with its own runtime and returns the bound
/// address once the listener is up. Pass port 0 for an ephemeral port.
pub fn serve_in_background(state: Shared, addr: SocketAddr) -> std::io::Result<SocketAddr> {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = match tokio::runtime::Runtime::new() {
            Ok(rt) => rt,
            Err(e) => return drop(tx.send(Err(e))),
        };
        rt.block_on(async move {
            match tokio::net::TcpListener::bind(addr).await {
                Ok(listener) => {
                    let _ = tx.send(listener.local_addr());
                    if let Err(e) = axum::serve(listener, router(state)).await {
                        tracing::error!(error = %e, "server stopped");
                    }
                }
                Err(e) => drop(tx.send(Err(e))),
            }
        });
    });
    rx.recv().map_err(std::io::Error::other)?
}

fn body<T: DeserializeOwned>(bytes: &Bytes) -> Result<T, ApiError> {
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Err(ApiError::invalid("request body is empty"));
    }
    serde_json::from_slice(bytes).map_err(|e| ApiError::invalid(format!("bad request body: {e}")))
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

fn with_warnings<T: Serialize>(value: &T, warnings: Vec<String>) -> Value {
    let mut v = serde_json::to_value(value).expect("serializable");
    if let (Value::Object(map), false) = (&mut v, warnings.is_empty()) {
        map.insert("warnings".into(), json!(warnings));
    }
    v
}

#[derive(Deserialize)]
struct PromptBody {
    prompt: String,
}

async fn parse(State(s): State<Shared>, bytes: Bytes) -> Result<Json<Value>, ApiError> {
    let req: PromptBody = body(&bytes)?;
    blocking(move || {
        let env = s.extractor.modularize(&req.prompt)?;
        Ok(Json(with_warnings(&env.value, env.warnings)))
    })
    .await
}

#[derive(Deserialize)]
struct BindBody {
    prompt: MalleablePrompt,
    span: Span,
    kind: AttributeKind,
}

async fn bind(State(s): State<Shared>, bytes: Bytes) -> Result<Json<Value>, ApiError> {
    let req: BindBody = body(&bytes)?;
    blocking(move || {
        let env = s.extractor.bind_span(&req.prompt, req.span, req.kind)?;
        Ok(Json(with_warnings(&env.value, env.warnings)))
    })
    .await
}

async fn enrich(State(s): State<Shared>, bytes: Bytes) -> Result<Json<Value>, ApiError> {
    let req: PromptBody = body(&bytes)?;
    blocking(move || {
        let env = s.extractor.enrich_prompt(&req.prompt)?;
        Ok(Json(with_warnings(&json!({ "prompt": env.value }), env.warnings)))
    })
    .await
}

#[derive(Deserialize)]
struct OptionsBody {
    prompt: String,
    selected: String,
}

async fn options(State(s): State<Shared>, bytes: Bytes) -> Result<Json<Value>, ApiError> {
    let req: OptionsBody = body(&bytes)?;
    blocking(move || {
        let span = find_phrase(&req.prompt, &req.selected)
            .into_iter()
            .next()
            .ok_or_else(|| ApiError::invalid("selected text is not in the prompt"))?;
        let attr = Attribute::new("selection", AttributeKind::Categorical, span, &req.prompt);
        let env = s.extractor.generate_options(&req.prompt, &attr)?;
        Ok(Json(with_warnings(&json!({ "options": env.value }), env.warnings)))
    })
    .await
}

fn resolve_generation(
    s: &AppState,
    ws: &Workspace,
    req: GenerateRequest,
) -> Result<(MalleablePrompt, SteeringConfig), ApiError> {
    let prompt = match (req.prompt, req.prompt_id) {
        (Some(p), _) => p,
        (None, Some(id)) => ws.load_graph()?.revert(id)?.0,
        (None, None) => return Err(ApiError::invalid("need prompt or prompt_id")),
    };
    let config = req.config.unwrap_or_else(|| SteeringConfig {
        max_tokens: s.default_max_tokens,
        ..SteeringConfig::defaults(&prompt)
    });
    config.validate(&prompt)?;
    Ok((prompt, config))
}

async fn generate_handler(
    State(s): State<Shared>,
    headers: HeaderMap,
    bytes: Bytes,
) -> Result<Response, ApiError> {
    let req: GenerateRequest = body(&bytes)?;
    let ws = s.workspace(&headers)?;
    let stream = req.stream;
    let parent = req.parent;
    let (prompt, config) = resolve_generation(&s, &ws, req)?;
    let trace = if config.max_tokens <= s.full_trace_limit {
        TraceDetail::Full
    } else {
        TraceDetail::Summary
    };
    let job = move |s: &AppState, emit: &mut dyn FnMut(GenerateEvent)| {
        generate::run(
            generate::Job {
                backend: s.backend.as_ref(),
                extractor: &s.extractor,
                workspace: &ws,
                locks: &s.locks,
                epsilon: s.epsilon,
                trace,
                prompt,
                config,
                parent,
            },
            emit,
        )
    };
    if !stream {
        let (outcome, events) = blocking(move || {
            let mut events = Vec::new();
            let outcome = job(&s, &mut |e| events.push(e))?;
            Ok((outcome, events))
        })
        .await?;
        let attributions: Vec<_> = events
            .iter()
            .filter(|e| matches!(e, GenerateEvent::Attribution(_)))
            .collect();
        let substitutions: Vec<_> = events
            .iter()
            .filter(|e| matches!(e, GenerateEvent::Substitution(_)))
            .collect();
        return Ok(Json(json!({
            "node_id": outcome.node_id,
            "record": outcome.record,
            "attributions": attributions,
            "substitutions": substitutions,
        }))
        .into_response());
    }
    let (tx, rx) = tokio::sync::mpsc::channel::<GenerateEvent>(64);
    tokio::task::spawn_blocking(move || {
        let result = job(&s, &mut |e| {
            let _ = tx.blocking_send(e);
        });
        if let Err(e) = result {
            tracing::warn!(error = %e, "generation failed");
        }
    });
    let lines = futures::stream::unfold(rx, |mut rx| async move {
        let e = rx.recv().await?;
        Some((Ok::<_, Infallible>(Bytes::from(e.to_line())), rx))
    });
    Ok((
        [(header::CONTENT_TYPE, "application/x-ndjson")],
        Body::from_stream(lines),
    )
        .into_response())
}

#[derive(Debug, Default, Deserialize)]
struct EncodingQuery {
    color_by: Option<String>,
    fill_by: Option<String>,
    size_by: Option<String>,
}

async fn versions(
    State(s): State<Shared>,
    headers: HeaderMap,
    Query(q): Query<EncodingQuery>,
) -> Result<Json<Value>, ApiError> {
    let ws = s.workspace(&headers)?;
    let graph = ws.load_graph()?;
    let assignment = if q.color_by.is_none() && q.fill_by.is_none() && q.size_by.is_none() {
        graph.encoding.clone()
    } else {
        EncodingAssignment {
            color_by: q.color_by,
            fill_by: q.fill_by,
            size_by: q.size_by,
        }
    };
    let encodings = graph.encode(&assignment)?;
    Ok(Json(json!({
        "nodes": graph.nodes(),
        "encoding": assignment,
        "encodings": encodings,
    })))
}

async fn set_encoding(
    State(s): State<Shared>,
    headers: HeaderMap,
    bytes: Bytes,
) -> Result<Json<Value>, ApiError> {
    let assignment: EncodingAssignment = body(&bytes)?;
    let ws = s.workspace(&headers)?;
    let lock = s.locks.lock_for(&ws);
    let _guard = lock.lock().expect("workspace lock poisoned");
    let mut graph = ws.load_graph()?;
    graph.set_encoding(assignment)?;
    graph.save(ws.graph_path())?;
    Ok(Json(json!({ "encoding": graph.encoding })))
}

async fn delete_version(
    State(s): State<Shared>,
    headers: HeaderMap,
    Path(id): Path<u64>,
) -> Result<StatusCode, ApiError> {
    let ws = s.workspace(&headers)?;
    let lock = s.locks.lock_for(&ws);
    let _guard = lock.lock().expect("workspace lock poisoned");
    let mut graph = ws.load_graph()?;
    graph.delete(id)?;
    graph.save(ws.graph_path())?;
    Ok(StatusCode::NO_CONTENT)
}

async fn revert(
    State(s): State<Shared>,
    headers: HeaderMap,
    Path(id): Path<u64>,
) -> Result<Json<Value>, ApiError> {
    let ws = s.workspace(&headers)?;
    let (prompt, config) = ws.load_graph()?.revert(id)?;
    Ok(Json(json!({ "prompt": prompt, "config": config })))
}

async fn record(
    State(s): State<Shared>,
    headers: HeaderMap,
    Path(id): Path<u64>,
) -> Result<Json<Value>, ApiError> {
    let ws = s.workspace(&headers)?;
    ws.load_graph()?.node(id)?;
    let record = ws.load_record(id)?;
    Ok(Json(serde_json::to_value(record).expect("serializable")))
}

#[derive(Debug, Default, Deserialize)]
struct EpsilonQuery {
    epsilon: Option<f64>,
}

async fn attribution_report(
    State(s): State<Shared>,
    headers: HeaderMap,
    Path(id): Path<u64>,
    Query(q): Query<EpsilonQuery>,
) -> Result<Json<Value>, ApiError> {
    let ws = s.workspace(&headers)?;
    let node = ws.load_graph()?.node(id)?.clone();
    let record = ws.load_record(id)?;
    let epsilon = q.epsilon.unwrap_or(s.epsilon);
    blocking(move || {
        let report = attribution::report(&record, &node.prompt, &node.config, &s.extractor, epsilon)?;
        Ok(Json(json!({ "node_id": id, "epsilon": epsilon, "attributes": report })))
    })
    .await
}

async fn logprobs(State(s): State<Shared>, bytes: Bytes) -> Result<Response, ApiError> {
    let req: LogitsRequest = body(&bytes)?;
    blocking(move || {
        let resp = answer_logits_request(s.backend.as_ref(), &req)?;
        let text = serde_json::to_string(&resp).expect("serializable");
        Ok(([(header::CONTENT_TYPE, "application/json")], text).into_response())
    })
    .await
}
