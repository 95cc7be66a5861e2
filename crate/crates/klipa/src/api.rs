//! JSON HTTP API over a loaded engine. Every failure is an [`ApiError`].

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use klipa_core::agent::{resolve_entity, run, snippet, AgentAnswer, AgentContext, AgentError, SessionStore};
use klipa_core::extraction::ExtractionReport;
use klipa_core::graph::{Direction, EntityNode, NodeRef, RelationEdge, SNAPSHOT_VERSION};
use klipa_core::metrics::{evaluate, load_gold};
use klipa_core::retrieval::{hybrid_retrieve, HitSource, Level, INDEX_VERSION};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tower_http::services::ServeDir;

use crate::engine::Engine;
use crate::error::EngineError;

/// Most hits one search request may ask for.
pub const MAX_SEARCH_K: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Error)]
#[error("{status} {code}: {message}")]
pub struct ApiError {
    pub code: String,
    pub message: String,
    pub status: u16,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.to_string(),
            message: message.into(),
            status: status.as_u16(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_request", message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

impl From<AgentError> for ApiError {
    fn from(e: AgentError) -> Self {
        let msg = e.to_string();
        match e {
            AgentError::SessionNotFound(_) => Self::new(StatusCode::NOT_FOUND, "session_not_found", msg),
            AgentError::SessionBusy(_) => Self::new(StatusCode::CONFLICT, "session_busy", msg),
            AgentError::EmptyQuery => Self::new(StatusCode::BAD_REQUEST, "empty_query", msg),
            AgentError::Gateway { error, .. } if error.is_unreachable() => {
                Self::new(StatusCode::SERVICE_UNAVAILABLE, "gateway_unreachable", msg)
            }
            AgentError::Gateway { .. } => Self::new(StatusCode::BAD_GATEWAY, "gateway_error", msg),
            AgentError::Template(_) | AgentError::InvalidConfig(_) => Self::internal(msg),
        }
    }
}

/// Shared, read-only except for the session store and log.
pub struct AppState {
    pub ctx: Arc<AgentContext>,
    pub sessions: SessionStore,
    pub health: Value,
    pub report: Option<ExtractionReport>,
    pub session_log: Option<Mutex<File>>,
}

impl AppState {
    /// Load every artifact the API serves. Fingerprints describe the files
    /// as loaded; the service does not reload them.
    pub fn load(engine: &Engine) -> Result<Self, EngineError> {
        let ctx = engine.load_context()?;
        let fingerprints = engine.fingerprints()?;
        let report = engine.load_report()?;
        let session_log = match &engine.cfg.service.session_log {
            Some(p) => Some(Mutex::new(open_log(p)?)),
            None => None,
        };
        let health = json!({
            "status": "ok",
            "versions": {
                "klipa": env!("CARGO_PKG_VERSION"),
                "snapshot": SNAPSHOT_VERSION,
                "index": INDEX_VERSION,
            },
            "fingerprints": fingerprints,
            "models": {
                "chat": engine.gateway.chat_model(),
                "embed": engine.gateway.embed_model(),
            },
            "graph": {
                "nodes": ctx.graph.node_count(),
                "edges": ctx.graph.edge_count(),
            },
        });
        Ok(Self {
            ctx: Arc::new(ctx),
            sessions: SessionStore::new(),
            health,
            report,
            session_log,
        })
    }

    fn log(&self, event: Value) {
        if let Some(f) = &self.session_log {
            let mut f = f.lock().unwrap_or_else(|e| e.into_inner());
            if let Err(e) = writeln!(f, "{event}").and_then(|_| f.flush()) {
                log::warn!("session log write failed: {e}");
            }
        }
    }
}

fn open_log(path: &Path) -> Result<File, EngineError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| EngineError::io(dir, e))?;
    }
    File::options()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| EngineError::io(path, e))
}

type Shared = Arc<AppState>;
type ApiResult<T> = Result<Json<T>, ApiError>;

pub fn router(state: Shared, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/messages", post(post_message))
        .route("/query", post(query))
        .route("/graph/neighborhood", get(neighborhood))
        .route("/graph/subgraph", post(subgraph))
        .route("/search", get(search))
        .route("/eval", get(eval))
        .fallback(not_found)
        .method_not_allowed_fallback(method_not_allowed)
        .with_state(state);
    let app = Router::new().nest("/api", api);
    match static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app.fallback(not_found),
    }
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

async fn method_not_allowed() -> ApiError {
    ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "method_not_allowed", "method not allowed here")
}

/// Strict JSON body parsing so malformed bodies get an ApiError too.
fn body<T: DeserializeOwned>(bytes: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(bytes).map_err(|e| ApiError::bad_request(format!("request body: {e}")))
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

async fn health(State(s): State<Shared>) -> Json<Value> {
    Json(s.health.clone())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
}

async fn create_session(State(s): State<Shared>) -> (StatusCode, Json<SessionCreated>) {
    let session = s.sessions.create();
    s.log(json!({"event": "session_created", "session_id": session.id, "created_at": session.created_at}));
    (StatusCode::CREATED, Json(SessionCreated { session_id: session.id }))
}

async fn get_session(State(s): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<Value> {
    let session = blocking(move || s.sessions.get(&id).map_err(ApiError::from)).await?;
    Ok(Json(serde_json::to_value(session).expect("session serializes")))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextBody {
    pub text: String,
}

async fn post_message(State(s): State<Shared>, UrlPath(id): UrlPath<String>, bytes: Bytes) -> ApiResult<AgentAnswer> {
    let TextBody { text } = body(&bytes)?;
    let answer = blocking(move || {
        let answer = s.sessions.ask(&id, &text, &s.ctx)?;
        s.log(json!({"event": "turn", "session_id": id, "user_text": text.trim(), "answer": answer}));
        Ok(answer)
    })
    .await?;
    Ok(Json(answer))
}

async fn query(State(s): State<Shared>, bytes: Bytes) -> ApiResult<AgentAnswer> {
    let TextBody { text } = body(&bytes)?;
    let answer = blocking(move || run(&text, &[], &s.ctx).map_err(ApiError::from)).await?;
    Ok(Json(answer))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphView {
    pub nodes: Vec<EntityNode>,
    pub edges: Vec<RelationEdge>,
}

fn unknown_entity(names: &[&str]) -> ApiError {
    ApiError::new(
        StatusCode::NOT_FOUND,
        "unknown_entity",
        format!("not in graph: {}", names.join(", ")),
    )
}

async fn neighborhood(State(s): State<Shared>, Query(q): Query<HashMap<String, String>>) -> ApiResult<GraphView> {
    let entity = q
        .get("entity")
        .filter(|e| !e.trim().is_empty())
        .ok_or_else(|| ApiError::bad_request("missing query parameter entity"))?;
    let dir: Direction = match q.get("direction") {
        Some(d) => d.parse().map_err(ApiError::bad_request)?,
        None => Direction::Both,
    };
    let graph = &s.ctx.graph;
    let centers = resolve_entity(entity, graph);
    if centers.is_empty() {
        return Err(unknown_entity(&[entity]));
    }
    let mut refs: BTreeSet<NodeRef> = BTreeSet::new();
    let mut edges = Vec::new();
    for n in &centers {
        refs.insert(n.node_ref());
        for e in graph.incident_edges(&n.node_ref(), dir).map_err(|e| ApiError::internal(e.to_string()))? {
            refs.insert(e.src.clone());
            refs.insert(e.dst.clone());
            edges.push(e);
        }
    }
    edges.sort_by(|a, b| (&a.src, &a.rel_type, &a.dst).cmp(&(&b.src, &b.rel_type, &b.dst)));
    edges.dedup();
    let nodes = refs.iter().filter_map(|r| graph.node(r)).collect();
    Ok(Json(GraphView { nodes, edges }))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeysBody {
    pub keys: Vec<String>,
}

async fn subgraph(State(s): State<Shared>, bytes: Bytes) -> ApiResult<GraphView> {
    let KeysBody { keys } = body(&bytes)?;
    if keys.is_empty() {
        return Err(ApiError::bad_request("keys must not be empty"));
    }
    let graph = &s.ctx.graph;
    let mut set = BTreeSet::new();
    let mut unknown = Vec::new();
    for k in &keys {
        let found = resolve_entity(k, graph);
        if found.is_empty() {
            unknown.push(k.as_str());
        }
        set.extend(found.iter().map(EntityNode::node_ref));
    }
    if !unknown.is_empty() {
        return Err(unknown_entity(&unknown));
    }
    let snap = graph.induced_subgraph(&set).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(Json(GraphView {
        nodes: snap.nodes,
        edges: snap.edges,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub id: String,
    pub score: f64,
    pub source: HitSource,
    pub level: Level,
    pub snippet: String,
}

async fn search(State(s): State<Shared>, Query(q): Query<HashMap<String, String>>) -> ApiResult<Vec<SearchHit>> {
    let text = q
        .get("q")
        .filter(|t| !t.trim().is_empty())
        .cloned()
        .ok_or_else(|| ApiError::bad_request("missing query parameter q"))?;
    let level: Level = match q.get("level") {
        Some(l) => l.parse().map_err(ApiError::bad_request)?,
        None => Level::Chunk,
    };
    let k = match q.get("k") {
        Some(k) => k
            .parse::<usize>()
            .ok()
            .filter(|k| (1..=MAX_SEARCH_K).contains(k))
            .ok_or_else(|| ApiError::bad_request(format!("k must be an integer in 1..={MAX_SEARCH_K}")))?,
        None => s.ctx.retrieval.top_k,
    };
    blocking(move || {
        let index = s
            .ctx
            .retriever
            .index(level)
            .map_err(|e| ApiError::new(StatusCode::NOT_FOUND, "index_missing", e.to_string()))?;
        let mut cfg = s.ctx.retrieval.clone();
        cfg.top_k = k;
        let hits = hybrid_retrieve(index, &text, &s.ctx.gateway, &cfg)
            .map_err(|e| ApiError::new(StatusCode::BAD_GATEWAY, "retrieval_failed", e.to_string()))?;
        Ok(Json(
            hits.into_iter()
                .map(|h| SearchHit {
                    snippet: index.get(&h.id).map(|i| snippet(&i.text)).unwrap_or_default(),
                    id: h.id,
                    score: h.score,
                    source: h.source,
                    level: h.level,
                })
                .collect(),
        ))
    })
    .await
}

async fn eval(State(s): State<Shared>, Query(q): Query<HashMap<String, String>>) -> ApiResult<Value> {
    let gold = q
        .get("gold")
        .filter(|g| !g.trim().is_empty())
        .map(PathBuf::from)
        .ok_or_else(|| ApiError::bad_request("missing query parameter gold"))?;
    let label = q.get("label").cloned().unwrap_or_else(|| "klipa".into());
    blocking(move || {
        let gold = load_gold(&gold).map_err(|e| ApiError::new(StatusCode::NOT_FOUND, "gold_unreadable", e.to_string()))?;
        let report = evaluate(&label, &gold, &s.ctx.graph, s.report.as_ref())
            .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "eval_failed", e.to_string()))?;
        Ok(Json(serde_json::to_value(report).expect("report serializes")))
    })
    .await
}

/// Serve until interrupted.
pub fn serve(engine: &Engine) -> Result<(), EngineError> {
    let state = Arc::new(AppState::load(engine)?);
    let addr = format!("{}:{}", engine.cfg.service.bind, engine.cfg.service.port);
    let app = router(state, engine.cfg.service.static_dir.clone());
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| EngineError::io("tokio runtime", e))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr).await.map_err(|e| EngineError::Bind {
            addr: addr.clone(),
            message: e.to_string(),
        })?;
        let local: SocketAddr = listener.local_addr().map_err(|e| EngineError::io(&addr, e))?;
        log::info!("listening on http://{local}");
        eprintln!("listening on http://{local}");
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| EngineError::io(&addr, e))
    })
}
