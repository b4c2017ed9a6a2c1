//! HTTP/JSON API over the engine.
//!
//! Each session lives behind its own mutex, so requests for one session run
//! strictly one after another while different sessions proceed in parallel.
//! Engine work runs on the blocking pool. A session is written to
//! `<sessions_dir>/<id>.json` after every successful change, under an
//! advisory lock file. A failed request leaves both memory and disk as they
//! were.
//!
//! | status | codes |
//! |--------|-------|
//! | 400 | `bad_request`, `empty_goal`, `invalid_entry`, `invalid_request`, `unknown_key`, `unknown_question` |
//! | 404 | `not_found`, `unknown_node` |
//! | 409 | `already_decomposed`, `feature_disabled`, `no_local_context`, `pipeline_order`, `depth_limit`, `fanout_limit`, `session_locked` |
//! | 502 | `unparseable_subtasks`, `unparseable_verdict`, `no_valid_keys`, `no_entities_found` |
//! | 503 | `provider_unavailable` (the provider failure is in `detail.cause`) |
//! | 500 | everything else |

use std::collections::HashMap;
use std::future::Future;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::clock::Clock;
use crate::context_store::{KeySummary, Scope};
use crate::engine::{AblationMode, Answer, Engine, EngineConfig, SelectionPurpose};
use crate::error::Error;
use crate::prompts::{DetectionStrategy, PromptLibrary};
use crate::provider::LlmProvider;
use crate::session::{Session, SessionLock};
use crate::task_graph::{NodeId, TaskNode};

pub const DEFAULT_REQUEST_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub code: String,
    pub message: String,
    pub detail: Option<Value>,
}

impl ApiError {
    pub fn bad_request(message: impl Into<String>) -> Self {
        ApiError { status: StatusCode::BAD_REQUEST, code: "bad_request".into(), message: message.into(), detail: None }
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        ApiError { status: StatusCode::NOT_FOUND, code: "not_found".into(), message: message.into(), detail: None }
    }

    fn internal(message: impl Into<String>) -> Self {
        ApiError { status: StatusCode::INTERNAL_SERVER_ERROR, code: "internal".into(), message: message.into(), detail: None }
    }
}

pub fn status_for(error: &Error) -> StatusCode {
    use Error::*;
    match error {
        EmptyGoal | InvalidEntry(_) | InvalidRequest(_) | UnknownKey(_) | UnknownQuestion(_) | EmptySubtaskList => {
            StatusCode::BAD_REQUEST
        }
        UnknownNode(_) => StatusCode::NOT_FOUND,
        AlreadyDecomposed(_) | FeatureDisabled { .. } | NoLocalContext | PipelineOrder(_) | DepthLimit { .. }
        | FanoutLimit { .. } | SessionLocked(_) => StatusCode::CONFLICT,
        UnparseableSubtasks | UnparseableVerdict(_) | NoValidKeys | NoEntitiesFound => StatusCode::BAD_GATEWAY,
        e if e.is_provider_failure() => StatusCode::SERVICE_UNAVAILABLE,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = status_for(&e);
        let (code, detail) = if e.is_provider_failure() {
            ("provider_unavailable".to_owned(), Some(json!({ "cause": e.code() })))
        } else {
            let detail = match &e {
                Error::FeatureDisabled { feature, mode } => Some(json!({ "feature": feature, "mode": mode })),
                Error::DepthLimit { node, level, max } => Some(json!({ "node": node, "level": level, "max": max })),
                Error::FanoutLimit { count, max } => Some(json!({ "count": count, "max": max })),
                _ => None,
            };
            (e.code().to_owned(), detail)
        };
        ApiError { status, code, message: e.to_string(), detail }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub sessions_dir: PathBuf,
    pub engine: EngineConfig,
    pub request_timeout: Duration,
}

impl ServiceConfig {
    pub fn new(sessions_dir: impl Into<PathBuf>, engine: EngineConfig) -> Self {
        ServiceConfig { sessions_dir: sessions_dir.into(), engine, request_timeout: DEFAULT_REQUEST_TIMEOUT }
    }
}

struct Inner {
    config: ServiceConfig,
    provider: Arc<dyn LlmProvider>,
    prompts: Arc<PromptLibrary>,
    clock: Arc<dyn Clock>,
    sessions: Mutex<HashMap<String, Arc<Mutex<Engine>>>>,
    next_id: AtomicU64,
}

#[derive(Clone)]
pub struct ServiceState {
    inner: Arc<Inner>,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl ServiceState {
    pub fn new(
        config: ServiceConfig,
        provider: Arc<dyn LlmProvider>,
        prompts: Arc<PromptLibrary>,
        clock: Arc<dyn Clock>,
    ) -> Self {
        ServiceState {
            inner: Arc::new(Inner {
                config,
                provider,
                prompts,
                clock,
                sessions: Mutex::new(HashMap::new()),
                next_id: AtomicU64::new(1),
            }),
        }
    }

    pub fn sessions_dir(&self) -> &Path {
        &self.inner.config.sessions_dir
    }

    pub fn session_path(&self, id: &str) -> PathBuf {
        self.sessions_dir().join(format!("{id}.json"))
    }

    /// Current state of a session, loading it from disk if necessary.
    pub fn snapshot(&self, id: &str) -> ApiResult<Session> {
        let handle = self.engine(id)?;
        let engine = handle.lock().map_err(|_| ApiError::internal("session mutex poisoned"))?;
        Ok(engine.session().clone())
    }

    fn engine(&self, id: &str) -> ApiResult<Arc<Mutex<Engine>>> {
        if !valid_id(id) {
            return Err(ApiError::not_found(format!("no session `{id}`")));
        }
        let mut map = self.inner.sessions.lock().map_err(|_| ApiError::internal("session table poisoned"))?;
        if let Some(e) = map.get(id) {
            return Ok(e.clone());
        }
        let path = self.session_path(id);
        if !path.exists() {
            return Err(ApiError::not_found(format!("no session `{id}`")));
        }
        let session = Session::load(&path)?;
        let engine = Engine::resume(
            session,
            self.inner.config.engine.clone(),
            self.inner.provider.clone(),
            self.inner.prompts.clone(),
            self.inner.clock.clone(),
        );
        let handle = Arc::new(Mutex::new(engine));
        map.insert(id.to_owned(), handle.clone());
        Ok(handle)
    }

    fn fresh_id(&self) -> String {
        let map = self.inner.sessions.lock().expect("session table");
        loop {
            let id = format!("s{}", self.inner.next_id.fetch_add(1, Ordering::SeqCst));
            if !map.contains_key(&id) && !self.session_path(&id).exists() {
                return id;
            }
        }
    }

    fn persist(&self, session: &Session) -> crate::Result<()> {
        std::fs::create_dir_all(self.sessions_dir())?;
        let path = self.session_path(&session.id);
        let _lock = SessionLock::acquire(&path)?;
        session.save(&path)
    }

    /// Runs `op` on the session's engine and persists the result if the
    /// session changed. Any failure restores the prior state.
    fn mutate<T>(&self, id: &str, op: impl FnOnce(&mut Engine) -> crate::Result<T>) -> ApiResult<T> {
        let handle = self.engine(id)?;
        let mut engine = handle.lock().map_err(|_| ApiError::internal("session mutex poisoned"))?;
        let before = engine.session().clone();
        let out = op(&mut engine)?;
        if engine.session().events.len() != before.events.len() {
            if let Err(e) = self.persist(engine.session()) {
                engine.restore(before);
                return Err(e.into());
            }
        }
        Ok(out)
    }

    fn create(&self, goal: &str, description: &str, mode: AblationMode) -> ApiResult<(String, Value)> {
        let id = self.fresh_id();
        let mut engine = Engine::start(
            &id,
            goal,
            description,
            EngineConfig { mode, ..self.inner.config.engine.clone() },
            self.inner.provider.clone(),
            self.inner.prompts.clone(),
            self.inner.clock.clone(),
        )?;
        let questions = if mode.elicitation_enabled() { engine.elicit_global_context()? } else { Vec::new() };
        self.persist(engine.session())?;
        self.inner.sessions.lock().expect("session table").insert(id.clone(), Arc::new(Mutex::new(engine)));
        Ok((id.clone(), json!({ "session_id": id, "questions": questions })))
    }
}

/// Runs blocking engine work off the async runtime, bounded by the
/// configured request timeout.
async fn blocking<T: Send + 'static>(
    state: &ServiceState,
    work: impl FnOnce(ServiceState) -> ApiResult<T> + Send + 'static,
) -> ApiResult<T> {
    let s = state.clone();
    let task = tokio::task::spawn_blocking(move || work(s));
    match tokio::time::timeout(state.inner.config.request_timeout, task).await {
        Ok(Ok(out)) => out,
        Ok(Err(join)) => Err(ApiError::internal(format!("request worker failed: {join}"))),
        Err(_) => Err(ApiError {
            status: StatusCode::SERVICE_UNAVAILABLE,
            code: "provider_unavailable".into(),
            message: "request exceeded the server timeout".into(),
            detail: Some(json!({ "cause": "timeout" })),
        }),
    }
}

fn body<T: DeserializeOwned>(bytes: &Bytes) -> ApiResult<T> {
    let raw: &[u8] = if bytes.iter().all(u8::is_ascii_whitespace) { b"{}" } else { bytes };
    serde_json::from_slice(raw).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateBody {
    goal: Option<String>,
    #[serde(default)]
    description: String,
    mode: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AnswersBody {
    #[serde(default)]
    answers: Vec<Answer>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectBody {
    strategy: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DecomposeBody {
    accepted_keys: Option<Vec<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SelectionBody {
    purpose: Option<SelectionPurpose>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
enum DraftAction {
    Generate,
    Regenerate,
    ElicitAndRegenerate,
    Iterate,
    Save,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DraftBody {
    action: DraftAction,
    accepted_keys: Option<Vec<String>>,
    instruction: Option<String>,
    answers: Option<Vec<Answer>>,
    revision: Option<u32>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ContextBody {
    key: String,
    value: String,
}

#[derive(Deserialize)]
struct ScopeQuery {
    scope: Option<String>,
}

async fn create_session(State(state): State<ServiceState>, bytes: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let req: CreateBody = body(&bytes)?;
    let goal = req.goal.unwrap_or_default();
    if goal.trim().is_empty() {
        return Err(ApiError::bad_request("goal must not be empty"));
    }
    let mode = match req.mode {
        Some(m) => m.parse::<AblationMode>().map_err(ApiError::bad_request)?,
        None => state.inner.config.engine.mode,
    };
    let (_, out) = blocking(&state, move |s| s.create(&goal, &req.description, mode)).await?;
    Ok((StatusCode::CREATED, Json(out)))
}

async fn get_session(State(state): State<ServiceState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Session>> {
    blocking(&state, move |s| s.snapshot(&id)).await.map(Json)
}

async fn commit_answers(
    State(state): State<ServiceState>,
    UrlPath(id): UrlPath<String>,
    bytes: Bytes,
) -> ApiResult<Json<Value>> {
    let req: AnswersBody = body(&bytes)?;
    let keys = blocking(&state, move |s| s.mutate(&id, |e| e.commit_elicited(&req.answers))).await?;
    Ok(Json(json!({ "global_context_keys": keys })))
}

async fn get_tree(State(state): State<ServiceState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let session = blocking(&state, move |s| s.snapshot(&id)).await?;
    Ok(Json(json!({ "tree": session.tree, "outline": session.tree.outline() })))
}

async fn detect(
    State(state): State<ServiceState>,
    UrlPath((id, node)): UrlPath<(String, String)>,
    bytes: Bytes,
) -> ApiResult<Json<Value>> {
    let req: DetectBody = body(&bytes)?;
    let strategy = req.strategy.map(|s| s.parse::<DetectionStrategy>().map_err(ApiError::bad_request)).transpose()?;
    let node = NodeId::new(node);
    let out = blocking(&state, move |s| s.mutate(&id, |e| e.detect(&node, strategy))).await?;
    Ok(Json(serde_json::to_value(out).expect("outcome serializes")))
}

fn nodes(engine: &Engine, ids: &[NodeId]) -> Vec<TaskNode> {
    ids.iter().filter_map(|id| engine.session().tree.get(id).ok().cloned()).collect()
}

async fn decompose(
    State(state): State<ServiceState>,
    UrlPath((id, node)): UrlPath<(String, String)>,
    bytes: Bytes,
) -> ApiResult<Json<Value>> {
    let req: DecomposeBody = body(&bytes)?;
    let node = NodeId::new(node);
    let children = blocking(&state, move |s| {
        s.mutate(&id, |e| {
            let keys = req.accepted_keys.unwrap_or_default();
            let ids = if e.session().last_fork_decision(&node) == Some(true) && !keys.is_empty() {
                e.fork_task(&node, &keys)?
            } else {
                e.generate_subtasks(&node)?
            };
            Ok(nodes(e, &ids))
        })
    })
    .await?;
    Ok(Json(json!({ "children": children })))
}

async fn select_context(
    State(state): State<ServiceState>,
    UrlPath((id, node)): UrlPath<(String, String)>,
    bytes: Bytes,
) -> ApiResult<Json<Value>> {
    let req: SelectionBody = body(&bytes)?;
    let purpose = req.purpose.unwrap_or(SelectionPurpose::Drafting);
    let node = NodeId::new(node);
    let candidates = blocking(&state, move |s| s.mutate(&id, |e| e.select_context(&node, purpose))).await?;
    Ok(Json(json!({ "candidates": candidates })))
}

async fn draft(
    State(state): State<ServiceState>,
    UrlPath((id, node)): UrlPath<(String, String)>,
    bytes: Bytes,
) -> ApiResult<Json<Value>> {
    let req: DraftBody = body(&bytes)?;
    let node = NodeId::new(node);
    if matches!(req.action, DraftAction::Iterate) && req.instruction.as_deref().is_none_or(|i| i.trim().is_empty()) {
        return Err(ApiError::bad_request("iterate needs a non-empty instruction"));
    }
    blocking(&state, move |s| {
        s.mutate(&id, |e| {
            let keys = req.accepted_keys.as_deref();
            Ok(match req.action {
                DraftAction::Generate => json!({ "draft": e.generate_draft(&node, keys.unwrap_or_default())? }),
                // Without `accepted_keys`, regeneration reuses the previous draft's context.
                DraftAction::Regenerate => json!({ "draft": e.regenerate_draft(&node, keys)? }),
                DraftAction::ElicitAndRegenerate => match &req.answers {
                    None => json!({ "questions": e.elicit_draft_context(&node)? }),
                    Some(answers) => json!({ "draft": e.regenerate_with_context(&node, answers)? }),
                },
                DraftAction::Iterate => {
                    json!({ "draft": e.iterate_draft(&node, req.instruction.as_deref().unwrap_or_default())? })
                }
                DraftAction::Save => {
                    let key = e.save_draft(&node, req.revision)?;
                    json!({ "saved_key": key, "node": e.session().tree.get(&node)? })
                }
            })
        })
    })
    .await
    .map(Json)
}

async fn list_context(
    State(state): State<ServiceState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<ScopeQuery>,
) -> ApiResult<Json<Value>> {
    let scope = match q.scope.as_deref() {
        None | Some("local") => Scope::Local,
        Some("global") => Scope::Global,
        Some(other) => return Err(ApiError::bad_request(format!("unknown scope `{other}` (expected local or global)"))),
    };
    let session = blocking(&state, move |s| s.snapshot(&id)).await?;
    let entries: Vec<KeySummary> = session.context.list_keys(scope);
    Ok(Json(json!({ "entries": entries })))
}

async fn add_context(
    State(state): State<ServiceState>,
    UrlPath(id): UrlPath<String>,
    bytes: Bytes,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let req: ContextBody = body(&bytes)?;
    let key = blocking(&state, move |s| s.mutate(&id, |e| e.add_context(&req.key, &req.value))).await?;
    Ok((StatusCode::CREATED, Json(json!({ "key": key }))))
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

async fn fallback() -> ApiError {
    ApiError::not_found("no such endpoint")
}

pub fn router(state: ServiceState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/answers", post(commit_answers))
        .route("/sessions/{id}/tree", get(get_tree))
        .route("/sessions/{id}/nodes/{node}/detect", post(detect))
        .route("/sessions/{id}/nodes/{node}/decompose", post(decompose))
        .route("/sessions/{id}/nodes/{node}/context-selection", post(select_context))
        .route("/sessions/{id}/nodes/{node}/draft", post(draft))
        .route("/sessions/{id}/context", get(list_context).post(add_context))
        .fallback(fallback)
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: ServiceState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
