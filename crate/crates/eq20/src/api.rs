//! HTTP+JSON game service under `/api/v1`.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use eq20_core::error::{BeliefError, KbError, PolicyError, SessionError};
use eq20_core::kb::{KnowledgeBase, Question};
use eq20_core::nn::DenseNetwork;
use eq20_core::ranking::PolicyKind;
use eq20_core::rl::NetworkBundle;
use eq20_core::session::{GameSession, SessionConfig, SessionResult, Step};

/// Response header set when a learned-policy request is served by the
/// entropy policy instead.
pub const FALLBACK_HEADER: &str = "x-eq20-policy-fallback";

/// Largest accepted opening description, in bytes.
pub const MAX_DESCRIPTION_BYTES: usize = 4096;

const BELIEF_TOP: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    SessionClosed,
    SessionNotFound,
    OutOfOrder,
    InvalidOption,
    UnknownCategory,
    Validation,
    Internal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: ErrorCode,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn validation(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, ErrorCode::Validation, message)
    }

    fn not_found(id: &str) -> Self {
        Self::new(
            StatusCode::NOT_FOUND,
            ErrorCode::SessionNotFound,
            format!("no session `{id}`"),
        )
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": {"code": self.code, "message": self.message}});
        (self.status, Json(body)).into_response()
    }
}

fn kb_error(e: KbError) -> ApiError {
    match e {
        KbError::UnknownCategory(c) => ApiError::new(
            StatusCode::BAD_REQUEST,
            ErrorCode::UnknownCategory,
            format!("unknown category `{c}`"),
        ),
        other => ApiError::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            ErrorCode::Internal,
            other.to_string(),
        ),
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let msg = e.to_string();
        match e {
            SessionError::Closed => ApiError::new(StatusCode::CONFLICT, ErrorCode::SessionClosed, msg),
            SessionError::StillActive => ApiError::new(StatusCode::CONFLICT, ErrorCode::Validation, msg),
            SessionError::OutOfOrder { .. } => ApiError::new(StatusCode::CONFLICT, ErrorCode::OutOfOrder, msg),
            SessionError::InvalidOption { .. } | SessionError::Belief(BeliefError::EmptySelection) => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, ErrorCode::InvalidOption, msg)
            }
            SessionError::Config(_) | SessionError::Unscripted(_) => ApiError::validation(msg),
            SessionError::Kb(k) | SessionError::Belief(BeliefError::Kb(k)) => kb_error(k),
            SessionError::Policy(PolicyError::Belief(BeliefError::Kb(k))) => kb_error(k),
            _ => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, ErrorCode::Internal, msg),
        }
    }
}

/// Body of `POST /api/v1/sessions`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartRequest {
    #[serde(default)]
    pub description: String,
    pub category: Option<String>,
    pub policy: Option<PolicyKind>,
}

/// Body of `POST /api/v1/sessions/{id}/answers`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerRequest {
    pub question_id: String,
    pub option_ids: Vec<String>,
}

fn decode<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    let mut de = serde_json::Deserializer::from_slice(body);
    let value: T = serde_path_to_error::deserialize(&mut de)
        .map_err(|e| ApiError::validation(format!("invalid request body at `{}`: {}", e.path(), e.inner())))?;
    de.end()
        .map_err(|e| ApiError::validation(format!("invalid request body: {e}")))?;
    Ok(value)
}

pub fn decode_start_request(body: &[u8]) -> Result<StartRequest, ApiError> {
    let req: StartRequest = decode(body)?;
    if req.description.len() > MAX_DESCRIPTION_BYTES {
        return Err(ApiError::validation(format!(
            "description longer than {MAX_DESCRIPTION_BYTES} bytes"
        )));
    }
    Ok(req)
}

pub fn decode_answer_request(body: &[u8]) -> Result<AnswerRequest, ApiError> {
    let req: AnswerRequest = decode(body)?;
    if req.option_ids.is_empty() {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            ErrorCode::InvalidOption,
            "option_ids must not be empty",
        ));
    }
    Ok(req)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionView {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionView {
    pub id: String,
    pub text: String,
    pub options: Vec<OptionView>,
}

impl From<&Question> for QuestionView {
    fn from(q: &Question) -> Self {
        Self {
            id: q.id.clone(),
            text: q.text.clone(),
            options: q
                .options
                .iter()
                .map(|o| OptionView {
                    id: o.id.clone(),
                    text: o.text.clone(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefEntry {
    pub concept: String,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceView {
    pub question: String,
    pub answer: Vec<String>,
    pub jump: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultView {
    pub concept: String,
    pub name: String,
    pub confidence: f64,
    pub status: String,
    pub explanation: String,
    pub pivotal: TraceView,
    pub trace: Vec<TraceView>,
}

impl From<&SessionResult> for ResultView {
    fn from(r: &SessionResult) -> Self {
        let e = &r.explanation;
        Self {
            concept: r.concept.clone(),
            name: r.concept_name.clone(),
            confidence: r.confidence,
            status: r.status.as_str().to_string(),
            explanation: e.text.clone(),
            pivotal: TraceView {
                question: e.pivotal_question.clone(),
                answer: e.pivotal_answer.clone(),
                jump: e.jump,
            },
            trace: e
                .trace
                .iter()
                .map(|t| TraceView {
                    question: t.question.clone(),
                    answer: t.answer.clone(),
                    jump: t.jump,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartResponse {
    pub session_id: String,
    pub question: QuestionView,
    pub belief_top: Vec<BeliefEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AnswerResponse {
    Next {
        question: QuestionView,
        belief_top: Vec<BeliefEntry>,
    },
    Finished {
        result: ResultView,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnView {
    pub turn: usize,
    pub question: String,
    pub answer: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotResponse {
    pub session_id: String,
    pub category: String,
    pub policy: PolicyKind,
    pub status: String,
    pub turn: usize,
    pub question: Option<QuestionView>,
    pub belief_top: Vec<BeliefEntry>,
    pub transcript: Vec<TurnView>,
    pub result: Option<ResultView>,
}

/// Service settings. The knowledge base is loaded by the caller.
#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub kb: KnowledgeBase,
    /// Trained networks; without them learned-policy requests fall back.
    pub models: Option<NetworkBundle>,
    pub session_ttl: Duration,
    pub record_frequencies: bool,
    /// Append-only JSON-lines event log.
    pub log_path: Option<PathBuf>,
    /// Seeds session identifiers and per-session randomness.
    pub seed: u64,
    /// Category, policy and thresholds for new sessions.
    pub defaults: SessionConfig,
}

impl ServiceConfig {
    pub fn new(kb: KnowledgeBase) -> Self {
        Self {
            kb,
            models: None,
            session_ttl: Duration::from_secs(1800),
            record_frequencies: false,
            log_path: None,
            seed: 0,
            defaults: SessionConfig::default(),
        }
    }
}

struct Entry {
    session: GameSession,
    last_seen: Instant,
}

/// In-memory sessions with idle expiry. Each session sits behind its own
/// lock so requests for one session are serialized.
struct SessionStore {
    ttl: Duration,
    sessions: Mutex<HashMap<String, Arc<Mutex<Entry>>>>,
}

impl SessionStore {
    fn insert(&self, session: GameSession) {
        let id = session.id().to_string();
        let entry = Entry {
            session,
            last_seen: Instant::now(),
        };
        self.sessions
            .lock()
            .expect("store lock")
            .insert(id, Arc::new(Mutex::new(entry)));
    }

    fn get(&self, id: &str) -> Option<Arc<Mutex<Entry>>> {
        let mut map = self.sessions.lock().expect("store lock");
        let entry = map.get(id)?.clone();
        let expired = entry.lock().expect("session lock").last_seen.elapsed() >= self.ttl;
        if expired {
            map.remove(id);
            return None;
        }
        Some(entry)
    }

    /// Drops idle sessions; returns how many were removed.
    fn sweep(&self) -> usize {
        let mut map = self.sessions.lock().expect("store lock");
        let before = map.len();
        map.retain(|_, e| e.lock().map(|e| e.last_seen.elapsed() < self.ttl).unwrap_or(false));
        before - map.len()
    }
}

pub struct Service {
    kb: RwLock<Arc<KnowledgeBase>>,
    models: Option<NetworkBundle>,
    store: SessionStore,
    ids: Mutex<ChaCha8Rng>,
    events: Option<Mutex<File>>,
    record_frequencies: bool,
    defaults: SessionConfig,
}

pub type AppState = Arc<Service>;

impl Service {
    pub fn new(cfg: ServiceConfig) -> std::io::Result<Self> {
        let events = match &cfg.log_path {
            Some(p) => Some(Mutex::new(OpenOptions::new().create(true).append(true).open(p)?)),
            None => None,
        };
        Ok(Self {
            kb: RwLock::new(Arc::new(cfg.kb)),
            models: cfg.models,
            store: SessionStore {
                ttl: cfg.session_ttl,
                sessions: Mutex::new(HashMap::new()),
            },
            ids: Mutex::new(ChaCha8Rng::seed_from_u64(cfg.seed)),
            events,
            record_frequencies: cfg.record_frequencies,
            defaults: cfg.defaults,
        })
    }

    /// Current knowledge base snapshot.
    pub fn kb(&self) -> Arc<KnowledgeBase> {
        self.kb.read().expect("kb lock").clone()
    }

    pub fn sweep_expired(&self) -> usize {
        self.store.sweep()
    }

    fn next_identity(&self) -> (String, u64) {
        let mut rng = self.ids.lock().expect("id lock");
        let bytes: [u8; 16] = rng.random();
        let seed: u64 = rng.random();
        (uuid::Builder::from_random_bytes(bytes).into_uuid().to_string(), seed)
    }

    fn log_event(&self, event: serde_json::Value) {
        let Some(file) = &self.events else { return };
        let ts = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0);
        let mut line = json!({"ts_ms": ts as u64});
        if let (Some(obj), serde_json::Value::Object(extra)) = (line.as_object_mut(), event) {
            obj.extend(extra);
        }
        let mut f = file.lock().expect("log lock");
        if let Err(e) = writeln!(f, "{line}") {
            tracing::warn!(error = %e, "cannot append to event log");
        }
    }

    fn learned_network(&self, kb: &KnowledgeBase, category: &str) -> Option<Arc<DenseNetwork>> {
        let models = self.models.as_ref()?;
        models.check_shapes(kb, category).ok()?;
        Some(Arc::new(models.policy.clone()))
    }

    fn record(&self, session: &GameSession, result: &SessionResult) {
        if !self.record_frequencies {
            return;
        }
        let mut guard = self.kb.write().expect("kb lock");
        let mut kb = (**guard).clone();
        for turn in session.transcript() {
            for option in &turn.answer {
                if let Err(e) = kb.record_answer_frequency(&result.concept, &turn.question, option) {
                    tracing::warn!(error = %e, "cannot record answer frequency");
                }
            }
        }
        *guard = Arc::new(kb);
    }
}

fn belief_top(session: &GameSession, kb: &KnowledgeBase) -> Vec<BeliefEntry> {
    session
        .ranked(kb)
        .into_iter()
        .take(BELIEF_TOP)
        .map(|r| BeliefEntry {
            concept: r.concept,
            prob: r.probability,
        })
        .collect()
}

async fn start_session(State(svc): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req = decode_start_request(&body)?;
    let kb = svc.kb();
    let category = req.category.unwrap_or_else(|| svc.defaults.category.clone());
    if !kb.has_category(&category) {
        return Err(kb_error(KbError::UnknownCategory(category)));
    }
    let mut policy = req.policy.unwrap_or(svc.defaults.policy);
    let mut network = None;
    let mut fell_back = false;
    if policy == PolicyKind::Learned {
        network = svc.learned_network(&kb, &category);
        if network.is_none() {
            policy = PolicyKind::EntropyConditional;
            fell_back = true;
        }
    }
    let (id, seed) = svc.next_identity();
    let cfg = SessionConfig {
        category: category.clone(),
        policy,
        seed,
        ..svc.defaults.clone()
    };
    let session = GameSession::start(&kb, id.clone(), &req.description, cfg, network)?;
    let question = session.pending_question(&kb).expect("new sessions have a question");
    let body = StartResponse {
        session_id: id.clone(),
        question: question.into(),
        belief_top: belief_top(&session, &kb),
    };
    svc.log_event(json!({"event": "session_started", "session_id": id, "category": category, "policy": policy}));
    svc.store.insert(session);
    let mut resp = (StatusCode::CREATED, Json(body)).into_response();
    if fell_back {
        resp.headers_mut()
            .insert(FALLBACK_HEADER, HeaderValue::from_static("entropy-paper"));
    }
    Ok(resp)
}

async fn submit_answer(
    State(svc): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<AnswerResponse>, ApiError> {
    let req = decode_answer_request(&body)?;
    let entry = svc.store.get(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let kb = svc.kb();
    let mut entry = entry.lock().expect("session lock");
    entry.last_seen = Instant::now();
    let step = entry.session.submit_answer(&kb, &req.question_id, &req.option_ids)?;
    svc.log_event(json!({
        "event": "answer", "session_id": id, "question": req.question_id, "options": req.option_ids
    }));
    let body = match step {
        Step::Next(q) => AnswerResponse::Next {
            question: (&q).into(),
            belief_top: belief_top(&entry.session, &kb),
        },
        Step::Finished(result) => {
            svc.log_event(json!({
                "event": "session_finished", "session_id": id, "concept": result.concept,
                "confidence": result.confidence, "status": result.status
            }));
            svc.record(&entry.session, &result);
            AnswerResponse::Finished {
                result: (&result).into(),
            }
        }
    };
    Ok(Json(body))
}

async fn snapshot(State(svc): State<AppState>, Path(id): Path<String>) -> Result<Json<SnapshotResponse>, ApiError> {
    let entry = svc.store.get(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let kb = svc.kb();
    let mut entry = entry.lock().expect("session lock");
    entry.last_seen = Instant::now();
    let s = &entry.session;
    Ok(Json(SnapshotResponse {
        session_id: id,
        category: s.config().category.clone(),
        policy: s.config().policy,
        status: s.status().as_str().to_string(),
        turn: s.turn(),
        question: s.pending_question(&kb).map(QuestionView::from),
        belief_top: belief_top(s, &kb),
        transcript: s
            .transcript()
            .iter()
            .map(|t| TurnView {
                turn: t.turn,
                question: t.question.clone(),
                answer: t.answer.clone(),
            })
            .collect(),
        result: s.result().ok().map(ResultView::from),
    }))
}

async fn explanation(State(svc): State<AppState>, Path(id): Path<String>) -> Result<Json<ResultView>, ApiError> {
    let entry = svc.store.get(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let mut entry = entry.lock().expect("session lock");
    entry.last_seen = Instant::now();
    let result = entry.session.result()?;
    Ok(Json(result.into()))
}

#[derive(Debug, Deserialize)]
struct CategoryFilter {
    category: Option<String>,
}

async fn concepts(
    State(svc): State<AppState>,
    Query(filter): Query<CategoryFilter>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let kb = svc.kb();
    if let Some(c) = &filter.category {
        if !kb.has_category(c) {
            return Err(kb_error(KbError::UnknownCategory(c.clone())));
        }
    }
    let list: Vec<_> = kb
        .concepts()
        .iter()
        .filter(|c| filter.category.as_ref().is_none_or(|f| &c.category == f))
        .map(|c| json!({"id": c.id, "name": c.name, "category": c.category, "description": c.description}))
        .collect();
    Ok(Json(json!({ "concepts": list })))
}

async fn categories(State(svc): State<AppState>) -> Json<serde_json::Value> {
    let kb = svc.kb();
    let list: Vec<_> = kb
        .categories()
        .iter()
        .map(|c| {
            let concepts = kb.category_concepts(&c.id).map(|v| v.len()).unwrap_or(0);
            let questions = kb.category_questions(&c.id).map(|v| v.len()).unwrap_or(0);
            json!({"id": c.id, "name": c.name, "concepts": concepts, "questions": questions})
        })
        .collect();
    Json(json!({ "categories": list }))
}

async fn unknown_route(req: Request) -> ApiError {
    ApiError::new(
        StatusCode::NOT_FOUND,
        ErrorCode::Validation,
        format!("no route for {} {}", req.method(), req.uri().path()),
    )
}

async fn wrong_method(req: Request) -> ApiError {
    ApiError::new(
        StatusCode::METHOD_NOT_ALLOWED,
        ErrorCode::Validation,
        format!("method {} not allowed on {}", req.method(), req.uri().path()),
    )
}

async fn log_requests(req: Request, next: Next) -> Response {
    let method = req.method().clone();
    let path = req.uri().path().to_string();
    let started = Instant::now();
    let resp = next.run(req).await;
    tracing::info!(
        method = %method,
        path = %path,
        status = resp.status().as_u16(),
        elapsed_us = started.elapsed().as_micros() as u64,
        "request"
    );
    resp
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/v1/sessions", post(start_session))
        .route("/api/v1/sessions/{id}", get(snapshot))
        .route("/api/v1/sessions/{id}/answers", post(submit_answer))
        .route("/api/v1/sessions/{id}/explanation", get(explanation))
        .route("/api/v1/kb/concepts", get(concepts))
        .route("/api/v1/kb/categories", get(categories))
        .fallback(unknown_route)
        .method_not_allowed_fallback(wrong_method)
        .layer(middleware::from_fn(log_requests))
        .with_state(state)
}

/// Serves until the listener fails. Expired sessions are swept once a minute.
pub async fn serve(listener: tokio::net::TcpListener, cfg: ServiceConfig) -> std::io::Result<()> {
    let state: AppState = Arc::new(Service::new(cfg)?);
    let sweeper = state.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs(60));
        loop {
            tick.tick().await;
            let removed = sweeper.sweep_expired();
            if removed > 0 {
                tracing::info!(removed, "expired sessions dropped");
            }
        }
    });
    axum::serve(listener, router(state)).await
}
