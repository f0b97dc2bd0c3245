//! HTTP endpoints over a single [`Engine`] persisted through a [`Store`].
//!
//! Mutating requests are serialized per learner. The engine itself sits
//! behind one lock that is held only for in-memory work and the log append;
//! code execution for submissions without transcripts runs outside it.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard};

use adapt_core::bank::{QuestionBank, QuestionId};
use adapt_core::grading::{Executor, GradingError, RunResult, Submission};
use adapt_core::ontology::{ConceptGraph, ConceptId};
use adapt_core::scheduler::LearnerId;
use adapt_core::session::{
    Clock, CompletionPage, ConceptProgress, Engine, EngineConfig, EngineError, PretestAnswer, PretestResult,
    Questionnaire, Selection, SessionView, SubmitReply,
};
use axum::extract::{FromRequest, FromRequestParts, Path as UrlPath, Query, Request, State};
use axum::http::request::Parts;
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ApiError;
use crate::store::{Store, StoreError};

pub const LEARNER_HEADER: &str = "x-learner-id";
const MAX_LEARNER_ID: usize = 128;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("replaying the event log: {0}")]
    Replay(#[from] EngineError),
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub engine: EngineConfig,
    /// Write a snapshot after this many new events; 0 only snapshots on
    /// shutdown.
    pub snapshot_every: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            engine: EngineConfig::default(),
            snapshot_every: 1000,
        }
    }
}

/// Never reads earlier than the newest logged timestamp, so a wall clock
/// that steps back cannot produce a log that fails to replay.
struct MonotonicClock {
    inner: Box<dyn Clock>,
    floor: DateTime<Utc>,
}

impl Clock for MonotonicClock {
    fn now(&mut self) -> DateTime<Utc> {
        self.floor = self.floor.max(self.inner.now());
        self.floor
    }
}

struct Inner {
    engine: Engine,
    store: Store,
    /// Set once a log write fails; the in-memory state is then ahead of the
    /// log and no further changes are accepted.
    broken: Option<String>,
}

pub struct Service {
    inner: Mutex<Inner>,
    bank: Arc<QuestionBank>,
    executor: Option<Arc<dyn Executor>>,
    snapshot_every: u64,
    learners: Mutex<HashMap<LearnerId, Arc<tokio::sync::Mutex<()>>>>,
}

impl std::fmt::Debug for Service {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Service")
            .field("executor", &self.executor.is_some())
            .field("snapshot_every", &self.snapshot_every)
            .finish()
    }
}

impl Service {
    /// Opens the event log in `data_dir` and rebuilds the engine from the
    /// latest matching snapshot plus the remaining events.
    pub fn open(
        data_dir: &Path,
        graph: Arc<ConceptGraph>,
        bank: Arc<QuestionBank>,
        config: ServiceConfig,
        clock: Box<dyn Clock>,
        executor: Option<Arc<dyn Executor>>,
    ) -> Result<Self, ServiceError> {
        let (store, recovered) = Store::open(data_dir)?;
        let (state, count) = recovered.snapshot.unwrap_or_default();
        let floor = state
            .learners
            .values()
            .map(|r| r.last_timestamp)
            .chain(recovered.tail.iter().map(|e| e.timestamp))
            .max()
            .unwrap_or(DateTime::<Utc>::MIN_UTC);
        let clock = Box::new(MonotonicClock { inner: clock, floor });
        let mut engine = Engine::restore(graph, Arc::clone(&bank), config.engine, clock, state, count);
        for event in &recovered.tail {
            engine.apply_logged(event)?;
        }
        debug_assert_eq!(engine.event_count(), store.event_count());
        tracing::info!(
            events = store.event_count(),
            replayed = recovered.tail.len(),
            learners = engine.state().learners.len(),
            "event log loaded"
        );
        Ok(Self {
            inner: Mutex::new(Inner {
                engine,
                store,
                broken: None,
            }),
            bank,
            executor,
            snapshot_every: config.snapshot_every,
            learners: Mutex::new(HashMap::new()),
        })
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().expect("engine lock poisoned")
    }

    pub fn event_count(&self) -> u64 {
        self.lock().store.event_count()
    }

    /// Runs a read-only query against the engine.
    pub fn read<T>(&self, f: impl FnOnce(&Engine) -> Result<T, EngineError>) -> Result<T, ApiError> {
        f(&self.lock().engine).map_err(ApiError::from)
    }

    /// Runs `f` and appends whatever events it recorded, including those of
    /// a call that failed part way.
    pub fn mutate<T>(&self, f: impl FnOnce(&mut Engine) -> Result<T, EngineError>) -> Result<T, ApiError> {
        let mut guard = self.lock();
        let inner = &mut *guard;
        if let Some(reason) = &inner.broken {
            return Err(ApiError::storage(reason.clone()));
        }
        let result = f(&mut inner.engine);
        let events = inner.engine.take_events();
        if let Err(e) = inner.store.append(&events) {
            let reason = format!("event log write failed: {e}");
            inner.broken = Some(reason.clone());
            return Err(ApiError::storage(reason));
        }
        if self.snapshot_every > 0 && inner.store.since_snapshot() >= self.snapshot_every {
            if let Err(e) = inner.store.write_snapshot(inner.engine.state()) {
                tracing::warn!(error = %e, "snapshot failed");
            }
        }
        result.map_err(ApiError::from)
    }

    /// Writes a final snapshot if anything changed since the last one.
    pub fn shutdown(&self) -> Result<(), StoreError> {
        let mut guard = self.lock();
        let inner = &mut *guard;
        if inner.broken.is_none() && inner.store.since_snapshot() > 0 {
            inner.store.write_snapshot(inner.engine.state())?;
        }
        Ok(())
    }

    async fn learner_queue(&self, learner: &LearnerId) -> tokio::sync::OwnedMutexGuard<()> {
        let slot = {
            let mut map = self.learners.lock().expect("learner table poisoned");
            Arc::clone(map.entry(learner.clone()).or_default())
        };
        slot.lock_owned().await
    }

    /// Runs the configured executor on every test case of `question`.
    async fn execute(&self, question: QuestionId, source: &str) -> Result<Vec<Option<Vec<String>>>, ApiError> {
        let executor = self.executor.clone().ok_or_else(|| {
            ApiError::from(EngineError::Grading(GradingError::MissingTranscript {
                expected: self.bank.get(question).map_or(0, |q| q.test_cases.len()),
                got: 0,
            }))
        })?;
        let q = self
            .bank
            .get(question)
            .cloned()
            .ok_or(EngineError::UnknownQuestion(question))?;
        let source = source.to_string();
        let outputs = tokio::task::spawn_blocking(move || {
            q.test_cases
                .iter()
                .map(|case| {
                    Ok(match executor.run(&source, &q.language, &case.stdin)? {
                        RunResult::Completed { stdout } => Some(stdout),
                        RunResult::Failed(_) => None,
                    })
                })
                .collect::<Result<Vec<_>, GradingError>>()
        })
        .await
        .map_err(|e| ApiError::new(axum::http::StatusCode::INTERNAL_SERVER_ERROR, "executor_panic", e.to_string()))?;
        outputs.map_err(|e| ApiError::from(EngineError::Grading(e)))
    }
}

/// Learner id from the `x-learner-id` header or the `learner` query
/// parameter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Learner(pub LearnerId);

impl<S: Send + Sync> FromRequestParts<S> for Learner {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, _state: &S) -> Result<Self, Self::Rejection> {
        let from_header = match parts.headers.get(LEARNER_HEADER) {
            Some(v) => Some(
                v.to_str()
                    .map_err(|_| ApiError::bad_request("learner id header is not valid text"))?
                    .to_string(),
            ),
            None => None,
        };
        let id = match from_header {
            Some(id) => id,
            None => Query::<HashMap<String, String>>::try_from_uri(&parts.uri)
                .ok()
                .and_then(|q| q.0.get("learner").cloned())
                .unwrap_or_default(),
        };
        let id = id.trim();
        if id.is_empty() {
            return Err(ApiError::new(
                axum::http::StatusCode::BAD_REQUEST,
                "missing_learner_id",
                format!("send the learner id in the {LEARNER_HEADER} header or the learner query parameter"),
            ));
        }
        if id.len() > MAX_LEARNER_ID || id.chars().any(char::is_control) {
            return Err(ApiError::bad_request("malformed learner id"));
        }
        Ok(Learner(LearnerId::new(id)))
    }
}

/// JSON body whose rejections use the API error format.
#[derive(Debug, Clone)]
pub struct Body<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Body(v)),
            Err(rejection) => Err(ApiError::new(rejection.status(), "bad_request", rejection.body_text())),
        }
    }
}

/// Query string whose rejections use the API error format.
#[derive(Debug, Clone)]
pub struct Params<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequestParts<S> for Params<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, _state: &S) -> Result<Self, Self::Rejection> {
        Query::<T>::try_from_uri(&parts.uri)
            .map(|q| Params(q.0))
            .map_err(|e| ApiError::bad_request(e.body_text()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptsPayload {
    pub learner_id: LearnerId,
    pub language: String,
    pub concepts: Vec<ConceptProgress>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretestRequest {
    pub answers: Vec<PretestAnswer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmissionRequest {
    pub question_id: QuestionId,
    pub source: String,
    /// Per-case stdout transcripts. Without them the server runs the code
    /// itself, if an executor is configured.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outputs: Option<Vec<Option<Vec<String>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_seconds: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipRequest {
    pub question_id: QuestionId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReenterRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_id: Option<QuestionId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExerciseQuery {
    pub concept: ConceptId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub events: u64,
}

type Shared = State<Arc<Service>>;
type ApiResult<T> = Result<Json<T>, ApiError>;

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/session", get(session).post(start_session))
        .route("/concepts", get(concepts))
        .route("/concepts/{id}/select", post(select))
        .route("/concepts/{id}/pretest", post(pretest))
        .route("/concepts/{id}/completion", get(completion))
        .route("/concepts/{id}/reenter", post(reenter))
        .route("/exercise/next", get(next_exercise))
        .route("/submission", post(submit))
        .route("/skip", post(skip))
        .with_state(service)
}

async fn health(State(svc): Shared) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        events: svc.event_count(),
    })
}

async fn session(State(svc): Shared, Learner(l): Learner) -> ApiResult<SessionView> {
    svc.read(|e| e.view(&l)).map(Json)
}

async fn start_session(State(svc): Shared, Learner(l): Learner, Body(q): Body<Questionnaire>) -> ApiResult<SessionView> {
    let _queue = svc.learner_queue(&l).await;
    svc.mutate(|e| e.start_session(&l, &q)).map(Json)
}

async fn concepts(State(svc): Shared, Learner(l): Learner) -> ApiResult<ConceptsPayload> {
    svc.read(|e| {
        Ok(ConceptsPayload {
            learner_id: l.clone(),
            language: e.learner(&l)?.profile.language.clone(),
            concepts: e.concept_overview(&l)?,
        })
    })
    .map(Json)
}

async fn select(State(svc): Shared, Learner(l): Learner, UrlPath(id): UrlPath<String>) -> ApiResult<Selection> {
    let _queue = svc.learner_queue(&l).await;
    svc.mutate(|e| e.select_concept(&l, &ConceptId::new(id))).map(Json)
}

async fn pretest(
    State(svc): Shared,
    Learner(l): Learner,
    UrlPath(id): UrlPath<String>,
    Body(mut req): Body<PretestRequest>,
) -> ApiResult<PretestResult> {
    let _queue = svc.learner_queue(&l).await;
    let concept = ConceptId::new(id);
    let cached = req.request_id.as_ref().is_some_and(|r| {
        svc.read(|e| Ok(e.learner(&l)?.requests.contains_key(r)))
            .unwrap_or(false)
    });
    if !cached {
        for answer in &mut req.answers {
            if answer.submission.outputs.is_none() && svc.executor.is_some() {
                let outputs = svc.execute(answer.question_id, &answer.submission.source).await?;
                answer.submission.outputs = Some(outputs);
            }
        }
    }
    svc.mutate(|e| e.submit_pretest(&l, &concept, &req.answers, req.request_id.as_deref()))
        .map(Json)
}

async fn next_exercise(
    State(svc): Shared,
    Learner(l): Learner,
    Params(q): Params<ExerciseQuery>,
) -> ApiResult<SessionView> {
    let _queue = svc.learner_queue(&l).await;
    svc.mutate(|e| e.request_exercise(&l, &q.concept)).map(Json)
}

async fn submit(State(svc): Shared, Learner(l): Learner, Body(req): Body<SubmissionRequest>) -> ApiResult<SubmitReply> {
    let _queue = svc.learner_queue(&l).await;
    let mut outputs = req.outputs;
    if outputs.is_none() {
        // Only run code for the open assignment; retries of a finished
        // request are answered from the log.
        let runnable = svc.read(|e| {
            let rec = e.learner(&l)?;
            if req.request_id.as_ref().is_some_and(|r| rec.requests.contains_key(r)) {
                return Ok(false);
            }
            match &rec.assignment {
                Some(a) if a.question_id == req.question_id => Ok(true),
                _ => Err(EngineError::NotAssigned(req.question_id)),
            }
        })?;
        if runnable {
            outputs = Some(svc.execute(req.question_id, &req.source).await?);
        }
    }
    let submission = Submission {
        source: req.source,
        outputs,
        elapsed_seconds: req.elapsed_seconds,
    };
    svc.mutate(|e| e.submit_code(&l, req.question_id, &submission, req.request_id.as_deref()))
        .map(Json)
}

async fn skip(State(svc): Shared, Learner(l): Learner, Body(req): Body<SkipRequest>) -> ApiResult<SessionView> {
    let _queue = svc.learner_queue(&l).await;
    svc.mutate(|e| e.skip_exercise(&l, req.question_id, req.request_id.as_deref()))
        .map(Json)
}

async fn completion(State(svc): Shared, Learner(l): Learner, UrlPath(id): UrlPath<String>) -> ApiResult<CompletionPage> {
    svc.read(|e| e.completion_page(&l, &ConceptId::new(id))).map(Json)
}

async fn reenter(
    State(svc): Shared,
    Learner(l): Learner,
    UrlPath(id): UrlPath<String>,
    body: axum::body::Bytes,
) -> ApiResult<SessionView> {
    let req: ReenterRequest = if body.iter().all(u8::is_ascii_whitespace) {
        ReenterRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(e.to_string()))?
    };
    let _queue = svc.learner_queue(&l).await;
    svc.mutate(|e| e.reenter(&l, &ConceptId::new(id), req.question_id))
        .map(Json)
}
