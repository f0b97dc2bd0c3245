#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use adapt_core::bank::{load_bank, QuestionBank};
use adapt_core::grading::Executor;
use adapt_core::ontology::{load_ontology, ConceptGraph};
use adapt_core::scheduler::AssignmentMode;
use adapt_core::session::{EngineConfig, StepClock};
use adapt_server::api::LEARNER_HEADER;
use adapt_server::{router, Service, ServiceConfig};
use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use chrono::{TimeZone, Utc};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

pub fn fixture_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

pub fn fixture(name: &str) -> String {
    std::fs::read_to_string(fixture_path(name)).unwrap()
}

pub fn graph() -> Arc<ConceptGraph> {
    Arc::new(load_ontology(&fixture("ontology.json")).unwrap())
}

pub fn demo_bank() -> Arc<QuestionBank> {
    Arc::new(load_bank(&fixture("demo_bank.json")).unwrap())
}

pub fn clock() -> Box<StepClock> {
    Box::new(StepClock::new(
        Utc.with_ymd_and_hms(2024, 6, 3, 9, 0, 0).unwrap(),
        chrono::Duration::seconds(15),
    ))
}

pub struct Harness {
    pub dir: PathBuf,
    pub bank: Arc<QuestionBank>,
    pub mode: AssignmentMode,
    pub executor: Option<Arc<dyn Executor>>,
    pub snapshot_every: u64,
}

impl Harness {
    pub fn new(dir: &Path, mode: AssignmentMode) -> Self {
        Self {
            dir: dir.to_path_buf(),
            bank: demo_bank(),
            mode,
            executor: None,
            snapshot_every: 1000,
        }
    }

    pub fn open(&self) -> Arc<Service> {
        let config = ServiceConfig {
            engine: EngineConfig {
                mode: self.mode,
                ..EngineConfig::default()
            },
            snapshot_every: self.snapshot_every,
        };
        Arc::new(
            Service::open(
                &self.dir,
                graph(),
                Arc::clone(&self.bank),
                config,
                clock(),
                self.executor.clone(),
            )
            .unwrap(),
        )
    }
}

pub struct Client {
    pub router: Router,
}

impl Client {
    pub fn new(service: Arc<Service>) -> Self {
        Self { router: router(service) }
    }

    pub async fn raw(&self, method: Method, uri: &str, learner: Option<&str>, body: Option<String>) -> (StatusCode, Value) {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(l) = learner {
            req = req.header(LEARNER_HEADER, l);
        }
        let req = match body {
            Some(b) => req.header("content-type", "application/json").body(Body::from(b)),
            None => req.body(Body::empty()),
        }
        .unwrap();
        let resp = self.router.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let value = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
        };
        (status, value)
    }

    pub async fn get(&self, uri: &str, learner: &str) -> (StatusCode, Value) {
        self.raw(Method::GET, uri, Some(learner), None).await
    }

    pub async fn post(&self, uri: &str, learner: &str, body: Value) -> (StatusCode, Value) {
        self.raw(Method::POST, uri, Some(learner), Some(body.to_string())).await
    }

    pub async fn ok_get(&self, uri: &str, learner: &str) -> Value {
        let (s, v) = self.get(uri, learner).await;
        assert_eq!(s, StatusCode::OK, "GET {uri}: {v}");
        v
    }

    pub async fn ok_post(&self, uri: &str, learner: &str, body: Value) -> Value {
        let (s, v) = self.post(uri, learner, body).await;
        assert_eq!(s, StatusCode::OK, "POST {uri}: {v}");
        v
    }

    /// Registers a learner for python.
    pub async fn register(&self, learner: &str, experienced: bool) -> Value {
        self.ok_post(
            "/session",
            learner,
            serde_json::json!({"has_programming_experience": experienced, "language": "python"}),
        )
        .await
    }

    /// Selects a concept and answers its placement test, `correct` right.
    pub async fn place(&self, learner: &str, concept: &str, correct: usize) -> Value {
        let sel = self.ok_post(&format!("/concepts/{concept}/select"), learner, Value::Null).await;
        let questions = sel["questions"].as_array().cloned().unwrap_or_default();
        let bank = demo_bank();
        let answers: Vec<Value> = questions
            .iter()
            .enumerate()
            .map(|(i, q)| {
                let id = q["question_id"].as_u64().unwrap() as u32;
                serde_json::json!({
                    "question_id": id,
                    "source": "x = input()\nif x:\n    print(x)\n",
                    "outputs": transcripts(&bank, id, i < correct),
                })
            })
            .collect();
        self.ok_post(
            &format!("/concepts/{concept}/pretest"),
            learner,
            serde_json::json!({"answers": answers}),
        )
        .await
    }

    pub async fn next(&self, learner: &str, concept: &str) -> Value {
        self.ok_get(&format!("/exercise/next?concept={concept}"), learner).await
    }

    /// Answers the open exercise of `concept`, requesting one if needed.
    pub async fn answer(&self, learner: &str, concept: &str, correct: bool, request_id: Option<&str>) -> Value {
        let view = self.next(learner, concept).await;
        let id = view["exercise"]["question_id"].as_u64().expect("an exercise") as u32;
        let mut body = serde_json::json!({
            "question_id": id,
            "source": "x = input()\nif x:\n    print(x)\n",
            "outputs": transcripts(&demo_bank(), id, correct),
        });
        if let Some(r) = request_id {
            body["request_id"] = Value::from(r);
        }
        self.ok_post("/submission", learner, body).await
    }
}

/// Per-case stdout that passes, or fails the first case.
pub fn transcripts(bank: &QuestionBank, id: u32, correct: bool) -> Value {
    let q = bank.get(adapt_core::bank::QuestionId(id)).unwrap();
    let cases: Vec<Value> = q
        .test_cases
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if correct || i > 0 {
                serde_json::json!(c.expected_stdout)
            } else {
                serde_json::json!(["?"])
            }
        })
        .collect();
    Value::Array(cases)
}
