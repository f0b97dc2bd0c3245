#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use adapt_core::bank::{load_bank, QuestionBank, QuestionId};
use adapt_core::grading::Submission;
use adapt_core::ontology::{load_ontology, ConceptGraph, ConceptId};
use adapt_core::scheduler::{AssignmentMode, LearnerId};
use adapt_core::session::{
    Engine, EngineConfig, PretestAnswer, PretestResult, Questionnaire, StepClock, SubmitReply,
};
use chrono::{TimeZone, Utc};

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
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

pub fn conditionals_bank() -> Arc<QuestionBank> {
    Arc::new(load_bank(&fixture("conditionals_bank.json")).unwrap())
}

pub fn clock() -> Box<StepClock> {
    Box::new(StepClock::new(
        Utc.with_ymd_and_hms(2024, 6, 3, 9, 0, 0).unwrap(),
        chrono::Duration::seconds(15),
    ))
}

pub fn engine_with(bank: Arc<QuestionBank>, mode: AssignmentMode) -> Engine {
    let config = EngineConfig {
        mode,
        ..EngineConfig::default()
    };
    Engine::new(graph(), bank, config, clock())
}

pub fn engine(mode: AssignmentMode) -> Engine {
    engine_with(demo_bank(), mode)
}

pub fn concept(id: &str) -> ConceptId {
    ConceptId::new(id)
}

pub fn register(engine: &mut Engine, id: &str, experienced: bool) -> LearnerId {
    let learner = LearnerId::new(id);
    engine
        .start_session(
            &learner,
            &Questionnaire {
                has_programming_experience: experienced,
                language: "python".into(),
            },
        )
        .unwrap();
    learner
}

fn transcripts(engine: &Engine, question: QuestionId, correct: bool) -> Vec<Option<Vec<String>>> {
    let q = engine.bank().get(question).unwrap();
    q.test_cases
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if correct || i > 0 {
                Some(c.expected_stdout.clone())
            } else {
                Some(vec!["?".to_string()])
            }
        })
        .collect()
}

pub fn submission(engine: &Engine, question: QuestionId, correct: bool) -> Submission {
    Submission {
        source: "x = input()\nif x:\n    print(x)\n".into(),
        outputs: Some(transcripts(engine, question, correct)),
        elapsed_seconds: Some(30.0),
    }
}

/// Selects `concept` and scores its placement test with `correct` right answers.
pub fn place(engine: &mut Engine, learner: &LearnerId, concept: &ConceptId, correct: usize) -> PretestResult {
    engine.select_concept(learner, concept).unwrap();
    let answers: Vec<PretestAnswer> = engine
        .bank()
        .pretests("python", concept)
        .into_iter()
        .enumerate()
        .map(|(i, q)| (q.id, i < correct))
        .collect::<Vec<_>>()
        .into_iter()
        .map(|(id, ok)| PretestAnswer {
            question_id: id,
            submission: submission(engine, id, ok),
        })
        .collect();
    engine.submit_pretest(learner, concept, &answers, None).unwrap()
}

pub fn assigned(engine: &mut Engine, learner: &LearnerId, concept: &ConceptId) -> QuestionId {
    engine
        .request_exercise(learner, concept)
        .unwrap()
        .exercise
        .expect("an exercise is assigned")
        .question_id
}

/// Requests the next exercise and answers it.
pub fn answer_next(engine: &mut Engine, learner: &LearnerId, concept: &ConceptId, correct: bool) -> SubmitReply {
    let q = assigned(engine, learner, concept);
    let sub = submission(engine, q, correct);
    engine.submit_code(learner, q, &sub, None).unwrap()
}
