//! Learner-facing session flow on top of the event log.
//!
//! [`Engine`] validates each request against the current state, computes the
//! outcome with the pure scheduler and rating functions, and records it as
//! one or more [`LogEvent`]s. State only changes through [`apply_event`], the
//! same function used to replay a log, so a replayed engine is identical to
//! the live one.

use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bank::{Level, Question, QuestionBank, QuestionId, TestCase};
use crate::events::{EventPayload, LogEvent};
use crate::grading::{self, CompareOptions, FeedbackDocument, GradingError, Submission};
use crate::ontology::{self, ConceptGraph, ConceptId, ConceptStatus, HintItem, OntologyError};
use crate::rating::{Outcome, Transition, MASTERY_THRESHOLD};
use crate::scheduler::{
    self, AssignmentMode, Attempt, AttemptKind, AttemptRecord, ItemState, LearnerId, LearnerState, LevelEvent,
    LevelRates, PretestBands, Progression, SchedulerError,
};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("learner {0} has not answered the questionnaire")]
    UnknownLearner(LearnerId),
    #[error("no concepts are offered in language {0:?}")]
    UnknownLanguage(String),
    #[error("unknown concept {0}")]
    UnknownConcept(ConceptId),
    #[error("unknown question {0}")]
    UnknownQuestion(QuestionId),
    #[error("concept {0} has not been selected")]
    ConceptNotSelected(ConceptId),
    #[error("placement test for {0} must be taken first")]
    PretestPending(ConceptId),
    #[error("no placement test pending for {0}")]
    NoPretestPending(ConceptId),
    #[error("question {0} is not the learner's current assignment")]
    NotAssigned(QuestionId),
    #[error("no eligible question left for {0}")]
    PoolExhausted(ConceptId),
    #[error("concept {0} is not complete")]
    ConceptNotComplete(ConceptId),
    #[error("request id {0:?} was already used for a different action")]
    DuplicateRequest(String),
    #[error(transparent)]
    Grading(#[from] GradingError),
    #[error(transparent)]
    Ontology(#[from] OntologyError),
    #[error("state mismatch: {0}")]
    StateMismatch(String),
    #[error("corrupt log: {0}")]
    CorruptLog(String),
}

impl From<SchedulerError> for EngineError {
    fn from(e: SchedulerError) -> Self {
        EngineError::StateMismatch(e.to_string())
    }
}

pub trait Clock: Send {
    fn now(&mut self) -> DateTime<Utc>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&mut self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Deterministic clock advancing by a fixed step on every reading.
#[derive(Debug, Clone)]
pub struct StepClock {
    next: DateTime<Utc>,
    step: Duration,
}

impl StepClock {
    pub fn new(start: DateTime<Utc>, step: Duration) -> Self {
        Self { next: start, step }
    }
}

impl Clock for StepClock {
    fn now(&mut self) -> DateTime<Utc> {
        let t = self.next;
        self.next += self.step;
        t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    /// Group of learners registered without an explicit mode.
    pub mode: AssignmentMode,
    pub threshold: f64,
    pub bands: PretestBands,
    /// Suggested starting concept for learners without experience. Defaults
    /// to the first root concept of their language.
    pub recommended_concept: Option<ConceptId>,
    pub compare: CompareOptions,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            mode: AssignmentMode::Adaptive,
            threshold: MASTERY_THRESHOLD,
            bands: PretestBands::default(),
            recommended_concept: None,
            compare: CompareOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Questionnaire {
    pub has_programming_experience: bool,
    pub language: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerProfile {
    pub learner_id: LearnerId,
    pub has_programming_experience: bool,
    pub language: String,
    pub group_mode: AssignmentMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub concept: ConceptId,
    pub question_id: QuestionId,
    pub level: Level,
    pub reentry: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitReply {
    pub question_id: QuestionId,
    pub feedback: FeedbackDocument,
    pub missing_logic: bool,
    /// Hidden from random-mode learners.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition: Option<Transition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<Level>,
    pub concept_completed: bool,
}

/// Result of an already-processed request, kept for idempotent retries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum CachedReply {
    Submitted(SubmitReply),
    Skipped { question_id: QuestionId },
    Pretest(PretestResult),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerRecord {
    pub profile: LearnerProfile,
    pub concepts: BTreeMap<ConceptId, LearnerState>,
    pub current_concept: Option<ConceptId>,
    pub assignment: Option<Assignment>,
    /// Number of exercises drawn so far per concept; feeds random seeds.
    pub draws: BTreeMap<ConceptId, u64>,
    pub requests: BTreeMap<String, CachedReply>,
    pub last_timestamp: DateTime<Utc>,
}

impl LearnerRecord {
    pub fn concept(&self, concept: &ConceptId) -> Option<&LearnerState> {
        self.concepts.get(concept)
    }
}

/// Everything the engine knows, derivable from the log alone.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EngineState {
    pub learners: BTreeMap<LearnerId, LearnerRecord>,
    pub items: BTreeMap<QuestionId, ItemState>,
}

fn corrupt(event: &LogEvent, what: impl std::fmt::Display) -> EngineError {
    EngineError::CorruptLog(format!(
        "{:?} event for {} at {}: {what}",
        event.kind(),
        event.learner_id,
        event.timestamp
    ))
}

fn level_after(attempt: &AttemptRecord, transition: Transition, current: Level) -> Level {
    match transition {
        Transition::Promote => attempt.level.next().unwrap_or(attempt.level),
        Transition::Demote => attempt.level.previous().unwrap_or(attempt.level),
        Transition::Stay => current,
    }
}

#[allow(clippy::too_many_arguments)]
fn submit_reply(
    attempt: &AttemptRecord,
    transition: Transition,
    completes_concept: bool,
    missing_logic: bool,
    feedback: &FeedbackDocument,
    current_level: Level,
    random: bool,
) -> SubmitReply {
    SubmitReply {
        question_id: attempt.question_id,
        feedback: feedback.clone(),
        missing_logic,
        transition: (!random).then_some(transition),
        level: (!random).then(|| level_after(attempt, transition, current_level)),
        concept_completed: completes_concept,
    }
}

fn record_attempt(state: &mut EngineState, lid: &LearnerId, concept: &ConceptId, attempt: &AttemptRecord) -> bool {
    let Some(rec) = state.learners.get_mut(lid) else {
        return false;
    };
    let Some(ls) = rec.concepts.get_mut(concept) else {
        return false;
    };
    ls.set_skill(attempt.level, attempt.skill_after);
    ls.record(attempt.question_id, attempt.kind);
    rec.assignment = None;
    let item = state
        .items
        .entry(attempt.question_id)
        .or_insert_with(|| ItemState::new(attempt.question_id));
    item.difficulty = attempt.difficulty_after;
    item.attempt_count += 1;
    true
}

/// Applies one logged event. Fails on events inconsistent with the state,
/// including timestamps that go backwards for a learner.
pub fn apply_event(state: &mut EngineState, event: &LogEvent) -> Result<(), EngineError> {
    let lid = &event.learner_id;
    if let EventPayload::QuestionnaireAnswered {
        has_programming_experience,
        language,
        group_mode,
    } = &event.payload
    {
        if state.learners.contains_key(lid) {
            return Err(corrupt(event, "learner registered twice"));
        }
        state.learners.insert(
            lid.clone(),
            LearnerRecord {
                profile: LearnerProfile {
                    learner_id: lid.clone(),
                    has_programming_experience: *has_programming_experience,
                    language: language.clone(),
                    group_mode: *group_mode,
                },
                concepts: BTreeMap::new(),
                current_concept: None,
                assignment: None,
                draws: BTreeMap::new(),
                requests: BTreeMap::new(),
                last_timestamp: event.timestamp,
            },
        );
        return Ok(());
    }

    let rec = state
        .learners
        .get_mut(lid)
        .ok_or_else(|| corrupt(event, "unknown learner"))?;
    if event.timestamp < rec.last_timestamp {
        return Err(corrupt(event, "timestamp goes backwards"));
    }
    rec.last_timestamp = event.timestamp;
    let concept = event.payload.concept().expect("non-questionnaire events name a concept");
    if let EventPayload::ConceptSelected { .. } = &event.payload {
        let language = rec.profile.language.clone();
        rec.concepts
            .entry(concept.clone())
            .or_insert_with(|| LearnerState::new(lid.clone(), language, concept.clone()));
        rec.current_concept = Some(concept.clone());
        return Ok(());
    }
    let random = rec.profile.group_mode.is_random();
    let ls = rec
        .concepts
        .get_mut(concept)
        .ok_or_else(|| corrupt(event, format!("concept {concept} never selected")))?;

    match &event.payload {
        EventPayload::QuestionnaireAnswered { .. } | EventPayload::ConceptSelected { .. } => unreachable!(),
        EventPayload::PretestScored {
            correct,
            total,
            score,
            level,
            request_id,
            ..
        } => {
            if ls.pretest_done {
                return Err(corrupt(event, "placement already scored"));
            }
            ls.place(*level);
            if let Some(id) = request_id {
                let result = PretestResult {
                    concept: concept.clone(),
                    correct: *correct,
                    total: *total,
                    score: *score,
                    level: (!random).then_some(*level),
                };
                rec.requests.insert(id.clone(), CachedReply::Pretest(result));
            }
        }
        EventPayload::ExerciseAssigned {
            question_id,
            level,
            reentry,
            readmitted,
            ..
        } => {
            ls.readmit(readmitted);
            *rec.draws.entry(concept.clone()).or_default() += 1;
            rec.current_concept = Some(concept.clone());
            rec.assignment = Some(Assignment {
                concept: concept.clone(),
                question_id: *question_id,
                level: *level,
                reentry: *reentry,
            });
        }
        EventPayload::Submitted {
            attempt,
            transition,
            completes_concept,
            missing_logic,
            feedback,
            request_id,
            ..
        } => {
            check_assigned(event, rec.assignment.as_ref(), concept, attempt)?;
            let reply = submit_reply(
                attempt,
                *transition,
                *completes_concept,
                *missing_logic,
                feedback,
                ls.current_level,
                random,
            );
            if let Some(id) = request_id {
                rec.requests.insert(id.clone(), CachedReply::Submitted(reply));
            }
            let concept = concept.clone();
            let attempt = *attempt;
            record_attempt(state, lid, &concept, &attempt);
        }
        EventPayload::Skipped {
            attempt, request_id, ..
        } => {
            check_assigned(event, rec.assignment.as_ref(), concept, attempt)?;
            if let Some(id) = request_id {
                rec.requests.insert(
                    id.clone(),
                    CachedReply::Skipped {
                        question_id: attempt.question_id,
                    },
                );
            }
            let concept = concept.clone();
            let attempt = *attempt;
            record_attempt(state, lid, &concept, &attempt);
        }
        EventPayload::Promoted { from, to, .. } => {
            if ls.current_level != *from {
                return Err(corrupt(event, "promotion from a level the learner is not at"));
            }
            ls.promote(*to);
        }
        EventPayload::Demoted {
            from,
            to,
            retained_skill,
            ..
        } => {
            if ls.current_level != *from {
                return Err(corrupt(event, "demotion from a level the learner is not at"));
            }
            ls.demote(*to, *retained_skill);
        }
        EventPayload::ConceptCompleted { .. } => ls.complete(),
    }
    Ok(())
}

fn check_assigned(
    event: &LogEvent,
    assignment: Option<&Assignment>,
    concept: &ConceptId,
    attempt: &AttemptRecord,
) -> Result<(), EngineError> {
    match assignment {
        Some(a) if a.question_id == attempt.question_id && &a.concept == concept => Ok(()),
        _ => Err(corrupt(event, format!("question {} was not assigned", attempt.question_id))),
    }
}

/// Per-draw seed for random assignment, stable across restarts.
pub fn draw_seed(seed: u64, learner: &LearnerId, concept: &ConceptId, draw: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(learner.as_str().as_bytes());
    h.update([0]);
    h.update(concept.as_str().as_bytes());
    h.update([0]);
    h.update(draw.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 has 32 bytes"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExerciseView {
    pub question_id: QuestionId,
    pub concept: ConceptId,
    pub language: String,
    pub prompt_en: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_th: Option<String>,
    /// Stdin of every test case, in order. Transcripts are submitted in
    /// the same order.
    pub inputs: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<TestCase>,
    pub hints: Vec<HintItem>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<Level>,
    pub reentry: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "to", rename_all = "snake_case")]
pub enum Redirect {
    Completion { concept: ConceptId },
    PoolExhausted { concept: ConceptId },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub learner_id: LearnerId,
    pub language: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recommended_concept: Option<ConceptId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current_concept: Option<ConceptId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<Level>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exercise: Option<ExerciseView>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub redirect: Option<Redirect>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptProgress {
    pub id: ConceptId,
    pub display_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<ConceptId>,
    pub status: ConceptStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretestItem {
    pub question_id: QuestionId,
    pub prompt_en: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_th: Option<String>,
    pub inputs: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "next", rename_all = "snake_case")]
pub enum Selection {
    Pretest {
        concept: ConceptId,
        questions: Vec<PretestItem>,
    },
    Practice {
        concept: ConceptId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        level: Option<Level>,
    },
    Completed {
        concept: ConceptId,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretestAnswer {
    pub question_id: QuestionId,
    #[serde(flatten)]
    pub submission: Submission,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretestResult {
    pub concept: ConceptId,
    pub correct: usize,
    pub total: usize,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<Level>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionSummary {
    pub question_id: QuestionId,
    pub prompt_en: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<Level>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionPage {
    pub concept: ConceptId,
    pub suggestions: Vec<ConceptId>,
    pub never_tried: Vec<QuestionSummary>,
    pub incomplete: Vec<QuestionSummary>,
}

pub struct Engine {
    graph: Arc<ConceptGraph>,
    bank: Arc<QuestionBank>,
    config: EngineConfig,
    clock: Box<dyn Clock>,
    state: EngineState,
    pending: Vec<LogEvent>,
    event_count: u64,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("config", &self.config)
            .field("learners", &self.state.learners.len())
            .field("event_count", &self.event_count)
            .finish()
    }
}

impl Engine {
    pub fn new(
        graph: Arc<ConceptGraph>,
        bank: Arc<QuestionBank>,
        config: EngineConfig,
        clock: Box<dyn Clock>,
    ) -> Self {
        Self::restore(graph, bank, config, clock, EngineState::default(), 0)
    }

    /// Resumes from a previously saved state covering `event_count` events.
    pub fn restore(
        graph: Arc<ConceptGraph>,
        bank: Arc<QuestionBank>,
        config: EngineConfig,
        clock: Box<dyn Clock>,
        state: EngineState,
        event_count: u64,
    ) -> Self {
        Self {
            graph,
            bank,
            config,
            clock,
            state,
            pending: Vec::new(),
            event_count,
        }
    }

    /// Rebuilds an engine from a log.
    pub fn replay<'a>(
        graph: Arc<ConceptGraph>,
        bank: Arc<QuestionBank>,
        config: EngineConfig,
        clock: Box<dyn Clock>,
        events: impl IntoIterator<Item = &'a LogEvent>,
    ) -> Result<Self, EngineError> {
        let mut engine = Self::new(graph, bank, config, clock);
        for event in events {
            engine.apply_logged(event)?;
        }
        Ok(engine)
    }

    /// Applies an event read from storage. It is not queued for writing.
    pub fn apply_logged(&mut self, event: &LogEvent) -> Result<(), EngineError> {
        apply_event(&mut self.state, event)?;
        self.event_count += 1;
        Ok(())
    }

    pub fn state(&self) -> &EngineState {
        &self.state
    }

    pub fn graph(&self) -> &Arc<ConceptGraph> {
        &self.graph
    }

    pub fn bank(&self) -> &Arc<QuestionBank> {
        &self.bank
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn event_count(&self) -> u64 {
        self.event_count
    }

    /// Events recorded since the last call, oldest first.
    pub fn take_events(&mut self) -> Vec<LogEvent> {
        std::mem::take(&mut self.pending)
    }

    pub fn learner(&self, learner: &LearnerId) -> Result<&LearnerRecord, EngineError> {
        self.state
            .learners
            .get(learner)
            .ok_or_else(|| EngineError::UnknownLearner(learner.clone()))
    }

    pub fn item(&self, question: QuestionId) -> ItemState {
        self.state
            .items
            .get(&question)
            .cloned()
            .unwrap_or_else(|| ItemState::new(question))
    }

    fn emit(&mut self, learner: &LearnerId, payload: EventPayload) -> Result<(), EngineError> {
        let now = self.clock.now();
        let timestamp = match self.state.learners.get(learner) {
            Some(rec) if rec.last_timestamp > now => rec.last_timestamp,
            _ => now,
        };
        let event = LogEvent {
            timestamp,
            learner_id: learner.clone(),
            payload,
        };
        apply_event(&mut self.state, &event)?;
        self.pending.push(event);
        self.event_count += 1;
        Ok(())
    }

    fn concept_for(&self, rec: &LearnerRecord, concept: &ConceptId) -> Result<(), EngineError> {
        match self.graph.get(concept) {
            Some(c) if c.applies_to(&rec.profile.language) => Ok(()),
            _ => Err(EngineError::UnknownConcept(concept.clone())),
        }
    }

    fn question(&self, id: QuestionId) -> Result<&Question, EngineError> {
        self.bank.get(id).ok_or(EngineError::UnknownQuestion(id))
    }

    /// Learning rates for a concept, from its per-level pool sizes.
    pub fn rates(&self, language: &str, concept: &ConceptId) -> LevelRates {
        LevelRates::from_counts(|level| self.bank.pool(language, concept, Some(level)).len())
    }

    /// Registers a learner with the configured group mode. Repeat visits
    /// return the existing session without recording anything.
    pub fn start_session(&mut self, learner: &LearnerId, answers: &Questionnaire) -> Result<SessionView, EngineError> {
        let mode = self.config.mode;
        self.start_session_in(learner, answers, mode)
    }

    pub fn start_session_in(
        &mut self,
        learner: &LearnerId,
        answers: &Questionnaire,
        mode: AssignmentMode,
    ) -> Result<SessionView, EngineError> {
        if self.state.learners.contains_key(learner) {
            return self.view(learner);
        }
        if self.graph.concepts_for(&answers.language).next().is_none() {
            return Err(EngineError::UnknownLanguage(answers.language.clone()));
        }
        self.emit(
            learner,
            EventPayload::QuestionnaireAnswered {
                has_programming_experience: answers.has_programming_experience,
                language: answers.language.clone(),
                group_mode: mode,
            },
        )?;
        self.view(learner)
    }

    fn recommendation(&self, profile: &LearnerProfile) -> Option<ConceptId> {
        if profile.has_programming_experience {
            return None;
        }
        if let Some(c) = &self.config.recommended_concept {
            return Some(c.clone());
        }
        self.graph
            .roots()
            .iter()
            .find(|id| self.graph.get(id).is_some_and(|c| c.applies_to(&profile.language)))
            .cloned()
    }

    fn exercise_view(&self, rec: &LearnerRecord, a: &Assignment) -> Result<ExerciseView, EngineError> {
        let q = self.question(a.question_id)?;
        Ok(ExerciseView {
            question_id: q.id,
            concept: a.concept.clone(),
            language: q.language.clone(),
            prompt_en: q.prompt_en.clone(),
            prompt_th: q.prompt_th.clone(),
            inputs: q.test_cases.iter().map(|c| c.stdin.clone()).collect(),
            sample: q.test_cases.first().cloned(),
            hints: ontology::hint_list(q, &self.graph, &a.concept)?,
            level: (!rec.profile.group_mode.is_random()).then_some(q.level),
            reentry: a.reentry,
        })
    }

    /// Current session view: selected concept, level and assigned exercise.
    pub fn view(&self, learner: &LearnerId) -> Result<SessionView, EngineError> {
        let rec = self.learner(learner)?;
        let random = rec.profile.group_mode.is_random();
        let level = rec
            .current_concept
            .as_ref()
            .and_then(|c| rec.concepts.get(c))
            .filter(|s| !random && s.pretest_done)
            .map(|s| s.current_level);
        let exercise = match &rec.assignment {
            Some(a) => Some(self.exercise_view(rec, a)?),
            None => None,
        };
        Ok(SessionView {
            learner_id: learner.clone(),
            language: rec.profile.language.clone(),
            recommended_concept: self.recommendation(&rec.profile),
            current_concept: rec.current_concept.clone(),
            level,
            exercise,
            redirect: None,
        })
    }

    pub fn statuses(&self, learner: &LearnerId) -> Result<BTreeMap<ConceptId, ConceptStatus>, EngineError> {
        let rec = self.learner(learner)?;
        Ok(self
            .graph
            .concepts_for(&rec.profile.language)
            .map(|c| {
                let status = match rec.concepts.get(&c.id) {
                    Some(s) if s.completed => ConceptStatus::Complete,
                    Some(_) => ConceptStatus::InProgress,
                    None => ConceptStatus::NotStarted,
                };
                (c.id.clone(), status)
            })
            .collect())
    }

    /// Concept tree for a learner's language, in document order.
    pub fn concept_overview(&self, learner: &LearnerId) -> Result<Vec<ConceptProgress>, EngineError> {
        let statuses = self.statuses(learner)?;
        let language = self.learner(learner)?.profile.language.clone();
        Ok(self
            .graph
            .concepts_for(&language)
            .map(|c| ConceptProgress {
                id: c.id.clone(),
                display_name: c.display_name.clone(),
                parent: c.parent.clone(),
                status: statuses[&c.id],
            })
            .collect())
    }

    pub fn select_concept(&mut self, learner: &LearnerId, concept: &ConceptId) -> Result<Selection, EngineError> {
        let rec = self.learner(learner)?;
        self.concept_for(rec, concept)?;
        let first_time = !rec.concepts.contains_key(concept);
        self.emit(
            learner,
            EventPayload::ConceptSelected {
                concept: concept.clone(),
                first_time,
            },
        )?;
        let rec = self.learner(learner)?;
        let state = &rec.concepts[concept];
        if state.completed {
            return Ok(Selection::Completed {
                concept: concept.clone(),
            });
        }
        if !state.pretest_done {
            let questions = self
                .bank
                .pretests(&rec.profile.language, concept)
                .into_iter()
                .map(|q| PretestItem {
                    question_id: q.id,
                    prompt_en: q.prompt_en.clone(),
                    prompt_th: q.prompt_th.clone(),
                    inputs: q.test_cases.iter().map(|c| c.stdin.clone()).collect(),
                })
                .collect();
            return Ok(Selection::Pretest {
                concept: concept.clone(),
                questions,
            });
        }
        Ok(Selection::Practice {
            concept: concept.clone(),
            level: (!rec.profile.group_mode.is_random()).then_some(state.current_level),
        })
    }

    /// Scores the placement test. Only the concept's pretest questions
    /// count; a concept without pretest questions places at Easy.
    pub fn submit_pretest(
        &mut self,
        learner: &LearnerId,
        concept: &ConceptId,
        answers: &[PretestAnswer],
        request_id: Option<&str>,
    ) -> Result<PretestResult, EngineError> {
        let rec = self.learner(learner)?;
        if let Some(id) = request_id {
            match rec.requests.get(id) {
                Some(CachedReply::Pretest(r)) if &r.concept == concept => return Ok(r.clone()),
                Some(_) => return Err(EngineError::DuplicateRequest(id.to_string())),
                None => {}
            }
        }
        self.concept_for(rec, concept)?;
        let state = rec
            .concepts
            .get(concept)
            .ok_or_else(|| EngineError::ConceptNotSelected(concept.clone()))?;
        if state.pretest_done {
            return Err(EngineError::NoPretestPending(concept.clone()));
        }
        let random = rec.profile.group_mode.is_random();
        let pretests = self.bank.pretests(&rec.profile.language, concept);
        let mut correct = 0;
        for q in &pretests {
            if let Some(answer) = answers.iter().find(|a| a.question_id == q.id) {
                if grading::grade(&answer.submission, q, None, &self.config.compare)?.all_correct {
                    correct += 1;
                }
            }
        }
        let total = pretests.len();
        let score = if total == 0 { 0.0 } else { correct as f64 / total as f64 };
        let level = self.config.bands.level(score);
        self.emit(
            learner,
            EventPayload::PretestScored {
                concept: concept.clone(),
                correct,
                total,
                score,
                level,
                request_id: request_id.map(str::to_string),
            },
        )?;
        Ok(PretestResult {
            concept: concept.clone(),
            correct,
            total,
            score,
            level: (!random).then_some(level),
        })
    }

    fn completion_redirect(&self, learner: &LearnerId, redirect: Redirect) -> Result<SessionView, EngineError> {
        let mut view = self.view(learner)?;
        view.redirect = Some(redirect);
        Ok(view)
    }

    /// Assigns the next exercise for `concept`, or returns the current one
    /// if it is still open.
    pub fn request_exercise(&mut self, learner: &LearnerId, concept: &ConceptId) -> Result<SessionView, EngineError> {
        let rec = self.learner(learner)?;
        self.concept_for(rec, concept)?;
        let state = rec
            .concepts
            .get(concept)
            .ok_or_else(|| EngineError::ConceptNotSelected(concept.clone()))?;
        if rec.assignment.as_ref().is_some_and(|a| &a.concept == concept) {
            return self.view(learner);
        }
        if state.completed {
            return self.completion_redirect(
                learner,
                Redirect::Completion {
                    concept: concept.clone(),
                },
            );
        }
        let language = rec.profile.language.as_str();
        let (question_id, readmitted) = match rec.profile.group_mode {
            AssignmentMode::Adaptive => {
                if !state.pretest_done {
                    return Err(EngineError::PretestPending(concept.clone()));
                }
                let pool = self.bank.pool(language, concept, Some(state.current_level));
                match scheduler::next_question_adaptive(state, &self.state.items, &pool) {
                    Ok(q) => (q, Vec::new()),
                    Err(SchedulerError::PoolExhausted) => {
                        let readmitted = state.skipped_in(&pool);
                        if readmitted.is_empty() {
                            return Err(EngineError::PoolExhausted(concept.clone()));
                        }
                        let mut recycled = state.clone();
                        recycled.readmit(&readmitted);
                        (
                            scheduler::next_question_adaptive(&recycled, &self.state.items, &pool)?,
                            readmitted,
                        )
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            AssignmentMode::Random { seed } => {
                let pool = self.bank.pool(language, concept, None);
                let draw = rec.draws.get(concept).copied().unwrap_or(0);
                let q = scheduler::next_question_random(state, &pool, draw_seed(seed, learner, concept, draw))
                    .map_err(|_| EngineError::PoolExhausted(concept.clone()))?;
                (q, Vec::new())
            }
        };
        let level = self.question(question_id)?.level;
        self.emit(
            learner,
            EventPayload::ExerciseAssigned {
                concept: concept.clone(),
                question_id,
                level,
                reentry: false,
                readmitted,
            },
        )?;
        self.view(learner)
    }

    fn open_assignment(&self, rec: &LearnerRecord, question: QuestionId) -> Result<Assignment, EngineError> {
        rec.assignment
            .clone()
            .filter(|a| a.question_id == question)
            .ok_or(EngineError::NotAssigned(question))
    }

    fn emit_level_events(
        &mut self,
        learner: &LearnerId,
        concept: &ConceptId,
        events: &[LevelEvent],
    ) -> Result<(), EngineError> {
        for ev in events {
            let payload = match *ev {
                LevelEvent::Promoted { from, to } => EventPayload::Promoted {
                    concept: concept.clone(),
                    from,
                    to,
                },
                LevelEvent::Demoted { from, to, retained } => EventPayload::Demoted {
                    concept: concept.clone(),
                    from,
                    to,
                    retained_skill: retained,
                },
                LevelEvent::ConceptCompleted => EventPayload::ConceptCompleted {
                    concept: concept.clone(),
                },
            };
            self.emit(learner, payload)?;
        }
        Ok(())
    }

    /// Grades a submission for the assigned question and updates ratings.
    /// Retrying with the same `request_id` returns the first reply.
    pub fn submit_code(
        &mut self,
        learner: &LearnerId,
        question_id: QuestionId,
        submission: &Submission,
        request_id: Option<&str>,
    ) -> Result<SubmitReply, EngineError> {
        let rec = self.learner(learner)?;
        if let Some(id) = request_id {
            match rec.requests.get(id) {
                Some(CachedReply::Submitted(reply)) if reply.question_id == question_id => return Ok(reply.clone()),
                Some(_) => return Err(EngineError::DuplicateRequest(id.to_string())),
                None => {}
            }
        }
        let assignment = self.open_assignment(rec, question_id)?;
        let concept = assignment.concept.clone();
        let random = rec.profile.group_mode.is_random();
        let state = rec.concepts[&concept].clone();
        let bank = Arc::clone(&self.bank);
        let question = bank.get(question_id).ok_or(EngineError::UnknownQuestion(question_id))?;

        let report = grading::grade(submission, question, None, &self.config.compare)?;
        let missing_logic = grading::detect_missing_logic(&submission.source, question, &self.graph, &report)?;
        let feedback = grading::render_feedback(&report);

        let progression = if random || assignment.reentry || state.completed {
            Progression::Free
        } else {
            Progression::Adaptive
        };
        let rates = self.rates(&state.language, &concept);
        let applied = scheduler::apply_outcome(
            &state,
            &self.item(question_id),
            &Attempt {
                question,
                rates: &rates,
                progression,
                threshold: self.config.threshold,
            },
            Outcome::from_correct(report.all_correct),
        )?;
        let completes_random = random
            && !state.completed
            && scheduler::concept_complete_random(&applied.state, bank.pool(&state.language, &concept, None).len());
        let completes_concept = completes_random || applied.events.contains(&LevelEvent::ConceptCompleted);

        let reply = submit_reply(
            &applied.record,
            applied.transition,
            completes_concept,
            missing_logic,
            &feedback,
            state.current_level,
            random,
        );
        self.emit(
            learner,
            EventPayload::Submitted {
                concept: concept.clone(),
                attempt: applied.record,
                transition: applied.transition,
                completes_concept,
                all_correct: report.all_correct,
                missing_logic,
                execution_failures: submission
                    .outputs
                    .as_ref()
                    .map_or(0, |o| o.iter().filter(|c| c.is_none()).count())
                    + report.execution_failures(),
                feedback,
                source: submission.source.clone(),
                elapsed_seconds: submission.elapsed_seconds,
                request_id: request_id.map(str::to_string),
            },
        )?;
        self.emit_level_events(learner, &concept, &applied.events)?;
        if completes_random {
            self.emit(
                learner,
                EventPayload::ConceptCompleted {
                    concept: concept.clone(),
                },
            )?;
        }
        debug_assert_eq!(
            {
                let mut expected = applied.state.clone();
                if completes_random {
                    expected.complete();
                }
                expected
            },
            self.state.learners[learner].concepts[&concept]
        );
        Ok(reply)
    }

    /// Skips the assigned question (rated as incorrect) and assigns the next
    /// one. When nothing is left the view redirects instead.
    pub fn skip_exercise(
        &mut self,
        learner: &LearnerId,
        question_id: QuestionId,
        request_id: Option<&str>,
    ) -> Result<SessionView, EngineError> {
        let rec = self.learner(learner)?;
        if let Some(id) = request_id {
            match rec.requests.get(id) {
                Some(CachedReply::Skipped { question_id: q }) if *q == question_id => return self.view(learner),
                Some(_) => return Err(EngineError::DuplicateRequest(id.to_string())),
                None => {}
            }
        }
        let assignment = self.open_assignment(rec, question_id)?;
        let concept = assignment.concept.clone();
        let random = rec.profile.group_mode.is_random();
        let state = rec.concepts[&concept].clone();
        let bank = Arc::clone(&self.bank);
        let question = bank.get(question_id).ok_or(EngineError::UnknownQuestion(question_id))?;
        let progression = if random || assignment.reentry || state.completed {
            Progression::Free
        } else {
            Progression::Adaptive
        };
        let rates = self.rates(&state.language, &concept);
        let applied = scheduler::apply_skip(
            &state,
            &self.item(question_id),
            &Attempt {
                question,
                rates: &rates,
                progression,
                threshold: self.config.threshold,
            },
        )?;
        debug_assert_eq!(applied.record.kind, AttemptKind::Skipped);
        self.emit(
            learner,
            EventPayload::Skipped {
                concept: concept.clone(),
                attempt: applied.record,
                transition: applied.transition,
                request_id: request_id.map(str::to_string),
            },
        )?;
        self.emit_level_events(learner, &concept, &applied.events)?;
        match self.request_exercise(learner, &concept) {
            Err(EngineError::PoolExhausted(c)) => self.completion_redirect(learner, Redirect::PoolExhausted { concept: c }),
            other => other,
        }
    }

    fn summaries(&self, ids: &[QuestionId], random: bool) -> Vec<QuestionSummary> {
        ids.iter()
            .filter_map(|id| self.bank.get(*id))
            .map(|q| QuestionSummary {
                question_id: q.id,
                prompt_en: q.prompt_en.clone(),
                level: (!random).then_some(q.level),
            })
            .collect()
    }

    /// Suggested next concepts plus never-tried and unfinished questions of
    /// a completed concept.
    pub fn completion_page(&self, learner: &LearnerId, concept: &ConceptId) -> Result<CompletionPage, EngineError> {
        let rec = self.learner(learner)?;
        self.concept_for(rec, concept)?;
        let state = rec
            .concepts
            .get(concept)
            .filter(|s| s.completed)
            .ok_or_else(|| EngineError::ConceptNotComplete(concept.clone()))?;
        let language = &rec.profile.language;
        let practice: Vec<Question> = self.bank.for_language(language).cloned().collect();
        let progress = self.statuses(learner)?;
        let suggestions = ontology::suggest_next(&self.graph, &practice, concept, &progress)?;
        let pool = self.bank.pool(language, concept, None);
        let (never_tried, incomplete) = scheduler::completion_lists(state, &pool);
        let random = rec.profile.group_mode.is_random();
        Ok(CompletionPage {
            concept: concept.clone(),
            suggestions,
            never_tried: self.summaries(&never_tried, random),
            incomplete: self.summaries(&incomplete, random),
        })
    }

    /// Reopens practice on a completed concept with `question`, or a random
    /// never-tried or unfinished one. Re-entry attempts update ratings but
    /// never change levels.
    pub fn reenter(
        &mut self,
        learner: &LearnerId,
        concept: &ConceptId,
        question: Option<QuestionId>,
    ) -> Result<SessionView, EngineError> {
        let rec = self.learner(learner)?;
        self.concept_for(rec, concept)?;
        let state = rec
            .concepts
            .get(concept)
            .filter(|s| s.completed)
            .ok_or_else(|| EngineError::ConceptNotComplete(concept.clone()))?;
        if let Some(a) = &rec.assignment {
            if a.reentry && &a.concept == concept && question.is_none_or(|q| q == a.question_id) {
                return self.view(learner);
            }
        }
        let pool = self.bank.pool(&rec.profile.language, concept, None);
        let question_id = match question {
            Some(q) if pool.contains(&q) => q,
            Some(q) => return Err(EngineError::UnknownQuestion(q)),
            None => {
                let (mut candidates, incomplete) = scheduler::completion_lists(state, &pool);
                candidates.extend(incomplete.into_iter().filter(|q| pool.contains(q)));
                let seed = match rec.profile.group_mode {
                    AssignmentMode::Random { seed } => seed,
                    AssignmentMode::Adaptive => 0,
                };
                let draw = rec.draws.get(concept).copied().unwrap_or(0);
                scheduler::next_question_random(state, &candidates, draw_seed(seed, learner, concept, draw))
                    .map_err(|_| EngineError::PoolExhausted(concept.clone()))?
            }
        };
        let level = self.question(question_id)?.level;
        self.emit(
            learner,
            EventPayload::ExerciseAssigned {
                concept: concept.clone(),
                question_id,
                level,
                reentry: true,
                readmitted: Vec::new(),
            },
        )?;
        self.view(learner)
    }
}
