//! Synthetic learners.
//!
//! Used to check progression counts of the rating model, to watch item
//! difficulties converge, and to generate cohort logs for analytics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bank::{Level, Question, QuestionBank, QuestionId, TestCase};
use crate::events::{EventPayload, LogEvent};
use crate::grading::Submission;
use crate::ontology::ConceptId;
use crate::rating::{self, Difficulty, LearningRate, Outcome, Skill, Transition, MASTERY_THRESHOLD};
use crate::scheduler::{
    self, AssignmentMode, Attempt, AttemptKind, ItemState, LearnerId, LearnerState, LevelRates, Progression,
};
use crate::session::{Engine, EngineError, PretestAnswer, Questionnaire, Selection};

/// Safety cap for [`steps_to_threshold`].
pub const STEP_CAP: u32 = 10_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("threshold {threshold} not reached with k = {k} within {cap} steps")]
    NonTerminating { k: f64, threshold: f64, cap: u32 },
    #[error("invalid learner policy: {0}")]
    InvalidPolicy(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum LearnerPolicy {
    AlwaysCorrect,
    AlwaysIncorrect,
    Bernoulli { p: f64 },
    /// Correct with probability `1 / (1 + e^-(true_ability - latent difficulty))`.
    Logistic { true_ability: f64 },
}

impl LearnerPolicy {
    pub fn validate(self) -> Result<Self, SimError> {
        match self {
            LearnerPolicy::Bernoulli { p } if !(0.0..=1.0).contains(&p) => {
                Err(SimError::InvalidPolicy(format!("p = {p} is outside [0, 1]")))
            }
            LearnerPolicy::Logistic { true_ability } if !true_ability.is_finite() => {
                Err(SimError::InvalidPolicy("true ability must be finite".into()))
            }
            p => Ok(p),
        }
    }

    pub fn answers_correctly<R: Rng>(self, latent_difficulty: f64, rng: &mut R) -> bool {
        match self {
            LearnerPolicy::AlwaysCorrect => true,
            LearnerPolicy::AlwaysIncorrect => false,
            LearnerPolicy::Bernoulli { p } => rng.random_bool(p),
            LearnerPolicy::Logistic { true_ability } => {
                rng.random::<f64>() < rating::probability_correct(true_ability, latent_difficulty)
            }
        }
    }
}

impl fmt::Display for LearnerPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LearnerPolicy::AlwaysCorrect => f.write_str("always-correct"),
            LearnerPolicy::AlwaysIncorrect => f.write_str("always-incorrect"),
            LearnerPolicy::Bernoulli { p } => write!(f, "bernoulli:{p}"),
            LearnerPolicy::Logistic { true_ability } => write!(f, "logistic:{true_ability}"),
        }
    }
}

impl FromStr for LearnerPolicy {
    type Err = SimError;

    /// `always-correct`, `always-incorrect`, `bernoulli:<p>` or `logistic:<ability>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SimError::InvalidPolicy(s.to_string());
        let policy = match s.split_once(':') {
            None if s == "always-correct" => LearnerPolicy::AlwaysCorrect,
            None if s == "always-incorrect" => LearnerPolicy::AlwaysIncorrect,
            Some(("bernoulli", p)) => LearnerPolicy::Bernoulli {
                p: p.parse().map_err(|_| bad())?,
            },
            Some(("logistic", a)) => LearnerPolicy::Logistic {
                true_ability: a.parse().map_err(|_| bad())?,
            },
            _ => return Err(bad()),
        };
        policy.validate()
    }
}

/// Latent difficulty used by logistic learners for a question level.
pub fn latent_difficulty(level: Level) -> f64 {
    match level {
        Level::Easy => 0.0,
        Level::Standard => 0.5,
        Level::Difficult => 1.0,
    }
}

/// Correct answers needed to reach `threshold` from zero skill when every
/// question is fresh (difficulty 0).
pub fn steps_to_threshold(k: LearningRate, threshold: f64) -> Result<u32, SimError> {
    let mut skill = Skill::ZERO;
    for step in 0..=STEP_CAP {
        if skill.value() >= threshold {
            return Ok(step);
        }
        skill = rating::update(skill, Difficulty::ZERO, k, Outcome::Correct).0;
    }
    Err(SimError::NonTerminating {
        k: k.value(),
        threshold,
        cap: STEP_CAP,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub question_id: QuestionId,
    pub level: Level,
    pub kind: AttemptKind,
    pub skill_before: Skill,
    pub skill_after: Skill,
    pub difficulty_before: Difficulty,
    pub difficulty_after: Difficulty,
    pub transition: Transition,
}

impl TraceStep {
    pub fn outcome(&self) -> Outcome {
        self.kind.outcome()
    }
}

pub type SimulationTrace = Vec<TraceStep>;

/// One learner answering a stream of fresh questions (difficulty 0) with a
/// fixed rate, moving between levels as the adaptive scheduler would. Stops
/// after `steps` answers or on completing the top level.
pub fn simulate_stream(k: LearningRate, policy: LearnerPolicy, seed: u64, steps: u32) -> SimulationTrace {
    let concept = ConceptId::new("practice");
    let rates = LevelRates::uniform(k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = LearnerState::new(LearnerId::new("sim"), "sim", concept.clone());
    let mut trace = Vec::new();
    for i in 0..steps {
        if state.completed {
            break;
        }
        let question = Question {
            id: QuestionId(i + 1),
            language: "sim".into(),
            level: state.current_level,
            concept_tags: vec![concept.clone()],
            prompt_en: String::new(),
            prompt_th: None,
            test_cases: Vec::new(),
            reference_solution: None,
            pretest: false,
        };
        let correct = policy.answers_correctly(latent_difficulty(question.level), &mut rng);
        let applied = scheduler::apply_outcome(
            &state,
            &ItemState::new(question.id),
            &Attempt {
                question: &question,
                rates: &rates,
                progression: Progression::Adaptive,
                threshold: MASTERY_THRESHOLD,
            },
            Outcome::from_correct(correct),
        )
        .expect("synthetic questions match the learner");
        let r = applied.record;
        trace.push(TraceStep {
            question_id: r.question_id,
            level: r.level,
            kind: r.kind,
            skill_before: r.skill_before,
            skill_after: r.skill_after,
            difficulty_before: r.difficulty_before,
            difficulty_after: r.difficulty_after,
            transition: applied.transition,
        });
        state = applied.state;
    }
    trace
}

/// Difficulty of one item after each of `trials` fresh learners (skill 0)
/// attempts it.
pub fn difficulty_convergence(
    policy: LearnerPolicy,
    k: LearningRate,
    latent_difficulty: f64,
    trials: usize,
    seed: u64,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = Difficulty::ZERO;
    (0..trials)
        .map(|_| {
            let correct = policy.answers_correctly(latent_difficulty, &mut rng);
            d = rating::update(Skill::ZERO, d, k, Outcome::from_correct(correct)).1;
            d.value()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub final_skill: f64,
    pub empirical_rate: f64,
    /// Ability implied by the empirical correct rate, `ln(r / (1 - r))`.
    pub implied_ability: f64,
}

/// A logistic learner answers `items` fresh questions of latent difficulty
/// 0; the rated skill should settle near the ability implied by its
/// observed correct rate.
pub fn calibration_run(true_ability: f64, k: LearningRate, items: usize, seed: u64) -> Calibration {
    let policy = LearnerPolicy::Logistic { true_ability };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut skill = Skill::ZERO;
    let mut correct = 0usize;
    for _ in 0..items {
        let ok = policy.answers_correctly(0.0, &mut rng);
        correct += usize::from(ok);
        skill = rating::update(skill, Difficulty::ZERO, k, Outcome::from_correct(ok)).0;
    }
    let rate = correct as f64 / items.max(1) as f64;
    Calibration {
        final_skill: skill.value(),
        empirical_rate: rate,
        implied_ability: (rate / (1.0 - rate)).ln(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "pretest", rename_all = "snake_case")]
pub enum PretestPolicy {
    /// Answer placement questions with the learner's own policy.
    FollowPolicy,
    /// Answer exactly this many placement questions correctly.
    Fixed { correct: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortConfig {
    pub learners: usize,
    /// Policies assigned to learners in rotation.
    pub policies: Vec<LearnerPolicy>,
    pub mode: AssignmentMode,
    pub seed: u64,
    pub language: String,
    /// Concepts each learner works through in order. Empty means every
    /// concept of the language that has practice questions.
    pub concepts: Vec<ConceptId>,
    pub learner_prefix: String,
    pub skip_probability: f64,
    /// Chance that a failing answer leaves out the concept's syntax.
    pub missing_logic_probability: f64,
    pub pretest: PretestPolicy,
    /// Attempts (submissions and skips) before a learner abandons a concept.
    pub max_attempts_per_concept: usize,
    /// Total submissions for the cohort, split evenly between learners; a
    /// learner's unused share passes to the next one.
    pub submission_budget: Option<usize>,
    /// Keep practising completed concepts through re-entry while budget
    /// remains.
    pub reenter_completed: bool,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            learners: 1,
            policies: vec![LearnerPolicy::Bernoulli { p: 0.6 }],
            mode: AssignmentMode::Adaptive,
            seed: 0,
            language: "python".into(),
            concepts: Vec::new(),
            learner_prefix: "learner".into(),
            skip_probability: 0.1,
            missing_logic_probability: 0.3,
            pretest: PretestPolicy::FollowPolicy,
            max_attempts_per_concept: 40,
            submission_budget: None,
            reenter_completed: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortRun {
    pub events: Vec<LogEvent>,
    pub traces: BTreeMap<LearnerId, SimulationTrace>,
    pub submissions: usize,
}

const WRONG_OUTPUT: &str = "?";

fn transcripts(cases: &[TestCase], correct: bool) -> Vec<Option<Vec<String>>> {
    cases
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if correct || i > 0 {
                Some(c.expected_stdout.clone())
            } else {
                Some(vec![WRONG_OUTPUT.to_string()])
            }
        })
        .collect()
}

fn source_for(question: &Question, correct: bool, missing_logic: bool, markers: &[String]) -> String {
    if let (true, Some(src)) = (correct, &question.reference_solution) {
        return src.clone();
    }
    if missing_logic || markers.is_empty() {
        "print(input())\n".to_string()
    } else {
        format!("x = input()\n{} x:\n    print(x)\n", markers[0])
    }
}

fn cohort_concepts(engine: &Engine, config: &CohortConfig) -> Vec<ConceptId> {
    if !config.concepts.is_empty() {
        return config.concepts.clone();
    }
    engine
        .graph()
        .concepts_for(&config.language)
        .filter(|c| !engine.bank().pool(&config.language, &c.id, None).is_empty())
        .map(|c| c.id.clone())
        .collect()
}

struct LearnerRun<'a> {
    engine: &'a mut Engine,
    config: &'a CohortConfig,
    bank: Arc<QuestionBank>,
    learner: LearnerId,
    policy: LearnerPolicy,
    quota: usize,
    submitted: usize,
    requests: usize,
}

impl LearnerRun<'_> {
    fn budget_left(&self) -> bool {
        self.submitted < self.quota
    }

    fn markers(&self, question: &Question) -> Vec<String> {
        question
            .concept_tags
            .iter()
            .filter_map(|t| self.engine.graph().get(t))
            .flat_map(|c| c.markers_for(&question.language).to_vec())
            .collect()
    }

    fn take_pretest<R: Rng>(&mut self, concept: &ConceptId, rng: &mut R) -> Result<(), SimError> {
        let pretests: Vec<Question> = self
            .bank
            .pretests(&self.config.language, concept)
            .into_iter()
            .cloned()
            .collect();
        let answers: Vec<PretestAnswer> = pretests
            .iter()
            .enumerate()
            .map(|(i, q)| {
                let correct = match self.config.pretest {
                    PretestPolicy::FollowPolicy => self.policy.answers_correctly(latent_difficulty(q.level), rng),
                    PretestPolicy::Fixed { correct } => i < correct,
                };
                PretestAnswer {
                    question_id: q.id,
                    submission: Submission {
                        source: source_for(q, correct, false, &self.markers(q)),
                        outputs: Some(transcripts(&q.test_cases, correct)),
                        elapsed_seconds: None,
                    },
                }
            })
            .collect();
        self.engine.submit_pretest(&self.learner, concept, &answers, None)?;
        Ok(())
    }

    /// Answers the assigned question. Returns whether the concept completed.
    fn answer<R: Rng>(&mut self, question_id: QuestionId, rng: &mut R) -> Result<bool, SimError> {
        let question = self.bank.get(question_id).expect("assigned questions exist").clone();
        let correct = self.policy.answers_correctly(latent_difficulty(question.level), rng);
        let missing = !correct && rng.random_bool(self.config.missing_logic_probability);
        self.requests += 1;
        let request_id = format!("{}-{}", self.learner, self.requests);
        let reply = self.engine.submit_code(
            &self.learner,
            question_id,
            &Submission {
                source: source_for(&question, correct, missing, &self.markers(&question)),
                outputs: Some(transcripts(&question.test_cases, correct)),
                elapsed_seconds: Some(rng.random_range(20.0..600.0)),
            },
            Some(&request_id),
        )?;
        self.submitted += 1;
        Ok(reply.concept_completed)
    }

    fn practise<R: Rng>(&mut self, concept: &ConceptId, rng: &mut R) -> Result<(), SimError> {
        match self.engine.select_concept(&self.learner, concept)? {
            Selection::Completed { .. } => return Ok(()),
            Selection::Pretest { .. } => self.take_pretest(concept, rng)?,
            Selection::Practice { .. } => {}
        }
        let mut attempts = 0;
        while attempts < self.config.max_attempts_per_concept && self.budget_left() {
            let view = match self.engine.request_exercise(&self.learner, concept) {
                Ok(v) => v,
                Err(EngineError::PoolExhausted(_)) => break,
                Err(e) => return Err(e.into()),
            };
            let Some(exercise) = view.exercise else { break };
            attempts += 1;
            if rng.random_bool(self.config.skip_probability) {
                self.requests += 1;
                let request_id = format!("{}-{}", self.learner, self.requests);
                self.engine
                    .skip_exercise(&self.learner, exercise.question_id, Some(&request_id))?;
                continue;
            }
            if self.answer(exercise.question_id, rng)? {
                break;
            }
        }
        Ok(())
    }

    fn revisit<R: Rng>(&mut self, concepts: &[ConceptId], rng: &mut R) -> Result<(), SimError> {
        let mut exhausted = BTreeSet::new();
        while self.budget_left() && exhausted.len() < concepts.len() {
            for concept in concepts {
                if !self.budget_left() {
                    break;
                }
                if exhausted.contains(concept) {
                    continue;
                }
                let done = self
                    .engine
                    .learner(&self.learner)?
                    .concept(concept)
                    .is_some_and(|s| s.completed);
                if !done {
                    exhausted.insert(concept.clone());
                    continue;
                }
                match self.engine.reenter(&self.learner, concept, None) {
                    Ok(view) => {
                        let q = view.exercise.expect("re-entry assigns a question").question_id;
                        self.answer(q, rng)?;
                    }
                    Err(EngineError::PoolExhausted(_)) => {
                        exhausted.insert(concept.clone());
                    }
                    Err(e) => return Err(e.into()),
                }
            }
        }
        Ok(())
    }
}

/// Runs a cohort through `engine` and returns the events it produced
/// (together with any the engine had not handed out yet). Deterministic for
/// a given engine state and config.
pub fn run_cohort(engine: &mut Engine, config: &CohortConfig) -> Result<CohortRun, SimError> {
    if config.policies.is_empty() && config.learners > 0 {
        return Err(SimError::InvalidPolicy("empty policy mix".into()));
    }
    for p in &config.policies {
        p.validate()?;
    }
    let concepts = cohort_concepts(engine, config);
    let bank = Arc::clone(engine.bank());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut submissions = 0;
    let mut carry = 0;
    let mut learners = Vec::new();
    for i in 0..config.learners {
        let learner = LearnerId::new(format!("{}-{:03}", config.learner_prefix, i + 1));
        let quota = match config.submission_budget {
            Some(total) => {
                let share = total / config.learners + usize::from(i < total % config.learners);
                share + std::mem::take(&mut carry)
            }
            None => usize::MAX,
        };
        let answers = Questionnaire {
            has_programming_experience: rng.random_bool(0.5),
            language: config.language.clone(),
        };
        engine.start_session_in(&learner, &answers, config.mode)?;
        let mut run = LearnerRun {
            engine: &mut *engine,
            config,
            bank: Arc::clone(&bank),
            learner: learner.clone(),
            policy: config.policies[i % config.policies.len()],
            quota,
            submitted: 0,
            requests: 0,
        };
        for concept in &concepts {
            if !run.budget_left() {
                break;
            }
            run.practise(concept, &mut rng)?;
        }
        if config.reenter_completed {
            run.revisit(&concepts, &mut rng)?;
        }
        submissions += run.submitted;
        if config.submission_budget.is_some() {
            carry = quota - run.submitted;
        }
        learners.push(learner);
    }
    let events = engine.take_events();
    let mut traces: BTreeMap<LearnerId, SimulationTrace> = learners.into_iter().map(|l| (l, Vec::new())).collect();
    for event in &events {
        let (attempt, transition) = match &event.payload {
            EventPayload::Submitted {
                attempt, transition, ..
            }
            | EventPayload::Skipped {
                attempt, transition, ..
            } => (attempt, *transition),
            _ => continue,
        };
        if let Some(trace) = traces.get_mut(&event.learner_id) {
            trace.push(TraceStep {
                question_id: attempt.question_id,
                level: attempt.level,
                kind: attempt.kind,
                skill_before: attempt.skill_before,
                skill_after: attempt.skill_after,
                difficulty_before: attempt.difficulty_before,
                difficulty_after: attempt.difficulty_after,
                transition,
            });
        }
    }
    Ok(CohortRun {
        events,
        traces,
        submissions,
    })
}

/// Writes a trace as JSON Lines.
pub fn write_trace<W: std::io::Write>(mut out: W, trace: &[TraceStep]) -> std::io::Result<()> {
    for step in trace {
        serde_json::to_writer(&mut out, step)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
