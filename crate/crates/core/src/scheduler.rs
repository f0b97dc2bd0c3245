//! Exercise selection and per-concept learner progression.
//!
//! Adaptive mode serves the question whose difficulty is nearest to the
//! learner's skill at the current level and moves the learner between levels
//! when skill crosses the mastery threshold or falls to zero. Random mode
//! draws uniformly over the whole concept and completes a concept once more
//! than 60% of its questions have been answered correctly.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::bank::Level;
use crate::bank::{Question, QuestionId};
use crate::ontology::ConceptId;
use crate::rating::{self, Difficulty, LearningRate, Outcome, Skill, Transition};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LearnerId(String);

impl LearnerId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for LearnerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for LearnerId {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SchedulerError {
    #[error("no eligible question left in the pool")]
    PoolExhausted,
    #[error("state mismatch: {0}")]
    StateMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum AssignmentMode {
    Adaptive,
    Random { seed: u64 },
}

impl AssignmentMode {
    pub fn is_random(self) -> bool {
        matches!(self, AssignmentMode::Random { .. })
    }
}

/// How an attempt bookkeeps into the learner's question sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttemptKind {
    Correct,
    Incorrect,
    Skipped,
}

impl AttemptKind {
    pub fn outcome(self) -> Outcome {
        match self {
            AttemptKind::Correct => Outcome::Correct,
            AttemptKind::Incorrect | AttemptKind::Skipped => Outcome::Incorrect,
        }
    }
}

/// Progress of one learner on one concept in one language.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerState {
    pub learner_id: LearnerId,
    pub language: String,
    pub concept_id: ConceptId,
    pub current_level: Level,
    /// Last recorded skill per level.
    pub skills: BTreeMap<Level, Skill>,
    pub correct_qs: BTreeSet<QuestionId>,
    pub incorrect_qs: BTreeSet<QuestionId>,
    pub skipped_qs: BTreeSet<QuestionId>,
    pub pretest_done: bool,
    pub completed: bool,
}

impl LearnerState {
    pub fn new(learner_id: LearnerId, language: impl Into<String>, concept_id: ConceptId) -> Self {
        Self {
            learner_id,
            language: language.into(),
            concept_id,
            current_level: Level::Easy,
            skills: BTreeMap::new(),
            correct_qs: BTreeSet::new(),
            incorrect_qs: BTreeSet::new(),
            skipped_qs: BTreeSet::new(),
            pretest_done: false,
            completed: false,
        }
    }

    pub fn skill(&self, level: Level) -> Skill {
        self.skills.get(&level).copied().unwrap_or(Skill::ZERO)
    }

    pub fn current_skill(&self) -> Skill {
        self.skill(self.current_level)
    }

    /// Moves `question` into the set matching `kind`. A question answered
    /// correctly stays correct.
    pub fn record(&mut self, question: QuestionId, kind: AttemptKind) {
        match kind {
            AttemptKind::Correct => {
                self.incorrect_qs.remove(&question);
                self.skipped_qs.remove(&question);
                self.correct_qs.insert(question);
            }
            AttemptKind::Incorrect if !self.correct_qs.contains(&question) => {
                self.skipped_qs.remove(&question);
                self.incorrect_qs.insert(question);
            }
            AttemptKind::Skipped if !self.correct_qs.contains(&question) => {
                self.incorrect_qs.remove(&question);
                self.skipped_qs.insert(question);
            }
            _ => {}
        }
    }

    pub fn set_skill(&mut self, level: Level, skill: Skill) {
        self.skills.insert(level, skill);
    }

    pub fn place(&mut self, level: Level) {
        self.current_level = level;
        self.pretest_done = true;
    }

    pub fn promote(&mut self, to: Level) {
        self.current_level = to;
        self.skills.insert(to, Skill::ZERO);
    }

    pub fn demote(&mut self, to: Level, retained: Skill) {
        self.current_level = to;
        self.skills.insert(to, retained);
    }

    pub fn complete(&mut self) {
        self.completed = true;
    }

    /// Skipped questions of `pool` that would become selectable again.
    pub fn skipped_in(&self, pool: &[QuestionId]) -> Vec<QuestionId> {
        pool.iter()
            .filter(|q| self.skipped_qs.contains(q))
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Makes skipped questions selectable again. They stay on the incomplete
    /// list as unsuccessful attempts.
    pub fn readmit(&mut self, questions: &[QuestionId]) {
        for q in questions {
            if self.skipped_qs.remove(q) {
                self.incorrect_qs.insert(*q);
            }
        }
    }

    pub fn attempted(&self, question: QuestionId) -> bool {
        self.correct_qs.contains(&question)
            || self.incorrect_qs.contains(&question)
            || self.skipped_qs.contains(&question)
    }
}

/// Shared per-question rating state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemState {
    pub question_id: QuestionId,
    pub difficulty: Difficulty,
    pub attempt_count: u64,
}

impl ItemState {
    pub fn new(question_id: QuestionId) -> Self {
        Self {
            question_id,
            difficulty: Difficulty::ZERO,
            attempt_count: 0,
        }
    }
}

/// Learning rate per level, chosen from each level's pool size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelRates {
    pub easy: LearningRate,
    pub standard: LearningRate,
    pub difficult: LearningRate,
}

impl LevelRates {
    pub fn uniform(k: LearningRate) -> Self {
        Self {
            easy: k,
            standard: k,
            difficult: k,
        }
    }

    pub fn from_counts(count_of: impl Fn(Level) -> usize) -> Self {
        Self {
            easy: rating::select_k(count_of(Level::Easy)).rate,
            standard: rating::select_k(count_of(Level::Standard)).rate,
            difficult: rating::select_k(count_of(Level::Difficult)).rate,
        }
    }

    pub fn get(&self, level: Level) -> LearningRate {
        match level {
            Level::Easy => self.easy,
            Level::Standard => self.standard,
            Level::Difficult => self.difficult,
        }
    }
}

/// Pretest score bands mapping a score fraction to a starting level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretestBands {
    pub standard_from: f64,
    pub difficult_from: f64,
}

impl Default for PretestBands {
    fn default() -> Self {
        Self {
            standard_from: 1.0 / 3.0,
            difficult_from: 2.0 / 3.0,
        }
    }
}

impl PretestBands {
    pub fn level(&self, score_fraction: f64) -> Level {
        if score_fraction >= self.difficult_from {
            Level::Difficult
        } else if score_fraction >= self.standard_from {
            Level::Standard
        } else {
            Level::Easy
        }
    }
}

pub fn initial_level_from_pretest(score_fraction: f64) -> Level {
    PretestBands::default().level(score_fraction)
}

fn difficulty_of(items: &BTreeMap<QuestionId, ItemState>, q: QuestionId) -> Difficulty {
    items
        .get(&q)
        .map(|i| i.difficulty)
        .unwrap_or(Difficulty::ZERO)
}

/// Nearest-difficulty question among `pool` minus correct and skipped ones.
/// Ties go to the smallest id.
pub fn next_question_adaptive(
    state: &LearnerState,
    items: &BTreeMap<QuestionId, ItemState>,
    pool: &[QuestionId],
) -> Result<QuestionId, SchedulerError> {
    let skill = state.current_skill().value();
    pool.iter()
        .copied()
        .filter(|q| !state.correct_qs.contains(q) && !state.skipped_qs.contains(q))
        .map(|q| ((skill - difficulty_of(items, q).value()).abs(), q))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, q)| q)
        .ok_or(SchedulerError::PoolExhausted)
}

/// Seeded uniform draw over `pool` minus questions already answered correctly.
pub fn next_question_random(
    state: &LearnerState,
    pool: &[QuestionId],
    seed: u64,
) -> Result<QuestionId, SchedulerError> {
    let eligible: Vec<QuestionId> = pool
        .iter()
        .filter(|q| !state.correct_qs.contains(q))
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if eligible.is_empty() {
        return Err(SchedulerError::PoolExhausted);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(eligible[rng.random_range(0..eligible.len())])
}

/// Whether level transitions apply to an attempt. `Free` attempts (random
/// mode, or practice after a concept is complete) only update ratings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Progression {
    Adaptive,
    Free,
}

#[derive(Debug, Clone, Copy)]
pub struct Attempt<'a> {
    pub question: &'a Question,
    pub rates: &'a LevelRates,
    pub progression: Progression,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub question_id: QuestionId,
    pub level: Level,
    pub kind: AttemptKind,
    pub rate: LearningRate,
    pub probability: f64,
    pub skill_before: Skill,
    pub skill_after: Skill,
    pub difficulty_before: Difficulty,
    pub difficulty_after: Difficulty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LevelEvent {
    Promoted { from: Level, to: Level },
    Demoted { from: Level, to: Level, retained: Skill },
    ConceptCompleted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Applied {
    pub state: LearnerState,
    pub item: ItemState,
    pub record: AttemptRecord,
    pub transition: Transition,
    pub events: Vec<LevelEvent>,
}

/// Skill kept at the lower level after a demotion: the last recorded value,
/// capped so that one correct answer at near-even odds re-crosses the
/// threshold. Levels never practised (placement skipped them) count as
/// mastered before the cap.
pub fn retained_after_demotion(
    state: &LearnerState,
    to: Level,
    rate: LearningRate,
    threshold: f64,
) -> Skill {
    let recorded = state
        .skills
        .get(&to)
        .map(|s| s.value())
        .unwrap_or(threshold);
    let cap = threshold - rate.value() * 0.5 * 0.9;
    Skill::new(recorded.min(cap))
}

fn check_attempt(state: &LearnerState, item: &ItemState, attempt: &Attempt) -> Result<(), SchedulerError> {
    let q = attempt.question;
    if item.question_id != q.id {
        return Err(SchedulerError::StateMismatch(format!(
            "item {} does not belong to question {}",
            item.question_id, q.id
        )));
    }
    if q.language != state.language || !q.is_tagged(&state.concept_id) {
        return Err(SchedulerError::StateMismatch(format!(
            "question {} is not a {} question for {}",
            q.id, state.language, state.concept_id
        )));
    }
    if attempt.progression == Progression::Adaptive {
        if state.completed {
            return Err(SchedulerError::StateMismatch(format!(
                "concept {} is already complete",
                state.concept_id
            )));
        }
        if q.level != state.current_level {
            return Err(SchedulerError::StateMismatch(format!(
                "question {} is {} but learner is at {}",
                q.id, q.level, state.current_level
            )));
        }
    }
    Ok(())
}

fn apply_attempt(
    state: &LearnerState,
    item: &ItemState,
    attempt: &Attempt,
    kind: AttemptKind,
) -> Result<Applied, SchedulerError> {
    check_attempt(state, item, attempt)?;
    let level = attempt.question.level;
    let rate = attempt.rates.get(level);
    let skill_before = state.skill(level);
    let raw = rating::update_raw(skill_before.value(), item.difficulty.value(), rate, kind.outcome());
    let skill_after = Skill::new(raw.skill);
    let difficulty_after = Difficulty::new(raw.difficulty);

    let mut state = state.clone();
    let mut item = item.clone();
    state.set_skill(level, skill_after);
    state.record(item.question_id, kind);
    let record = AttemptRecord {
        question_id: item.question_id,
        level,
        kind,
        rate,
        probability: raw.probability,
        skill_before,
        skill_after,
        difficulty_before: item.difficulty,
        difficulty_after,
    };
    item.difficulty = difficulty_after;
    item.attempt_count += 1;

    let mut events = Vec::new();
    let mut transition = Transition::Stay;
    if attempt.progression == Progression::Adaptive {
        match rating::check_transition(skill_after, attempt.threshold) {
            Transition::Promote => {
                transition = Transition::Promote;
                match level.next() {
                    Some(to) => {
                        state.promote(to);
                        events.push(LevelEvent::Promoted { from: level, to });
                    }
                    None => {
                        state.complete();
                        events.push(LevelEvent::ConceptCompleted);
                    }
                }
            }
            Transition::Demote => {
                if let Some(to) = level.previous() {
                    transition = Transition::Demote;
                    let retained =
                        retained_after_demotion(&state, to, attempt.rates.get(to), attempt.threshold);
                    state.demote(to, retained);
                    events.push(LevelEvent::Demoted { from: level, to, retained });
                }
            }
            Transition::Stay => {}
        }
    }

    Ok(Applied {
        state,
        item,
        record,
        transition,
        events,
    })
}

/// Applies a graded submission.
pub fn apply_outcome(
    state: &LearnerState,
    item: &ItemState,
    attempt: &Attempt,
    outcome: Outcome,
) -> Result<Applied, SchedulerError> {
    let kind = match outcome {
        Outcome::Correct => AttemptKind::Correct,
        Outcome::Incorrect => AttemptKind::Incorrect,
    };
    apply_attempt(state, item, attempt, kind)
}

/// Applies a skip: rated like an incorrect answer, recorded as skipped.
pub fn apply_skip(state: &LearnerState, item: &ItemState, attempt: &Attempt) -> Result<Applied, SchedulerError> {
    apply_attempt(state, item, attempt, AttemptKind::Skipped)
}

/// Random-mode completion: strictly more than 60% of the concept's
/// questions answered correctly.
pub fn concept_complete_random(state: &LearnerState, concept_question_count: usize) -> bool {
    concept_question_count > 0 && state.correct_qs.len() * 5 > concept_question_count * 3
}

/// `(never_tried, incomplete)` question ids for the completion page, both
/// sorted ascending.
pub fn completion_lists(state: &LearnerState, pool: &[QuestionId]) -> (Vec<QuestionId>, Vec<QuestionId>) {
    let never_tried: BTreeSet<QuestionId> = pool.iter().filter(|q| !state.attempted(**q)).copied().collect();
    let incomplete: BTreeSet<QuestionId> = state
        .incorrect_qs
        .union(&state.skipped_qs)
        .copied()
        .collect();
    (never_tried.into_iter().collect(), incomplete.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::TestCase;
    use crate::rating::MASTERY_THRESHOLD;
    use proptest::prelude::*;

    fn question(id: u32, level: Level) -> Question {
        Question {
            id: QuestionId(id),
            language: "python".into(),
            level,
            concept_tags: vec!["conditionals".into()],
            prompt_en: String::new(),
            prompt_th: None,
            test_cases: vec![TestCase {
                stdin: vec![],
                expected_stdout: vec!["x".into()],
            }],
            reference_solution: None,
            pretest: false,
        }
    }

    fn learner() -> LearnerState {
        LearnerState::new("s1".into(), "python", "conditionals".into())
    }

    fn rates(k: f64) -> LevelRates {
        LevelRates::uniform(LearningRate::new(k).unwrap())
    }

    fn items(ds: &[(u32, f64)]) -> BTreeMap<QuestionId, ItemState> {
        ds.iter()
            .map(|&(q, d)| {
                (
                    QuestionId(q),
                    ItemState {
                        question_id: QuestionId(q),
                        difficulty: Difficulty::new(d),
                        attempt_count: 0,
                    },
                )
            })
            .collect()
    }

    fn ids(v: &[u32]) -> Vec<QuestionId> {
        v.iter().map(|&i| QuestionId(i)).collect()
    }

    #[test]
    fn pretest_bands() {
        assert_eq!(initial_level_from_pretest(0.0), Level::Easy);
        assert_eq!(initial_level_from_pretest(0.5), Level::Standard);
        assert_eq!(initial_level_from_pretest(1.0), Level::Difficult);
        assert_eq!(initial_level_from_pretest(1.0 / 3.0), Level::Standard);
        assert_eq!(initial_level_from_pretest(2.0 / 3.0), Level::Difficult);
    }

    #[test]
    fn nearest_difficulty_wins() {
        let mut s = learner();
        s.set_skill(Level::Easy, Skill::new(0.36));
        let it = items(&[(1, 0.30), (2, 0.70), (3, 0.55)]);
        assert_eq!(next_question_adaptive(&s, &it, &ids(&[1, 2, 3])), Ok(QuestionId(1)));
    }

    #[test]
    fn equal_distance_goes_to_lower_id() {
        let mut s = learner();
        s.set_skill(Level::Easy, Skill::new(0.5));
        let it = items(&[(4, 0.25), (9, 0.75)]);
        assert_eq!(next_question_adaptive(&s, &it, &ids(&[9, 4])), Ok(QuestionId(4)));
    }

    #[test]
    fn empty_eligible_pool_is_exhausted() {
        let mut s = learner();
        assert_eq!(
            next_question_adaptive(&s, &BTreeMap::new(), &[]),
            Err(SchedulerError::PoolExhausted)
        );
        s.record(QuestionId(1), AttemptKind::Correct);
        s.record(QuestionId(2), AttemptKind::Skipped);
        assert_eq!(
            next_question_adaptive(&s, &BTreeMap::new(), &ids(&[1, 2])),
            Err(SchedulerError::PoolExhausted)
        );
    }

    #[test]
    fn random_draw_is_seeded_and_skips_correct() {
        let mut s = learner();
        s.record(QuestionId(2), AttemptKind::Correct);
        let pool = ids(&[1, 2, 3, 4, 5]);
        let a = next_question_random(&s, &pool, 42).unwrap();
        assert_eq!(a, next_question_random(&s, &pool, 42).unwrap());
        assert_ne!(a, QuestionId(2));
        assert!(pool.contains(&a));
        assert_eq!(next_question_random(&s, &ids(&[2, 7]), 1), Ok(QuestionId(7)));
        for q in &pool {
            s.record(*q, AttemptKind::Correct);
        }
        assert_eq!(next_question_random(&s, &pool, 3), Err(SchedulerError::PoolExhausted));
    }

    #[test]
    fn fresh_correct_stays() {
        let q = question(1, Level::Easy);
        let r = rates(0.7);
        let attempt = Attempt { question: &q, rates: &r, progression: Progression::Adaptive, threshold: MASTERY_THRESHOLD };
        let applied = apply_outcome(&learner(), &ItemState::new(q.id), &attempt, Outcome::Correct).unwrap();
        assert!((applied.state.current_skill().value() - 0.35).abs() < 1e-12);
        assert!((applied.item.difficulty.value() + 0.35).abs() < 1e-12);
        assert_eq!(applied.transition, Transition::Stay);
        assert!(applied.state.correct_qs.contains(&q.id));
        assert_eq!(applied.item.attempt_count, 1);
    }

    #[test]
    fn third_step_promotes_and_resets() {
        let q = question(1, Level::Easy);
        let r = rates(0.7);
        let attempt = Attempt { question: &q, rates: &r, progression: Progression::Adaptive, threshold: MASTERY_THRESHOLD };
        let mut s = learner();
        s.set_skill(Level::Easy, Skill::new(0.6394));
        let applied = apply_outcome(&s, &ItemState::new(q.id), &attempt, Outcome::Correct).unwrap();
        assert!((applied.record.skill_after.value() - 0.8812).abs() < 1e-3);
        assert_eq!(applied.transition, Transition::Promote);
        assert_eq!(applied.state.current_level, Level::Standard);
        assert_eq!(applied.state.current_skill(), Skill::ZERO);
        assert_eq!(applied.events, vec![LevelEvent::Promoted { from: Level::Easy, to: Level::Standard }]);
    }

    #[test]
    fn promotion_at_difficult_completes() {
        let q = question(1, Level::Difficult);
        let r = rates(0.7);
        let attempt = Attempt { question: &q, rates: &r, progression: Progression::Adaptive, threshold: MASTERY_THRESHOLD };
        let mut s = learner();
        s.place(Level::Difficult);
        s.set_skill(Level::Difficult, Skill::new(0.84));
        let applied = apply_outcome(&s, &ItemState::new(q.id), &attempt, Outcome::Correct).unwrap();
        assert!(applied.state.completed);
        assert_eq!(applied.state.current_level, Level::Difficult);
        assert_eq!(applied.events, vec![LevelEvent::ConceptCompleted]);
    }

    #[test]
    fn clamped_zero_demotes_with_capped_retained_skill() {
        let q = question(1, Level::Standard);
        let r = rates(0.7);
        let attempt = Attempt { question: &q, rates: &r, progression: Progression::Adaptive, threshold: MASTERY_THRESHOLD };
        let mut s = learner();
        s.set_skill(Level::Easy, Skill::new(0.95));
        s.promote(Level::Standard);
        s.set_skill(Level::Standard, Skill::new(0.05));
        let applied = apply_outcome(&s, &ItemState::new(q.id), &attempt, Outcome::Incorrect).unwrap();
        assert_eq!(applied.transition, Transition::Demote);
        assert_eq!(applied.state.current_level, Level::Easy);
        let retained = applied.state.current_skill().value();
        assert!((retained - (0.85 - 0.7 * 0.45)).abs() < 1e-12);
        assert!(applied.state.incorrect_qs.contains(&q.id));
    }

    #[test]
    fn demotion_at_easy_stays() {
        let q = question(1, Level::Easy);
        let r = rates(0.7);
        let attempt = Attempt { question: &q, rates: &r, progression: Progression::Adaptive, threshold: MASTERY_THRESHOLD };
        let applied = apply_outcome(&learner(), &ItemState::new(q.id), &attempt, Outcome::Incorrect).unwrap();
        assert_eq!(applied.transition, Transition::Stay);
        assert_eq!(applied.state.current_level, Level::Easy);
        assert!(applied.events.is_empty());
    }

    #[test]
    fn skip_marks_down_and_excludes() {
        let q = question(1, Level::Easy);
        let r = rates(0.7);
        let attempt = Attempt { question: &q, rates: &r, progression: Progression::Adaptive, threshold: MASTERY_THRESHOLD };
        let applied = apply_skip(&learner(), &ItemState::new(q.id), &attempt).unwrap();
        assert_eq!(applied.state.current_skill(), Skill::ZERO);
        assert!((applied.item.difficulty.value() - 0.35).abs() < 1e-12);
        assert!(applied.state.skipped_qs.contains(&q.id));
        assert!(!applied.state.incorrect_qs.contains(&q.id));
        assert_eq!(
            next_question_adaptive(&applied.state, &BTreeMap::new(), &[q.id]),
            Err(SchedulerError::PoolExhausted)
        );
    }

    #[test]
    fn readmitted_skips_stay_incomplete() {
        let mut s = learner();
        s.record(QuestionId(3), AttemptKind::Skipped);
        let pool = ids(&[3, 4]);
        let back = s.skipped_in(&pool);
        assert_eq!(back, ids(&[3]));
        s.readmit(&back);
        assert!(s.skipped_qs.is_empty());
        assert_eq!(completion_lists(&s, &pool), (ids(&[4]), ids(&[3])));
        assert_eq!(next_question_adaptive(&s, &BTreeMap::new(), &ids(&[3])), Ok(QuestionId(3)));
    }

    #[test]
    fn level_mismatch_is_rejected() {
        let q = question(1, Level::Difficult);
        let r = rates(0.7);
        let attempt = Attempt { question: &q, rates: &r, progression: Progression::Adaptive, threshold: MASTERY_THRESHOLD };
        assert!(matches!(
            apply_outcome(&learner(), &ItemState::new(q.id), &attempt, Outcome::Correct),
            Err(SchedulerError::StateMismatch(_))
        ));
        assert!(matches!(
            apply_outcome(&learner(), &ItemState::new(QuestionId(99)), &attempt, Outcome::Correct),
            Err(SchedulerError::StateMismatch(_))
        ));
        let free = Attempt { progression: Progression::Free, ..attempt };
        let applied = apply_outcome(&learner(), &ItemState::new(q.id), &free, Outcome::Correct).unwrap();
        assert_eq!(applied.state.current_level, Level::Easy);
        assert_eq!(applied.transition, Transition::Stay);
        assert!(applied.state.skill(Level::Difficult).value() > 0.0);
    }

    #[test]
    fn random_completion_rule_is_strict() {
        let mut s = learner();
        for i in 0..6 {
            s.record(QuestionId(i), AttemptKind::Correct);
        }
        assert!(!concept_complete_random(&s, 10));
        s.record(QuestionId(6), AttemptKind::Correct);
        assert!(concept_complete_random(&s, 10));
        assert!(!concept_complete_random(&learner(), 10));
    }

    #[test]
    fn completion_lists_split_never_tried_and_incomplete() {
        let pool = ids(&[48, 50, 51, 55, 56, 57, 58, 61, 64, 65, 66, 67]);
        let mut s = learner();
        for q in [50, 51, 55, 56, 57] {
            s.record(QuestionId(q), AttemptKind::Correct);
        }
        s.record(QuestionId(58), AttemptKind::Incorrect);
        s.record(QuestionId(61), AttemptKind::Skipped);
        assert_eq!(
            completion_lists(&s, &pool),
            (ids(&[48, 64, 65, 66, 67]), ids(&[58, 61]))
        );
        let (never, incomplete) = completion_lists(&learner(), &pool);
        assert_eq!(never, pool);
        assert!(incomplete.is_empty());
    }

    proptest! {
        #[test]
        fn question_sets_stay_disjoint(ops in prop::collection::vec((0u32..8, 0u8..3), 0..60)) {
            let mut s = learner();
            for (q, k) in ops {
                let kind = [AttemptKind::Correct, AttemptKind::Incorrect, AttemptKind::Skipped][k as usize];
                s.record(QuestionId(q), kind);
                prop_assert!(s.correct_qs.is_disjoint(&s.incorrect_qs));
                prop_assert!(s.correct_qs.is_disjoint(&s.skipped_qs));
                prop_assert!(s.incorrect_qs.is_disjoint(&s.skipped_qs));
            }
        }

        #[test]
        fn demotion_ceiling_allows_single_correct_recovery(k in 0.3f64..0.9, gap in 0.0f64..0.2) {
            // Standard learner at a tiny skill fails once and drops to Easy.
            let r = rates(k);
            let std_q = question(1, Level::Standard);
            let attempt = Attempt { question: &std_q, rates: &r, progression: Progression::Adaptive, threshold: MASTERY_THRESHOLD };
            let mut s = learner();
            s.set_skill(Level::Easy, Skill::new(0.9));
            s.promote(Level::Standard);
            let applied = apply_outcome(&s, &ItemState::new(std_q.id), &attempt, Outcome::Incorrect).unwrap();
            prop_assert_eq!(applied.state.current_level, Level::Easy);
            let theta = applied.state.current_skill().value();
            prop_assert!(theta < MASTERY_THRESHOLD);

            // one correct answer against an item slightly easier than the learner
            let easy_q = question(2, Level::Easy);
            let item = ItemState { question_id: easy_q.id, difficulty: Difficulty::new(theta - gap), attempt_count: 0 };
            let attempt = Attempt { question: &easy_q, ..attempt };
            let back = apply_outcome(&applied.state, &item, &attempt, Outcome::Correct).unwrap();
            prop_assert_eq!(back.transition, Transition::Promote);
            prop_assert_eq!(back.state.current_level, Level::Standard);
        }
    }
}
