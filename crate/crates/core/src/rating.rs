//! Educational Elo rating: paired learner-skill / item-difficulty updates.
//!
//! All functions here are pure. Skill lives in `[0, 1]`; difficulty is an
//! unbounded real. Both start at zero.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Skill at or above this value promotes the learner.
pub const MASTERY_THRESHOLD: f64 = 0.85;

#[derive(Debug, Error, PartialEq)]
pub enum RatingError {
    #[error("learning rate must be positive and finite, got {0}")]
    InvalidLearningRate(f64),
}

/// Learner skill, clamped to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Skill(f64);

impl Skill {
    pub const ZERO: Skill = Skill(0.0);

    /// Clamps into `[0, 1]`. NaN maps to zero.
    pub fn new(value: f64) -> Self {
        if value.is_nan() {
            Skill(0.0)
        } else {
            Skill(value.clamp(0.0, 1.0))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Item difficulty. Not bounded.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Difficulty(f64);

impl Difficulty {
    pub const ZERO: Difficulty = Difficulty(0.0);

    pub fn new(value: f64) -> Self {
        debug_assert!(value.is_finite(), "difficulty must be finite");
        Difficulty(value)
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Update step size `K`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct LearningRate(f64);

impl LearningRate {
    pub fn new(k: f64) -> Result<Self, RatingError> {
        if k.is_finite() && k > 0.0 {
            Ok(LearningRate(k))
        } else {
            Err(RatingError::InvalidLearningRate(k))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for LearningRate {
    type Error = RatingError;

    fn try_from(k: f64) -> Result<Self, Self::Error> {
        LearningRate::new(k)
    }
}

impl From<LearningRate> for f64 {
    fn from(k: LearningRate) -> f64 {
        k.0
    }
}

/// Graded result of one attempt. Skips count as incorrect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Incorrect,
    Correct,
}

impl Outcome {
    pub fn from_correct(correct: bool) -> Self {
        if correct {
            Outcome::Correct
        } else {
            Outcome::Incorrect
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Outcome::Incorrect => 0.0,
            Outcome::Correct => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transition {
    Promote,
    Demote,
    Stay,
}

/// Logistic probability that a learner with `skill` answers an item of
/// `difficulty` correctly.
pub fn probability_correct(skill: f64, difficulty: f64) -> f64 {
    1.0 / (1.0 + (-(skill - difficulty)).exp())
}

/// Both updated values before the skill clamp is applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawUpdate {
    pub probability: f64,
    pub skill: f64,
    pub difficulty: f64,
}

/// Paired update computed from the pre-update pair. The step added to the
/// skill is subtracted from the difficulty.
pub fn update_raw(skill: f64, difficulty: f64, k: LearningRate, outcome: Outcome) -> RawUpdate {
    let probability = probability_correct(skill, difficulty);
    let step = k.value() * (outcome.value() - probability);
    RawUpdate {
        probability,
        skill: skill + step,
        difficulty: difficulty - step,
    }
}

pub fn update(skill: Skill, difficulty: Difficulty, k: LearningRate, outcome: Outcome) -> (Skill, Difficulty) {
    let raw = update_raw(skill.value(), difficulty.value(), k, outcome);
    (Skill::new(raw.skill), Difficulty::new(raw.difficulty))
}

/// Learning rate chosen from the number of questions available at a level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateChoice {
    pub rate: LearningRate,
    /// Set when the level holds fewer than four questions.
    pub under_minimum: bool,
}

pub fn select_k(level_question_count: usize) -> RateChoice {
    let k = match level_question_count {
        0..=5 => 0.7,
        6 => 0.6,
        7 | 8 => 0.5,
        _ => 0.4,
    };
    RateChoice {
        rate: LearningRate(k),
        under_minimum: level_question_count < 4,
    }
}

pub fn check_transition(skill: Skill, threshold: f64) -> Transition {
    if skill.value() >= threshold {
        Transition::Promote
    } else if skill.value() <= 0.0 {
        Transition::Demote
    } else {
        Transition::Stay
    }
}
