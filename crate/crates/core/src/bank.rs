//! Question bank: concept-tagged programming questions with test cases.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ontology::ConceptId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QuestionId(pub u32);

impl fmt::Display for QuestionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Exercise difficulty level. Ordered `Easy < Standard < Difficult`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Easy,
    Standard,
    Difficult,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Easy, Level::Standard, Level::Difficult];

    pub fn next(self) -> Option<Level> {
        match self {
            Level::Easy => Some(Level::Standard),
            Level::Standard => Some(Level::Difficult),
            Level::Difficult => None,
        }
    }

    pub fn previous(self) -> Option<Level> {
        match self {
            Level::Easy => None,
            Level::Standard => Some(Level::Easy),
            Level::Difficult => Some(Level::Standard),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Easy => "easy",
            Level::Standard => "standard",
            Level::Difficult => "difficult",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "easy" => Ok(Level::Easy),
            "standard" => Ok(Level::Standard),
            "difficult" => Ok(Level::Difficult),
            other => Err(format!("unknown level {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub stdin: Vec<String>,
    pub expected_stdout: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: QuestionId,
    pub language: String,
    pub level: Level,
    pub concept_tags: Vec<ConceptId>,
    pub prompt_en: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_th: Option<String>,
    pub test_cases: Vec<TestCase>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_solution: Option<String>,
    /// Placement question, asked once per concept before practice starts.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub pretest: bool,
}

impl Question {
    pub fn is_tagged(&self, concept: &ConceptId) -> bool {
        self.concept_tags.iter().any(|t| t == concept)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BankDocument {
    pub questions: Vec<Question>,
}

#[derive(Debug, Error)]
pub enum BankError {
    #[error("malformed question bank: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Questions indexed by id, kept in document order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QuestionBank {
    questions: Vec<Question>,
    index: BTreeMap<QuestionId, usize>,
}

pub fn load_bank(doc: &str) -> Result<QuestionBank, BankError> {
    let doc: BankDocument = serde_json::from_str(doc)?;
    Ok(QuestionBank::new(doc.questions))
}

impl QuestionBank {
    /// Builds the bank; on duplicate ids the first occurrence wins for lookup
    /// (duplicates are reported by `validate_bank`).
    pub fn new(questions: Vec<Question>) -> Self {
        let mut index = BTreeMap::new();
        for (i, q) in questions.iter().enumerate() {
            index.entry(q.id).or_insert(i);
        }
        Self { questions, index }
    }

    pub fn questions(&self) -> &[Question] {
        &self.questions
    }

    pub fn get(&self, id: QuestionId) -> Option<&Question> {
        self.index.get(&id).map(|&i| &self.questions[i])
    }

    /// Practice questions (no pretests) in one language.
    pub fn for_language<'a>(&'a self, language: &'a str) -> impl Iterator<Item = &'a Question> + 'a {
        self.questions
            .iter()
            .filter(move |q| q.language == language && !q.pretest)
    }

    /// Practice pool for a concept, optionally restricted to one level, sorted by id.
    pub fn pool(&self, language: &str, concept: &ConceptId, level: Option<Level>) -> Vec<QuestionId> {
        let mut ids: Vec<QuestionId> = self
            .for_language(language)
            .filter(|q| q.is_tagged(concept) && level.is_none_or(|l| q.level == l))
            .map(|q| q.id)
            .collect();
        ids.sort();
        ids.dedup();
        ids
    }

    pub fn pretests(&self, language: &str, concept: &ConceptId) -> Vec<&Question> {
        let mut qs: Vec<&Question> = self
            .questions
            .iter()
            .filter(|q| q.pretest && q.language == language && q.is_tagged(concept))
            .collect();
        qs.sort_by_key(|q| q.id);
        qs
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }
}
