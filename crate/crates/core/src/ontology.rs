//! Multi-language concept ontology.
//!
//! Concepts form a forest through single parent links. The graph is validated
//! eagerly when loaded; question banks are checked separately by
//! [`validate_bank`] so that authors can iterate on them.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bank::{Level, Question, QuestionId};

/// Minimum number of questions a level should hold before the rating
/// schedule behaves well.
pub const MIN_QUESTIONS_PER_LEVEL: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConceptId(String);

impl ConceptId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Ids are lowercase ASCII letters, digits, `_` and `-`.
    pub fn is_well_formed(&self) -> bool {
        !self.0.is_empty()
            && self
                .0
                .bytes()
                .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_' || b == b'-')
    }
}

impl fmt::Display for ConceptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ConceptId {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub id: ConceptId,
    pub display_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<ConceptId>,
    pub languages: BTreeSet<String>,
    /// Syntax markers per language used for missing-logic detection.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub markers: BTreeMap<String, Vec<String>>,
}

impl Concept {
    pub fn applies_to(&self, language: &str) -> bool {
        self.languages.contains(language)
    }

    pub fn markers_for(&self, language: &str) -> &[String] {
        self.markers.get(language).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Comment delimiters for one language, used to strip comments before
/// searching for syntax markers.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommentSyntax {
    #[serde(default)]
    pub line: Vec<String>,
    #[serde(default)]
    pub block: Vec<(String, String)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OntologyDocument {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub languages: BTreeMap<String, CommentSyntax>,
    pub concepts: Vec<Concept>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConceptStatus {
    NotStarted,
    InProgress,
    Complete,
}

#[derive(Debug, Error, PartialEq)]
pub enum OntologyError {
    #[error("malformed ontology document: {0}")]
    Parse(String),
    #[error("invalid concept id {0:?}")]
    InvalidId(String),
    #[error("duplicate concept id {0}")]
    DuplicateConcept(ConceptId),
    #[error("concept {concept} names unknown parent {parent}")]
    DanglingParent { concept: ConceptId, parent: ConceptId },
    #[error("parent cycle through concept {0}")]
    Cycle(ConceptId),
    #[error("unknown concept {0}")]
    UnknownConcept(ConceptId),
}

/// Validated, immutable concept forest.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptGraph {
    concepts: BTreeMap<ConceptId, Concept>,
    order: Vec<ConceptId>,
    roots: Vec<ConceptId>,
    languages: BTreeMap<String, CommentSyntax>,
}

pub fn load_ontology(doc: &str) -> Result<ConceptGraph, OntologyError> {
    let doc: OntologyDocument =
        serde_json::from_str(doc).map_err(|e| OntologyError::Parse(e.to_string()))?;
    ConceptGraph::from_document(doc)
}

impl ConceptGraph {
    pub fn from_document(doc: OntologyDocument) -> Result<Self, OntologyError> {
        let mut concepts = BTreeMap::new();
        let mut order = Vec::with_capacity(doc.concepts.len());
        for concept in doc.concepts {
            if !concept.id.is_well_formed() {
                return Err(OntologyError::InvalidId(concept.id.0));
            }
            if concepts.contains_key(&concept.id) {
                return Err(OntologyError::DuplicateConcept(concept.id));
            }
            order.push(concept.id.clone());
            concepts.insert(concept.id.clone(), concept);
        }

        for concept in concepts.values() {
            if let Some(parent) = &concept.parent {
                if !concepts.contains_key(parent) {
                    return Err(OntologyError::DanglingParent {
                        concept: concept.id.clone(),
                        parent: parent.clone(),
                    });
                }
            }
        }

        for start in &order {
            let mut seen = HashSet::new();
            let mut cursor = Some(start);
            while let Some(id) = cursor {
                if !seen.insert(id) {
                    return Err(OntologyError::Cycle(start.clone()));
                }
                cursor = concepts[id].parent.as_ref();
            }
        }

        let roots = order
            .iter()
            .filter(|id| concepts[*id].parent.is_none())
            .cloned()
            .collect();

        Ok(Self {
            concepts,
            order,
            roots,
            languages: doc.languages,
        })
    }

    pub fn get(&self, id: &ConceptId) -> Option<&Concept> {
        self.concepts.get(id)
    }

    pub fn require(&self, id: &ConceptId) -> Result<&Concept, OntologyError> {
        self.get(id)
            .ok_or_else(|| OntologyError::UnknownConcept(id.clone()))
    }

    pub fn contains(&self, id: &ConceptId) -> bool {
        self.concepts.contains_key(id)
    }

    pub fn parent(&self, id: &ConceptId) -> Option<&ConceptId> {
        self.concepts.get(id).and_then(|c| c.parent.as_ref())
    }

    /// Root concepts in document order.
    pub fn roots(&self) -> &[ConceptId] {
        &self.roots
    }

    /// All concepts in document order.
    pub fn concepts(&self) -> impl Iterator<Item = &Concept> {
        self.order.iter().map(move |id| &self.concepts[id])
    }

    /// Concepts that apply to `language`, in document order.
    pub fn concepts_for<'a>(&'a self, language: &'a str) -> impl Iterator<Item = &'a Concept> + 'a {
        self.concepts().filter(move |c| c.applies_to(language))
    }

    pub fn comment_syntax(&self, language: &str) -> Option<&CommentSyntax> {
        self.languages.get(language)
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HintItem {
    pub concept_id: ConceptId,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<ConceptId>,
    pub emphasized: bool,
}

/// One hint per concept tag of the question, in tag order. The tag equal to
/// the learner's selected concept is emphasized.
pub fn hint_list(
    question: &Question,
    graph: &ConceptGraph,
    selected: &ConceptId,
) -> Result<Vec<HintItem>, OntologyError> {
    question
        .concept_tags
        .iter()
        .map(|tag| {
            let concept = graph.require(tag)?;
            Ok(HintItem {
                concept_id: tag.clone(),
                parent_id: concept.parent.clone(),
                emphasized: tag == selected,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyRow {
    pub concept: ConceptId,
    pub frequency: usize,
}

/// Co-occurrence counts of other concepts with an anchor concept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub anchor: ConceptId,
    /// Rows sorted by concept id.
    pub rows: Vec<FrequencyRow>,
}

impl FrequencyTable {
    pub fn frequency(&self, concept: &ConceptId) -> usize {
        self.rows
            .binary_search_by(|row| row.concept.cmp(concept))
            .map(|i| self.rows[i].frequency)
            .unwrap_or(0)
    }
}

fn distinct_tags(question: &Question) -> BTreeSet<&ConceptId> {
    question.concept_tags.iter().collect()
}

pub fn cooccurrence_table(bank: &[Question], anchor: &ConceptId) -> FrequencyTable {
    let mut counts: BTreeMap<&ConceptId, usize> = BTreeMap::new();
    for question in bank {
        let tags = distinct_tags(question);
        if !tags.contains(anchor) {
            continue;
        }
        for tag in tags.into_iter().filter(|t| *t != anchor) {
            *counts.entry(tag).or_default() += 1;
        }
    }
    FrequencyTable {
        anchor: anchor.clone(),
        rows: counts
            .into_iter()
            .map(|(concept, frequency)| FrequencyRow {
                concept: concept.clone(),
                frequency,
            })
            .collect(),
    }
}

/// Concepts tagged together with `anchor` and nothing else on at least one
/// question.
pub fn one_to_one_partners(bank: &[Question], anchor: &ConceptId) -> BTreeSet<ConceptId> {
    bank.iter()
        .filter_map(|q| {
            let tags = distinct_tags(q);
            if tags.len() != 2 || !tags.contains(anchor) {
                return None;
            }
            tags.into_iter().find(|t| *t != anchor).cloned()
        })
        .collect()
}

/// Next-concept suggestions after finishing `anchor`.
///
/// A candidate must share a two-tag question with the anchor, co-occur with
/// it more than once across the bank, and not be complete yet. Results are
/// ordered by frequency descending, then id.
pub fn suggest_next(
    graph: &ConceptGraph,
    bank: &[Question],
    anchor: &ConceptId,
    progress: &BTreeMap<ConceptId, ConceptStatus>,
) -> Result<Vec<ConceptId>, OntologyError> {
    graph.require(anchor)?;
    let table = cooccurrence_table(bank, anchor);
    let mut picks: Vec<(usize, ConceptId)> = one_to_one_partners(bank, anchor)
        .into_iter()
        .filter(|c| {
            !matches!(
                progress.get(c).copied().unwrap_or(ConceptStatus::NotStarted),
                ConceptStatus::Complete
            )
        })
        .map(|c| (table.frequency(&c), c))
        .filter(|(freq, _)| *freq > 1)
        .collect();
    picks.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    Ok(picks.into_iter().map(|(_, c)| c).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "finding", rename_all = "snake_case")]
pub enum Finding {
    UnknownTag { question: QuestionId, tag: ConceptId },
    DuplicateQuestionId { question: QuestionId },
    EmptyTags { question: QuestionId },
    NoTestCases { question: QuestionId },
    EmptyExpectedOutput { question: QuestionId, case: usize },
    LanguageMismatch { question: QuestionId, tag: ConceptId, language: String },
    NearDuplicateTags { first: ConceptId, second: ConceptId },
    UnderMinimumLevel { language: String, concept: ConceptId, level: Level, count: usize },
}

impl Finding {
    pub fn severity(&self) -> Severity {
        match self {
            Finding::UnknownTag { .. }
            | Finding::DuplicateQuestionId { .. }
            | Finding::EmptyTags { .. }
            | Finding::NoTestCases { .. }
            | Finding::EmptyExpectedOutput { .. } => Severity::Error,
            Finding::LanguageMismatch { .. }
            | Finding::NearDuplicateTags { .. }
            | Finding::UnderMinimumLevel { .. } => Severity::Warning,
        }
    }
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::UnknownTag { question, tag } => {
                write!(f, "question {question}: unknown concept tag {tag}")
            }
            Finding::DuplicateQuestionId { question } => {
                write!(f, "question id {question} appears more than once")
            }
            Finding::EmptyTags { question } => write!(f, "question {question}: no concept tags"),
            Finding::NoTestCases { question } => write!(f, "question {question}: no test cases"),
            Finding::EmptyExpectedOutput { question, case } => {
                write!(f, "question {question}: test case {case} has no expected output")
            }
            Finding::LanguageMismatch { question, tag, language } => {
                write!(f, "question {question}: concept {tag} is not declared for {language}")
            }
            Finding::NearDuplicateTags { first, second } => {
                write!(f, "tags {first} and {second} differ by a single edit")
            }
            Finding::UnderMinimumLevel { language, concept, level, count } => write!(
                f,
                "{language}/{concept}/{level}: {count} questions (recommended at least {MIN_QUESTIONS_PER_LEVEL})"
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn has_errors(&self) -> bool {
        self.errors().next().is_some()
    }

    pub fn errors(&self) -> impl Iterator<Item = &Finding> {
        self.findings
            .iter()
            .filter(|f| f.severity() == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Finding> {
        self.findings
            .iter()
            .filter(|f| f.severity() == Severity::Warning)
    }
}

pub fn validate_bank(graph: &ConceptGraph, bank: &[Question]) -> ValidationReport {
    let mut findings = Vec::new();
    let mut ids = HashSet::new();
    let mut tags_in_use: BTreeSet<&ConceptId> = BTreeSet::new();
    // (language, concept) -> per-level practice question counts
    let mut level_counts: BTreeMap<(&str, &ConceptId), BTreeMap<Level, usize>> = BTreeMap::new();

    for q in bank {
        if !ids.insert(q.id) {
            findings.push(Finding::DuplicateQuestionId { question: q.id });
        }
        if q.concept_tags.is_empty() {
            findings.push(Finding::EmptyTags { question: q.id });
        }
        if q.test_cases.is_empty() {
            findings.push(Finding::NoTestCases { question: q.id });
        }
        for (i, case) in q.test_cases.iter().enumerate() {
            if case.expected_stdout.is_empty() {
                findings.push(Finding::EmptyExpectedOutput { question: q.id, case: i + 1 });
            }
        }
        for tag in distinct_tags(q) {
            tags_in_use.insert(tag);
            match graph.get(tag) {
                None => findings.push(Finding::UnknownTag { question: q.id, tag: tag.clone() }),
                Some(c) if !c.applies_to(&q.language) => {
                    findings.push(Finding::LanguageMismatch {
                        question: q.id,
                        tag: tag.clone(),
                        language: q.language.clone(),
                    })
                }
                Some(_) => {}
            }
            if !q.pretest {
                *level_counts
                    .entry((q.language.as_str(), tag))
                    .or_default()
                    .entry(q.level)
                    .or_default() += 1;
            }
        }
    }

    let tags: Vec<&ConceptId> = tags_in_use.into_iter().collect();
    for (i, a) in tags.iter().enumerate() {
        for b in &tags[i + 1..] {
            if strsim::levenshtein(a.as_str(), b.as_str()) == 1 {
                findings.push(Finding::NearDuplicateTags {
                    first: (*a).clone(),
                    second: (*b).clone(),
                });
            }
        }
    }

    for ((language, concept), counts) in level_counts {
        for level in Level::ALL {
            let count = counts.get(&level).copied().unwrap_or(0);
            if count < MIN_QUESTIONS_PER_LEVEL {
                findings.push(Finding::UnderMinimumLevel {
                    language: language.to_string(),
                    concept: concept.clone(),
                    level,
                    count,
                });
            }
        }
    }

    ValidationReport { findings }
}
