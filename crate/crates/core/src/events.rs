//! Append-only learning log.
//!
//! Every engine state change is one [`LogEvent`]. Events carry resulting
//! values (skills, difficulties, levels), so replaying a log rebuilds the
//! engine without consulting the bank's rating schedule. The on-disk form is
//! JSON Lines with a stable `kind` tag.

use std::io::{BufRead, Write};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bank::{Level, QuestionId};
use crate::grading::FeedbackDocument;
use crate::ontology::ConceptId;
use crate::rating::{Skill, Transition};
use crate::scheduler::{AssignmentMode, AttemptRecord, LearnerId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEvent {
    pub timestamp: DateTime<Utc>,
    pub learner_id: LearnerId,
    #[serde(flatten)]
    pub payload: EventPayload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    QuestionnaireAnswered,
    ConceptSelected,
    PretestScored,
    ExerciseAssigned,
    Submitted,
    Skipped,
    Promoted,
    Demoted,
    ConceptCompleted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventPayload {
    QuestionnaireAnswered {
        has_programming_experience: bool,
        language: String,
        group_mode: AssignmentMode,
    },
    ConceptSelected {
        concept: ConceptId,
        first_time: bool,
    },
    PretestScored {
        concept: ConceptId,
        correct: usize,
        total: usize,
        score: f64,
        level: Level,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        request_id: Option<String>,
    },
    ExerciseAssigned {
        concept: ConceptId,
        question_id: QuestionId,
        level: Level,
        reentry: bool,
        /// Skipped questions made selectable again before this draw.
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        readmitted: Vec<QuestionId>,
    },
    Submitted {
        concept: ConceptId,
        attempt: AttemptRecord,
        transition: Transition,
        completes_concept: bool,
        all_correct: bool,
        missing_logic: bool,
        execution_failures: usize,
        feedback: FeedbackDocument,
        source: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        elapsed_seconds: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        request_id: Option<String>,
    },
    Skipped {
        concept: ConceptId,
        attempt: AttemptRecord,
        transition: Transition,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        request_id: Option<String>,
    },
    Promoted {
        concept: ConceptId,
        from: Level,
        to: Level,
    },
    Demoted {
        concept: ConceptId,
        from: Level,
        to: Level,
        retained_skill: Skill,
    },
    ConceptCompleted {
        concept: ConceptId,
    },
}

impl EventPayload {
    pub fn kind(&self) -> EventKind {
        match self {
            EventPayload::QuestionnaireAnswered { .. } => EventKind::QuestionnaireAnswered,
            EventPayload::ConceptSelected { .. } => EventKind::ConceptSelected,
            EventPayload::PretestScored { .. } => EventKind::PretestScored,
            EventPayload::ExerciseAssigned { .. } => EventKind::ExerciseAssigned,
            EventPayload::Submitted { .. } => EventKind::Submitted,
            EventPayload::Skipped { .. } => EventKind::Skipped,
            EventPayload::Promoted { .. } => EventKind::Promoted,
            EventPayload::Demoted { .. } => EventKind::Demoted,
            EventPayload::ConceptCompleted { .. } => EventKind::ConceptCompleted,
        }
    }

    pub fn concept(&self) -> Option<&ConceptId> {
        match self {
            EventPayload::QuestionnaireAnswered { .. } => None,
            EventPayload::ConceptSelected { concept, .. }
            | EventPayload::PretestScored { concept, .. }
            | EventPayload::ExerciseAssigned { concept, .. }
            | EventPayload::Submitted { concept, .. }
            | EventPayload::Skipped { concept, .. }
            | EventPayload::Promoted { concept, .. }
            | EventPayload::Demoted { concept, .. }
            | EventPayload::ConceptCompleted { concept } => Some(concept),
        }
    }
}

impl LogEvent {
    pub fn kind(&self) -> EventKind {
        self.payload.kind()
    }
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("corrupt log at line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("log i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub fn to_json_line(event: &LogEvent) -> String {
    serde_json::to_string(event).expect("log events always serialize")
}

pub fn write_jsonl<W: Write>(mut out: W, events: &[LogEvent]) -> std::io::Result<()> {
    for event in events {
        writeln!(out, "{}", to_json_line(event))?;
    }
    out.flush()
}

/// Parses a JSON Lines log. Blank lines are ignored.
pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<LogEvent>, LogError> {
    let mut events = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event = serde_json::from_str(&line).map_err(|e| LogError::Corrupt {
            line: i + 1,
            message: e.to_string(),
        })?;
        events.push(event);
    }
    Ok(events)
}

pub fn parse_jsonl(text: &str) -> Result<Vec<LogEvent>, LogError> {
    read_jsonl(text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rating::{Difficulty, LearningRate};
    use crate::scheduler::AttemptKind;
    use chrono::TimeZone;

    fn at(secs: i64) -> DateTime<Utc> {
        Utc.timestamp_opt(1_700_000_000 + secs, 0).unwrap()
    }

    #[test]
    fn stable_kind_tags() {
        let ev = LogEvent {
            timestamp: at(0),
            learner_id: "s1".into(),
            payload: EventPayload::ConceptCompleted {
                concept: "conditionals".into(),
            },
        };
        let v: serde_json::Value = serde_json::from_str(&to_json_line(&ev)).unwrap();
        assert_eq!(v["kind"], "concept_completed");
        assert_eq!(v["learner_id"], "s1");
        assert_eq!(v["concept"], "conditionals");
    }

    #[test]
    fn submitted_round_trips_exactly() {
        let ev = LogEvent {
            timestamp: at(5),
            learner_id: "s1".into(),
            payload: EventPayload::Skipped {
                concept: "conditionals".into(),
                attempt: AttemptRecord {
                    question_id: QuestionId(19),
                    level: Level::Easy,
                    kind: AttemptKind::Skipped,
                    rate: LearningRate::new(0.7).unwrap(),
                    probability: 0.5866175789173301,
                    skill_before: Skill::new(0.35),
                    skill_after: Skill::new(0.1),
                    difficulty_before: Difficulty::new(-0.1234567890123),
                    difficulty_after: Difficulty::new(0.1 + 0.2),
                },
                transition: Transition::Stay,
                request_id: Some("r-1".into()),
            },
        };
        let line = to_json_line(&ev);
        let back = parse_jsonl(&format!("{line}\n\n")).unwrap();
        assert_eq!(back, vec![ev]);
        assert_eq!(to_json_line(&back[0]), line);
    }

    #[test]
    fn corrupt_line_is_reported() {
        let err = parse_jsonl("{\"kind\":\"nope\"}\n").unwrap_err();
        assert!(matches!(err, LogError::Corrupt { line: 1, .. }));
    }
}
