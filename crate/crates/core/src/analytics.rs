//! Behaviour features computed from learning logs.
//!
//! Submissions are classified as correct (every test case passed), missing
//! logic (failed and flagged by the marker heuristic) or incorrect (the
//! rest). Concepts count as successful once completed and unsuccessful when
//! selected but never completed within the analysed window.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::statistics::Statistics;
use thiserror::Error;

use crate::events::{EventPayload, LogError, LogEvent};
use crate::ontology::ConceptId;
use crate::scheduler::{AssignmentMode, LearnerId};
use crate::session::{apply_event, EngineState};

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("corrupt log: {0}")]
    CorruptLog(String),
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error("output: {0}")]
    Io(#[from] std::io::Error),
}

impl From<LogError> for AnalyticsError {
    fn from(e: LogError) -> Self {
        AnalyticsError::CorruptLog(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SixFeatures {
    pub submissions: usize,
    pub correct_submissions: usize,
    pub incorrect_submissions: usize,
    pub missing_logic_submissions: usize,
    /// Percent of submissions.
    pub correct_submission_rate: f64,
    pub incorrect_submission_rate: f64,
    pub missing_logic_rate: f64,
    pub skip_count: usize,
    pub successful_concepts: usize,
    pub unsuccessful_concepts: usize,
    /// Distinct (learner, concept) pairs selected; denominator of the two
    /// concept fractions.
    pub concepts_selected: usize,
    pub successful_concept_fraction: f64,
    pub unsuccessful_concept_fraction: f64,
}

fn percent(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

fn fraction(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        part as f64 / whole as f64
    }
}

impl SixFeatures {
    pub const COLUMNS: [&'static str; 13] = [
        "submissions",
        "correct_submissions",
        "incorrect_submissions",
        "missing_logic_submissions",
        "correct_submission_rate",
        "incorrect_submission_rate",
        "missing_logic_rate",
        "skip_count",
        "successful_concepts",
        "unsuccessful_concepts",
        "concepts_selected",
        "successful_concept_fraction",
        "unsuccessful_concept_fraction",
    ];

    /// Values in [`Self::COLUMNS`] order.
    pub fn values(&self) -> [f64; 13] {
        [
            self.submissions as f64,
            self.correct_submissions as f64,
            self.incorrect_submissions as f64,
            self.missing_logic_submissions as f64,
            self.correct_submission_rate,
            self.incorrect_submission_rate,
            self.missing_logic_rate,
            self.skip_count as f64,
            self.successful_concepts as f64,
            self.unsuccessful_concepts as f64,
            self.concepts_selected as f64,
            self.successful_concept_fraction,
            self.unsuccessful_concept_fraction,
        ]
    }
}

/// Checks that the stream replays cleanly: known learners, consistent
/// assignments, nondecreasing timestamps per learner.
pub fn check_replayable(events: &[LogEvent]) -> Result<(), AnalyticsError> {
    let mut state = EngineState::default();
    for event in events {
        apply_event(&mut state, event).map_err(|e| AnalyticsError::CorruptLog(e.to_string()))?;
    }
    Ok(())
}

fn tally<'a>(events: impl Iterator<Item = &'a LogEvent>) -> SixFeatures {
    let mut f = SixFeatures::default();
    let mut selected: BTreeSet<(&LearnerId, &ConceptId)> = BTreeSet::new();
    let mut completed: BTreeSet<(&LearnerId, &ConceptId)> = BTreeSet::new();
    for event in events {
        match &event.payload {
            EventPayload::Submitted {
                all_correct,
                missing_logic,
                ..
            } => {
                f.submissions += 1;
                if *all_correct {
                    f.correct_submissions += 1;
                } else if *missing_logic {
                    f.missing_logic_submissions += 1;
                } else {
                    f.incorrect_submissions += 1;
                }
            }
            EventPayload::Skipped { .. } => f.skip_count += 1,
            EventPayload::ConceptSelected { concept, .. } => {
                selected.insert((&event.learner_id, concept));
            }
            EventPayload::ConceptCompleted { concept } => {
                f.successful_concepts += 1;
                completed.insert((&event.learner_id, concept));
            }
            _ => {}
        }
    }
    f.concepts_selected = selected.len();
    f.unsuccessful_concepts = selected.difference(&completed).count();
    f.correct_submission_rate = percent(f.correct_submissions, f.submissions);
    f.incorrect_submission_rate = percent(f.incorrect_submissions, f.submissions);
    f.missing_logic_rate = percent(f.missing_logic_submissions, f.submissions);
    f.successful_concept_fraction = fraction(f.successful_concepts, f.concepts_selected);
    f.unsuccessful_concept_fraction = fraction(f.unsuccessful_concepts, f.concepts_selected);
    f
}

/// Features over the whole stream, or over one learner's events.
pub fn compute_features(events: &[LogEvent], learner: Option<&LearnerId>) -> Result<SixFeatures, AnalyticsError> {
    check_replayable(events)?;
    Ok(tally(
        events
            .iter()
            .filter(|e| learner.is_none_or(|l| &e.learner_id == l)),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerRow {
    pub group: String,
    pub learner_id: LearnerId,
    pub features: SixFeatures,
}

pub fn group_label(mode: AssignmentMode) -> &'static str {
    match mode {
        AssignmentMode::Adaptive => "adaptive",
        AssignmentMode::Random { .. } => "random",
    }
}

/// One row per registered learner, sorted by id. Without an explicit
/// `group`, each learner is labelled with its assignment mode.
pub fn learner_rows(events: &[LogEvent], group: Option<&str>) -> Result<Vec<LearnerRow>, AnalyticsError> {
    check_replayable(events)?;
    let mut by_learner: BTreeMap<&LearnerId, (String, Vec<&LogEvent>)> = BTreeMap::new();
    for event in events {
        if let EventPayload::QuestionnaireAnswered { group_mode, .. } = &event.payload {
            let label = group.unwrap_or(group_label(*group_mode)).to_string();
            by_learner.insert(&event.learner_id, (label, Vec::new()));
        }
        if let Some((_, evs)) = by_learner.get_mut(&event.learner_id) {
            evs.push(event);
        }
    }
    Ok(by_learner
        .into_iter()
        .map(|(id, (group, evs))| LearnerRow {
            group,
            learner_id: id.clone(),
            features: tally(evs.into_iter()),
        })
        .collect())
}

pub fn write_learner_csv<W: Write>(out: W, rows: &[LearnerRow]) -> Result<(), AnalyticsError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["group", "learner_id"];
    header.extend(SixFeatures::COLUMNS);
    w.write_record(&header)?;
    for row in rows {
        let mut record = vec![row.group.clone(), row.learner_id.to_string()];
        record.extend(row.features.values().iter().map(|v| v.to_string()));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStat {
    pub feature: String,
    pub mean: f64,
    /// Sample standard deviation; zero with fewer than two learners.
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: String,
    pub learners: usize,
    pub stats: Vec<FeatureStat>,
}

pub fn summarize_rows(group: &str, rows: &[LearnerRow]) -> GroupSummary {
    let stats = SixFeatures::COLUMNS
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let values: Vec<f64> = rows.iter().map(|r| r.features.values()[i]).collect();
            let (mean, sd) = match values.len() {
                0 => (0.0, 0.0),
                1 => (values[0], 0.0),
                _ => (values.iter().mean(), values.iter().std_dev()),
            };
            FeatureStat {
                feature: name.to_string(),
                mean,
                sd,
            }
        })
        .collect();
    GroupSummary {
        group: group.to_string(),
        learners: rows.len(),
        stats,
    }
}

/// Per-group means and standard deviations of every feature, ordered by
/// group name.
pub fn summarize_groups(logs: &BTreeMap<String, Vec<LogEvent>>) -> Result<Vec<GroupSummary>, AnalyticsError> {
    logs.iter()
        .map(|(group, events)| Ok(summarize_rows(group, &learner_rows(events, Some(group))?)))
        .collect()
}

pub fn write_summary_csv<W: Write>(out: W, summaries: &[GroupSummary]) -> Result<(), AnalyticsError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["group", "learners", "feature", "mean", "sd"])?;
    for s in summaries {
        for stat in &s.stats {
            w.write_record([
                s.group.clone(),
                s.learners.to_string(),
                stat.feature.clone(),
                stat.mean.to_string(),
                stat.sd.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
