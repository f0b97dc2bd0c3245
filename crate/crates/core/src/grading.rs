//! Test-case grading and feedback.
//!
//! The default path grades recorded per-case stdout transcripts. An external
//! command can be configured instead; it is run once per test case with the
//! case's stdin and a wall-clock timeout. A program that crashes or times out
//! yields an `Incorrect` verdict whose actual output is the null marker.

use std::io::Write;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bank::{Question, TestCase};
use crate::ontology::{CommentSyntax, ConceptGraph, OntologyError};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Error)]
pub enum GradingError {
    #[error("question has no test cases")]
    NoTestCases,
    #[error("missing output transcript: expected {expected} cases, got {got}")]
    MissingTranscript { expected: usize, got: usize },
    #[error("executor failure: {0}")]
    ExecutorFailure(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Correct,
    Incorrect,
}

/// Program output for one case; `Null` when the program produced none
/// (crash, timeout).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ActualOutput {
    Lines(Vec<String>),
    Null,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "failure", rename_all = "snake_case")]
pub enum RunFailure {
    NonZeroExit { code: Option<i32> },
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub verdict: Verdict,
    pub input_shown: Vec<String>,
    pub expected_shown: Vec<String>,
    pub actual_shown: ActualOutput,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<RunFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeReport {
    pub per_case: Vec<CaseResult>,
    pub all_correct: bool,
}

impl GradeReport {
    pub fn execution_failures(&self) -> usize {
        self.per_case.iter().filter(|c| c.failure.is_some()).count()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub source: String,
    /// Per-case stdout lines from an external runner; `None` entries mark a
    /// case that produced no output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outputs: Option<Vec<Option<Vec<String>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_seconds: Option<f64>,
}

/// Output-comparison knobs. Both are off by default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CompareOptions {
    #[serde(default)]
    pub case_insensitive: bool,
    #[serde(default)]
    pub numeric_tolerance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunResult {
    Completed { stdout: Vec<String> },
    Failed(RunFailure),
}

pub trait Executor: Send + Sync {
    fn run(&self, source: &str, language: &str, stdin: &[String]) -> Result<RunResult, GradingError>;
}

/// Splits embedded newlines, strips trailing whitespace per line and drops
/// trailing blank lines.
pub fn normalize_lines<S: AsRef<str>>(lines: &[S]) -> Vec<String> {
    let mut out: Vec<String> = lines
        .iter()
        .flat_map(|l| l.as_ref().split('\n').map(|s| s.trim_end().to_string()).collect::<Vec<_>>())
        .collect();
    while out.last().is_some_and(|l| l.is_empty()) {
        out.pop();
    }
    out
}

fn tokens_match(expected: &str, actual: &str, opts: &CompareOptions) -> bool {
    let same = if opts.case_insensitive {
        expected.to_lowercase() == actual.to_lowercase()
    } else {
        expected == actual
    };
    if same {
        return true;
    }
    match (opts.numeric_tolerance, expected.parse::<f64>(), actual.parse::<f64>()) {
        (Some(tol), Ok(a), Ok(b)) => (a - b).abs() <= tol,
        _ => false,
    }
}

fn line_matches(expected: &str, actual: &str, opts: &CompareOptions) -> bool {
    if opts.numeric_tolerance.is_none() {
        return tokens_match(expected, actual, opts);
    }
    let e: Vec<&str> = expected.split_whitespace().collect();
    let a: Vec<&str> = actual.split_whitespace().collect();
    e.len() == a.len() && e.iter().zip(&a).all(|(x, y)| tokens_match(x, y, opts))
}

pub fn outputs_match(expected: &[String], actual: &[String], opts: &CompareOptions) -> bool {
    let e = normalize_lines(expected);
    let a = normalize_lines(actual);
    e.len() == a.len() && e.iter().zip(&a).all(|(x, y)| line_matches(x, y, opts))
}

fn judge(case: &TestCase, actual: Option<Vec<String>>, failure: Option<RunFailure>, opts: &CompareOptions) -> CaseResult {
    let verdict = match &actual {
        Some(lines) if failure.is_none() && outputs_match(&case.expected_stdout, lines, opts) => Verdict::Correct,
        _ => Verdict::Incorrect,
    };
    CaseResult {
        verdict,
        input_shown: case.stdin.clone(),
        expected_shown: case.expected_stdout.clone(),
        actual_shown: match actual {
            Some(lines) if failure.is_none() => ActualOutput::Lines(normalize_lines(&lines)),
            _ => ActualOutput::Null,
        },
        failure,
    }
}

/// Grades a submission from its transcripts, or by running `executor` when
/// no transcripts are supplied.
pub fn grade(
    submission: &Submission,
    question: &Question,
    executor: Option<&dyn Executor>,
    opts: &CompareOptions,
) -> Result<GradeReport, GradingError> {
    if question.test_cases.is_empty() {
        return Err(GradingError::NoTestCases);
    }
    let per_case: Vec<CaseResult> = match (&submission.outputs, executor) {
        (Some(outputs), _) => {
            if outputs.len() != question.test_cases.len() {
                return Err(GradingError::MissingTranscript {
                    expected: question.test_cases.len(),
                    got: outputs.len(),
                });
            }
            question
                .test_cases
                .iter()
                .zip(outputs)
                .map(|(case, out)| judge(case, out.clone(), None, opts))
                .collect()
        }
        (None, Some(exec)) => question
            .test_cases
            .iter()
            .map(|case| {
                Ok(match exec.run(&submission.source, &question.language, &case.stdin)? {
                    RunResult::Completed { stdout } => judge(case, Some(stdout), None, opts),
                    RunResult::Failed(f) => judge(case, None, Some(f), opts),
                })
            })
            .collect::<Result<_, GradingError>>()?,
        (None, None) => {
            return Err(GradingError::MissingTranscript {
                expected: question.test_cases.len(),
                got: 0,
            })
        }
    };
    let all_correct = per_case.iter().all(|c| c.verdict == Verdict::Correct);
    Ok(GradeReport { per_case, all_correct })
}

/// Removes line and block comments. String literals are not tracked.
pub fn strip_comments(source: &str, syntax: &CommentSyntax) -> String {
    let mut out = String::with_capacity(source.len());
    let mut rest = source;
    'outer: while !rest.is_empty() {
        for (open, close) in &syntax.block {
            if !open.is_empty() && rest.starts_with(open.as_str()) {
                let body = &rest[open.len()..];
                rest = match body.find(close.as_str()) {
                    Some(end) => &body[end + close.len()..],
                    None => "",
                };
                out.push(' ');
                continue 'outer;
            }
        }
        for marker in &syntax.line {
            if !marker.is_empty() && rest.starts_with(marker.as_str()) {
                rest = match rest.find('\n') {
                    Some(end) => &rest[end..],
                    None => "",
                };
                continue 'outer;
            }
        }
        let ch = rest.chars().next().expect("non-empty");
        out.push(ch);
        rest = &rest[ch.len_utf8()..];
    }
    out
}

fn is_ident(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// True when `marker` occurs in `text` without being glued to identifier
/// characters on a side where the marker itself starts or ends with one.
pub fn contains_token(text: &str, marker: &str) -> bool {
    if marker.is_empty() {
        return false;
    }
    let first_ident = marker.chars().next().is_some_and(is_ident);
    let last_ident = marker.chars().next_back().is_some_and(is_ident);
    text.match_indices(marker).any(|(i, _)| {
        let before_ok = !first_ident || text[..i].chars().next_back().is_none_or(|c| !is_ident(c));
        let after_ok = !last_ident || text[i + marker.len()..].chars().next().is_none_or(|c| !is_ident(c));
        before_ok && after_ok
    })
}

/// Flags a failing submission that contains none of the syntax markers of
/// the question's concepts. Abstains (false) when no tagged concept declares
/// markers for the question's language.
pub fn detect_missing_logic(
    source: &str,
    question: &Question,
    graph: &ConceptGraph,
    report: &GradeReport,
) -> Result<bool, OntologyError> {
    let mut marker_sets = Vec::new();
    for tag in &question.concept_tags {
        let markers = graph.require(tag)?.markers_for(&question.language);
        if !markers.is_empty() {
            marker_sets.push(markers);
        }
    }
    if report.all_correct || marker_sets.is_empty() {
        return Ok(false);
    }
    let code = match graph.comment_syntax(&question.language) {
        Some(syntax) => strip_comments(source, syntax),
        None => source.to_string(),
    };
    Ok(marker_sets
        .iter()
        .all(|markers| !markers.iter().any(|m| contains_token(&code, m))))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackCase {
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none", deserialize_with = "present")]
    pub actual: Option<ActualOutput>,
}

// An explicit `null` is `Some(ActualOutput::Null)`; only an absent field is `None`.
fn present<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<ActualOutput>, D::Error> {
    ActualOutput::deserialize(d).map(Some)
}

/// Wire form of a grade: one block per case, with input, expected and
/// actual sections only on incorrect cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackDocument {
    pub cases: Vec<FeedbackCase>,
    pub all_correct: bool,
}

pub fn render_feedback(report: &GradeReport) -> FeedbackDocument {
    FeedbackDocument {
        cases: report
            .per_case
            .iter()
            .map(|c| match c.verdict {
                Verdict::Correct => FeedbackCase {
                    verdict: Verdict::Correct,
                    input: None,
                    expected: None,
                    actual: None,
                },
                Verdict::Incorrect => FeedbackCase {
                    verdict: Verdict::Incorrect,
                    input: Some(c.input_shown.clone()),
                    expected: Some(c.expected_shown.clone()),
                    actual: Some(c.actual_shown.clone()),
                },
            })
            .collect(),
        all_correct: report.all_correct,
    }
}

/// Runs learner code through an external command.
///
/// `args` may contain `{source}` (path of a temporary file holding the
/// source) and `{language}`. Each case's stdin lines are piped in; exit code
/// zero yields the captured stdout.
#[derive(Debug, Clone)]
pub struct CommandExecutor {
    pub program: String,
    pub args: Vec<String>,
    pub timeout: Duration,
}

impl CommandExecutor {
    /// Parses a whitespace-separated template such as `python3 {source}`.
    pub fn from_template(template: &str, timeout: Duration) -> Result<Self, GradingError> {
        let mut parts = template.split_whitespace().map(str::to_string);
        let program = parts
            .next()
            .ok_or_else(|| GradingError::ExecutorFailure("empty command template".into()))?;
        Ok(Self {
            program,
            args: parts.collect(),
            timeout,
        })
    }
}

impl Executor for CommandExecutor {
    fn run(&self, source: &str, language: &str, stdin: &[String]) -> Result<RunResult, GradingError> {
        let fail = |e: std::io::Error| GradingError::ExecutorFailure(e.to_string());
        let mut file = tempfile::NamedTempFile::new().map_err(fail)?;
        file.write_all(source.as_bytes()).map_err(fail)?;
        file.flush().map_err(fail)?;
        let path = file.path().to_string_lossy().into_owned();
        let args: Vec<String> = self
            .args
            .iter()
            .map(|a| a.replace("{source}", &path).replace("{language}", language))
            .collect();

        let mut child = Command::new(&self.program)
            .args(&args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(fail)?;

        let mut input = stdin.join("\n");
        if !stdin.is_empty() {
            input.push('\n');
        }
        let mut pipe = child.stdin.take().expect("stdin is piped");
        let writer = std::thread::spawn(move || {
            // the program may exit without reading its input
            let _ = pipe.write_all(input.as_bytes());
        });
        let mut stdout = child.stdout.take().expect("stdout is piped");
        let reader = std::thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = std::io::Read::read_to_end(&mut stdout, &mut buf);
            buf
        });

        let deadline = Instant::now() + self.timeout;
        let status = loop {
            if let Some(status) = child.try_wait().map_err(fail)? {
                break Some(status);
            }
            if Instant::now() >= deadline {
                let _ = child.kill();
                let _ = child.wait();
                break None;
            }
            std::thread::sleep(Duration::from_millis(5));
        };
        let Some(status) = status else {
            // Grandchildren may still hold the pipes open; leave the helper
            // threads to finish on their own.
            return Ok(RunResult::Failed(RunFailure::Timeout));
        };
        let _ = writer.join();
        let out = reader.join().unwrap_or_default();

        Ok(if status.success() {
            RunResult::Completed {
                stdout: String::from_utf8_lossy(&out).lines().map(str::to_string).collect(),
            }
        } else {
            RunResult::Failed(RunFailure::NonZeroExit { code: status.code() })
        })
    }
}
