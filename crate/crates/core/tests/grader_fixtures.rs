mod common;

use adapt_core::bank::Question;
use adapt_core::grading::{
    detect_missing_logic, grade, render_feedback, ActualOutput, CompareOptions, FeedbackCase, Submission, Verdict,
};
use common::*;
use proptest::prelude::*;
use serde::Deserialize;

#[derive(Deserialize)]
struct Fixture {
    question: Question,
    submission: Submission,
    expected: Vec<FeedbackCase>,
}

fn run(name: &str) -> (Vec<FeedbackCase>, Vec<FeedbackCase>, bool) {
    let fx: Fixture = serde_json::from_str(&fixture(&format!("grader/{name}"))).unwrap();
    let report = grade(&fx.submission, &fx.question, None, &CompareOptions::default()).unwrap();
    let doc = render_feedback(&report);
    assert_eq!(doc.all_correct, report.all_correct);
    (doc.cases, fx.expected, report.all_correct)
}

#[test]
fn float_reading_solution_passes_both_cases() {
    let (got, expected, all) = run("correct_between.json");
    assert_eq!(got, expected);
    assert!(all);
    assert!(got.iter().all(|c| c.input.is_none() && c.actual.is_none()));
}

#[test]
fn crashing_solution_shows_null_output() {
    let (got, expected, all) = run("crash_between.json");
    assert_eq!(got, expected);
    assert!(!all);
    for case in &got {
        assert_eq!(case.verdict, Verdict::Incorrect);
        assert_eq!(case.actual, Some(ActualOutput::Null));
    }
    let json = serde_json::to_value(&got[0]).unwrap();
    assert!(json["actual"].is_null());
}

#[test]
fn off_by_one_age_check_fails_first_case_only() {
    let (got, expected, all) = run("mixed_vote.json");
    assert_eq!(got, expected);
    assert!(!all);
    assert_eq!(got[0].expected, Some(vec!["True".to_string()]));
    assert_eq!(got[0].actual, Some(ActualOutput::Lines(vec!["0".into()])));
    assert_eq!(got[1].verdict, Verdict::Correct);
}

#[test]
fn missing_logic_flags_only_failures_without_markers() {
    let fx: Fixture = serde_json::from_str(&fixture("grader/mixed_vote.json")).unwrap();
    let g = graph();
    let failing = grade(&fx.submission, &fx.question, None, &CompareOptions::default()).unwrap();
    assert!(!detect_missing_logic(&fx.submission.source, &fx.question, &g, &failing).unwrap());
    let no_if = "age = int(input())\nprint(18 - age)  # if only\n";
    assert!(!detect_missing_logic(no_if, &fx.question, &g, &failing).unwrap());
    let no_logic = "print(0)\n";
    assert!(detect_missing_logic(no_logic, &fx.question, &g, &failing).unwrap());
    let passing = grade(
        &Submission {
            outputs: Some(vec![Some(vec!["True".into()]), Some(vec!["6".into()])]),
            ..fx.submission.clone()
        },
        &fx.question,
        None,
        &CompareOptions::default(),
    )
    .unwrap();
    assert!(!detect_missing_logic(no_logic, &fx.question, &g, &passing).unwrap());
}

fn line() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9 .,-]{0,8}".prop_map(|s| s.trim_end().to_string())
}

proptest! {
    #[test]
    fn all_correct_is_conjunction_of_cases(
        expected in prop::collection::vec(prop::collection::vec(line(), 1..4), 1..5),
        flips in prop::collection::vec(any::<bool>(), 5),
        padding in prop::collection::vec(" {0,3}", 5),
    ) {
        let fx: Fixture = serde_json::from_str(&fixture("grader/mixed_vote.json")).unwrap();
        let mut question = fx.question;
        question.test_cases = expected
            .iter()
            .map(|lines| adapt_core::bank::TestCase { stdin: vec![], expected_stdout: lines.clone() })
            .collect();
        let outputs: Vec<Option<Vec<String>>> = expected
            .iter()
            .enumerate()
            .map(|(i, lines)| {
                let mut out: Vec<String> = lines.iter().map(|l| format!("{l}{}", padding[i])).collect();
                if flips[i] {
                    out.push("extra".into());
                }
                out.push(String::new());
                Some(out)
            })
            .collect();
        let sub = Submission { source: String::new(), outputs: Some(outputs), elapsed_seconds: None };
        let report = grade(&sub, &question, None, &CompareOptions::default()).unwrap();
        prop_assert_eq!(report.per_case.len(), expected.len());
        for (i, case) in report.per_case.iter().enumerate() {
            prop_assert_eq!(case.verdict == Verdict::Correct, !flips[i]);
        }
        prop_assert_eq!(report.all_correct, report.per_case.iter().all(|c| c.verdict == Verdict::Correct));
        let again = grade(&sub, &question, None, &CompareOptions::default()).unwrap();
        prop_assert_eq!(again, report);
    }
}
