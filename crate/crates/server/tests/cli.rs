use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_adapt"));
    cmd.env("NO_COLOR", "1").env("RUST_LOG", "info").env_remove("DATA_DIR");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn steps_to_threshold_prints_reference_counts() {
    for (k, steps) in [("0.7", "3"), ("0.6", "4"), ("0.5", "5"), ("0.4", "6"), ("0.3", "8")] {
        let o = run(&["steps-to-threshold", "--k", k]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert_eq!(stdout(&o).trim(), steps);
    }
    let o = run(&["steps-to-threshold", "--k", "0"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn validate_exit_codes() {
    let o = run(&["validate", &fixture("ontology.json"), &fixture("conditionals_bank.json")]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = run(&["validate", &fixture("ontology.json"), &fixture("conditionals_bank.json"), "--strict"]);
    assert_eq!(o.status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(
        &bad,
        r#"{"questions":[{"id":1,"language":"python","level":"easy","concept_tags":["not_a_concept"],
            "prompt_en":"x","test_cases":[{"stdin":[],"expected_stdout":["1"]}]}]}"#,
    )
    .unwrap();
    let o = run(&["validate", &fixture("ontology.json"), path(&bad)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("not_a_concept") || stderr(&o).contains("not_a_concept"));

    std::fs::write(&bad, "[1, 2").unwrap();
    let o = run(&["validate", &fixture("ontology.json"), path(&bad)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(run(&["steps-to-threshold"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["simulate", "--k", "abc"]).status.code(), Some(2));
}

#[test]
fn analyze_empty_log_gives_zeros() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("empty.jsonl");
    std::fs::write(&log, "").unwrap();
    let csv = dir.path().join("f.csv");
    let o = run(&["analyze", path(&log), "--csv", path(&csv)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("group,learner_id,submissions"));
    let cells: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(&cells[..2], ["all", "*"]);
    assert!(cells[2..].iter().all(|c| *c == "0"), "{}", lines[1]);
    assert!(stdout(&o).lines().all(|l| l.ends_with(",0")));
}

#[test]
fn analyze_rejects_corrupt_and_missing_logs() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("bad.jsonl");
    std::fs::write(&log, "{\"bad\":1}\n").unwrap();
    let csv = dir.path().join("f.csv");
    let o = run(&["analyze", path(&log), "--csv", path(&csv)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 1"));
    let o = run(&["analyze", path(&dir.path().join("nope.jsonl")), "--csv", path(&csv)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn cohort_then_analyze_counts_every_submission() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.jsonl");
    let o = run(&[
        "cohort",
        "--ontology",
        &fixture("ontology.json"),
        "--bank",
        &fixture("demo_bank.json"),
        "--learners",
        "4",
        "--budget",
        "40",
        "--mode",
        "random",
        "--seed",
        "5",
        "--out",
        path(&log),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(&[
        "cohort",
        "--ontology",
        &fixture("ontology.json"),
        "--bank",
        &fixture("demo_bank.json"),
        "--learners",
        "3",
        "--budget",
        "25",
        "--prefix",
        "extra",
        "--append",
        "--out",
        path(&log),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));

    let csv = dir.path().join("f.csv");
    let summary = dir.path().join("s.csv");
    let o = run(&["analyze", path(&log), "--csv", path(&csv), "--summary", path(&summary)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).lines().any(|l| l == "submissions,65"));

    let mut rows = csv::Reader::from_path(&csv).unwrap();
    let records: Vec<csv::StringRecord> = rows.records().map(Result::unwrap).collect();
    assert_eq!(records.len(), 8);
    let total: u64 = records[..7].iter().map(|r| r[2].parse::<u64>().unwrap()).sum();
    assert_eq!(total, 65);
    assert_eq!(&records[7][0], "all");
    let groups: std::collections::BTreeSet<&str> = records[..7].iter().map(|r| r.get(0).unwrap()).collect();
    assert_eq!(groups.into_iter().collect::<Vec<_>>(), ["adaptive", "random"]);
    let summary = std::fs::read_to_string(&summary).unwrap();
    assert!(summary.lines().any(|l| l.starts_with("random,4,submissions,10,")));
}

#[test]
fn simulate_writes_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("trace.jsonl");
    let o = run(&["simulate", "--k", "0.7", "--steps", "9", "--out", path(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    let steps: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(steps.len(), 9);
    let promotions: Vec<usize> = steps
        .iter()
        .enumerate()
        .filter(|(_, s)| s["transition"] == "promote")
        .map(|(i, _)| i)
        .collect();
    assert_eq!(promotions, [2, 5, 8]);
    assert_eq!(steps[0]["skill_after"], 0.35);
}

#[test]
fn serve_refuses_invalid_bank() {
    let dir = tempfile::tempdir().unwrap();
    let bank = dir.path().join("bank.json");
    std::fs::write(&bank, "{\"questions\": 3}").unwrap();
    let o = bin()
        .args(["serve", "--port", "0", "--ontology", &fixture("ontology.json")])
        .arg("--bank")
        .arg(&bank)
        .arg("--data-dir")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

fn http(addr: &str, request: &str) -> String {
    let mut stream = TcpStream::connect(addr).unwrap();
    stream.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
    stream.write_all(request.as_bytes()).unwrap();
    let mut out = String::new();
    stream.read_to_string(&mut out).unwrap();
    out
}

/// Kills the server if a test fails before it shuts down.
struct Server(std::process::Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn start(data: &PathBuf) -> (Server, String) {
    let mut child = bin()
        .args(["serve", "--port", "0", "--ontology", &fixture("ontology.json")])
        .args(["--bank", &fixture("demo_bank.json")])
        .env("DATA_DIR", data)
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stderr.take().unwrap()).lines();
    let child = Server(child);
    let deadline = Instant::now() + Duration::from_secs(20);
    let addr = loop {
        assert!(Instant::now() < deadline, "server did not start");
        let line = lines.next().expect("server exited").unwrap();
        if let Some(rest) = line.split("addr=").nth(1) {
            break rest.split_whitespace().next().unwrap().to_string();
        }
    };
    std::thread::spawn(move || lines.for_each(drop));
    (child, addr)
}

#[test]
fn serve_answers_over_tcp_and_persists() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().to_path_buf();
    let (mut child, addr) = start(&data);

    let body = r#"{"has_programming_experience":false,"language":"python"}"#;
    let reply = http(
        &addr,
        &format!(
            "POST /session HTTP/1.1\r\nHost: x\r\nX-Learner-Id: zed\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        ),
    );
    assert!(reply.starts_with("HTTP/1.1 200"), "{reply}");
    assert!(reply.contains("\"recommended_concept\""));

    let reply = http(&addr, "GET /health HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n");
    assert!(reply.contains("\"events\":1"), "{reply}");

    let pid = child.0.id().to_string();
    let killed = Command::new("kill").args(["-TERM", &pid]).status().unwrap();
    assert!(killed.success());
    let status = child.0.wait().unwrap();
    assert!(status.success(), "{status:?}");
    assert!(data.join("snapshot.json").exists());

    let (_child, addr) = start(&data);
    let reply = http(
        &addr,
        "GET /session HTTP/1.1\r\nHost: x\r\nX-Learner-Id: zed\r\nConnection: close\r\n\r\n",
    );
    assert!(reply.starts_with("HTTP/1.1 200"), "{reply}");
    assert!(reply.contains("\"recommended_concept\":\"variables\""), "{reply}");
}
