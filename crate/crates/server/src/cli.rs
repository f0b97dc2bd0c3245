//! Command-line entry points. Exit status: 0 on success, 1 when validation
//! finds problems or a command fails, 2 on usage errors.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use adapt_core::analytics::{self, compute_features, learner_rows, summarize_rows, LearnerRow, SixFeatures};
use adapt_core::bank::{load_bank, QuestionBank};
use adapt_core::events::{read_jsonl, write_jsonl};
use adapt_core::grading::{CommandExecutor, Executor};
use adapt_core::ontology::{load_ontology, validate_bank, ConceptGraph, Severity, ValidationReport};
use adapt_core::rating::LearningRate;
use adapt_core::scheduler::{AssignmentMode, LearnerId};
use adapt_core::session::{Engine, EngineConfig, StepClock, SystemClock};
use adapt_core::simulator::{self, run_cohort, CohortConfig, LearnerPolicy};
use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use crate::api::{self, Service, ServiceConfig};

#[derive(Debug, Parser)]
#[command(name = "adapt", version, about = "Adaptive programming practice engine")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Adaptive,
    Random,
}

impl Mode {
    pub fn with_seed(self, seed: u64) -> AssignmentMode {
        match self {
            Mode::Adaptive => AssignmentMode::Adaptive,
            Mode::Random => AssignmentMode::Random { seed },
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check an ontology and question bank.
    Validate {
        ontology: PathBuf,
        bank: PathBuf,
        /// Treat warnings as failures.
        #[arg(long)]
        strict: bool,
    },
    /// Simulate one learner on a stream of fresh questions and print the
    /// trace as JSON lines.
    Simulate {
        #[arg(long)]
        k: f64,
        #[arg(long, default_value = "always-correct")]
        policy: LearnerPolicy,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        steps: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run simulated learners through the full session flow and write the
    /// resulting event log.
    Cohort {
        #[arg(long)]
        ontology: PathBuf,
        #[arg(long)]
        bank: PathBuf,
        #[arg(long, default_value_t = 10)]
        learners: usize,
        #[arg(long, value_enum, default_value_t = Mode::Adaptive)]
        mode: Mode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Policies handed to learners in rotation.
        #[arg(long = "policy", default_value = "bernoulli:0.6")]
        policies: Vec<LearnerPolicy>,
        /// Total submissions for the whole cohort.
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long, default_value = "learner")]
        prefix: String,
        #[arg(long, default_value_t = 0.1)]
        skip_probability: f64,
        /// Keep practising completed concepts while budget remains.
        #[arg(long)]
        reenter: bool,
        #[arg(long)]
        out: PathBuf,
        /// Append to an existing log instead of replacing it.
        #[arg(long)]
        append: bool,
    },
    /// Correct answers needed to reach the threshold from zero skill.
    StepsToThreshold {
        #[arg(long)]
        k: f64,
        #[arg(long, default_value_t = adapt_core::rating::MASTERY_THRESHOLD)]
        threshold: f64,
    },
    /// Compute per-learner features from an event log. The CSV ends with
    /// an `all,*` row over the whole log.
    Analyze {
        log: PathBuf,
        #[arg(long)]
        csv: PathBuf,
        /// Also write per-group means and standard deviations.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        #[arg(long, env = "DATA_DIR")]
        data_dir: PathBuf,
        /// Defaults to ontology.json in the data directory.
        #[arg(long)]
        ontology: Option<PathBuf>,
        /// Defaults to bank.json in the data directory.
        #[arg(long)]
        bank: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Mode::Adaptive)]
        mode: Mode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Command that runs a submission, e.g. `python3 {source}`.
        #[arg(long)]
        executor: Option<String>,
        /// Per-case run time limit in seconds.
        #[arg(long, default_value_t = 5.0)]
        timeout: f64,
        #[arg(long, default_value_t = 1000)]
        snapshot_every: u64,
    },
}

/// Group and learner labels of the whole-log row that ends `analyze`
/// output.
pub const TOTAL_GROUP: &str = "all";
pub const TOTAL_LEARNER: &str = "*";

pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code().clamp(0, 255) as u8);
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn read_text(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn load_inputs(ontology: &Path, bank: &Path) -> anyhow::Result<(ConceptGraph, QuestionBank)> {
    let graph = load_ontology(&read_text(ontology)?).with_context(|| format!("loading {}", ontology.display()))?;
    let bank = load_bank(&read_text(bank)?).with_context(|| format!("loading {}", bank.display()))?;
    Ok((graph, bank))
}

fn print_report(report: &ValidationReport) {
    for f in &report.findings {
        let label = match f.severity() {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        println!("{label}: {f}");
    }
    println!(
        "{} errors, {} warnings",
        report.errors().count(),
        report.warnings().count()
    );
}

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn print_features(f: &SixFeatures) {
    for (name, value) in SixFeatures::COLUMNS.iter().zip(f.values()) {
        println!("{name},{value}");
    }
}

pub fn run(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::Validate { ontology, bank, strict } => {
            let (graph, bank) = match load_inputs(&ontology, &bank) {
                Ok(v) => v,
                Err(e) => {
                    println!("error: {e:#}");
                    return Ok(ExitCode::from(1));
                }
            };
            let report = validate_bank(&graph, bank.questions());
            print_report(&report);
            let failed = report.has_errors() || (strict && !report.is_empty());
            Ok(ExitCode::from(u8::from(failed)))
        }
        Command::Simulate {
            k,
            policy,
            seed,
            steps,
            out,
        } => {
            let k = LearningRate::new(k)?;
            let trace = simulator::simulate_stream(k, policy.validate()?, seed, steps);
            simulator::write_trace(output(out.as_deref())?, &trace)?;
            let last = trace.last();
            eprintln!(
                "{} answers, final level {}, skill {:.4}",
                trace.len(),
                last.map_or("easy".to_string(), |s| s.level.to_string()),
                last.map_or(0.0, |s| s.skill_after.value())
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Cohort {
            ontology,
            bank,
            learners,
            mode,
            seed,
            policies,
            budget,
            prefix,
            skip_probability,
            reenter,
            out,
            append,
        } => {
            let (graph, bank) = load_inputs(&ontology, &bank)?;
            let mut existing = Vec::new();
            if append && out.exists() {
                existing = read_jsonl(BufReader::new(File::open(&out)?))?;
                analytics::check_replayable(&existing)?;
            }
            let config = EngineConfig {
                mode: mode.with_seed(seed),
                ..EngineConfig::default()
            };
            let start = existing
                .iter()
                .map(|e| e.timestamp)
                .max()
                .map_or_else(cohort_epoch, |t| t + chrono::Duration::seconds(1));
            let clock = Box::new(StepClock::new(start, chrono::Duration::seconds(7)));
            let mut engine = Engine::replay(Arc::new(graph), Arc::new(bank), config, clock, &existing)?;
            let run = run_cohort(
                &mut engine,
                &CohortConfig {
                    learners,
                    policies,
                    mode: mode.with_seed(seed),
                    seed,
                    learner_prefix: prefix,
                    skip_probability,
                    submission_budget: budget,
                    reenter_completed: reenter,
                    ..CohortConfig::default()
                },
            )?;
            existing.extend(run.events);
            let mut w = BufWriter::new(File::create(&out).with_context(|| format!("creating {}", out.display()))?);
            write_jsonl(&mut w, &existing)?;
            w.flush()?;
            eprintln!("{} learners, {} submissions", learners, run.submissions);
            Ok(ExitCode::SUCCESS)
        }
        Command::StepsToThreshold { k, threshold } => {
            let steps = simulator::steps_to_threshold(LearningRate::new(k)?, threshold)?;
            println!("{steps}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Analyze { log, csv, summary } => {
            let events = read_jsonl(BufReader::new(
                File::open(&log).with_context(|| format!("opening {}", log.display()))?,
            ))?;
            let rows = learner_rows(&events, None)?;
            let overall = compute_features(&events, None)?;
            let mut table = rows.clone();
            table.push(LearnerRow {
                group: TOTAL_GROUP.to_string(),
                learner_id: LearnerId::new(TOTAL_LEARNER),
                features: overall,
            });
            analytics::write_learner_csv(output(Some(&csv))?, &table)?;
            if let Some(path) = summary {
                let mut groups: Vec<&str> = rows.iter().map(|r| r.group.as_str()).collect();
                groups.sort_unstable();
                groups.dedup();
                let summaries: Vec<_> = groups
                    .into_iter()
                    .map(|g| {
                        let members: Vec<_> = rows.iter().filter(|r| r.group == g).cloned().collect();
                        summarize_rows(g, &members)
                    })
                    .collect();
                analytics::write_summary_csv(output(Some(&path))?, &summaries)?;
            }
            print_features(&overall);
            Ok(ExitCode::SUCCESS)
        }
        Command::Serve {
            port,
            host,
            data_dir,
            ontology,
            bank,
            mode,
            seed,
            executor,
            timeout,
            snapshot_every,
        } => {
            let ontology = ontology.unwrap_or_else(|| data_dir.join("ontology.json"));
            let bank = bank.unwrap_or_else(|| data_dir.join("bank.json"));
            let (graph, bank) = load_inputs(&ontology, &bank)?;
            let report = validate_bank(&graph, bank.questions());
            for f in report.warnings() {
                tracing::warn!("{f}");
            }
            if report.has_errors() {
                print_report(&report);
                bail!("question bank failed validation");
            }
            if !(timeout.is_finite() && timeout > 0.0) {
                bail!("--timeout must be a positive number of seconds");
            }
            let executor: Option<Arc<dyn Executor>> = match executor {
                Some(t) => Some(Arc::new(CommandExecutor::from_template(
                    &t,
                    Duration::from_secs_f64(timeout),
                )?)),
                None => None,
            };
            let config = ServiceConfig {
                engine: EngineConfig {
                    mode: mode.with_seed(seed),
                    ..EngineConfig::default()
                },
                snapshot_every,
            };
            let service = Arc::new(Service::open(
                &data_dir,
                Arc::new(graph),
                Arc::new(bank),
                config,
                Box::new(SystemClock),
                executor,
            )?);
            let addr = SocketAddr::new(host, port);
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(serve(Arc::clone(&service), addr))?;
            service.shutdown()?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn cohort_epoch() -> chrono::DateTime<chrono::Utc> {
    chrono::DateTime::from_timestamp(1_717_405_200, 0).expect("valid timestamp")
}

async fn serve(service: Arc<Service>, addr: SocketAddr) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    let addr = listener.local_addr().with_context(|| format!("binding {addr}"))?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, api::router(service))
        .with_graceful_shutdown(shutdown_signal())
        .await?;
    tracing::info!("shutting down");
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}
