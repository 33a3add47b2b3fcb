mod config;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use explainbench::annotation::{Assignment, ExplanationRef, QuestionId, ScoreSubmission};
use explainbench::corpus::load_corpus;
use explainbench::pipeline::{
    config_echo, execute, load_run_config, plan_work, replay, report_from_log, verify_report, ExecuteOptions,
    PipelineError, RunConfig, RunMode,
};
use explainbench::runstore::read_log;
use explainbench_client::{Client, ClientError};
use explainbench_server::{open_desk, AppState, Tokens};
use serde_json::json;

use crate::config::{annotation_settings, config_error, RunArgs};

const DEFAULT_BIND: &str = "127.0.0.1:8750";

#[derive(Debug, Parser)]
#[command(name = "explainbench", version, about = "Explain competitive-programming solutions and solve from explanations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a corpus file and print a summary.
    IngestCheck {
        #[arg(long)]
        corpus: PathBuf,
        /// Fail if any record is rejected.
        #[arg(long)]
        strict: bool,
    },
    /// Generate explanations for the top-ranked oracle solutions.
    Explain(RunArgs),
    /// Generate and judge candidate programs, then write reports.
    Solve(RunArgs),
    /// Recompute the report of a run from its log and print it.
    Report {
        #[arg(long)]
        run_dir: PathBuf,
        /// Print the tab-separated table instead of text.
        #[arg(long)]
        tsv: bool,
    },
    /// Re-run a finished run from its log without calling the model or executing programs.
    Replay {
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Check that report.json matches the numbers recomputed from the log.
    VerifyReport {
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Print the run's explanations as JSON lines.
    ExportExplanations {
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Serve the annotation API for a run.
    AnnotateServe {
        #[arg(long)]
        run_dir: PathBuf,
        /// Config file with an [annotation] table of tokens.
        #[arg(long, short = 'c')]
        config: Option<PathBuf>,
        #[arg(long)]
        bind: Option<String>,
    },
    /// Talk to a running annotation service.
    Annotate {
        #[arg(long, default_value = "http://127.0.0.1:8750")]
        url: String,
        #[arg(long, env = "EXPLAINBENCH_ANNOTATOR_TOKEN", hide_env_values = true)]
        token: String,
        #[command(subcommand)]
        action: AnnotateAction,
    },
}

#[derive(Debug, Subcommand)]
enum AnnotateAction {
    /// List an annotator's tasks.
    Tasks { annotator: String },
    /// Show a task with its explanation and questions.
    Show { task: String },
    /// Submit scores, e.g. `submit t0001 q1=2 q3=1 q8=0 q9=-1 q10=2`.
    Submit {
        task: String,
        #[arg(required = true)]
        scores: Vec<String>,
        #[arg(long)]
        comment: Option<String>,
    },
    /// Per-question means over finished tasks.
    Likert { run: String },
    /// List explanations that can be assigned (admin).
    Explanations { run: String },
    /// Create tasks for explanations (admin), e.g. `assign run cf1/s0/e0 --annotator a1`.
    Assign {
        run: String,
        #[arg(required = true)]
        explanations: Vec<String>,
        /// Defaults to the author of the explained solution.
        #[arg(long)]
        annotator: Option<String>,
    },
}

static INTERRUPTED: AtomicBool = AtomicBool::new(false);

extern "C" fn on_signal(_: libc::c_int) {
    INTERRUPTED.store(true, Ordering::SeqCst);
}

fn install_signal_handlers() {
    let handler = on_signal as extern "C" fn(libc::c_int) as libc::sighandler_t;
    unsafe {
        libc::signal(libc::SIGINT, handler);
        libc::signal(libc::SIGTERM, handler);
    }
}

#[derive(Debug)]
enum Failure {
    Pipeline(PipelineError),
    Client(ClientError),
    Usage(String),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure::Pipeline(e)
    }
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        Failure::Client(e)
    }
}

impl From<explainbench_server::ServerError> for Failure {
    fn from(e: explainbench_server::ServerError) -> Self {
        match e {
            explainbench_server::ServerError::Pipeline(p) => Failure::Pipeline(p),
            explainbench_server::ServerError::Store(s) => Failure::Pipeline(PipelineError::Store(s)),
            explainbench_server::ServerError::Io(e) => Failure::Usage(e.to_string()),
        }
    }
}

impl Failure {
    fn record(&self) -> serde_json::Value {
        match self {
            Failure::Pipeline(PipelineError::Config { field, reason }) => {
                json!({"error": "config", "field": field, "message": reason})
            }
            Failure::Pipeline(e) => json!({"error": e.kind(), "message": e.to_string()}),
            Failure::Client(ClientError::Api { status, body }) => {
                json!({"error": body.error, "status": status.as_u16(), "message": body.message, "question": body.question})
            }
            Failure::Client(e) => json!({"error": "transport", "message": e.to_string()}),
            Failure::Usage(m) => json!({"error": "usage", "message": m}),
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            Failure::Pipeline(PipelineError::Config { .. }) | Failure::Usage(_) => 2,
            Failure::Pipeline(PipelineError::Interrupted) => 130,
            _ => 1,
        }
    }
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("values serialize"));
}

fn announce(config: &RunConfig) {
    eprintln!("resolved config: {}", serde_json::to_string(&config_echo(config)).expect("config serializes"));
}

fn run_pipeline(args: &RunArgs, mode: RunMode) -> Result<(), Failure> {
    let config = args.resolve(mode)?;
    announce(&config);
    if args.dry_run {
        let corpus = config.load_corpus()?;
        config.templates()?;
        let existing = if config.log_path().exists() { Some(read_log(config.log_path()).map_err(PipelineError::from)?) } else { None };
        let index = existing.as_ref().map(|l| l.index());
        let plan = plan_work(&config, &corpus, index.as_ref());
        print_json(&json!({"config": config, "digest": config.digest(), "plan": plan}));
        return Ok(());
    }
    install_signal_handlers();
    let summary = execute(&config, ExecuteOptions { cancel: Some(&INTERRUPTED), ..ExecuteOptions::default() })?;
    eprintln!(
        "done: {} problems, {} pending at start, {} backend calls, {} explanations",
        summary.plan.problems, summary.plan.pending_problems, summary.backend_calls, summary.explanations
    );
    if let Some(report) = summary.report {
        print!("{}", report.render_text());
    }
    Ok(())
}

fn ingest_check(corpus: &PathBuf, strict: bool) -> Result<(), Failure> {
    let report = load_corpus(corpus).map_err(PipelineError::from)?;
    for d in &report.rejected {
        eprintln!("rejected {d}");
    }
    let problems = &report.corpus.problems;
    let public_only = problems.iter().filter(|p| p.public_only()).count();
    let mut buckets: BTreeMap<&str, usize> = BTreeMap::new();
    for p in problems {
        *buckets.entry(p.bucket().label()).or_default() += 1;
    }
    print_json(&json!({
        "problems": problems.len(),
        "rejected": report.rejected.len(),
        "public_only": public_only,
        "buckets": buckets,
    }));
    if strict {
        report.into_strict().map_err(PipelineError::from)?;
    }
    Ok(())
}

fn export_explanations(run_dir: &PathBuf) -> Result<(), Failure> {
    let config = load_run_config(run_dir)?;
    let log = read_log(config.log_path()).map_err(PipelineError::from)?;
    for ((problem_id, solution_index, explanation_index), explanation) in &log.index().explanations {
        let line = json!({
            "ref": ExplanationRef {
                problem_id: problem_id.clone(),
                solution_index: *solution_index,
                explanation_index: *explanation_index,
            }.to_string(),
            "explanation": explanation,
        });
        println!("{line}");
    }
    Ok(())
}

fn runtime() -> Result<tokio::runtime::Runtime, Failure> {
    tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(|e| Failure::Usage(e.to_string()))
}

fn annotate_serve(run_dir: &PathBuf, config: Option<&PathBuf>, bind: Option<&str>) -> Result<(), Failure> {
    let settings = annotation_settings(config.map(|p| p.as_path()))?;
    if settings.tokens.is_empty() && settings.admin_token.is_none() {
        return Err(config_error("annotation.tokens", "no annotator or admin tokens configured").into());
    }
    let bind = bind.map(str::to_string).or(settings.bind.clone()).unwrap_or_else(|| DEFAULT_BIND.into());
    let addr: SocketAddr = bind.parse().map_err(|e| config_error("annotation.bind", format!("{bind}: {e}")))?;
    let desk = open_desk(run_dir)?;
    let state = Arc::new(AppState {
        desk: Arc::new(desk),
        tokens: Tokens::new(&settings.tokens, settings.admin_token.as_deref()),
    });
    runtime()?.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| Failure::Usage(format!("{addr}: {e}")))?;
        eprintln!("listening on {}", listener.local_addr().map_err(|e| Failure::Usage(e.to_string()))?);
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        explainbench_server::serve(listener, state, shutdown).await.map_err(|e| Failure::Usage(e.to_string()))
    })
}

fn parse_scores(items: &[String]) -> Result<BTreeMap<QuestionId, i64>, Failure> {
    let mut scores = BTreeMap::new();
    for item in items {
        let (q, v) = item.split_once('=').ok_or_else(|| Failure::Usage(format!("expected qN=score, got {item:?}")))?;
        let q: QuestionId = q.parse().map_err(|_| Failure::Usage(format!("unknown question {q:?}")))?;
        let v: i64 = v.parse().map_err(|_| Failure::Usage(format!("score for {q} is not an integer: {v:?}")))?;
        scores.insert(q, v);
    }
    Ok(scores)
}

fn annotate(url: &str, token: &str, action: &AnnotateAction) -> Result<(), Failure> {
    let client = Client::new(url, token);
    runtime()?.block_on(async {
        match action {
            AnnotateAction::Tasks { annotator } => print_json(&client.tasks_for(annotator).await?),
            AnnotateAction::Show { task } => print_json(&client.task(task).await?),
            AnnotateAction::Submit { task, scores, comment } => {
                let submission = ScoreSubmission { scores: parse_scores(scores)?, free_comment: comment.clone() };
                print_json(&client.submit_scores(task, &submission).await?)
            }
            AnnotateAction::Likert { run } => {
                let view = client.likert(run).await?;
                print!("{}", view.summary.render());
                print_json(&view);
            }
            AnnotateAction::Explanations { run } => {
                for r in client.explanations(run).await? {
                    println!("{r}");
                }
            }
            AnnotateAction::Assign { run, explanations, annotator } => {
                let mut assignments = Vec::new();
                for e in explanations {
                    let explanation: ExplanationRef =
                        e.parse().map_err(|_| Failure::Usage(format!("expected <problem>/sN/eM, got {e:?}")))?;
                    assignments.push(Assignment { explanation, annotator_id: annotator.clone() });
                }
                print_json(&client.create_tasks(run, &assignments).await?)
            }
        }
        Ok(())
    })
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::IngestCheck { corpus, strict } => ingest_check(corpus, *strict),
        Command::Explain(args) => run_pipeline(args, RunMode::Explain),
        Command::Solve(args) => run_pipeline(args, RunMode::Solve),
        Command::Report { run_dir, tsv } => {
            let config = load_run_config(run_dir)?;
            let corpus = config.load_corpus()?;
            let log = read_log(config.log_path()).map_err(PipelineError::from)?;
            let report = report_from_log(&config, &corpus, &log)?;
            print!("{}", if *tsv { report.render_table() } else { report.render_text() });
            Ok(())
        }
        Command::Replay { run_dir } => {
            let report = replay(run_dir)?;
            print!("{}", report.render_text());
            Ok(())
        }
        Command::VerifyReport { run_dir } => {
            verify_report(run_dir)?;
            println!("report.json matches the log");
            Ok(())
        }
        Command::ExportExplanations { run_dir } => export_explanations(run_dir),
        Command::AnnotateServe { run_dir, config, bind } => annotate_serve(run_dir, config.as_ref(), bind.as_deref()),
        Command::Annotate { url, token, action } => annotate(url, token, action),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_env("EXPLAINBENCH_LOG").unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("{}", failure.record());
            ExitCode::from(failure.exit_code())
        }
    }
}
