//! Run orchestration: configuration, the per-problem pipeline, resume,
//! replay and report recomputation.
//!
//! A run directory holds `config.json` (the resolved config), `log.jsonl`
//! (the run log), the emitted reports `report.txt`, `report.tsv` and
//! `report.json`, and `annotations.jsonl` once annotation starts.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::annotation::{ExplanationRef, ExplanationSource};
use crate::corpus::{load_corpus, select_solutions, Corpus, CorpusError, Problem};
use crate::explainer::{generate_explanation, ExplainContext, ExplainError, ExplainOutcome};
use crate::judge::{parallel_map, Checker, ExecutionLimits, JudgeError, JudgeResult, Sandbox, Stage, Verdict};
use crate::llmgateway::{
    ChatBackend, Gateway, GatewayError, RemoteConfig, RemoteHttp, ReplayBackend, RetryPolicy, ScriptedMock,
    DEFAULT_IN_FLIGHT,
};
use crate::metrics::{CandidateOutcome, FinalVerdict, MetricsReport, ProblemOutcome};
use crate::promptkit::{Budget, HintKind, PromptError, Temperatures, TemplateSet};
use crate::runstore::{Clock, JudgeEventRecord, LogIndex, Payload, RunLog, RunStore, SkipRecord, StoreError};
use crate::solver::{
    planned_origins, solve_baseline, solve_g2s, solve_with_hint, CandidateProgram, DropReason, Origin, Pipeline,
    SamplingStrategy, SolveOutcome, SolverContext, SolverError, UnitEvent, UnitStage,
};

pub const CONFIG_FILE: &str = "config.json";
pub const LOG_FILE: &str = "log.jsonl";
pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const REPORT_TEXT: &str = "report.txt";
pub const REPORT_TABLE: &str = "report.tsv";
pub const REPORT_JSON: &str = "report.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: &'static str, reason: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Gateway(GatewayError),
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error("replay miss: no logged {0}")]
    ReplayMiss(String),
    #[error("run log is incomplete: {0}")]
    IncompleteLog(String),
    #[error("report mismatch: {0}")]
    ReportMismatch(String),
    #[error("interrupted")]
    Interrupted,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl From<GatewayError> for PipelineError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::ReplayMiss { key } => PipelineError::ReplayMiss(format!("ModelCall record {key}")),
            other => PipelineError::Gateway(other),
        }
    }
}

impl PipelineError {
    /// Stable machine-readable error kind for CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Config { .. } => "config",
            PipelineError::Corpus(_) => "corpus",
            PipelineError::Prompt(_) => "prompt",
            PipelineError::Store(StoreError::RefusedResume { .. }) => "refused_resume",
            PipelineError::Store(_) => "store",
            PipelineError::Gateway(_) => "gateway",
            PipelineError::Judge(_) => "judge",
            PipelineError::ReplayMiss(_) => "replay_miss",
            PipelineError::IncompleteLog(_) => "incomplete_log",
            PipelineError::ReportMismatch(_) => "report_mismatch",
            PipelineError::Interrupted => "interrupted",
            PipelineError::Io { .. } => "io",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

fn config_err(field: &'static str, reason: impl Into<String>) -> PipelineError {
    PipelineError::Config { field, reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Explain,
    Solve,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PipelineKind {
    Baseline,
    G2s,
    Instructed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendConfig {
    /// Scripted responses from a JSON-lines rule file.
    Mock {
        fixture: PathBuf,
        #[serde(default)]
        latency_ms: u64,
    },
    Remote(RemoteConfig),
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CheckerConfig {
    #[serde(default = "default_true")]
    pub case_insensitive: bool,
    /// External checker used for every problem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Vec<String>>,
    /// External checkers for specific problems, overriding `command`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_problem: BTreeMap<String, Vec<String>>,
}

fn default_true() -> bool {
    true
}

impl CheckerConfig {
    pub fn for_problem(&self, problem_id: &str) -> Checker {
        Checker {
            case_insensitive: self.case_insensitive,
            command: self.per_problem.get(problem_id).cloned().or_else(|| self.command.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Workers {
    /// Problems processed concurrently.
    pub problems: usize,
    /// Candidate programs judged concurrently within a problem.
    pub judge: usize,
    /// Concurrent requests to the model backend.
    pub gateway_in_flight: usize,
}

impl Default for Workers {
    fn default() -> Self {
        Workers { problems: 1, judge: crate::judge::default_workers(), gateway_in_flight: DEFAULT_IN_FLIGHT }
    }
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub run_id: String,
    pub mode: RunMode,
    /// Relative paths resolve against the run directory.
    pub corpus: PathBuf,
    pub backend: BackendConfig,
    pub model_id: String,
    pub pipeline: PipelineKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hint: Option<HintKind>,
    pub strategy: SamplingStrategy,
    pub k: usize,
    pub temperatures: Temperatures,
    pub max_output_units: u32,
    pub budget_units: usize,
    pub limits: ExecutionLimits,
    pub checker: CheckerConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub templates_dir: Option<PathBuf>,
    pub isolate_network: bool,
    pub workers: Workers,
    pub run_dir: PathBuf,
}

impl RunConfig {
    pub fn new(run_id: impl Into<String>, corpus: impl Into<PathBuf>, backend: BackendConfig, run_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            run_id: run_id.into(),
            mode: RunMode::Solve,
            corpus: corpus.into(),
            backend,
            model_id: "gpt-3.5-turbo".into(),
            pipeline: PipelineKind::Baseline,
            hint: None,
            strategy: SamplingStrategy::Programs,
            k: 1,
            temperatures: Temperatures::default(),
            max_output_units: 1024,
            budget_units: crate::promptkit::DEFAULT_MAX_UNITS,
            limits: ExecutionLimits::default(),
            checker: CheckerConfig { case_insensitive: true, ..CheckerConfig::default() },
            templates_dir: None,
            isolate_network: true,
            workers: Workers::default(),
            run_dir: run_dir.into(),
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.run_id.trim().is_empty() || self.run_id.contains(['/', '\\']) {
            return Err(config_err("run_id", "must be a non-empty name without path separators"));
        }
        if self.k == 0 {
            return Err(config_err("k", "must be at least 1"));
        }
        if self.model_id.trim().is_empty() {
            return Err(config_err("model_id", "must not be empty"));
        }
        if self.mode == RunMode::Solve && self.pipeline == PipelineKind::Instructed && self.hint.is_none() {
            return Err(config_err("hint", "the instructed pipeline needs a hint kind"));
        }
        if self.budget_units == 0 {
            return Err(config_err("budget_units", "must be positive"));
        }
        if self.max_output_units == 0 {
            return Err(config_err("max_output_units", "must be positive"));
        }
        for (field, t) in [("temperatures.single", self.temperatures.single), ("temperatures.multi", self.temperatures.multi)] {
            if !(0.0..=2.0).contains(&t) {
                return Err(config_err(field, format!("{t} is outside [0, 2]")));
            }
        }
        self.limits.validate().map_err(|r| config_err("limits", r))?;
        if self.workers.problems == 0 || self.workers.judge == 0 || self.workers.gateway_in_flight == 0 {
            return Err(config_err("workers", "worker counts must be at least 1"));
        }
        Ok(())
    }

    pub fn solver_pipeline(&self) -> Pipeline {
        match (self.mode, self.pipeline) {
            (RunMode::Explain, _) => Pipeline::Explainer,
            (_, PipelineKind::Baseline) => Pipeline::Baseline,
            (_, PipelineKind::G2s) => Pipeline::G2S,
            (_, PipelineKind::Instructed) => Pipeline::Instructed(self.hint.unwrap_or(HintKind::StepByStep)),
        }
    }

    /// SHA-256 over the canonical JSON of every setting that can change
    /// results. Worker counts and the run directory are left out.
    pub fn digest(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("workers");
            map.remove("run_dir");
            if let Some(backend) = map.get_mut("backend").and_then(|b| b.as_object_mut()) {
                backend.remove("latency_ms");
                backend.remove("timeout_secs");
            }
        }
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.run_dir.join(path)
        }
    }

    pub fn corpus_path(&self) -> PathBuf {
        self.resolve(&self.corpus)
    }

    pub fn log_path(&self) -> PathBuf {
        self.run_dir.join(LOG_FILE)
    }

    pub fn templates(&self) -> Result<TemplateSet, PipelineError> {
        match &self.templates_dir {
            Some(dir) => Ok(TemplateSet::load_dir(self.resolve(dir))?),
            None => Ok(TemplateSet::default()),
        }
    }

    pub fn load_corpus(&self) -> Result<Corpus, PipelineError> {
        Ok(load_corpus(self.corpus_path())?.into_strict()?)
    }

    pub fn backend(&self) -> Result<Arc<dyn ChatBackend>, PipelineError> {
        match &self.backend {
            BackendConfig::Mock { fixture, latency_ms } => {
                let mock = ScriptedMock::load(self.resolve(fixture)).map_err(|e| config_err("backend.fixture", e.to_string()))?;
                Ok(Arc::new(mock.with_latency(Duration::from_millis(*latency_ms))))
            }
            BackendConfig::Remote(remote) => Ok(Arc::new(RemoteHttp::new(remote.clone())?)),
        }
    }
}

/// Reads `config.json` from a run directory; `run_dir` is set to the
/// directory actually read.
pub fn load_run_config(run_dir: impl AsRef<Path>) -> Result<RunConfig, PipelineError> {
    let run_dir = run_dir.as_ref();
    let path = run_dir.join(CONFIG_FILE);
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    let mut config: RunConfig =
        serde_json::from_str(&text).map_err(|e| config_err("config.json", e.to_string()))?;
    config.run_dir = run_dir.to_path_buf();
    Ok(config)
}

pub fn write_run_config(config: &RunConfig) -> Result<(), PipelineError> {
    std::fs::create_dir_all(&config.run_dir).map_err(io_err(&config.run_dir))?;
    let path = config.run_dir.join(CONFIG_FILE);
    let text = serde_json::to_string_pretty(config).expect("config serializes");
    std::fs::write(&path, text + "\n").map_err(io_err(&path))
}

/// Where records go. The run store writes to disk; replay collects them in
/// memory.
pub trait RecordSink: Send + Sync {
    fn append(&self, payload: Payload) -> Result<(), PipelineError>;
}

impl RecordSink for RunStore {
    fn append(&self, payload: Payload) -> Result<(), PipelineError> {
        RunStore::append(self, payload).map(|_| ()).map_err(PipelineError::from)
    }
}

#[derive(Debug, Default)]
pub struct MemorySink {
    pub records: Mutex<Vec<Payload>>,
}

impl RecordSink for MemorySink {
    fn append(&self, payload: Payload) -> Result<(), PipelineError> {
        self.records.lock().unwrap().push(payload);
        Ok(())
    }
}

/// Produces verdicts for candidates.
pub trait CandidateJudge: Send + Sync {
    fn judge(&self, problem: &Problem, candidate: &CandidateProgram, stage: Stage) -> Result<JudgeResult, PipelineError>;
}

pub struct SandboxJudge {
    pub sandbox: Sandbox,
    pub limits: ExecutionLimits,
    pub checker: CheckerConfig,
}

impl CandidateJudge for SandboxJudge {
    fn judge(&self, problem: &Problem, candidate: &CandidateProgram, stage: Stage) -> Result<JudgeResult, PipelineError> {
        let tests = match stage {
            Stage::Public => &problem.public_tests,
            Stage::Hidden => &problem.hidden_tests,
        };
        Ok(self.sandbox.judge_candidate(
            &candidate.key(),
            &candidate.source,
            &candidate.language_tag,
            tests,
            stage,
            &self.limits,
            &self.checker.for_problem(&problem.id),
        )?)
    }
}

/// Serves verdicts recorded in a log; never executes programs.
pub struct ReplayJudge {
    events: HashMap<(String, Stage), JudgeEventRecord>,
}

impl ReplayJudge {
    pub fn new(index: &LogIndex) -> Self {
        ReplayJudge { events: index.judge_events.clone() }
    }
}

impl CandidateJudge for ReplayJudge {
    fn judge(&self, _problem: &Problem, candidate: &CandidateProgram, stage: Stage) -> Result<JudgeResult, PipelineError> {
        let key = candidate.key();
        match self.events.get(&(key.clone(), stage)) {
            Some(e) if e.source_sha256 == source_digest(&candidate.source) => Ok(e.result.clone()),
            Some(_) => Err(PipelineError::ReplayMiss(format!("JudgeEvent record {key} {stage:?} for this source"))),
            None => Err(PipelineError::ReplayMiss(format!("JudgeEvent record {key} {stage:?}"))),
        }
    }
}

pub fn source_digest(source: &str) -> String {
    hex::encode(Sha256::digest(source.as_bytes()))
}

/// One pipeline run over a corpus.
pub struct Runner<'a> {
    pub config: &'a RunConfig,
    pub corpus: &'a Corpus,
    pub templates: &'a TemplateSet,
    pub budget: &'a Budget,
    pub gateway: &'a Gateway,
    pub judge: &'a dyn CandidateJudge,
    pub sink: &'a dyn RecordSink,
    pub cancel: Option<&'a AtomicBool>,
    index: Mutex<LogIndex>,
}

impl<'a> Runner<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        config: &'a RunConfig,
        corpus: &'a Corpus,
        templates: &'a TemplateSet,
        budget: &'a Budget,
        gateway: &'a Gateway,
        judge: &'a dyn CandidateJudge,
        sink: &'a dyn RecordSink,
        existing: LogIndex,
    ) -> Self {
        Runner { config, corpus, templates, budget, gateway, judge, sink, cancel: None, index: Mutex::new(existing) }
    }

    pub fn with_cancel(mut self, cancel: &'a AtomicBool) -> Self {
        self.cancel = Some(cancel);
        self
    }

    pub fn into_index(self) -> LogIndex {
        self.index.into_inner().unwrap()
    }

    fn emit(&self, payload: Payload) -> Result<(), PipelineError> {
        let mut index = self.index.lock().unwrap();
        if index.contains(&payload) {
            return Ok(());
        }
        self.sink.append(payload.clone())?;
        index.insert(&payload);
        Ok(())
    }

    fn skip(&self, problem: &Problem, event: UnitEvent) -> Result<(), PipelineError> {
        self.emit(Payload::Skip(SkipRecord { problem_id: problem.id.clone(), event }))
    }

    fn solver_ctx(&self) -> SolverContext<'_> {
        SolverContext {
            templates: self.templates,
            budget: self.budget,
            gateway: self.gateway,
            model_id: &self.config.model_id,
            max_output_units: self.config.max_output_units,
            language_tag: "python3",
            temperatures: self.config.temperatures,
        }
    }

    /// Processes `problems` with the configured number of problem workers.
    /// The first error stops new work from starting and is returned.
    pub fn run(&self, problems: &[&Problem]) -> Result<(), PipelineError> {
        let failed = AtomicBool::new(false);
        let results = parallel_map(problems, self.config.workers.problems, |p| {
            if failed.load(Ordering::SeqCst) || self.cancel.is_some_and(|c| c.load(Ordering::SeqCst)) {
                return Err(PipelineError::Interrupted);
            }
            let r = self.process(p);
            if r.is_err() {
                failed.store(true, Ordering::SeqCst);
            }
            r
        });
        let mut interrupted = false;
        for r in results {
            match r {
                Err(PipelineError::Interrupted) => interrupted = true,
                Err(e) => return Err(e),
                Ok(()) => {}
            }
        }
        if interrupted {
            Err(PipelineError::Interrupted)
        } else {
            Ok(())
        }
    }

    pub fn process(&self, problem: &Problem) -> Result<(), PipelineError> {
        match self.config.solver_pipeline() {
            Pipeline::Explainer => self.explain_problem(problem),
            pipeline => self.solve_problem(problem, pipeline),
        }
    }

    fn explain_problem(&self, problem: &Problem) -> Result<(), PipelineError> {
        let selected = match select_solutions(problem, self.config.k) {
            Ok(s) => s,
            Err(CorpusError::NoOracleSolution(_)) => return self.skip(problem, UnitEvent::NoOracleSolution),
            Err(e) => return Err(e.into()),
        };
        if selected.len() < self.config.k {
            self.skip(problem, UnitEvent::Shortfall { requested: self.config.k, available: selected.len() })?;
        }
        let ctx = ExplainContext {
            templates: self.templates,
            budget: self.budget,
            gateway: self.gateway,
            model_id: &self.config.model_id,
            max_output_units: self.config.max_output_units,
            temperatures: self.config.temperatures,
        };
        for (rank, (_, solution)) in selected.iter().enumerate() {
            let origin = Origin {
                pipeline: Pipeline::Explainer,
                strategy: SamplingStrategy::HumanSolutions,
                solution_index: rank,
                explanation_index: 0,
                sample_index: 0,
            };
            match generate_explanation(&ctx, problem, solution, rank, 0, 1) {
                Ok(ExplainOutcome::Explained(e)) => self.emit(Payload::Explanation(e))?,
                Ok(ExplainOutcome::Skipped { prompt_units }) => {
                    self.skip(problem, UnitEvent::Skipped { origin, stage: UnitStage::Explain, prompt_units })?
                }
                Err(ExplainError::Gateway(g)) => return Err(g.into()),
                Err(e) => self.skip(
                    problem,
                    UnitEvent::Dropped {
                        origin,
                        stage: UnitStage::Explain,
                        reason: DropReason::ExplanationParseFailure,
                        detail: e.to_string(),
                    },
                )?,
            }
        }
        Ok(())
    }

    fn solve_problem(&self, problem: &Problem, pipeline: Pipeline) -> Result<(), PipelineError> {
        let ctx = self.solver_ctx();
        let k = self.config.k;
        let outcome = match pipeline {
            Pipeline::Baseline => solve_baseline(&ctx, problem, k),
            Pipeline::G2S => solve_g2s(&ctx, problem, k),
            Pipeline::Instructed(hint) => solve_with_hint(&ctx, problem, hint, self.config.strategy, k),
            Pipeline::Explainer => unreachable!("handled by explain_problem"),
        };
        let SolveOutcome { mut candidates, explanations, events } = match outcome {
            Ok(o) => o,
            Err(SolverError::NoOracleSolution(_)) => return self.skip(problem, UnitEvent::NoOracleSolution),
            Err(SolverError::Gateway(g)) => return Err(g.into()),
            Err(e) => return Err(config_err("k", e.to_string())),
        };
        for e in explanations {
            self.emit(Payload::Explanation(e))?;
        }
        for e in events {
            self.skip(problem, e)?;
        }
        candidates.sort_by_key(|c| c.origin.order_key());
        for c in &candidates {
            self.emit(Payload::Candidate(c.clone()))?;
        }
        let judged = parallel_map(&candidates, self.config.workers.judge, |c| self.judge_stages(problem, c));
        judged.into_iter().collect()
    }

    fn judged(&self, problem: &Problem, candidate: &CandidateProgram, stage: Stage) -> Result<JudgeResult, PipelineError> {
        let digest = source_digest(&candidate.source);
        let cached = self
            .index
            .lock()
            .unwrap()
            .judge_events
            .get(&(candidate.key(), stage))
            .filter(|e| e.source_sha256 == digest)
            .map(|e| e.result.clone());
        if let Some(r) = cached {
            return Ok(r);
        }
        let result = self.judge.judge(problem, candidate, stage)?;
        self.emit(Payload::JudgeEvent(JudgeEventRecord {
            problem_id: problem.id.clone(),
            source_sha256: digest,
            result: result.clone(),
        }))?;
        Ok(result)
    }

    fn judge_stages(&self, problem: &Problem, candidate: &CandidateProgram) -> Result<(), PipelineError> {
        let public = self.judged(problem, candidate, Stage::Public)?;
        if public.final_verdict.is_accepted() && !problem.hidden_tests.is_empty() {
            self.judged(problem, candidate, Stage::Hidden)?;
        }
        Ok(())
    }
}

/// Whether every planned unit of `problem` has reached a terminal record.
pub fn problem_done(config: &RunConfig, problem: &Problem, index: &LogIndex) -> bool {
    let pipeline = config.solver_pipeline();
    let skips: Vec<&SkipRecord> = index.skips.iter().filter(|s| s.problem_id == problem.id).collect();
    let resolved_by_skip = |origin: &Origin| {
        skips.iter().any(|s| match &s.event {
            UnitEvent::Skipped { origin: o, .. } | UnitEvent::Dropped { origin: o, .. } => o == origin,
            UnitEvent::NoOracleSolution => true,
            UnitEvent::Shortfall { .. } => false,
        })
    };
    let planned = planned_origins(problem, pipeline, config.strategy, config.k);
    if planned.is_empty() {
        return !skips.is_empty();
    }
    planned.iter().all(|origin| {
        if resolved_by_skip(origin) {
            return true;
        }
        if pipeline == Pipeline::Explainer {
            return index
                .explanations
                .contains_key(&(problem.id.clone(), origin.solution_index, origin.explanation_index));
        }
        let key = crate::solver::candidate_key(&problem.id, origin);
        let Some(public) = index.judge_events.get(&(key.clone(), Stage::Public)) else {
            return false;
        };
        !public.result.final_verdict.is_accepted()
            || problem.hidden_tests.is_empty()
            || index.judge_events.contains_key(&(key, Stage::Hidden))
    })
}

/// Problems with outstanding work, in corpus order.
pub fn pending_problems<'c>(config: &RunConfig, corpus: &'c Corpus, index: &LogIndex) -> Vec<&'c Problem> {
    corpus.problems.iter().filter(|p| !problem_done(config, p, index)).collect()
}

/// Counts of planned and outstanding work for `--dry-run`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkPlan {
    pub problems: usize,
    pub planned_units: usize,
    pub pending_problems: usize,
    pub pending_units: usize,
    pub resuming: bool,
}

pub fn plan_work(config: &RunConfig, corpus: &Corpus, existing: Option<&LogIndex>) -> WorkPlan {
    let pipeline = config.solver_pipeline();
    let units = |p: &Problem| planned_origins(p, pipeline, config.strategy, config.k).len().max(1);
    let empty = LogIndex::default();
    let index = existing.unwrap_or(&empty);
    let pending = pending_problems(config, corpus, index);
    WorkPlan {
        problems: corpus.len(),
        planned_units: corpus.problems.iter().map(units).sum(),
        pending_problems: pending.len(),
        pending_units: pending.iter().map(|p| units(p)).sum(),
        resuming: existing.is_some(),
    }
}

/// Builds per-problem outcomes for the configured pipeline from the log.
pub fn outcomes_from_index(config: &RunConfig, corpus: &Corpus, index: &LogIndex) -> Result<Vec<ProblemOutcome>, PipelineError> {
    let pipeline = config.solver_pipeline();
    let mut by_problem: BTreeMap<&str, Vec<&CandidateProgram>> = BTreeMap::new();
    for c in index.candidates.values().filter(|c| c.origin.pipeline == pipeline) {
        by_problem.entry(c.problem_id.as_str()).or_default().push(c);
    }
    let mut out = Vec::with_capacity(corpus.len());
    for problem in &corpus.problems {
        let mut cands = by_problem.remove(problem.id.as_str()).unwrap_or_default();
        cands.sort_by_key(|c| c.origin.order_key());
        let mut candidates = Vec::with_capacity(cands.len());
        for c in cands {
            let key = c.key();
            let public = index
                .judge_events
                .get(&(key.clone(), Stage::Public))
                .ok_or_else(|| PipelineError::IncompleteLog(format!("no public verdict for {key}")))?;
            let passed_public = public.result.final_verdict.is_accepted();
            let final_verdict = if !passed_public {
                FinalVerdict::NotJudgedHidden
            } else if problem.hidden_tests.is_empty() {
                FinalVerdict::Judged(Verdict::Accepted)
            } else {
                let hidden = index
                    .judge_events
                    .get(&(key.clone(), Stage::Hidden))
                    .ok_or_else(|| PipelineError::IncompleteLog(format!("no hidden verdict for {key}")))?;
                FinalVerdict::Judged(hidden.result.final_verdict)
            };
            candidates.push(CandidateOutcome { candidate: key, passed_public, final_verdict });
        }
        out.push(ProblemOutcome { problem_id: problem.id.clone(), rating: problem.rating, candidates });
    }
    Ok(out)
}

/// Units that were planned but never produced a candidate.
pub fn skipped_units(index: &LogIndex) -> usize {
    index
        .skips
        .iter()
        .filter(|s| !matches!(s.event, UnitEvent::Shortfall { .. }))
        .count()
}

pub fn config_echo(config: &RunConfig) -> serde_json::Value {
    serde_json::json!({
        "mode": config.mode,
        "pipeline": config.solver_pipeline().to_string(),
        "strategy": config.strategy,
        "k": config.k,
        "model_id": config.model_id,
        "temperatures": config.temperatures,
        "budget_units": config.budget_units,
        "limits": config.limits,
        "checker": config.checker,
    })
}

/// Recomputes the report from log records alone.
pub fn report_from_log(config: &RunConfig, corpus: &Corpus, log: &RunLog) -> Result<MetricsReport, PipelineError> {
    report_from_index(config, corpus, &log.index(), &log.header.config_digest)
}

pub fn report_from_index(config: &RunConfig, corpus: &Corpus, index: &LogIndex, digest: &str) -> Result<MetricsReport, PipelineError> {
    let outcomes = outcomes_from_index(config, corpus, index)?;
    Ok(MetricsReport::build(&config.run_id, digest, config.k, &outcomes, skipped_units(index), config_echo(config)))
}

pub fn write_reports(run_dir: &Path, report: &MetricsReport) -> Result<(), PipelineError> {
    for (name, body) in [
        (REPORT_TEXT, report.render_text()),
        (REPORT_TABLE, report.render_table()),
        (REPORT_JSON, serde_json::to_string_pretty(report).expect("report serializes") + "\n"),
    ] {
        let path = run_dir.join(name);
        std::fs::write(&path, body).map_err(io_err(&path))?;
    }
    Ok(())
}

/// What a finished (or interrupted) execution left behind.
#[derive(Debug)]
pub struct RunSummary {
    pub plan: WorkPlan,
    pub report: Option<MetricsReport>,
    pub explanations: usize,
    pub backend_calls: u64,
    pub sealed: bool,
}

/// Options that do not change results.
#[derive(Default)]
pub struct ExecuteOptions<'a> {
    pub cancel: Option<&'a AtomicBool>,
    pub clock: Option<Clock>,
    /// Replaces the configured backend, for tests.
    pub backend: Option<Arc<dyn ChatBackend>>,
}

/// Runs or resumes the configured pipeline, writing the log and reports
/// under `config.run_dir`.
pub fn execute(config: &RunConfig, options: ExecuteOptions<'_>) -> Result<RunSummary, PipelineError> {
    config.validate()?;
    let corpus = config.load_corpus()?;
    let templates = config.templates()?;
    let budget = Budget::new(config.budget_units);
    let digest = config.digest();
    let log_path = config.log_path();

    let (store, existing) = if log_path.exists() {
        let (store, log) = RunStore::resume(&log_path, &digest, options.clock.clone())?;
        (store, Some(log))
    } else {
        write_run_config(config)?;
        let store = match options.clock.clone() {
            Some(clock) => RunStore::create_with_clock(&log_path, &config.run_id, &digest, clock)?,
            None => RunStore::create(&log_path, &config.run_id, &digest)?,
        };
        (store, None)
    };
    let index = existing.as_ref().map(RunLog::index).unwrap_or_default();
    let plan = plan_work(config, &corpus, existing.as_ref().map(|_| &index));
    let store = Arc::new(store);

    let backend = match options.backend {
        Some(b) => b,
        None => config.backend()?,
    };
    let gateway = Gateway::new(backend)
        .with_recorder(store.clone())
        .with_in_flight(config.workers.gateway_in_flight)
        .with_cached(index.model_calls.clone());
    let judge = SandboxJudge {
        sandbox: Sandbox { isolate_network: config.isolate_network, ..Sandbox::default() },
        limits: config.limits,
        checker: config.checker.clone(),
    };
    let pending = pending_problems(config, &corpus, &index);
    let mut runner = Runner::new(config, &corpus, &templates, &budget, &gateway, &judge, store.as_ref(), index);
    if let Some(c) = options.cancel {
        runner = runner.with_cancel(c);
    }
    runner.run(&pending)?;
    let index = runner.into_index();

    let report = match config.mode {
        RunMode::Solve => {
            let log = crate::runstore::read_log(&log_path)?;
            let report = report_from_log(config, &corpus, &log)?;
            write_reports(&config.run_dir, &report)?;
            Some(report)
        }
        RunMode::Explain => None,
    };
    store.seal()?;
    Ok(RunSummary {
        plan,
        report,
        explanations: index.explanations.len(),
        backend_calls: gateway.backend_calls(),
        sealed: true,
    })
}

/// Re-runs the pipeline against the log: model calls come from logged
/// completions and verdicts from logged judge events. Nothing is executed
/// or written.
pub fn replay(run_dir: impl AsRef<Path>) -> Result<MetricsReport, PipelineError> {
    let config = load_run_config(run_dir)?;
    let corpus = config.load_corpus()?;
    let templates = config.templates()?;
    let budget = Budget::new(config.budget_units);
    let log = crate::runstore::read_log(config.log_path())?;
    let logged = log.index();
    let backend = ReplayBackend::new(logged.model_calls.clone());
    let gateway = Gateway::new(Arc::new(backend)).with_retry(RetryPolicy { attempts: 1, ..RetryPolicy::default() });
    let judge = ReplayJudge::new(&logged);
    let sink = MemorySink::default();
    let mut sequential = config.clone();
    sequential.workers = Workers { problems: 1, judge: 1, gateway_in_flight: 1 };
    let problems: Vec<&Problem> = corpus.problems.iter().collect();
    let runner = Runner::new(&sequential, &corpus, &templates, &budget, &gateway, &judge, &sink, LogIndex::default());
    runner.run(&problems)?;
    let replayed = runner.into_index();
    for (key, c) in &logged.candidates {
        if c.origin.pipeline == config.solver_pipeline() && replayed.candidates.get(key) != Some(c) {
            return Err(PipelineError::ReportMismatch(format!("logged candidate {key} is not reproduced")));
        }
    }
    report_from_index(&config, &corpus, &replayed, &log.header.config_digest)
}

/// Recomputes the report from the log and compares it with `report.json`.
pub fn verify_report(run_dir: impl AsRef<Path>) -> Result<MetricsReport, PipelineError> {
    let run_dir = run_dir.as_ref();
    let config = load_run_config(run_dir)?;
    let corpus = config.load_corpus()?;
    let log = crate::runstore::read_log(config.log_path())?;
    let recomputed = report_from_log(&config, &corpus, &log)?;
    let path = run_dir.join(REPORT_JSON);
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    let stored: MetricsReport =
        serde_json::from_str(&text).map_err(|e| PipelineError::ReportMismatch(format!("{}: {e}", path.display())))?;
    if stored != recomputed {
        let a = serde_json::to_value(&stored).expect("report serializes");
        let b = serde_json::to_value(&recomputed).expect("report serializes");
        let fields: Vec<&str> = match (a.as_object(), b.as_object()) {
            (Some(a), Some(b)) => a.keys().filter(|k| a.get(*k) != b.get(*k)).map(String::as_str).collect(),
            _ => Vec::new(),
        };
        return Err(PipelineError::ReportMismatch(format!(
            "{} differs from the numbers recomputed from the log (fields: {})",
            path.display(),
            fields.join(", ")
        )));
    }
    Ok(recomputed)
}

/// Explanations in a run that can be handed to annotators.
pub fn explanation_sources(corpus: &Corpus, log: &RunLog) -> Vec<ExplanationSource> {
    let index = log.index();
    let mut out = Vec::new();
    for ((problem_id, rank, sample), explanation) in &index.explanations {
        let Some(problem) = corpus.get(problem_id) else { continue };
        let Ok(selected) = select_solutions(problem, rank + 1) else { continue };
        let Some((oracle_index, solution)) = selected.get(*rank) else { continue };
        out.push(ExplanationSource {
            reference: ExplanationRef { problem_id: problem_id.clone(), solution_index: *rank, explanation_index: *sample },
            oracle_index: *oracle_index,
            author: solution.author.clone(),
            problem: problem.clone(),
            explanation: explanation.clone(),
        });
    }
    out
}
