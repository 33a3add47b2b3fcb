//! Config file format and flag overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use explainbench::judge::ExecutionLimits;
use explainbench::llmgateway::RemoteConfig;
use explainbench::pipeline::{BackendConfig, CheckerConfig, PipelineError, PipelineKind, RunConfig, RunMode, Workers};
use explainbench::promptkit::{HintKind, Temperatures};
use explainbench::solver::SamplingStrategy;
use serde::Deserialize;

/// TOML config file. Every key is optional; relative paths resolve
/// against the file's directory.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub run_id: Option<String>,
    pub run_dir: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub model_id: Option<String>,
    pub pipeline: Option<PipelineKind>,
    pub hint: Option<HintKind>,
    pub strategy: Option<SamplingStrategy>,
    pub k: Option<usize>,
    pub max_output_units: Option<u32>,
    pub budget_units: Option<usize>,
    pub templates_dir: Option<PathBuf>,
    pub isolate_network: Option<bool>,
    pub backend: Option<BackendConfig>,
    pub temperatures: Option<Temperatures>,
    pub limits: Option<LimitsFile>,
    pub checker: Option<CheckerConfig>,
    pub workers: Option<WorkersFile>,
    pub annotation: Option<AnnotationFile>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitsFile {
    pub wall_time_ms: Option<u64>,
    pub memory_mb: Option<u64>,
    pub output_cap_mb: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkersFile {
    pub problems: Option<usize>,
    pub judge: Option<usize>,
    pub gateway_in_flight: Option<usize>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationFile {
    pub bind: Option<String>,
    pub admin_token: Option<String>,
    /// Annotator id to bearer token.
    #[serde(default)]
    pub tokens: BTreeMap<String, String>,
}

pub fn config_error(field: &'static str, reason: impl Into<String>) -> PipelineError {
    PipelineError::Config { field, reason: reason.into() }
}

pub fn read_file_config(path: &Path) -> Result<FileConfig, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| config_error("config", format!("{}: {e}", path.display())))?;
    let mut file: FileConfig =
        toml::from_str(&text).map_err(|e| config_error("config", format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let abs = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    file.run_dir.as_mut().map(abs);
    file.corpus.as_mut().map(abs);
    file.templates_dir.as_mut().map(abs);
    if let Some(BackendConfig::Mock { fixture, .. }) = file.backend.as_mut() {
        abs(fixture);
    }
    Ok(file)
}

fn parse_hint(s: &str) -> Result<HintKind, String> {
    HintKind::from_short_name(s).ok_or_else(|| {
        let names: Vec<&str> = HintKind::ALL.iter().map(|h| h.short_name()).collect();
        format!("unknown hint {s:?}; expected one of {}", names.join(", "))
    })
}

fn parse_strategy(s: &str) -> Result<SamplingStrategy, String> {
    match s {
        "1" | "human-solutions" => Ok(SamplingStrategy::HumanSolutions),
        "2" | "explanations" => Ok(SamplingStrategy::Explanations),
        "3" | "programs" => Ok(SamplingStrategy::Programs),
        _ => Err(format!("unknown strategy {s:?}; expected 1|2|3 or human-solutions|explanations|programs")),
    }
}

fn parse_pipeline(s: &str) -> Result<PipelineKind, String> {
    match s {
        "baseline" => Ok(PipelineKind::Baseline),
        "g2s" => Ok(PipelineKind::G2s),
        "instructed" => Ok(PipelineKind::Instructed),
        _ => Err(format!("unknown pipeline {s:?}; expected baseline|g2s|instructed")),
    }
}

/// Flags shared by `explain` and `solve`. Flags override the config file,
/// which overrides defaults.
#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML config file.
    #[arg(long, short = 'c')]
    pub config: Option<PathBuf>,
    /// Run directory holding config snapshot, log and reports [default: runs/<run-id>].
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    /// Run name [default: "run"].
    #[arg(long)]
    pub run_id: Option<String>,
    /// Corpus file, one JSON problem per line.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Use the scripted mock backend with this rule file.
    #[arg(long, conflicts_with = "endpoint")]
    pub mock: Option<PathBuf>,
    /// Artificial delay per mock call in milliseconds.
    #[arg(long)]
    pub mock_latency_ms: Option<u64>,
    /// Chat-completions endpoint URL; the key is read from EXPLAINBENCH_API_KEY.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Model identifier sent to the backend [default: gpt-3.5-turbo].
    #[arg(long)]
    pub model: Option<String>,
    /// Solver pipeline: baseline, g2s or instructed [default: baseline].
    #[arg(long, value_parser = parse_pipeline)]
    pub pipeline: Option<PipelineKind>,
    /// Hint point for the instructed pipeline: used-alg, step-by-step, exp-sol, one-sentence, time-complexity.
    #[arg(long, value_parser = parse_hint)]
    pub hint: Option<HintKind>,
    /// Sampling strategy: 1 (vary solutions), 2 (vary explanations), 3 (vary programs) [default: 3].
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: Option<SamplingStrategy>,
    /// Candidates per problem [default: 1].
    #[arg(long, short = 'k')]
    pub k: Option<usize>,
    /// Prompt budget in units [default: 4096].
    #[arg(long)]
    pub budget: Option<usize>,
    /// Maximum completion length requested from the model [default: 1024].
    #[arg(long)]
    pub max_output_units: Option<u32>,
    /// Directory with replacement prompt templates.
    #[arg(long)]
    pub templates: Option<PathBuf>,
    /// Wall-clock limit per test in milliseconds [default: 10000].
    #[arg(long)]
    pub time_limit_ms: Option<u64>,
    /// Address-space limit per test in MiB [default: 256].
    #[arg(long)]
    pub memory_mb: Option<u64>,
    /// External checker command; gets input, expected and actual file paths.
    #[arg(long, num_args = 1.., value_delimiter = ' ')]
    pub checker: Option<Vec<String>>,
    /// Compare outputs case-sensitively.
    #[arg(long)]
    pub case_sensitive: bool,
    /// Do not move candidate programs into a fresh network namespace.
    #[arg(long)]
    pub no_network_isolation: bool,
    /// Problems processed concurrently [default: 1].
    #[arg(long)]
    pub workers: Option<usize>,
    /// Programs judged concurrently per problem [default: cores - 1].
    #[arg(long)]
    pub judge_workers: Option<usize>,
    /// Concurrent model requests [default: 4].
    #[arg(long)]
    pub in_flight: Option<usize>,
    /// Print the resolved config and planned work, then exit.
    #[arg(long)]
    pub dry_run: bool,
}

fn absolute(p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        p
    } else {
        std::env::current_dir().map(|d| d.join(&p)).unwrap_or(p)
    }
}

impl RunArgs {
    pub fn resolve(&self, mode: RunMode) -> Result<RunConfig, PipelineError> {
        let file = match &self.config {
            Some(path) => read_file_config(path)?,
            None => FileConfig::default(),
        };
        let run_id = self.run_id.clone().or(file.run_id).unwrap_or_else(|| "run".into());
        let run_dir = self
            .run_dir
            .clone()
            .map(absolute)
            .or(file.run_dir)
            .unwrap_or_else(|| absolute(PathBuf::from("runs").join(&run_id)));
        let corpus = self
            .corpus
            .clone()
            .map(absolute)
            .or(file.corpus)
            .ok_or_else(|| config_error("corpus", "no corpus given (--corpus or `corpus` in the config file)"))?;
        let backend = match (&self.mock, &self.endpoint, file.backend) {
            (Some(fixture), _, _) => BackendConfig::Mock { fixture: absolute(fixture.clone()), latency_ms: 0 },
            (None, Some(endpoint), _) => BackendConfig::Remote(RemoteConfig {
                endpoint: endpoint.clone(),
                api_key_env: "EXPLAINBENCH_API_KEY".into(),
                timeout_secs: 120,
            }),
            (None, None, Some(b)) => b,
            (None, None, None) => {
                return Err(config_error("backend", "no backend given (--mock, --endpoint or [backend] in the config file)"))
            }
        };
        let backend = match (backend, self.mock_latency_ms) {
            (BackendConfig::Mock { fixture, .. }, Some(latency_ms)) => BackendConfig::Mock { fixture, latency_ms },
            (b, _) => b,
        };

        let mut config = RunConfig::new(run_id, corpus, backend, run_dir);
        config.mode = mode;
        if let Some(v) = self.model.clone().or(file.model_id) {
            config.model_id = v;
        }
        if let Some(v) = self.pipeline.or(file.pipeline) {
            config.pipeline = v;
        }
        config.hint = self.hint.or(file.hint);
        if let Some(v) = self.strategy.or(file.strategy) {
            config.strategy = v;
        }
        if let Some(v) = self.k.or(file.k) {
            config.k = v;
        }
        if let Some(v) = self.budget.or(file.budget_units) {
            config.budget_units = v;
        }
        if let Some(v) = self.max_output_units.or(file.max_output_units) {
            config.max_output_units = v;
        }
        config.templates_dir = self.templates.clone().map(absolute).or(file.templates_dir);
        if let Some(t) = file.temperatures {
            config.temperatures = t;
        }
        let limits_file = file.limits.unwrap_or_default();
        let defaults = ExecutionLimits::default();
        config.limits = ExecutionLimits {
            wall_time_ms: self.time_limit_ms.or(limits_file.wall_time_ms).unwrap_or(defaults.wall_time_ms),
            memory_bytes: self.memory_mb.or(limits_file.memory_mb).map_or(defaults.memory_bytes, |mb| mb << 20),
            output_cap_bytes: limits_file.output_cap_mb.map_or(defaults.output_cap_bytes, |mb| mb << 20),
        };
        let mut checker = file.checker.unwrap_or(CheckerConfig { case_insensitive: true, ..CheckerConfig::default() });
        if self.case_sensitive {
            checker.case_insensitive = false;
        }
        if let Some(cmd) = &self.checker {
            checker.command = Some(cmd.clone());
        }
        config.checker = checker;
        config.isolate_network = !self.no_network_isolation && file.isolate_network.unwrap_or(true);
        let wf = file.workers.unwrap_or_default();
        let wd = Workers::default();
        config.workers = Workers {
            problems: self.workers.or(wf.problems).unwrap_or(wd.problems),
            judge: self.judge_workers.or(wf.judge).unwrap_or(wd.judge),
            gateway_in_flight: self.in_flight.or(wf.gateway_in_flight).unwrap_or(wd.gateway_in_flight),
        };
        config.validate()?;
        Ok(config)
    }
}

/// Reads only the `[annotation]` table of a config file.
pub fn annotation_settings(path: Option<&Path>) -> Result<AnnotationFile, PipelineError> {
    match path {
        Some(p) => Ok(read_file_config(p)?.annotation.unwrap_or_default()),
        None => Ok(AnnotationFile::default()),
    }
}
