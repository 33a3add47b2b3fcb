//! Candidate program generation: baseline, general-to-specific and
//! hint-instructed pipelines, the three sampling strategies, and program
//! extraction from model replies.

use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{select_solutions, CorpusError, Problem};
use crate::explainer::{contains_code, generate_explanation, ExplainContext, ExplainError, ExplainOutcome, Explanation, PointId};
use crate::llmgateway::{ChatRequest, FinishReason, Gateway, GatewayError};
use crate::promptkit::{within_budget, Budget, HintKind, PromptError, Temperatures, TemplateSet};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("problem {0} has no oracle solutions")]
    NoOracleSolution(String),
    #[error("explanation lacks point {point} needed for the hint")]
    MissingPoint { point: PointId },
    #[error("hint point {point} contains code")]
    LeakDetected { point: PointId },
    #[error("model reply contains no program")]
    EmptyProgram,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Explain(ExplainError),
}

impl From<ExplainError> for SolverError {
    fn from(e: ExplainError) -> Self {
        match e {
            ExplainError::Gateway(g) => SolverError::Gateway(g),
            other => SolverError::Explain(other),
        }
    }
}

impl SolverError {
    /// Errors that abort the whole problem rather than a single unit.
    pub fn is_fatal(&self) -> bool {
        matches!(self, SolverError::Gateway(_) | SolverError::ZeroK)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pipeline {
    /// Explanation generation only, no programs.
    Explainer,
    Baseline,
    G2S,
    Instructed(HintKind),
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pipeline::Explainer => f.write_str("explain"),
            Pipeline::Baseline => f.write_str("baseline"),
            Pipeline::G2S => f.write_str("g2s"),
            Pipeline::Instructed(h) => write!(f, "instructed:{h}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingStrategy {
    /// One explanation and one program per each of k oracle solutions.
    HumanSolutions,
    /// k explanations of the first solution, one program each.
    Explanations,
    /// One explanation of the first solution, k programs from it.
    Programs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Origin {
    pub pipeline: Pipeline,
    pub strategy: SamplingStrategy,
    pub solution_index: usize,
    pub explanation_index: usize,
    pub sample_index: usize,
}

impl Origin {
    /// Sort key used for aggregation and for taking the first k candidates.
    pub fn order_key(&self) -> (usize, usize, usize) {
        (self.solution_index, self.explanation_index, self.sample_index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExtractionNote {
    FencedBlock,
    WholeMessage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateProgram {
    pub problem_id: String,
    pub source: String,
    pub language_tag: String,
    pub origin: Origin,
    pub extraction_note: ExtractionNote,
    #[serde(default)]
    pub finish_reason: FinishReason,
}

impl CandidateProgram {
    /// Unique per run: problem plus origin tuple.
    pub fn key(&self) -> String {
        candidate_key(&self.problem_id, &self.origin)
    }
}

pub fn candidate_key(problem_id: &str, origin: &Origin) -> String {
    format!(
        "{problem_id}/{}/s{}/e{}/g{}",
        origin.pipeline, origin.solution_index, origin.explanation_index, origin.sample_index
    )
}

fn prose_heading() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(?:[*_#]+\s*)?\d+\s*(?:\)\.|\)|\.|:)\s*[A-Za-z][A-Za-z0-9 \-/()'`]*:\s*[*_]*\s*$").unwrap())
}

/// Takes the last non-empty fenced block; without fences, the whole
/// message minus numbered prose heading lines.
pub fn extract_code(completion: &str) -> Result<(String, ExtractionNote), SolverError> {
    let mut blocks: Vec<Vec<&str>> = Vec::new();
    let mut open: Option<Vec<&str>> = None;
    for line in completion.lines() {
        let t = line.trim();
        match open.as_mut() {
            None if t.starts_with("```") => {
                let inner = t.trim_start_matches('`');
                if t.len() > 6 && t.ends_with("```") && inner.trim_end_matches('`').contains(' ') {
                    // single-line block: ```print(1)```
                    blocks.push(vec![inner.trim_end_matches('`')]);
                } else {
                    open = Some(Vec::new());
                }
            }
            None => {}
            Some(_) if t.starts_with("```") && t.trim_start_matches('`').is_empty() => {
                blocks.push(open.take().unwrap());
            }
            Some(body) => body.push(line),
        }
    }
    if let Some(unclosed) = open {
        blocks.push(unclosed);
    }
    let program = blocks
        .iter()
        .rev()
        .map(|b| tidy(&b.join("\n")))
        .find(|s| !s.is_empty());
    if let Some(p) = program {
        return Ok((p, ExtractionNote::FencedBlock));
    }
    if !blocks.is_empty() {
        return Err(SolverError::EmptyProgram);
    }
    let whole: Vec<&str> = completion.lines().filter(|l| !prose_heading().is_match(l)).collect();
    let whole = tidy(&whole.join("\n"));
    if whole.is_empty() {
        Err(SolverError::EmptyProgram)
    } else {
        Ok((whole, ExtractionNote::WholeMessage))
    }
}

fn tidy(s: &str) -> String {
    let s = s.trim_end();
    let start = s.lines().take_while(|l| l.trim().is_empty()).map(|l| l.len() + 1).sum::<usize>();
    s[start.min(s.len())..].to_string()
}

/// Shared configuration for every solver call.
pub struct SolverContext<'a> {
    pub templates: &'a TemplateSet,
    pub budget: &'a Budget,
    pub gateway: &'a Gateway,
    pub model_id: &'a str,
    pub max_output_units: u32,
    /// Language of generated programs; the prompts ask for Python 3.
    pub language_tag: &'a str,
    pub temperatures: Temperatures,
}

impl SolverContext<'_> {
    fn explain_ctx(&self) -> ExplainContext<'_> {
        ExplainContext {
            templates: self.templates,
            budget: self.budget,
            gateway: self.gateway,
            model_id: self.model_id,
            max_output_units: self.max_output_units,
            temperatures: self.temperatures,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum UnitStage {
    Explain,
    Generate,
}

/// Non-fatal events produced while solving one problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum UnitEvent {
    /// A prompt exceeded the budget and was not sent.
    Skipped { origin: Origin, stage: UnitStage, prompt_units: usize },
    /// A unit was abandoned; `reason` is the error message.
    Dropped { origin: Origin, stage: UnitStage, reason: DropReason, detail: String },
    /// Fewer oracle solutions than k under the human-solutions strategy.
    Shortfall { requested: usize, available: usize },
    /// The problem has no oracle solution to explain.
    NoOracleSolution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DropReason {
    MissingPoint,
    LeakDetected,
    EmptyProgram,
    ExplanationParseFailure,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveOutcome {
    pub candidates: Vec<CandidateProgram>,
    pub explanations: Vec<Explanation>,
    pub events: Vec<UnitEvent>,
}

impl SolveOutcome {
    fn absorb(&mut self, origin: Origin, stage: UnitStage, err: SolverError) -> Result<(), SolverError> {
        let reason = match &err {
            SolverError::MissingPoint { .. } => DropReason::MissingPoint,
            SolverError::LeakDetected { .. } => DropReason::LeakDetected,
            SolverError::EmptyProgram => DropReason::EmptyProgram,
            SolverError::Explain(ExplainError::ParseFailure) => DropReason::ExplanationParseFailure,
            _ => return Err(err),
        };
        tracing::info!(?origin, %err, "dropping unit");
        self.events.push(UnitEvent::Dropped { origin, stage, reason, detail: err.to_string() });
        Ok(())
    }
}

enum Generated {
    Program(CandidateProgram),
    Skipped(usize),
}

fn generate(
    ctx: &SolverContext<'_>,
    problem: &Problem,
    prompt: String,
    origin: Origin,
    n_samples: usize,
    sample_index: usize,
) -> Result<Generated, SolverError> {
    if !within_budget(&prompt, ctx.budget) {
        return Ok(Generated::Skipped(ctx.budget.measure(&prompt)));
    }
    let request = ChatRequest {
        model_id: ctx.model_id.to_string(),
        prompt,
        temperature: ctx.temperatures.for_samples(n_samples),
        max_output_units: ctx.max_output_units,
        sample_index,
    };
    let completion = ctx.gateway.complete(&request)?;
    let (source, extraction_note) = extract_code(&completion.text)?;
    Ok(Generated::Program(CandidateProgram {
        problem_id: problem.id.clone(),
        source,
        language_tag: ctx.language_tag.to_string(),
        origin,
        extraction_note,
        finish_reason: completion.finish_reason,
    }))
}

fn sample_prompt(ctx: &SolverContext<'_>, problem: &Problem, k: usize, prompt: String, pipeline: Pipeline) -> Result<SolveOutcome, SolverError> {
    if k == 0 {
        return Err(SolverError::ZeroK);
    }
    let mut out = SolveOutcome::default();
    for sample in 0..k {
        let origin = Origin {
            pipeline,
            strategy: SamplingStrategy::Programs,
            solution_index: 0,
            explanation_index: 0,
            sample_index: sample,
        };
        match generate(ctx, problem, prompt.clone(), origin, k, sample) {
            Ok(Generated::Program(c)) => out.candidates.push(c),
            Ok(Generated::Skipped(units)) => {
                out.events.push(UnitEvent::Skipped { origin, stage: UnitStage::Generate, prompt_units: units });
            }
            Err(e) => out.absorb(origin, UnitStage::Generate, e)?,
        }
    }
    Ok(out)
}

/// k samples of the zero-shot baseline prompt.
pub fn solve_baseline(ctx: &SolverContext<'_>, problem: &Problem, k: usize) -> Result<SolveOutcome, SolverError> {
    let prompt = ctx.templates.build_baseline_prompt(problem);
    sample_prompt(ctx, problem, k, prompt, Pipeline::Baseline)
}

/// k samples of the general-to-specific staged prompt.
pub fn solve_g2s(ctx: &SolverContext<'_>, problem: &Problem, k: usize) -> Result<SolveOutcome, SolverError> {
    let prompt = ctx.templates.build_g2s_prompt(problem);
    sample_prompt(ctx, problem, k, prompt, Pipeline::G2S)
}

/// Builds the hint prompt after checking the point exists and is code-free.
pub fn instructed_prompt(
    templates: &TemplateSet,
    problem: &Problem,
    hint: HintKind,
    explanation: &Explanation,
) -> Result<String, SolverError> {
    let point = hint.point();
    let text = explanation.point(point);
    if text.trim().is_empty() {
        return Err(SolverError::MissingPoint { point });
    }
    if contains_code(text) {
        return Err(SolverError::LeakDetected { point });
    }
    templates.build_instructed_prompt(problem, hint, explanation).map_err(|e| match e {
        PromptError::MissingPoint(point) => SolverError::MissingPoint { point },
        other => unreachable!("instructed template is validated at load: {other}"),
    })
}

/// Hint-instructed solving under one of the three sampling strategies.
pub fn solve_with_hint(
    ctx: &SolverContext<'_>,
    problem: &Problem,
    hint: HintKind,
    strategy: SamplingStrategy,
    k: usize,
) -> Result<SolveOutcome, SolverError> {
    if k == 0 {
        return Err(SolverError::ZeroK);
    }
    let pipeline = Pipeline::Instructed(hint);
    let (n_solutions, n_explanations, n_programs) = match strategy {
        SamplingStrategy::HumanSolutions => (k, 1, 1),
        SamplingStrategy::Explanations => (1, k, 1),
        SamplingStrategy::Programs => (1, 1, k),
    };
    let selected = select_solutions(problem, n_solutions).map_err(|e| match e {
        CorpusError::NoOracleSolution(id) => SolverError::NoOracleSolution(id),
        _ => SolverError::NoOracleSolution(problem.id.clone()),
    })?;
    let mut out = SolveOutcome::default();
    if selected.len() < n_solutions {
        tracing::info!(problem = %problem.id, requested = k, available = selected.len(), "oracle shortfall");
        out.events.push(UnitEvent::Shortfall { requested: k, available: selected.len() });
    }
    let explain = ctx.explain_ctx();
    for (solution_index, (_, solution)) in selected.iter().enumerate() {
        for explanation_index in 0..n_explanations {
            let origin_at = |sample_index| Origin {
                pipeline,
                strategy,
                solution_index,
                explanation_index,
                sample_index,
            };
            let explanation = match generate_explanation(&explain, problem, solution, solution_index, explanation_index, n_explanations) {
                Ok(ExplainOutcome::Explained(e)) => e,
                Ok(ExplainOutcome::Skipped { prompt_units }) => {
                    for s in 0..n_programs {
                        out.events.push(UnitEvent::Skipped { origin: origin_at(s), stage: UnitStage::Explain, prompt_units });
                    }
                    continue;
                }
                Err(e) => {
                    let e = SolverError::from(e);
                    if e.is_fatal() {
                        return Err(e);
                    }
                    for s in 0..n_programs {
                        out.absorb(origin_at(s), UnitStage::Explain, SolverError::Explain(ExplainError::ParseFailure))?;
                    }
                    continue;
                }
            };
            let prompt = instructed_prompt(ctx.templates, problem, hint, &explanation);
            out.explanations.push(explanation);
            let prompt = match prompt {
                Ok(p) => p,
                Err(e) => {
                    for s in 0..n_programs {
                        let e = match &e {
                            SolverError::MissingPoint { point } => SolverError::MissingPoint { point: *point },
                            SolverError::LeakDetected { point } => SolverError::LeakDetected { point: *point },
                            _ => unreachable!(),
                        };
                        out.absorb(origin_at(s), UnitStage::Generate, e)?;
                    }
                    continue;
                }
            };
            for sample_index in 0..n_programs {
                let origin = origin_at(sample_index);
                match generate(ctx, problem, prompt.clone(), origin, n_programs, sample_index) {
                    Ok(Generated::Program(c)) => out.candidates.push(c),
                    Ok(Generated::Skipped(units)) => {
                        out.events.push(UnitEvent::Skipped { origin, stage: UnitStage::Generate, prompt_units: units });
                    }
                    Err(e) => out.absorb(origin, UnitStage::Generate, e)?,
                }
            }
        }
    }
    Ok(out)
}

/// Origins a run is expected to produce for a problem, used for resume
/// accounting.
pub fn planned_origins(problem: &Problem, pipeline: Pipeline, strategy: SamplingStrategy, k: usize) -> Vec<Origin> {
    let mk = |solution_index, explanation_index, sample_index| Origin {
        pipeline,
        strategy: match pipeline {
            Pipeline::Instructed(_) => strategy,
            Pipeline::Explainer => SamplingStrategy::HumanSolutions,
            _ => SamplingStrategy::Programs,
        },
        solution_index,
        explanation_index,
        sample_index,
    };
    match (pipeline, strategy) {
        (Pipeline::Explainer, _) => (0..k.min(problem.solutions.len())).map(|j| mk(j, 0, 0)).collect(),
        (Pipeline::Instructed(_), SamplingStrategy::HumanSolutions) => {
            (0..k.min(problem.solutions.len())).map(|j| mk(j, 0, 0)).collect()
        }
        (Pipeline::Instructed(_), _) if problem.solutions.is_empty() => Vec::new(),
        (Pipeline::Instructed(_), SamplingStrategy::Explanations) => (0..k).map(|j| mk(0, j, 0)).collect(),
        _ => (0..k).map(|j| mk(0, 0, j)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extract_single_fence() {
        assert_eq!(
            extract_code("here you go:\n```\nprint(1)\n```").unwrap(),
            ("print(1)".to_string(), ExtractionNote::FencedBlock)
        );
    }

    #[test]
    fn extract_last_of_two_fences() {
        let text = "scratch:\n```python\nx = 1\n```\nfinal:\n```python\nn = int(input())\nprint(n)\n```\nDone.";
        assert_eq!(extract_code(text).unwrap().0, "n = int(input())\nprint(n)");
    }

    #[test]
    fn extract_empty_is_error() {
        assert!(matches!(extract_code(""), Err(SolverError::EmptyProgram)));
        assert!(matches!(extract_code("```\n\n```"), Err(SolverError::EmptyProgram)));
    }

    #[test]
    fn extract_whole_message_strips_headings() {
        let (src, note) = extract_code("4). Implementation:\nprint(input())\n").unwrap();
        assert_eq!(src, "print(input())");
        assert_eq!(note, ExtractionNote::WholeMessage);
    }

    #[test]
    fn extract_unclosed_fence_runs_to_end() {
        let (src, _) = extract_code("```python\nprint(2)\n").unwrap();
        assert_eq!(src, "print(2)");
    }

    #[test]
    fn candidate_keys_distinguish_origins() {
        let o = Origin {
            pipeline: Pipeline::Instructed(HintKind::StepByStep),
            strategy: SamplingStrategy::Programs,
            solution_index: 0,
            explanation_index: 0,
            sample_index: 2,
        };
        assert_eq!(candidate_key("1670A", &o), "1670A/instructed:step-by-step/s0/e0/g2");
        let mut p = o;
        p.sample_index = 1;
        assert_ne!(candidate_key("1670A", &o), candidate_key("1670A", &p));
    }
}
