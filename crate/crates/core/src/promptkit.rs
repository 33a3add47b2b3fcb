//! Prompt construction from versioned template files, the prompt-length
//! budget and the sampling temperature policy.
//!
//! Templates are plain text with `{{name}}` placeholders. Names are
//! lowercase ASCII letters and underscores; every placeholder a template
//! uses must be one its [`PromptKind`] provides, and every required slot
//! must appear. Substitution is a single pass, so `{{` inside a problem
//! statement or a solution is never re-expanded.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{OracleSolution, Problem, StatementSections};
use crate::explainer::{Explanation, PointId};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("explanation has no text for point {0}")]
    MissingPoint(PointId),
    #[error("template {kind:?}: {reason}")]
    BadTemplate { kind: PromptKind, reason: String },
    #[error("cannot read template {path}: {reason}")]
    Unreadable { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PromptKind {
    BaselineSolver,
    G2SSolver,
    Explainer,
    InstructedSolver,
}

impl PromptKind {
    pub const ALL: [PromptKind; 4] = [
        PromptKind::BaselineSolver,
        PromptKind::G2SSolver,
        PromptKind::Explainer,
        PromptKind::InstructedSolver,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            PromptKind::BaselineSolver => "baseline_solver.v1.txt",
            PromptKind::G2SSolver => "g2s_solver.v1.txt",
            PromptKind::Explainer => "explainer.v1.txt",
            PromptKind::InstructedSolver => "instructed_solver.v1.txt",
        }
    }

    fn slots(self) -> &'static [&'static str] {
        match self {
            PromptKind::BaselineSolver | PromptKind::G2SSolver => &["statement"],
            PromptKind::Explainer => &["statement", "solution"],
            PromptKind::InstructedSolver => &["statement", "hint_label", "hint_text"],
        }
    }

    fn default_text(self) -> &'static str {
        match self {
            PromptKind::BaselineSolver => include_str!("../templates/baseline_solver.v1.txt"),
            PromptKind::G2SSolver => include_str!("../templates/g2s_solver.v1.txt"),
            PromptKind::Explainer => include_str!("../templates/explainer.v1.txt"),
            PromptKind::InstructedSolver => include_str!("../templates/instructed_solver.v1.txt"),
        }
    }
}

/// The explanation point handed to the instructed solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum HintKind {
    #[serde(rename = "used-alg")]
    UsedAlgorithm,
    #[serde(rename = "step-by-step")]
    StepByStep,
    #[serde(rename = "exp-sol")]
    ExplanationOfSolution,
    #[serde(rename = "one-sentence")]
    OneSentence,
    #[serde(rename = "time-complexity")]
    TimeComplexity,
}

impl HintKind {
    pub const ALL: [HintKind; 5] = [
        HintKind::UsedAlgorithm,
        HintKind::StepByStep,
        HintKind::ExplanationOfSolution,
        HintKind::OneSentence,
        HintKind::TimeComplexity,
    ];

    pub fn point(self) -> PointId {
        let n = match self {
            HintKind::UsedAlgorithm => 2,
            HintKind::StepByStep => 3,
            HintKind::ExplanationOfSolution => 4,
            HintKind::OneSentence => 5,
            HintKind::TimeComplexity => 6,
        };
        PointId::new(n).expect("hint points are in range")
    }

    /// Short name used in reports and on the command line.
    pub fn short_name(self) -> &'static str {
        match self {
            HintKind::UsedAlgorithm => "used-alg",
            HintKind::StepByStep => "step-by-step",
            HintKind::ExplanationOfSolution => "exp-sol",
            HintKind::OneSentence => "one-sentence",
            HintKind::TimeComplexity => "time-complexity",
        }
    }

    pub fn from_short_name(name: &str) -> Option<Self> {
        HintKind::ALL.into_iter().find(|h| h.short_name() == name)
    }
}

impl fmt::Display for HintKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Text(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    kind: PromptKind,
    segments: Vec<Segment>,
}

impl Template {
    pub fn parse(kind: PromptKind, text: &str) -> Result<Self, PromptError> {
        let bad = |reason: String| PromptError::BadTemplate { kind, reason };
        let text = text.strip_suffix('\n').unwrap_or(text);
        let mut segments = Vec::new();
        let mut rest = text;
        while let Some(start) = rest.find("{{") {
            if start > 0 {
                segments.push(Segment::Text(rest[..start].to_string()));
            }
            let after = &rest[start + 2..];
            let end = after
                .find("}}")
                .ok_or_else(|| bad("unterminated placeholder".into()))?;
            let name = &after[..end];
            if name.is_empty() || !name.bytes().all(|b| b.is_ascii_lowercase() || b == b'_') {
                return Err(bad(format!("invalid placeholder name {name:?}")));
            }
            if !kind.slots().contains(&name) {
                return Err(bad(format!("unknown placeholder {name:?}")));
            }
            segments.push(Segment::Slot(name.to_string()));
            rest = &after[end + 2..];
        }
        if !rest.is_empty() {
            segments.push(Segment::Text(rest.to_string()));
        }
        for slot in kind.slots() {
            if !segments.iter().any(|s| matches!(s, Segment::Slot(n) if n == slot)) {
                return Err(bad(format!("missing placeholder {{{{{slot}}}}}")));
            }
        }
        Ok(Template { kind, segments })
    }

    pub fn kind(&self) -> PromptKind {
        self.kind
    }

    fn render(&self, values: &[(&str, &str)]) -> String {
        let mut out = String::new();
        for seg in &self.segments {
            match seg {
                Segment::Text(t) => out.push_str(t),
                Segment::Slot(name) => {
                    let value = values
                        .iter()
                        .find(|(n, _)| n == name)
                        .map(|(_, v)| *v)
                        .unwrap_or_default();
                    out.push_str(value);
                }
            }
        }
        out
    }
}

/// One template per prompt kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    baseline: Template,
    g2s: Template,
    explainer: Template,
    instructed: Template,
}

impl Default for TemplateSet {
    fn default() -> Self {
        let load = |k: PromptKind| Template::parse(k, k.default_text()).expect("bundled template is valid");
        TemplateSet {
            baseline: load(PromptKind::BaselineSolver),
            g2s: load(PromptKind::G2SSolver),
            explainer: load(PromptKind::Explainer),
            instructed: load(PromptKind::InstructedSolver),
        }
    }
}

impl TemplateSet {
    /// Loads templates from a directory; kinds whose file is absent fall
    /// back to the bundled text.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, PromptError> {
        let dir = dir.as_ref();
        let mut set = TemplateSet::default();
        for kind in PromptKind::ALL {
            let path = dir.join(kind.file_name());
            if !path.exists() {
                continue;
            }
            let text = std::fs::read_to_string(&path).map_err(|e| PromptError::Unreadable {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?;
            *set.slot_mut(kind) = Template::parse(kind, &text)?;
        }
        Ok(set)
    }

    fn slot_mut(&mut self, kind: PromptKind) -> &mut Template {
        match kind {
            PromptKind::BaselineSolver => &mut self.baseline,
            PromptKind::G2SSolver => &mut self.g2s,
            PromptKind::Explainer => &mut self.explainer,
            PromptKind::InstructedSolver => &mut self.instructed,
        }
    }

    pub fn build_explainer_prompt(&self, problem: &Problem, solution: &OracleSolution) -> String {
        self.explainer.render(&[
            ("statement", &render_statement(problem)),
            ("solution", solution.source.trim_end()),
        ])
    }

    pub fn build_baseline_prompt(&self, problem: &Problem) -> String {
        self.baseline.render(&[("statement", &render_statement(problem))])
    }

    pub fn build_g2s_prompt(&self, problem: &Problem) -> String {
        self.g2s.render(&[("statement", &render_statement(problem))])
    }

    /// Prompt carrying exactly one explanation point as a hint. The point
    /// text is passed as stored, so callers must leak-check it first.
    pub fn build_instructed_prompt(
        &self,
        problem: &Problem,
        hint: HintKind,
        explanation: &Explanation,
    ) -> Result<String, PromptError> {
        let point = hint.point();
        let text = explanation.point(point);
        if text.trim().is_empty() {
            return Err(PromptError::MissingPoint(point));
        }
        Ok(self.instructed.render(&[
            ("statement", &render_statement(problem)),
            ("hint_label", point.title()),
            ("hint_text", text),
        ]))
    }
}

/// Statement text as it appears in prompts; empty sections are omitted.
pub fn render_statement(problem: &Problem) -> String {
    StatementSections::parse(&problem.statement).render()
}

/// Counts prompt units; the default is the `ceil(chars / 4)` heuristic.
pub trait UnitEstimator: Send + Sync {
    fn measure(&self, text: &str) -> usize;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CharHeuristic;

impl UnitEstimator for CharHeuristic {
    fn measure(&self, text: &str) -> usize {
        text.chars().count().div_ceil(4)
    }
}

impl<F> UnitEstimator for F
where
    F: Fn(&str) -> usize + Send + Sync,
{
    fn measure(&self, text: &str) -> usize {
        self(text)
    }
}

pub const DEFAULT_MAX_UNITS: usize = 4096;

#[derive(Clone)]
pub struct Budget {
    max_units: usize,
    measure: Arc<dyn UnitEstimator>,
}

impl fmt::Debug for Budget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Budget").field("max_units", &self.max_units).finish_non_exhaustive()
    }
}

impl Default for Budget {
    fn default() -> Self {
        Budget::new(DEFAULT_MAX_UNITS)
    }
}

impl Budget {
    /// # Panics
    /// If `max_units` is zero.
    pub fn new(max_units: usize) -> Self {
        Self::with_estimator(max_units, Arc::new(CharHeuristic))
    }

    pub fn with_estimator(max_units: usize, measure: Arc<dyn UnitEstimator>) -> Self {
        assert!(max_units > 0, "budget must be positive");
        Budget { max_units, measure }
    }

    pub fn max_units(&self) -> usize {
        self.max_units
    }

    pub fn measure(&self, prompt: &str) -> usize {
        self.measure.measure(prompt)
    }
}

pub fn within_budget(prompt: &str, budget: &Budget) -> bool {
    budget.measure(prompt) <= budget.max_units
}

/// Sampling temperatures keyed on how many samples a unit draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Temperatures {
    pub single: f64,
    pub multi: f64,
}

impl Default for Temperatures {
    fn default() -> Self {
        Temperatures { single: 0.0, multi: 0.2 }
    }
}

impl Temperatures {
    pub fn for_samples(&self, n_samples: usize) -> f64 {
        assert!(n_samples >= 1, "at least one sample is required");
        if n_samples == 1 {
            self.single
        } else {
            self.multi
        }
    }
}

/// Greedy decoding when a single sample is drawn, 0.2 otherwise.
pub fn temperature_for(n_samples: usize) -> f64 {
    Temperatures::default().for_samples(n_samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TestCase;
    use crate::explainer::parse_explanation;

    fn problem(statement: &str) -> Problem {
        Problem {
            id: "1".into(),
            title: "t".into(),
            statement: statement.into(),
            rating: Some(800),
            public_tests: vec![TestCase { input: "".into(), expected: "1".into() }],
            hidden_tests: vec![],
            solutions: vec![],
        }
    }

    #[test]
    fn explainer_prompt_ends_with_seven_headings() {
        let t = TemplateSet::default();
        let p = t.build_explainer_prompt(&problem("Sign swap"), &OracleSolution::new("python3", "print(1)\n"));
        let lines: Vec<_> = p.lines().collect();
        let tail = &lines[lines.len() - 7..];
        let expected: Vec<String> = PointId::all().map(|id| format!("{}). {}:", id.get(), id.title())).collect();
        assert_eq!(tail, expected.iter().map(String::as_str).collect::<Vec<_>>().as_slice());
        let read = p.find("read and try to understand").unwrap();
        let stmt = p.find("Sign swap").unwrap();
        let hint = p.find("analyze the code and identify the algorithmic approach").unwrap();
        let code = p.find("print(1)").unwrap();
        assert!(read < stmt && stmt < hint && hint < code && code < p.find("1). Brief").unwrap());
    }

    #[test]
    fn explainer_prompts_differ_only_in_code_slot() {
        let t = TemplateSet::default();
        let pr = problem("stmt");
        let a = t.build_explainer_prompt(&pr, &OracleSolution::new("python3", "AAAA"));
        let b = t.build_explainer_prompt(&pr, &OracleSolution::new("python3", "BBBB"));
        assert_ne!(a, b);
        assert_eq!(a.replace("AAAA", "BBBB"), b);
    }

    #[test]
    fn empty_statement_is_still_well_formed() {
        let t = TemplateSet::default();
        let p = t.build_explainer_prompt(&problem(""), &OracleSolution::new("python3", "x"));
        assert!(p.contains("Problem:\n\n-----------"));
        assert!(p.ends_with("7). Proof of correctness (Why this is correct):"));
    }

    #[test]
    fn g2s_stages_in_general_to_specific_order() {
        let t = TemplateSet::default();
        let p = t.build_g2s_prompt(&problem("stmt"));
        let stages = ["General understanding", "Candidate algorithms", "Detailed plan", "Implementation"];
        let positions: Vec<_> = stages.iter().map(|s| p.find(s).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(p, t.build_g2s_prompt(&problem("stmt")));
    }

    #[test]
    fn g2s_omits_empty_note_heading() {
        let t = TemplateSet::default();
        let p = t.build_g2s_prompt(&problem("Legend\nInput\nn\nOutput\nx\nNote\n"));
        assert!(!p.contains("Note"));
        let p = t.build_g2s_prompt(&problem("Legend\nNote\nsee example"));
        assert!(p.contains("Note\nsee example"));
    }

    #[test]
    fn instructed_prompt_carries_one_point() {
        let t = TemplateSet::default();
        let e = parse_explanation(
            "1). Brief Problem Summary: summary text here for testing\n\
             2). Used Algorithm: greedy choice of elements\n\
             3). Step-by-step Solution Description: read, count, compare\n\
             4). Explanation of the Solution: negatives go to the left side\n\
             5). Solution in one sentence: The solution works by counting negatives.\n\
             6). Time Complexity: O(n log n) due to sorting\n\
             7). Proof of correctness (Why this is correct): sortedness is invariant\n",
        )
        .unwrap();
        let p = t.build_instructed_prompt(&problem("stmt"), HintKind::OneSentence, &e).unwrap();
        assert!(p.contains("Hint: Solution in one sentence: The solution works by counting negatives."));
        for id in PointId::all().filter(|id| id.get() != 5) {
            assert!(!p.contains(e.point(id)), "point {id} leaked");
        }
    }

    #[test]
    fn instructed_prompt_requires_point() {
        let t = TemplateSet::default();
        let e = parse_explanation("1). Brief Problem Summary: s\n2). Used Algorithm: g\n").unwrap();
        assert_eq!(
            t.build_instructed_prompt(&problem("s"), HintKind::StepByStep, &e),
            Err(PromptError::MissingPoint(PointId::new(3).unwrap()))
        );
    }

    #[test]
    fn hint_points_and_names() {
        let pts: Vec<u8> = HintKind::ALL.iter().map(|h| h.point().get()).collect();
        assert_eq!(pts, vec![2, 3, 4, 5, 6]);
        for h in HintKind::ALL {
            assert_eq!(HintKind::from_short_name(h.short_name()), Some(h));
        }
    }

    #[test]
    fn template_validation() {
        assert!(Template::parse(PromptKind::BaselineSolver, "no slot").is_err());
        assert!(Template::parse(PromptKind::BaselineSolver, "{{statement}} {{solution}}").is_err());
        assert!(Template::parse(PromptKind::BaselineSolver, "{{statement").is_err());
        assert!(Template::parse(PromptKind::BaselineSolver, "{{Bad}}").is_err());
        let t = Template::parse(PromptKind::BaselineSolver, "A {{statement}} B\n").unwrap();
        assert_eq!(t.render(&[("statement", "{{statement}}")]), "A {{statement}} B");
    }

    #[test]
    fn template_dir_overrides() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("baseline_solver.v1.txt"), "Solve: {{statement}}\n").unwrap();
        let set = TemplateSet::load_dir(dir.path()).unwrap();
        assert_eq!(set.build_baseline_prompt(&problem("x")), "Solve: x");
        assert_eq!(set.build_g2s_prompt(&problem("x")), TemplateSet::default().build_g2s_prompt(&problem("x")));
        std::fs::write(dir.path().join("g2s_solver.v1.txt"), "no slots").unwrap();
        assert!(TemplateSet::load_dir(dir.path()).is_err());
    }

    #[test]
    fn budget_default_heuristic() {
        let b = Budget::default();
        assert!(within_budget(&"a".repeat(100), &b));
        assert!(!within_budget(&"a".repeat(20_000), &b));
        assert!(within_budget(&"a".repeat(16_384), &b));
        assert!(!within_budget(&"a".repeat(16_385), &b));
        assert_eq!(CharHeuristic.measure(""), 0);
        assert_eq!(CharHeuristic.measure("é"), 1);
    }

    #[test]
    fn budget_hook_overrides_heuristic() {
        // Whitespace-token counter vs the char heuristic on a fixture where
        // they disagree: 600 words of 9 chars plus separators is 6000 chars,
        // so the heuristic measures 1500 units while the hook counts 600.
        let fixture = vec!["abcdefghi"; 600].join(" ") + " ";
        assert_eq!(fixture.chars().count(), 6000);
        let words = |s: &str| s.split_whitespace().count();
        assert_eq!(CharHeuristic.measure(&fixture), 1500);
        assert_eq!(words(&fixture), 600);
        let heuristic = Budget::new(1000);
        let hooked = Budget::with_estimator(1000, Arc::new(words));
        assert!(!within_budget(&fixture, &heuristic));
        assert!(within_budget(&fixture, &hooked));
    }

    #[test]
    fn temperature_policy() {
        assert_eq!(temperature_for(1), 0.0);
        assert_eq!(temperature_for(2), 0.2);
        assert_eq!(temperature_for(10), 0.2);
    }

    #[test]
    #[should_panic]
    fn temperature_requires_a_sample() {
        temperature_for(0);
    }

    #[test]
    #[should_panic]
    fn zero_budget_rejected() {
        Budget::new(0);
    }

    proptest::proptest! {
        #[test]
        fn within_budget_is_monotone(base in ".{0,200}", extra in ".{0,200}", max in 1usize..120) {
            let b = Budget::new(max);
            let longer = format!("{base}{extra}");
            if !within_budget(&base, &b) {
                proptest::prop_assert!(!within_budget(&longer, &b));
            }
        }

        #[test]
        fn builders_are_pure(stmt in ".{0,100}", src in ".{1,100}") {
            let t = TemplateSet::default();
            let p = problem(&stmt);
            let s = OracleSolution::new("python3", src);
            proptest::prop_assert_eq!(t.build_explainer_prompt(&p, &s), t.build_explainer_prompt(&p, &s));
            proptest::prop_assert_eq!(t.build_baseline_prompt(&p), t.build_baseline_prompt(&p));
        }
    }
}
