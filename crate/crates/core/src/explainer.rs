//! Seven-point solution explanations: generation through the gateway,
//! parsing of model output into points, and the code-leak check applied
//! before a point is used as a hint.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{OracleSolution, Problem};
use crate::llmgateway::{ChatRequest, GatewayError, Gateway};
use crate::promptkit::{within_budget, Budget, Temperatures, TemplateSet};

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("no explanation headings found in model output")]
    ParseFailure,
    #[error("point id {0} is out of range 1..=7")]
    PointOutOfRange(u8),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Index of one of the seven explanation points, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct PointId(u8);

const TITLES: [&str; 7] = [
    "Brief Problem Summary",
    "Used Algorithm",
    "Step-by-step Solution Description",
    "Explanation of the Solution",
    "Solution in one sentence",
    "Time Complexity",
    "Proof of correctness (Why this is correct)",
];

impl PointId {
    pub fn new(id: u8) -> Result<Self, ExplainError> {
        if (1..=7).contains(&id) {
            Ok(PointId(id))
        } else {
            Err(ExplainError::PointOutOfRange(id))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = PointId> {
        (1..=7).map(PointId)
    }

    /// Canonical heading title as it appears in the explainer prompt.
    pub fn title(self) -> &'static str {
        TITLES[usize::from(self.0 - 1)]
    }

    pub fn class(self) -> PointClass {
        match self.0 {
            1 | 3 | 4 | 5 => PointClass::Description,
            _ => PointClass::Analysis,
        }
    }
}

impl TryFrom<u8> for PointId {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        PointId::new(v).map_err(|e| e.to_string())
    }
}

impl From<PointId> for u8 {
    fn from(p: PointId) -> u8 {
        p.0
    }
}

impl fmt::Display for PointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PointClass {
    Description,
    Analysis,
}

pub fn classify_point(id: u8) -> Result<PointClass, ExplainError> {
    PointId::new(id).map(PointId::class)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ExplanationProvenance {
    pub problem_id: String,
    /// Rank of the explained solution in the oracle-selection order.
    pub solution_index: usize,
    /// Sample number when several explanations are drawn for one solution.
    pub sample_index: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Explanation {
    pub problem_summary: String,
    pub used_algorithm: String,
    pub step_by_step: String,
    pub explanation_of_solution: String,
    pub one_sentence: String,
    pub time_complexity: String,
    pub proof_of_correctness: String,
    pub raw: String,
    pub present_points: BTreeSet<PointId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<ExplanationProvenance>,
}

impl Explanation {
    pub fn point(&self, id: PointId) -> &str {
        match id.0 {
            1 => &self.problem_summary,
            2 => &self.used_algorithm,
            3 => &self.step_by_step,
            4 => &self.explanation_of_solution,
            5 => &self.one_sentence,
            6 => &self.time_complexity,
            _ => &self.proof_of_correctness,
        }
    }

    fn point_mut(&mut self, id: PointId) -> &mut String {
        match id.0 {
            1 => &mut self.problem_summary,
            2 => &mut self.used_algorithm,
            3 => &mut self.step_by_step,
            4 => &mut self.explanation_of_solution,
            5 => &mut self.one_sentence,
            6 => &mut self.time_complexity,
            _ => &mut self.proof_of_correctness,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.present_points.len() == 7
    }

    /// True when the present points are exactly 1..=j for some j.
    pub fn is_contiguous(&self) -> bool {
        self.present_points
            .iter()
            .enumerate()
            .all(|(i, p)| usize::from(p.0) == i + 1)
    }

    /// Renders the points back in the canonical heading format.
    pub fn reserialize(&self) -> String {
        let mut out = String::new();
        for id in &self.present_points {
            out.push_str(&format!("{}). {}:\n{}\n", id.0, id.title(), self.point(*id)));
        }
        out
    }
}

struct PointVocab {
    core: &'static [&'static str],
    allowed: &'static [&'static str],
}

// Content words after stopword removal. A heading title matches point k
// when it contains one of k's core words and nothing outside k's vocabulary.
const VOCAB: [PointVocab; 7] = [
    PointVocab { core: &["summary"], allowed: &["brief", "problem", "summary", "short", "statement", "overview"] },
    PointVocab { core: &["algorithm", "algorithms", "approach"], allowed: &["used", "algorithm", "algorithms", "approach", "technique", "main", "key"] },
    PointVocab { core: &["step", "steps"], allowed: &["step", "steps", "by", "solution", "description", "detailed", "algorithm"] },
    PointVocab { core: &["explanation"], allowed: &["explanation", "solution"] },
    PointVocab { core: &["sentence"], allowed: &["solution", "one", "sentence", "summary", "single"] },
    PointVocab { core: &["complexity"], allowed: &["time", "complexity", "space", "analysis"] },
    PointVocab { core: &["correctness", "proof"], allowed: &["proof", "correctness", "correct"] },
];

const STOPWORDS: [&str; 9] = ["the", "of", "in", "a", "an", "this", "is", "why", "and"];

fn title_words(title: &str) -> Vec<String> {
    title
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty() && !STOPWORDS.contains(w))
        .map(str::to_owned)
        .collect()
}

fn title_matches(id: PointId, title: &str) -> bool {
    let vocab = &VOCAB[usize::from(id.0 - 1)];
    let words = title_words(title);
    !words.is_empty()
        && words.iter().any(|w| vocab.core.contains(&w.as_str()))
        && words.iter().all(|w| vocab.allowed.contains(&w.as_str()))
}

fn heading_prefix() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    // Optional markdown heading / emphasis, a single digit, then one of
    // `).`, `)`, `:`, `.` as the number terminator.
    RE.get_or_init(|| Regex::new(r"^\s*(?:#{1,6}\s*)?(?:[*_]{1,3}\s*)?\(?([1-7])(?:\)\.|\)|:|\.)\s*").unwrap())
}

fn strip_emphasis(s: &str) -> &str {
    s.trim().trim_matches(|c| c == '*' || c == '_').trim()
}

/// Recognizes a heading line; returns the point and the body text that
/// follows the heading on the same line.
fn match_heading(line: &str) -> Option<(PointId, &str)> {
    let caps = heading_prefix().captures(line)?;
    let id = PointId(caps[1].parse().ok()?);
    let rest = &line[caps.get(0)?.end()..];
    let (title, body) = match rest.find(':') {
        Some(colon) => (&rest[..colon], &rest[colon + 1..]),
        None => (rest, ""),
    };
    if !title_matches(id, strip_emphasis(title)) {
        return None;
    }
    let body = body.trim_start_matches(|c: char| c == '*' || c == '_' || c.is_whitespace());
    Some((id, body))
}

/// Splits model output on numbered headings. Headings must appear in
/// increasing point order; a numbered line that does not advance the
/// point sequence or whose title does not fit is body text.
pub fn parse_explanation(text: &str) -> Result<Explanation, ExplainError> {
    let mut explanation = Explanation {
        raw: text.to_string(),
        ..Explanation::default()
    };
    let mut current: Option<(PointId, Vec<&str>)> = None;
    let mut finished: Vec<(PointId, Vec<&str>)> = Vec::new();
    for line in text.lines() {
        let last = current.as_ref().map_or(0, |(id, _)| id.0);
        match match_heading(line) {
            Some((id, body)) if id.0 > last => {
                if let Some(done) = current.take() {
                    finished.push(done);
                }
                current = Some((id, vec![body]));
            }
            _ => {
                if let Some((_, lines)) = current.as_mut() {
                    lines.push(line);
                }
            }
        }
    }
    finished.extend(current);
    for (id, lines) in finished {
        let body = lines.join("\n").trim().to_string();
        if !body.is_empty() {
            explanation.present_points.insert(id);
        }
        *explanation.point_mut(id) = body;
    }
    if explanation.present_points.is_empty() {
        return Err(ExplainError::ParseFailure);
    }
    Ok(explanation)
}

fn io_tokens() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"\b(?:input|print|scanf|printf|readline|getline|puts)\s*\(|\bcin\s*>>|\bcout\s*<<|System\.out\.|sys\.stdin|\bmap\s*\(\s*int\b",
        )
        .unwrap()
    })
}

fn statement_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(concat!(
            // assignment, possibly augmented or tuple-unpacking
            r"^\s*[A-Za-z_][\w.\[\]]*(?:\s*,\s*[A-Za-z_][\w.\[\]]*)*\s*(?:[-+*/%&|^]|//|<<|>>)?=[^=]",
            // indented call
            r"|^\s+[A-Za-z_][\w.]*\s*\(.*\)\s*;?\s*$",
            // braces and semicolon-terminated lines
            r"|;\s*$|^\s*[{}]\s*$|\{\s*$",
            // keyword-led statements
            r"|^\s*(?:def|class|import|from|return|#include|int|long|void|using)\b[^.]*$",
            r"|^\s*(?:for|while|if|elif)\b.*\)\s*:\s*$",
        ))
        .unwrap()
    })
}

fn strip_double_quoted(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut in_quote = false;
    for c in text.chars() {
        match c {
            '"' | '\u{201c}' | '\u{201d}' => in_quote = !in_quote,
            _ if !in_quote => out.push(c),
            _ => {}
        }
    }
    out
}

/// Conservative code detector for hint text. Flags fenced blocks, I/O
/// idioms outside double-quoted prose, and runs of three or more
/// statement-like lines.
pub fn contains_code(text: &str) -> bool {
    if text.contains("```") || text.lines().any(|l| l.trim_start().starts_with("~~~")) {
        return true;
    }
    if io_tokens().is_match(&strip_double_quoted(text)) {
        return true;
    }
    let mut run = 0;
    for line in text.lines() {
        if statement_line().is_match(line) {
            run += 1;
            if run >= 3 {
                return true;
            }
        } else if !line.trim().is_empty() {
            run = 0;
        }
    }
    false
}

/// Everything needed to issue explainer calls.
pub struct ExplainContext<'a> {
    pub templates: &'a TemplateSet,
    pub budget: &'a Budget,
    pub gateway: &'a Gateway,
    pub model_id: &'a str,
    pub max_output_units: u32,
    pub temperatures: Temperatures,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExplainOutcome {
    Explained(Explanation),
    /// Prompt exceeded the budget; no model call was made.
    Skipped { prompt_units: usize },
}

/// Builds the explainer prompt, calls the model and parses the reply.
/// `n_samples` is how many explanations are drawn for this solution and
/// sets the temperature.
pub fn generate_explanation(
    ctx: &ExplainContext<'_>,
    problem: &Problem,
    solution: &OracleSolution,
    solution_index: usize,
    sample_index: usize,
    n_samples: usize,
) -> Result<ExplainOutcome, ExplainError> {
    let prompt = ctx.templates.build_explainer_prompt(problem, solution);
    if !within_budget(&prompt, ctx.budget) {
        return Ok(ExplainOutcome::Skipped {
            prompt_units: ctx.budget.measure(&prompt),
        });
    }
    let request = ChatRequest {
        model_id: ctx.model_id.to_string(),
        prompt,
        temperature: ctx.temperatures.for_samples(n_samples),
        max_output_units: ctx.max_output_units,
        sample_index,
    };
    let completion = ctx.gateway.complete(&request)?;
    let mut explanation = parse_explanation(&completion.text)?;
    explanation.provenance = Some(ExplanationProvenance {
        problem_id: problem.id.clone(),
        solution_index,
        sample_index,
    });
    Ok(ExplainOutcome::Explained(explanation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const QUALITATIVE: &str = "\
**1). Brief Problem Summary:** Given an array of n integers, check if it can be sorted by swapping the signs of any two elements with different signs.
**2). Used Algorithm:** The algorithm used is a simple implementation of the problem statement.
**3). Step-by-step Solution Description:**
1. Read the input array a.
2. Count the number of negative elements in the array and store it in h.
3. Create a new array b by taking the absolute value of each element in a and multiplying it by -1 if the index is less than h, otherwise by 1.
4. Check if the sorted array b is equal to the original array b.
5. If they are equal, print \"yes\", otherwise print \"no\".
**4). Explanation of the Solution:** The solution works by first counting the number of negative elements in the array.
**5). Solution in one sentence:** The solution works by counting the number of negative elements in the array, creating a new array with all negative elements on the left and positive elements on the right, and checking if the sorted array is equal to the original array.
**6). Time Complexity:** The time complexity of the solution is O(nlogn) due to the sorting operation.
**7). Proof of correctness (Why this is correct):** The solution is correct because it ensures that all negative elements are on the left side of the array and all positive elements are on the right side.
";

    #[test]
    fn numbered_steps_inside_a_point_are_not_headings() {
        let e = parse_explanation(QUALITATIVE).unwrap();
        assert!(e.is_complete());
        assert!(e.step_by_step.starts_with("1. Read the input array a."));
        assert!(e.step_by_step.ends_with("otherwise print \"no\"."));
        assert!(e.one_sentence.starts_with("The solution works by counting"));
        assert!(!contains_code(&e.one_sentence));
        assert!(!contains_code(&e.step_by_step));
    }

    #[test]
    fn missing_later_points_are_recorded() {
        let text: String = PointId::all()
            .take(6)
            .map(|id| format!("{}). {}: body {}\n", id.0, id.title(), id.0))
            .collect();
        let e = parse_explanation(&text).unwrap();
        assert_eq!(e.present_points, PointId::all().take(6).collect());
        assert!(e.proof_of_correctness.is_empty());
        assert!(e.is_contiguous());
        assert!(!e.is_complete());
    }

    #[test]
    fn no_headings_is_parse_failure() {
        assert!(matches!(parse_explanation("no headings at all"), Err(ExplainError::ParseFailure)));
        assert!(matches!(parse_explanation(""), Err(ExplainError::ParseFailure)));
    }

    #[test]
    fn heading_variants() {
        for line in [
            "1). Brief Problem Summary: x",
            "1) Brief Problem Summary: x",
            "1: Brief Problem Summary: x",
            "1. Brief Problem Summary: x",
            "**1). Brief Problem Summary:** x",
            "1. **Brief Problem Summary**: x",
            "### 1. brief problem summary: x",
            "1). PROBLEM SUMMARY: x",
        ] {
            assert_eq!(match_heading(line), Some((PointId(1), "x")), "{line}");
        }
        assert_eq!(match_heading("7). Proof of Correctness: If"), Some((PointId(7), "If")));
        assert_eq!(match_heading("5). Solution in One Sentence: r"), Some((PointId(5), "r")));
        assert_eq!(match_heading("3). Step-by-step Solution Description"), Some((PointId(3), "")));
        assert_eq!(match_heading("1. Read the input array a."), None);
        assert_eq!(match_heading("6. Compute the time complexity: O(n)"), None);
        assert_eq!(match_heading("10. Used Algorithm: x"), None);
    }

    #[test]
    fn classify() {
        assert_eq!(classify_point(3).unwrap(), PointClass::Description);
        assert_eq!(classify_point(6).unwrap(), PointClass::Analysis);
        for d in [1, 3, 4, 5] {
            assert_eq!(classify_point(d).unwrap(), PointClass::Description);
        }
        for a in [2, 6, 7] {
            assert_eq!(classify_point(a).unwrap(), PointClass::Analysis);
        }
        assert!(matches!(classify_point(8), Err(ExplainError::PointOutOfRange(8))));
        assert!(classify_point(0).is_err());
    }

    #[test]
    fn leak_detector_basics() {
        assert!(contains_code("Use this:\n```python\nprint(1)\n```"));
        assert!(contains_code("a=int(input())\nb=a+1\nprint(b)"));
        assert!(!contains_code("Use a greedy algorithm with binary search."));
        assert!(!contains_code("If they are equal, print \"yes\", otherwise print \"no\"."));
        assert!(contains_code("x = 1\ny = x + 2\nz = x * y"));
        assert!(!contains_code("x = 1\nthen think\ny = 2"));
    }

    fn heading_style() -> impl Strategy<Value = usize> {
        0usize..5
    }

    fn render_heading(style: usize, id: PointId) -> String {
        let t = id.title();
        match style {
            0 => format!("{}). {}:", id.0, t),
            1 => format!("{}) {}:", id.0, t.to_uppercase()),
            2 => format!("**{}). {}:**", id.0, t),
            3 => format!("{}. {}:", id.0, t.to_lowercase()),
            _ => format!("{}: {}:", id.0, t),
        }
    }

    proptest! {
        #[test]
        fn reserialize_parse_is_fixed_point(
            bodies in proptest::collection::vec("[a-z ,.]{0,40}(\n[a-z ,.()=+]{1,30}){0,3}", 7),
            styles in proptest::collection::vec(heading_style(), 7),
            keep in 1usize..=7,
        ) {
            let mut text = String::from("preamble line\n");
            for (i, id) in PointId::all().take(keep).enumerate() {
                text.push_str(&render_heading(styles[i], id));
                text.push('\n');
                text.push_str(&bodies[i]);
                text.push('\n');
            }
            let Ok(first) = parse_explanation(&text) else {
                prop_assert!(bodies[..keep].iter().all(|b| b.trim().is_empty()));
                return Ok(());
            };
            let second = parse_explanation(&first.reserialize()).unwrap();
            prop_assert_eq!(&first.present_points, &second.present_points);
            for id in PointId::all() {
                prop_assert_eq!(first.point(id), second.point(id));
                prop_assert_eq!(first.point(id), bodies.get(usize::from(id.0 - 1)).filter(|_| id.0 as usize <= keep).map(|b| b.trim()).unwrap_or(""));
            }
        }

        #[test]
        fn points_never_share_characters(text in "([1-7]\\). (Used Algorithm|Time Complexity|Brief Problem Summary): [a-z ]{0,10}\n|[a-z ]{0,12}\n){0,12}") {
            if let Ok(e) = parse_explanation(&text) {
                let total: usize = PointId::all().map(|id| e.point(id).len()).sum();
                prop_assert!(total <= text.len());
            }
        }
    }
}
