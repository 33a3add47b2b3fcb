//! Problem corpus ingestion, oracle-solution ranking and rating buckets.
//!
//! A corpus file holds one JSON object per line:
//!
//! ```text
//! {"id": "...", "title": "...", "statement": "...", "rating": 800,
//!  "public_tests": [{"input": "...", "output": "..."}],
//!  "hidden_tests": [{"input": "...", "output": "..."}],
//!  "solutions": [{"language": "python3", "source": "...", "author": "..."}]}
//! ```
//!
//! `rating`, `hidden_tests` and the per-solution `author` are optional.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("problem {0} has no oracle solutions")]
    NoOracleSolution(String),
    #[error("corpus has {0} rejected record(s); first: {1}")]
    Rejected(usize, RecordDiagnostic),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub input: String,
    #[serde(rename = "output")]
    pub expected: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleSolution {
    #[serde(rename = "language")]
    pub language_tag: String,
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub author: Option<String>,
    /// Length of `source` in bytes; always recomputed on load.
    #[serde(skip)]
    pub byte_size: usize,
}

impl OracleSolution {
    pub fn new(language_tag: impl Into<String>, source: impl Into<String>) -> Self {
        let source = source.into();
        OracleSolution {
            language_tag: language_tag.into(),
            byte_size: source.len(),
            source,
            author: None,
        }
    }

    pub fn with_author(mut self, author: impl Into<String>) -> Self {
        self.author = Some(author.into());
        self
    }

    /// Python-family detection: case-insensitive `py` prefix.
    pub fn is_python(&self) -> bool {
        self.language_tag
            .get(..2)
            .is_some_and(|p| p.eq_ignore_ascii_case("py"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub title: String,
    pub statement: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rating: Option<i64>,
    pub public_tests: Vec<TestCase>,
    #[serde(default)]
    pub hidden_tests: Vec<TestCase>,
    #[serde(default)]
    pub solutions: Vec<OracleSolution>,
}

impl Problem {
    pub fn bucket(&self) -> RatingBucket {
        rating_bucket(self.rating)
    }

    /// Problems without hidden tests are judged on their public tests only.
    pub fn public_only(&self) -> bool {
        self.hidden_tests.is_empty()
    }

    fn validate(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("empty id".into());
        }
        if self.public_tests.is_empty() {
            return Err("public_tests is empty".into());
        }
        let judged = self.public_tests.iter().chain(&self.hidden_tests);
        for (i, t) in judged.enumerate() {
            if t.expected.split_whitespace().next().is_none() {
                return Err(format!("test {i} has blank expected output"));
            }
        }
        for (i, s) in self.solutions.iter().enumerate() {
            if s.source.is_empty() {
                return Err(format!("solution {i} has empty source"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub problems: Vec<Problem>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.problems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.problems.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Problem> {
        self.problems.iter().find(|p| p.id == id)
    }
}

/// A record that was read but not admitted into the corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordDiagnostic {
    pub line: usize,
    pub id: Option<String>,
    pub reason: String,
}

impl fmt::Display for RecordDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.id {
            Some(id) => write!(f, "line {} (id {id}): {}", self.line, self.reason),
            None => write!(f, "line {}: {}", self.line, self.reason),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub corpus: Corpus,
    pub rejected: Vec<RecordDiagnostic>,
}

impl LoadReport {
    /// Fails if any record was rejected.
    pub fn into_strict(self) -> Result<Corpus, CorpusError> {
        match self.rejected.first() {
            Some(first) => Err(CorpusError::Rejected(self.rejected.len(), first.clone())),
            None => Ok(self.corpus),
        }
    }
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<LoadReport, CorpusError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Unreadable {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(parse_corpus(&text))
}

/// Parses line-delimited records. Blank lines are ignored; invalid and
/// duplicate records are reported and skipped.
pub fn parse_corpus(text: &str) -> LoadReport {
    let mut report = LoadReport::default();
    let mut seen = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut problem: Problem = match serde_json::from_str(line) {
            Ok(p) => p,
            Err(e) => {
                let id = serde_json::from_str::<serde_json::Value>(line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(|i| i.as_str()).map(str::to_owned));
                report.rejected.push(RecordDiagnostic {
                    line: line_no,
                    id,
                    reason: format!("malformed record: {e}"),
                });
                continue;
            }
        };
        for s in &mut problem.solutions {
            s.byte_size = s.source.len();
        }
        if let Err(reason) = problem.validate() {
            report.rejected.push(RecordDiagnostic {
                line: line_no,
                id: Some(problem.id.clone()),
                reason,
            });
            continue;
        }
        if !seen.insert(problem.id.clone()) {
            report.rejected.push(RecordDiagnostic {
                line: line_no,
                id: Some(problem.id.clone()),
                reason: "duplicate id".into(),
            });
            continue;
        }
        report.corpus.problems.push(problem);
    }
    report
}

/// Serializes a corpus in the same line-delimited format `load_corpus` reads.
pub fn write_corpus(corpus: &Corpus) -> String {
    let mut out = String::new();
    for p in &corpus.problems {
        out.push_str(&serde_json::to_string(p).expect("problem serializes"));
        out.push('\n');
    }
    out
}

/// Ranks oracle solutions: Python first, then shorter, then input order.
/// Returns the top `k` together with their index in `problem.solutions`.
pub fn select_solutions(
    problem: &Problem,
    k: usize,
) -> Result<Vec<(usize, &OracleSolution)>, CorpusError> {
    if problem.solutions.is_empty() {
        return Err(CorpusError::NoOracleSolution(problem.id.clone()));
    }
    let mut ranked: Vec<(usize, &OracleSolution)> = problem.solutions.iter().enumerate().collect();
    // sort_by_key is stable, so input order breaks remaining ties.
    ranked.sort_by_key(|(_, s)| (!s.is_python(), s.byte_size));
    ranked.truncate(k);
    Ok(ranked)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RatingBucket {
    B800_1000,
    B1000_1500,
    B1500_2000,
    B2000_3600,
    Unrated,
}

impl RatingBucket {
    pub const ALL: [RatingBucket; 5] = [
        RatingBucket::B800_1000,
        RatingBucket::B1000_1500,
        RatingBucket::B1500_2000,
        RatingBucket::B2000_3600,
        RatingBucket::Unrated,
    ];

    pub fn label(self) -> &'static str {
        match self {
            RatingBucket::B800_1000 => "[800, 1000]",
            RatingBucket::B1000_1500 => "(1000, 1500]",
            RatingBucket::B1500_2000 => "(1500, 2000]",
            RatingBucket::B2000_3600 => "(2000, 3600]",
            RatingBucket::Unrated => "unrated",
        }
    }
}

impl fmt::Display for RatingBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

pub fn rating_bucket(rating: Option<i64>) -> RatingBucket {
    match rating {
        Some(800..=1000) => RatingBucket::B800_1000,
        Some(1001..=1500) => RatingBucket::B1000_1500,
        Some(1501..=2000) => RatingBucket::B1500_2000,
        Some(2001..=3600) => RatingBucket::B2000_3600,
        _ => RatingBucket::Unrated,
    }
}

/// Sections of a problem statement split on the conventional
/// `Input` / `Output` / `Example(s)` / `Note` heading lines.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StatementSections {
    pub legend: String,
    pub input: Option<String>,
    pub output: Option<String>,
    pub examples: Option<String>,
    pub note: Option<String>,
}

impl StatementSections {
    pub fn parse(statement: &str) -> Self {
        #[derive(Clone, Copy)]
        enum Slot {
            Legend,
            Input,
            Output,
            Examples,
            Note,
        }
        let mut sections = StatementSections::default();
        let mut buffers: [Option<Vec<&str>>; 5] = [Some(Vec::new()), None, None, None, None];
        let mut current = Slot::Legend;
        for line in statement.lines() {
            let heading = match line.trim().trim_end_matches(':').to_ascii_lowercase().as_str() {
                "input" => Some(Slot::Input),
                "output" => Some(Slot::Output),
                "example" | "examples" => Some(Slot::Examples),
                "note" | "notes" => Some(Slot::Note),
                _ => None,
            };
            match heading {
                Some(slot) if buffers[slot as usize].is_none() => {
                    current = slot;
                    buffers[slot as usize] = Some(Vec::new());
                }
                _ => buffers[current as usize]
                    .get_or_insert_with(Vec::new)
                    .push(line),
            }
        }
        let join = |b: &Option<Vec<&str>>| b.as_ref().map(|lines| lines.join("\n").trim().to_string());
        sections.legend = join(&buffers[0]).unwrap_or_default();
        sections.input = join(&buffers[1]);
        sections.output = join(&buffers[2]);
        sections.examples = join(&buffers[3]);
        sections.note = join(&buffers[4]);
        sections
    }

    /// Renders the statement back, dropping any section whose body is empty.
    pub fn render(&self) -> String {
        let mut parts = Vec::new();
        if !self.legend.is_empty() {
            parts.push(self.legend.clone());
        }
        for (name, body) in [
            ("Input", &self.input),
            ("Output", &self.output),
            ("Examples", &self.examples),
            ("Note", &self.note),
        ] {
            if let Some(body) = body.as_deref().filter(|b| !b.is_empty()) {
                parts.push(format!("{name}\n{body}"));
            }
        }
        parts.join("\n")
    }
}
