//! Synthetic problems and scripted model replies with known outcomes,
//! for self-tests of the harness and for building fixture runs.
//!
//! Every synthetic problem echoes an integer. Its public test uses one
//! value and its hidden tests others, so a program's behaviour on each
//! stage is fixed by construction.

use std::path::Path;

use crate::corpus::{write_corpus, Corpus, OracleSolution, Problem, TestCase};
use crate::explainer::PointId;
use crate::llmgateway::MockRule;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Behavior {
    /// Passes public and hidden tests.
    Correct,
    /// Fails the public test.
    Wrong,
    /// Hard-codes the public answer: passes public, fails hidden.
    PublicOnly,
    /// Never terminates.
    Slow,
    /// Echoes the public value, loops forever on any other input.
    HiddenTimeout,
    /// Exits with an error status.
    Crash,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthProblem {
    pub id: String,
    pub rating: Option<i64>,
    /// Behaviour of the program returned for sample j.
    pub samples: Vec<Behavior>,
}

fn public_value(id: &str) -> u64 {
    id.bytes().fold(7u64, |h, b| h.wrapping_mul(31).wrapping_add(u64::from(b))) % 1000 + 1
}

/// Marker that appears in every prompt built from the statement.
pub fn statement_marker(id: &str) -> String {
    format!("Synthetic problem {id}.")
}

/// Marker that appears only in explainer prompts (inside every oracle
/// source, whatever its language).
pub fn oracle_marker(id: &str) -> String {
    format!("oracle for {id}:")
}

pub fn program(behavior: Behavior, id: &str) -> String {
    match behavior {
        Behavior::Correct => "n = int(input())\nprint(n)".into(),
        Behavior::Wrong => "n = int(input())\nprint(n + 1)".into(),
        Behavior::PublicOnly => format!("print({})", public_value(id)),
        Behavior::Slow => "while True:\n    pass".into(),
        Behavior::HiddenTimeout => format!(
            "n = int(input())\nwhile n != {}:\n    pass\nprint(n)",
            public_value(id)
        ),
        Behavior::Crash => "import sys\nsys.exit(3)".into(),
    }
}

pub fn problem(desc: &SynthProblem) -> Problem {
    let p = public_value(&desc.id);
    Problem {
        id: desc.id.clone(),
        title: format!("Echo {}", desc.id),
        statement: format!(
            "{} Read an integer n and print it.\nInput\nA single integer n (1 <= n <= 10^9).\nOutput\nPrint n.\nExamples\n{p}\n{p}",
            statement_marker(&desc.id)
        ),
        rating: desc.rating,
        public_tests: vec![TestCase { input: format!("{p}\n"), expected: p.to_string() }],
        hidden_tests: vec![
            TestCase { input: format!("{}\n", p + 1000), expected: (p + 1000).to_string() },
            TestCase { input: "999999937\n".into(), expected: "999999937".into() },
        ],
        solutions: vec![
            OracleSolution::new("Python 3", format!("# {}\nprint(int(input()))", oracle_marker(&desc.id)))
                .with_author(format!("author-{}", desc.id)),
            OracleSolution::new("Python 3", format!("# {}\nimport sys\nprint(sys.stdin.readline().strip())", oracle_marker(&desc.id))),
            OracleSolution::new(
                "C++",
                format!("// {}\n#include <cstdio>\nint main(){{long long n;scanf(\"%lld\",&n);printf(\"%lld\\n\",n);}}", oracle_marker(&desc.id)),
            ),
        ],
    }
}

pub fn fenced(source: &str) -> String {
    format!("Here is the program.\n```python\n{source}\n```\n")
}

/// Replies to solver prompts for `desc`, keyed on sample index.
pub fn solver_rules(desc: &SynthProblem) -> Vec<MockRule> {
    desc.samples
        .iter()
        .enumerate()
        .map(|(j, b)| MockRule::contains(statement_marker(&desc.id), Some(j), fenced(&program(*b, &desc.id))))
        .collect()
}

/// A complete seven-point explanation whose points are plain prose.
pub fn explanation_text(id: &str, variant: usize) -> String {
    let bodies = [
        format!("Read one integer and print it unchanged (problem {id})."),
        "No algorithm beyond direct input and output is needed.".into(),
        "1. Read the integer n.\n2. Print the value n on its own line.".into(),
        format!("The answer is the input itself, so echoing it is enough (variant {variant})."),
        "Print the number that was read.".into(),
        "O(1) time and memory.".into(),
        "The required output equals the input by definition.".into(),
    ];
    PointId::all()
        .zip(bodies)
        .map(|(p, body)| format!("{}). {}: {}\n", p.get(), p.title(), body))
        .collect()
}

/// Replies to explainer prompts for `desc`, one per explanation sample.
pub fn explainer_rules(desc: &SynthProblem, samples: usize) -> Vec<MockRule> {
    (0..samples)
        .map(|j| MockRule::contains(oracle_marker(&desc.id), Some(j), explanation_text(&desc.id, j)))
        .collect()
}

pub fn corpus(descs: &[SynthProblem]) -> Corpus {
    Corpus { problems: descs.iter().map(problem).collect() }
}

/// Writes `corpus.jsonl` and `mock.jsonl` into `dir`. Explainer rules come
/// first so they win over the statement match.
pub fn write_fixture(dir: &Path, descs: &[SynthProblem], explanation_samples: usize) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("corpus.jsonl"), write_corpus(&corpus(descs)))?;
    let mut lines = String::new();
    for rule in descs.iter().flat_map(|s| explainer_rules(s, explanation_samples)) {
        lines.push_str(&serde_json::to_string(&rule).expect("rules serialize"));
        lines.push('\n');
    }
    for rule in descs.iter().flat_map(solver_rules) {
        lines.push_str(&serde_json::to_string(&rule).expect("rules serialize"));
        lines.push('\n');
    }
    std::fs::write(dir.join("mock.jsonl"), lines)
}
