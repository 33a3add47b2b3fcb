#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use explainbench::synth::{Behavior, SynthProblem};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

pub fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_explainbench"));
    cmd.env_remove("EXPLAINBENCH_ANNOTATOR_TOKEN");
    cmd
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn explainbench")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// `n` echo problems; the first `correct` get correct programs for every
/// sample, the others wrong ones.
pub fn echo_problems(prefix: &str, n: usize, correct: usize, samples: usize) -> Vec<SynthProblem> {
    (0..n)
        .map(|i| SynthProblem {
            id: format!("{prefix}{i:02}"),
            rating: Some(800 + 150 * i as i64),
            samples: vec![if i < correct { Behavior::Correct } else { Behavior::Wrong }; samples],
        })
        .collect()
}

pub fn solve_args<'a>(dir: &'a Path, run_dir: &'a Path) -> Vec<String> {
    vec![
        "solve".into(),
        "--corpus".into(),
        dir.join("corpus.jsonl").display().to_string(),
        "--mock".into(),
        dir.join("mock.jsonl").display().to_string(),
        "--run-dir".into(),
        run_dir.display().to_string(),
        "--time-limit-ms".into(),
        "2000".into(),
    ]
}
