//! Regenerates the bundled run fixtures under `crates/cli/tests/fixtures`.
//!
//! ```text
//! cargo run -p explainbench-core --example build_fixtures -- crates/cli/tests/fixtures
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{TimeZone, Utc};
use explainbench::judge::ExecutionLimits;
use explainbench::pipeline::{execute, BackendConfig, ExecuteOptions, RunConfig, Workers};
use explainbench::runstore::Clock;
use explainbench::synth::{write_fixture, Behavior, SynthProblem};

/// 165 problems in rating buckets of 30/28/33/74. Ten problems get one
/// correct sample, thirteen more get one sample that only passes the
/// public test, the rest only produce wrong programs.
fn baseline_problems() -> Vec<SynthProblem> {
    let buckets = [(30, 900), (28, 1200), (33, 1800), (74, 2400)];
    let solved_per_bucket = [4, 3, 2, 1];
    let public_only_per_bucket = [4, 3, 3, 3];
    let mut descs = Vec::new();
    for (b, &(count, rating)) in buckets.iter().enumerate() {
        for i in 0..count {
            let n = descs.len();
            let mut samples = vec![Behavior::Wrong; 10];
            if i < solved_per_bucket[b] {
                samples[n % 10] = Behavior::Correct;
                samples[(n + 3) % 10] = Behavior::PublicOnly;
            } else if i < solved_per_bucket[b] + public_only_per_bucket[b] {
                samples[n % 10] = Behavior::PublicOnly;
            } else if i % 7 == 0 {
                samples[n % 10] = Behavior::Crash;
            }
            descs.push(SynthProblem { id: format!("syn{:03}", n + 1), rating: Some(rating), samples });
        }
    }
    descs
}

/// Nine problems with five public-passing samples each: 16 accepted,
/// 7 wrong on hidden tests, 22 timing out on hidden tests.
fn verdict_problems() -> Vec<SynthProblem> {
    let mut pool = Vec::new();
    pool.extend(std::iter::repeat_n(Behavior::Correct, 16));
    pool.extend(std::iter::repeat_n(Behavior::PublicOnly, 7));
    pool.extend(std::iter::repeat_n(Behavior::HiddenTimeout, 22));
    pool.chunks(5)
        .enumerate()
        .map(|(i, chunk)| SynthProblem { id: format!("vrd{:02}", i + 1), rating: Some(1300), samples: chunk.to_vec() })
        .collect()
}

fn fixed_clock() -> Clock {
    let t = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    Arc::new(move || t)
}

fn build(dir: &Path, run_id: &str, descs: &[SynthProblem], k: usize, wall_time_ms: u64) {
    if dir.exists() {
        std::fs::remove_dir_all(dir).expect("clear old fixture");
    }
    write_fixture(dir, descs, 0).expect("write corpus and mock rules");
    let backend = BackendConfig::Mock { fixture: PathBuf::from("mock.jsonl"), latency_ms: 0 };
    let mut config = RunConfig::new(run_id, "corpus.jsonl", backend, dir);
    config.k = k;
    config.limits = ExecutionLimits { wall_time_ms, ..ExecutionLimits::default() };
    config.workers = Workers { problems: 1, ..Workers::default() };
    let summary = execute(&config, ExecuteOptions { clock: Some(fixed_clock()), ..ExecuteOptions::default() })
        .expect("fixture run");
    let report = summary.report.expect("solve mode writes a report");
    let path = dir.join("config.json");
    let mut stored: serde_json::Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    stored["run_dir"] = ".".into();
    std::fs::write(&path, serde_json::to_string_pretty(&stored).unwrap() + "\n").unwrap();
    print!("{}", report.render_text());
}

fn main() {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "crates/cli/tests/fixtures".into()));
    let root = std::fs::canonicalize(&root).unwrap_or(root);
    build(&root.join("baseline"), "baseline", &baseline_problems(), 10, 2000);
    build(&root.join("verdicts"), "verdicts", &verdict_problems(), 5, 1000);
}
