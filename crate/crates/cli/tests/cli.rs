mod common;

use std::io::{BufRead, BufReader};
use std::process::Stdio;
use std::time::{Duration, Instant};

use explainbench::pipeline::{LOG_FILE, REPORT_JSON};
use explainbench::synth::write_fixture;
use serde_json::Value;

use common::*;

fn error_record(out: &std::process::Output) -> Value {
    let text = stderr(out);
    let line = text.lines().rev().find(|l| l.starts_with('{')).unwrap_or_else(|| panic!("no error record in {text}"));
    serde_json::from_str(line).unwrap()
}

#[test]
fn dry_run_prints_plan_without_touching_disk() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), &echo_problems("D", 3, 1, 4), 0).unwrap();
    let run_dir = dir.path().join("run");
    let mut args = solve_args(dir.path(), &run_dir);
    args.extend(["-k", "4", "--dry-run"].map(String::from));
    let out = bin().args(&args).output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let plan: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(plan["plan"]["problems"], 3);
    assert_eq!(plan["plan"]["planned_units"], 12);
    assert_eq!(plan["plan"]["resuming"], false);
    assert_eq!(plan["config"]["k"], 4);
    assert!(stderr(&out).contains("resolved config:"));
    assert!(!run_dir.exists());
}

#[test]
fn config_errors_exit_2_with_a_record() {
    let out = run(&["solve", "--mock", "/nonexistent/mock.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    let record = error_record(&out);
    assert_eq!(record["error"], "config");
    assert_eq!(record["field"], "corpus");

    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), &echo_problems("K", 1, 1, 1), 0).unwrap();
    let mut args = solve_args(dir.path(), &dir.path().join("run"));
    args.extend(["-k", "0"].map(String::from));
    let out = bin().args(&args).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_record(&out)["field"], "k");

    let mut args = solve_args(dir.path(), &dir.path().join("run"));
    args.extend(["--pipeline", "instructed"].map(String::from));
    let out = bin().args(&args).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_record(&out)["field"], "hint");
}

#[test]
fn config_file_layers_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), &echo_problems("F", 2, 1, 3), 0).unwrap();
    let config = dir.path().join("bench.toml");
    std::fs::write(
        &config,
        r#"
run_id = "from-file"
run_dir = "runs/file"
corpus = "corpus.jsonl"
k = 3

[backend]
kind = "mock"
fixture = "mock.jsonl"

[limits]
wall_time_ms = 2000
"#,
    )
    .unwrap();
    let path = config.display().to_string();
    let other = tempfile::tempdir().unwrap();
    let out = bin().current_dir(other.path()).args(["solve", "-c", &path, "--dry-run"]).output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let plan: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(plan["config"]["run_id"], "from-file");
    assert_eq!(plan["config"]["k"], 3);
    assert_eq!(plan["config"]["corpus"], dir.path().join("corpus.jsonl").display().to_string());

    let out = bin().current_dir(other.path()).args(["solve", "-c", &path, "-k", "1"]).output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("solve@1 50.0%"), "{}", stdout(&out));
    assert!(dir.path().join("runs/file").join(REPORT_JSON).exists());

    std::fs::write(&config, "k = 2\nworkers_total = 3\n").unwrap();
    let out = bin().args(["solve", "-c", &path]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_record(&out)["field"], "config");
}

#[test]
fn ingest_check_reports_rejections() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), &echo_problems("I", 3, 0, 1), 0).unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    let mut text = std::fs::read_to_string(&corpus).unwrap();
    text.push_str("{\"id\": \"broken\"\n");
    std::fs::write(&corpus, text).unwrap();
    let path = corpus.display().to_string();

    let out = run(&["ingest-check", "--corpus", &path]);
    assert!(out.status.success());
    let summary: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(summary["problems"], 3);
    assert_eq!(summary["rejected"], 1);
    assert!(stderr(&out).contains("rejected line 4"), "{}", stderr(&out));

    let out = run(&["ingest-check", "--corpus", &path, "--strict"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_record(&out)["error"], "corpus");
}

#[test]
fn report_and_verify_on_the_bundled_run() {
    let baseline = fixtures().join("baseline");
    let dir = baseline.display().to_string();
    let out = run(&["report", "--run-dir", &dir, "--tsv"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).lines().any(|l| l.starts_with("solve@10\t")), "{}", stdout(&out));

    let copy = tempfile::tempdir().unwrap();
    for name in ["config.json", "corpus.jsonl", "mock.jsonl", "log.jsonl", "report.json"] {
        std::fs::copy(baseline.join(name), copy.path().join(name)).unwrap();
    }
    let copy_dir = copy.path().display().to_string();
    assert!(run(&["verify-report", "--run-dir", &copy_dir]).status.success());
    let report = std::fs::read_to_string(copy.path().join(REPORT_JSON)).unwrap();
    std::fs::write(copy.path().join(REPORT_JSON), report.replacen("\"problems\": 165", "\"problems\": 164", 1)).unwrap();
    let out = run(&["verify-report", "--run-dir", &copy_dir]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_record(&out)["error"], "report_mismatch");

    let out = run(&["replay", "--run-dir", &copy_dir]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("solve@10 6.1%  public@10 13.9%"), "{}", stdout(&out));
}

#[test]
fn interrupt_then_resume_and_refuse_changed_config() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), &echo_problems("G", 6, 2, 2), 0).unwrap();
    let run_dir = dir.path().join("run");
    let mut args = solve_args(dir.path(), &run_dir);
    args.extend(["-k", "2", "--mock-latency-ms", "300", "--in-flight", "1"].map(String::from));
    let mut child = bin().args(&args).stdout(Stdio::null()).stderr(Stdio::piped()).spawn().unwrap();
    let log = run_dir.join(LOG_FILE);
    let deadline = Instant::now() + Duration::from_secs(60);
    while std::fs::read_to_string(&log).map_or(0, |t| t.matches("\"ModelCall\"").count()) < 2 {
        assert!(Instant::now() < deadline);
        std::thread::sleep(Duration::from_millis(20));
    }
    unsafe {
        libc::kill(child.id() as i32, libc::SIGINT);
    }
    let status = child.wait().unwrap();
    assert_eq!(status.code(), Some(130));
    assert!(!run_dir.join(REPORT_JSON).exists());

    let mut changed = solve_args(dir.path(), &run_dir);
    changed.extend(["-k", "3"].map(String::from));
    let out = bin().args(&changed).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_record(&out)["error"], "refused_resume");

    let mut resume = solve_args(dir.path(), &run_dir);
    resume.extend(["-k", "2"].map(String::from));
    let out = bin().args(&resume).output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("solve@2 33.3%"), "{}", stdout(&out));
}

#[test]
fn annotation_round_trip_over_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), &echo_problems("N", 1, 1, 1), 1).unwrap();
    let run_dir = dir.path().join("run");
    let mut args = solve_args(dir.path(), &run_dir);
    args[0] = "explain".into();
    args.extend(["--run-id", "notes"].map(String::from));
    let out = bin().args(&args).output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let run_dir_s = run_dir.display().to_string();

    let out = run(&["export-explanations", "--run-dir", &run_dir_s]);
    let exported: Vec<Value> = stdout(&out).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(exported.len(), 1);
    assert_eq!(exported[0]["ref"], "N00/s0/e0");

    let config = dir.path().join("serve.toml");
    std::fs::write(&config, "[annotation]\nadmin_token = \"adm\"\n\n[annotation.tokens]\nauthor-N00 = \"tok-n\"\n").unwrap();
    let mut server = bin()
        .args(["annotate-serve", "--run-dir", &run_dir_s, "-c", &config.display().to_string(), "--bind", "127.0.0.1:0"])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(server.stderr.take().unwrap()).lines();
    let url = loop {
        let line = lines.next().expect("server exited").unwrap();
        if let Some(addr) = line.strip_prefix("listening on ") {
            break format!("http://{addr}");
        }
    };
    let annotate = |token: &str, rest: &[&str]| {
        let mut cmd = bin();
        cmd.env("EXPLAINBENCH_ANNOTATOR_TOKEN", token).args(["annotate", "--url", &url]).args(rest);
        cmd.output().unwrap()
    };

    let out = annotate("adm", &["explanations", "notes"]);
    assert_eq!(stdout(&out).trim(), "N00/s0/e0", "{}", stderr(&out));
    let out = annotate("adm", &["assign", "notes", "N00/s0/e0"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let tasks: Value = serde_json::from_str(&stdout(&out)).unwrap();
    let task = tasks[0]["task_id"].as_str().unwrap().to_string();

    let out = annotate("tok-n", &["tasks", "author-N00"]);
    assert!(stdout(&out).contains(&task));
    let out = annotate("tok-n", &["show", &task]);
    assert!(stdout(&out).contains("Usefulness"), "{}", stdout(&out));

    let out = annotate("tok-n", &["submit", &task, "q1=2", "q2=2"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_record(&out)["error"], "missing_question");
    let out = annotate("tok-n", &["submit", &task, "q1=two"]);
    assert_eq!(out.status.code(), Some(2));

    let scores: Vec<String> = (1..=10).map(|q| format!("q{q}={}", if q == 8 { 2 } else { 1 })).collect();
    let mut submit = vec!["submit", task.as_str()];
    submit.extend(scores.iter().map(String::as_str));
    let out = annotate("tok-n", &submit);
    assert!(out.status.success(), "{}", stderr(&out));

    let out = annotate("tok-n", &["likert", "notes"]);
    let text = stdout(&out);
    assert!(text.contains("q8\t1\t2.00"), "{text}");
    assert!(text.contains("\"description_and_usefulness_mean\": 1.25"), "{text}");

    let _ = server.kill();
    let _ = server.wait();
}
