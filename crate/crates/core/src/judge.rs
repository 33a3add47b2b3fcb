//! Local judging: run candidate programs in a child process under wall
//! clock, memory and output limits, compare outputs, assign verdicts.
//!
//! Each program runs in a throwaway directory, in its own process group,
//! with `RLIMIT_AS` set to the memory limit. When the kernel allows
//! unprivileged user namespaces the program also gets an empty network
//! namespace; otherwise it runs with the host network and results carry
//! `network_isolated: false`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::os::unix::fs::PermissionsExt;
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Problem, TestCase};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum JudgeError {
    #[error("no executor configured for language {0:?}")]
    MissingExecutor(String),
    #[error("no tests to judge against")]
    NoTests,
    #[error("sandbox setup failed: {0}")]
    Setup(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExecutionLimits {
    pub wall_time_ms: u64,
    pub memory_bytes: u64,
    pub output_cap_bytes: u64,
}

impl Default for ExecutionLimits {
    fn default() -> Self {
        ExecutionLimits {
            wall_time_ms: 10_000,
            memory_bytes: 256 << 20,
            output_cap_bytes: 16 << 20,
        }
    }
}

impl ExecutionLimits {
    pub fn validate(&self) -> Result<(), String> {
        if self.wall_time_ms == 0 || self.memory_bytes == 0 || self.output_cap_bytes == 0 {
            return Err("execution limits must be positive".into());
        }
        Ok(())
    }

    pub fn wall_time(&self) -> Duration {
        Duration::from_millis(self.wall_time_ms)
    }
}

/// Grace period allowed between the wall-clock deadline and reaping.
pub const TERMINATION_GRACE: Duration = Duration::from_millis(500);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OtherCause {
    MemoryLimitExceeded,
    RuntimeError,
    OutputCapExceeded,
    CompilationError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Verdict {
    Accepted,
    WrongAnswer,
    TimeLimitExceeded,
    Other(OtherCause),
}

impl Verdict {
    pub fn is_accepted(self) -> bool {
        self == Verdict::Accepted
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    Public,
    Hidden,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestRecord {
    pub test_index: usize,
    pub elapsed_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peak_memory_kib: Option<u64>,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<Verdict>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub stderr_excerpt: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MemoryEnforcement {
    /// Address-space limit set on the child.
    Rlimit,
    /// Peak memory observed after exit; MLE assigned post hoc.
    Observed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeResult {
    pub candidate: String,
    pub stage: Stage,
    pub per_test: Vec<TestRecord>,
    pub final_verdict: Verdict,
    pub tests_run: usize,
    pub memory_enforcement: MemoryEnforcement,
    pub network_isolated: bool,
}

/// How to run one language. `{source}` and `{dir}` in any argument are
/// replaced with the source file path and the scratch directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutorSpec {
    pub file_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compile: Option<Vec<String>>,
    pub run: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Executors(pub BTreeMap<String, ExecutorSpec>);

impl Default for Executors {
    fn default() -> Self {
        let python = ExecutorSpec {
            file_name: "main.py".into(),
            compile: None,
            run: vec!["python3".into(), "{source}".into()],
        };
        let cpp = ExecutorSpec {
            file_name: "main.cpp".into(),
            compile: Some(
                ["g++", "-O2", "-std=c++17", "-o", "{dir}/main", "{source}"]
                    .map(String::from)
                    .to_vec(),
            ),
            run: vec!["{dir}/main".into()],
        };
        let mut map = BTreeMap::new();
        map.insert("python3".into(), python);
        map.insert("cpp".into(), cpp);
        Executors(map)
    }
}

impl Executors {
    /// Exact (case-insensitive) tag first, then Python-family and C++
    /// aliases.
    pub fn lookup(&self, language_tag: &str) -> Option<&ExecutorSpec> {
        let tag = language_tag.to_ascii_lowercase();
        if let Some(desc) = self.0.get(&tag) {
            return Some(desc);
        }
        let alias = if tag.starts_with("py") {
            "python3"
        } else if matches!(tag.as_str(), "c++" | "cpp17" | "c++17" | "g++") {
            "cpp"
        } else {
            return None;
        };
        self.0.get(alias)
    }
}

/// Output comparison settings. `command`, when set, is an external
/// checker invoked as `command... <input> <expected> <actual>` with
/// file paths; exit status 0 accepts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checker {
    pub case_insensitive: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Vec<String>>,
}

impl Default for Checker {
    fn default() -> Self {
        Checker { case_insensitive: true, command: None }
    }
}

/// Whitespace-token comparison with optional case folding.
pub fn compare_output(actual: &str, expected: &str, case_insensitive: bool) -> bool {
    let mut a = actual.split_whitespace();
    let mut e = expected.split_whitespace();
    loop {
        match (a.next(), e.next()) {
            (None, None) => return true,
            (Some(x), Some(y)) => {
                let same = if case_insensitive {
                    x == y || x.to_lowercase() == y.to_lowercase()
                } else {
                    x == y
                };
                if !same {
                    return false;
                }
            }
            _ => return false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Exit {
    Code(i32),
    Signal(i32),
    TimedOut,
    OutputCap,
}

struct RawRun {
    exit: Exit,
    stdout: Vec<u8>,
    stderr: Vec<u8>,
    elapsed: Duration,
    maxrss_kib: Option<u64>,
}

const STDERR_CAP: usize = 64 << 10;
const EXCERPT: usize = 512;

const NOBODY: libc::uid_t = 65534;

/// Moves the calling (forked) process into a fresh network namespace. A
/// root harness also drops to the nobody user so that owner permission
/// bits on harness files apply to the candidate.
fn isolate_current_process() -> std::io::Result<()> {
    // SAFETY: plain syscalls, async-signal-safe.
    unsafe {
        if libc::geteuid() == 0 {
            if libc::unshare(libc::CLONE_NEWNET) != 0
                || libc::setgroups(0, std::ptr::null()) != 0
                || libc::setgid(NOBODY) != 0
                || libc::setuid(NOBODY) != 0
            {
                return Err(std::io::Error::last_os_error());
            }
        } else if libc::unshare(libc::CLONE_NEWUSER | libc::CLONE_NEWNET) != 0 {
            return Err(std::io::Error::last_os_error());
        }
    }
    Ok(())
}

fn network_isolation_available() -> bool {
    static PROBE: OnceLock<bool> = OnceLock::new();
    *PROBE.get_or_init(|| {
        let mut cmd = Command::new("true");
        cmd.stdin(Stdio::null()).stdout(Stdio::null()).stderr(Stdio::null());
        // SAFETY: only async-signal-safe libc calls run between fork and exec.
        unsafe {
            cmd.pre_exec(isolate_current_process);
        }
        matches!(cmd.status(), Ok(s) if s.success())
    })
}

fn spawn_limited(
    argv: &[String],
    cwd: &Path,
    limits: &ExecutionLimits,
    isolate: bool,
) -> std::io::Result<std::process::Child> {
    let mut cmd = Command::new(&argv[0]);
    cmd.args(&argv[1..])
        .current_dir(cwd)
        .env_clear()
        .env("PATH", std::env::var_os("PATH").unwrap_or_else(|| "/usr/bin:/bin".into()))
        .env("HOME", cwd)
        .env("LANG", "C.UTF-8")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    let memory = limits.memory_bytes;
    // SAFETY: only async-signal-safe libc calls run between fork and exec.
    unsafe {
        cmd.pre_exec(move || {
            libc::setsid();
            let mem = libc::rlimit { rlim_cur: memory as libc::rlim_t, rlim_max: memory as libc::rlim_t };
            libc::setrlimit(libc::RLIMIT_AS, &mem);
            let core = libc::rlimit { rlim_cur: 0, rlim_max: 0 };
            libc::setrlimit(libc::RLIMIT_CORE, &core);
            if isolate {
                isolate_current_process()?;
            }
            Ok(())
        });
    }
    cmd.spawn()
}

fn capped_reader(
    mut pipe: impl Read + Send + 'static,
    cap: usize,
    overflow: Arc<AtomicBool>,
) -> std::thread::JoinHandle<Vec<u8>> {
    std::thread::spawn(move || {
        let mut out = Vec::new();
        let mut buf = [0u8; 8192];
        loop {
            match pipe.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    if out.len() + n > cap {
                        let room = cap - out.len();
                        out.extend_from_slice(&buf[..room]);
                        overflow.store(true, Ordering::SeqCst);
                        break;
                    }
                    out.extend_from_slice(&buf[..n]);
                }
            }
        }
        out
    })
}

fn execute(argv: &[String], cwd: &Path, input: &[u8], limits: &ExecutionLimits, isolate: bool) -> Result<RawRun, JudgeError> {
    let started = Instant::now();
    let mut child = spawn_limited(argv, cwd, limits, isolate)
        .map_err(|e| JudgeError::Setup(format!("cannot start {:?}: {e}", argv[0])))?;
    let pid = child.id() as libc::pid_t;

    let mut stdin = child.stdin.take().expect("stdin piped");
    let input = input.to_vec();
    let writer = std::thread::spawn(move || {
        let _ = stdin.write_all(&input);
    });
    let overflow = Arc::new(AtomicBool::new(false));
    let out_reader = capped_reader(
        child.stdout.take().expect("stdout piped"),
        usize::try_from(limits.output_cap_bytes).unwrap_or(usize::MAX),
        overflow.clone(),
    );
    let err_reader = capped_reader(child.stderr.take().expect("stderr piped"), STDERR_CAP, Arc::new(AtomicBool::new(false)));

    let deadline = started + limits.wall_time();
    let mut status: libc::c_int = 0;
    // SAFETY: zeroed rusage is a valid out-parameter for wait4.
    let mut usage: libc::rusage = unsafe { std::mem::zeroed() };
    let mut forced: Option<Exit> = None;
    let mut elapsed;
    loop {
        // SAFETY: pid is our unreaped child; status and usage are valid pointers.
        let r = unsafe { libc::wait4(pid, &mut status, libc::WNOHANG, &mut usage) };
        elapsed = started.elapsed();
        if r == pid {
            break;
        }
        let over = overflow.load(Ordering::SeqCst);
        if over || Instant::now() >= deadline {
            forced = Some(if over { Exit::OutputCap } else { Exit::TimedOut });
            // SAFETY: signalling our own process group.
            unsafe {
                libc::kill(-pid, libc::SIGKILL);
                libc::kill(pid, libc::SIGKILL);
            }
            // SAFETY: as above; blocking reap after kill.
            unsafe { libc::wait4(pid, &mut status, 0, &mut usage) };
            break;
        }
        std::thread::sleep(Duration::from_millis(2));
    }
    // Stray descendants may hold the pipes open.
    // SAFETY: signalling our own process group.
    unsafe { libc::kill(-pid, libc::SIGKILL) };
    let _ = writer.join();
    let stdout = out_reader.join().unwrap_or_default();
    let stderr = err_reader.join().unwrap_or_default();
    let exit = forced.unwrap_or(if libc::WIFEXITED(status) {
        Exit::Code(libc::WEXITSTATUS(status))
    } else {
        Exit::Signal(libc::WTERMSIG(status))
    });
    let maxrss = u64::try_from(usage.ru_maxrss).ok().filter(|&k| k > 0);
    Ok(RawRun { exit, stdout, stderr, elapsed, maxrss_kib: maxrss })
}

fn substitute(args: &[String], source: &Path, dir: &Path) -> Vec<String> {
    args.iter()
        .map(|a| {
            a.replace("{source}", &source.display().to_string())
                .replace("{dir}", &dir.display().to_string())
        })
        .collect()
}

/// A candidate written to its scratch directory and compiled if needed.
pub struct Prepared {
    dir: tempfile::TempDir,
    run: Vec<String>,
    compile_error: Option<String>,
}

impl Prepared {
    pub fn dir(&self) -> &Path {
        self.dir.path()
    }
}

#[derive(Debug, Clone)]
pub struct Sandbox {
    pub executors: Executors,
    /// Request an empty network namespace for judged programs.
    pub isolate_network: bool,
}

impl Default for Sandbox {
    fn default() -> Self {
        Sandbox { executors: Executors::default(), isolate_network: true }
    }
}

impl Sandbox {
    pub fn network_isolated(&self) -> bool {
        self.isolate_network && network_isolation_available()
    }

    pub fn prepare(&self, source: &str, language_tag: &str, limits: &ExecutionLimits) -> Result<Prepared, JudgeError> {
        let desc = self
            .executors
            .lookup(language_tag)
            .ok_or_else(|| JudgeError::MissingExecutor(language_tag.to_string()))?;
        let dir = tempfile::Builder::new()
            .prefix("explainbench-")
            .tempdir()
            .map_err(|e| JudgeError::Setup(e.to_string()))?;
        let src_path: PathBuf = dir.path().join(&desc.file_name);
        std::fs::write(&src_path, source).map_err(|e| JudgeError::Setup(e.to_string()))?;
        // Readable by the unmapped uid inside a user namespace.
        let _ = std::fs::set_permissions(dir.path(), std::fs::Permissions::from_mode(0o755));
        let _ = std::fs::set_permissions(&src_path, std::fs::Permissions::from_mode(0o644));
        let mut compile_error = None;
        if let Some(compile) = &desc.compile {
            let argv = substitute(compile, &src_path, dir.path());
            let compile_limits = ExecutionLimits {
                wall_time_ms: limits.wall_time_ms.max(30_000),
                memory_bytes: limits.memory_bytes.max(1 << 30),
                output_cap_bytes: STDERR_CAP as u64,
            };
            let raw = execute(&argv, dir.path(), b"", &compile_limits, false)?;
            if raw.exit != Exit::Code(0) {
                compile_error = Some(excerpt(&raw.stderr));
            }
        }
        Ok(Prepared {
            run: substitute(&desc.run, &src_path, dir.path()),
            dir,
            compile_error,
        })
    }

    /// Runs a prepared program on one test.
    pub fn run_prepared(
        &self,
        prepared: &Prepared,
        test_index: usize,
        test: &TestCase,
        limits: &ExecutionLimits,
        checker: &Checker,
    ) -> Result<TestRecord, JudgeError> {
        if let Some(err) = &prepared.compile_error {
            return Ok(TestRecord {
                test_index,
                elapsed_ms: 0,
                peak_memory_kib: None,
                passed: false,
                failure: Some(Verdict::Other(OtherCause::CompilationError)),
                stderr_excerpt: err.clone(),
            });
        }
        let raw = execute(&prepared.run, prepared.dir(), test.input.as_bytes(), limits, self.network_isolated())?;
        let limit_kib = limits.memory_bytes / 1024;
        let over_memory = raw.maxrss_kib.is_some_and(|k| k > limit_kib);
        let stderr = String::from_utf8_lossy(&raw.stderr);
        let oom_marker = stderr.contains("MemoryError") || stderr.contains("std::bad_alloc");
        let failure = match raw.exit {
            Exit::TimedOut => Some(Verdict::TimeLimitExceeded),
            Exit::OutputCap => Some(Verdict::Other(OtherCause::OutputCapExceeded)),
            _ if over_memory => Some(Verdict::Other(OtherCause::MemoryLimitExceeded)),
            Exit::Code(0) => {
                let actual = String::from_utf8_lossy(&raw.stdout);
                if self.check(prepared, test, &actual, checker)? {
                    None
                } else {
                    Some(Verdict::WrongAnswer)
                }
            }
            _ if oom_marker => Some(Verdict::Other(OtherCause::MemoryLimitExceeded)),
            _ => Some(Verdict::Other(OtherCause::RuntimeError)),
        };
        Ok(TestRecord {
            test_index,
            elapsed_ms: raw.elapsed.as_millis() as u64,
            peak_memory_kib: raw.maxrss_kib,
            passed: failure.is_none(),
            failure,
            stderr_excerpt: if failure.is_some() { excerpt(&raw.stderr) } else { String::new() },
        })
    }

    fn check(&self, prepared: &Prepared, test: &TestCase, actual: &str, checker: &Checker) -> Result<bool, JudgeError> {
        let Some(cmd) = checker.command.as_ref().filter(|c| !c.is_empty()) else {
            return Ok(compare_output(actual, &test.expected, checker.case_insensitive));
        };
        let files = tempfile::tempdir_in(prepared.dir()).map_err(|e| JudgeError::Setup(e.to_string()))?;
        let write = |name: &str, body: &str| -> Result<PathBuf, JudgeError> {
            let p = files.path().join(name);
            std::fs::write(&p, body).map_err(|e| JudgeError::Setup(e.to_string()))?;
            Ok(p)
        };
        let paths = [write("input", &test.input)?, write("expected", &test.expected)?, write("actual", actual)?];
        let status = Command::new(&cmd[0])
            .args(&cmd[1..])
            .args(&paths)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status()
            .map_err(|e| JudgeError::Setup(format!("cannot run checker: {e}")))?;
        Ok(status.success())
    }

    pub fn run_one(
        &self,
        source: &str,
        language_tag: &str,
        test: &TestCase,
        limits: &ExecutionLimits,
        checker: &Checker,
    ) -> Result<TestRecord, JudgeError> {
        let prepared = self.prepare(source, language_tag, limits)?;
        self.run_prepared(&prepared, 0, test, limits, checker)
    }

    /// Runs tests in order and stops at the first failure.
    pub fn judge_candidate(
        &self,
        candidate: &str,
        source: &str,
        language_tag: &str,
        tests: &[TestCase],
        stage: Stage,
        limits: &ExecutionLimits,
        checker: &Checker,
    ) -> Result<JudgeResult, JudgeError> {
        if tests.is_empty() {
            return Err(JudgeError::NoTests);
        }
        let prepared = self.prepare(source, language_tag, limits)?;
        let mut per_test = Vec::new();
        let mut final_verdict = Verdict::Accepted;
        for (i, test) in tests.iter().enumerate() {
            let record = self.run_prepared(&prepared, i, test, limits, checker)?;
            let failure = record.failure;
            per_test.push(record);
            if let Some(v) = failure {
                final_verdict = v;
                break;
            }
        }
        Ok(JudgeResult {
            candidate: candidate.to_string(),
            stage,
            tests_run: per_test.len(),
            per_test,
            final_verdict,
            memory_enforcement: MemoryEnforcement::Rlimit,
            network_isolated: self.network_isolated(),
        })
    }
}

fn excerpt(bytes: &[u8]) -> String {
    let s = String::from_utf8_lossy(bytes);
    let s = s.trim();
    match s.char_indices().nth(EXCERPT) {
        Some((i, _)) => s[..i].to_string(),
        None => s.to_string(),
    }
}

/// A program to judge, keyed for logging.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JudgeJob<'a> {
    pub key: String,
    pub source: &'a str,
    pub language_tag: &'a str,
}

/// Judges every job on the problem's public tests with up to `workers`
/// jobs in parallel. Returns results in job order and the indices of
/// jobs that passed.
pub fn public_filter(
    sandbox: &Sandbox,
    jobs: &[JudgeJob<'_>],
    problem: &Problem,
    limits: &ExecutionLimits,
    checker: &Checker,
    workers: usize,
) -> Result<(Vec<usize>, Vec<JudgeResult>), JudgeError> {
    let results = parallel_map(jobs, workers, |job| {
        sandbox.judge_candidate(&job.key, job.source, job.language_tag, &problem.public_tests, Stage::Public, limits, checker)
    });
    let results: Vec<JudgeResult> = results.into_iter().collect::<Result<_, _>>()?;
    let survivors = results
        .iter()
        .enumerate()
        .filter(|(_, r)| r.final_verdict.is_accepted())
        .map(|(i, _)| i)
        .collect();
    Ok((survivors, results))
}

/// Default worker count: one less than the available cores, at least one.
pub fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get().saturating_sub(1).max(1))
}

/// Order-preserving parallel map over a slice with a fixed worker count.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = workers.max(1).min(items.len().max(1));
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<R>>> = items.iter().map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().unwrap().expect("every slot filled")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tc(input: &str, expected: &str) -> TestCase {
        TestCase { input: input.into(), expected: expected.into() }
    }

    fn quick() -> ExecutionLimits {
        ExecutionLimits { wall_time_ms: 2_000, ..ExecutionLimits::default() }
    }

    #[test]
    fn compare_output_rules() {
        assert!(compare_output("YES\n", "yes", true));
        assert!(!compare_output("YES\n", "yes", false));
        assert!(compare_output("1 2  3\n", "1 2 3", true));
        assert!(!compare_output("12 3", "1 23", true));
        assert!(!compare_output("1 2", "1 2 3", true));
        assert!(compare_output("", "  \n", true));
    }

    #[test]
    fn executor_lookup_aliases() {
        let ex = Executors::default();
        assert!(ex.lookup("Python3").is_some());
        assert!(ex.lookup("pypy3").is_some());
        assert!(ex.lookup("C++").is_some());
        assert!(ex.lookup("haskell").is_none());
    }

    #[test]
    fn missing_executor_is_distinct() {
        let sb = Sandbox::default();
        let err = sb.run_one("main = pure ()", "haskell", &tc("", "x"), &quick(), &Checker::default());
        assert_eq!(err, Err(JudgeError::MissingExecutor("haskell".into())));
    }

    #[test]
    fn echo_passes() {
        let sb = Sandbox::default();
        let r = sb.run_one("print(input())", "python3", &tc("x\n", "x"), &quick(), &Checker::default()).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn busy_loop_times_out_within_grace() {
        let sb = Sandbox::default();
        let limits = ExecutionLimits { wall_time_ms: 100, ..ExecutionLimits::default() };
        let r = sb.run_one("while True:\n    pass\n", "python3", &tc("", "x"), &limits, &Checker::default()).unwrap();
        assert_eq!(r.failure, Some(Verdict::TimeLimitExceeded));
        assert!(r.elapsed_ms >= 100);
        assert!(r.elapsed_ms <= 100 + TERMINATION_GRACE.as_millis() as u64);
    }

    #[test]
    fn nonzero_exit_is_runtime_error() {
        let sb = Sandbox::default();
        let r = sb.run_one("import sys\nsys.exit(3)", "python3", &tc("", "x"), &quick(), &Checker::default()).unwrap();
        assert_eq!(r.failure, Some(Verdict::Other(OtherCause::RuntimeError)));
    }

    #[test]
    fn allocation_past_limit_is_mle() {
        let sb = Sandbox::default();
        let limits = ExecutionLimits { memory_bytes: 64 << 20, ..quick() };
        let r = sb.run_one("x = bytearray(512 * 1024 * 1024)\nprint(1)", "python3", &tc("", "1"), &limits, &Checker::default()).unwrap();
        assert_eq!(r.failure, Some(Verdict::Other(OtherCause::MemoryLimitExceeded)), "{r:?}");
    }

    #[test]
    fn output_cap_enforced() {
        let sb = Sandbox::default();
        let limits = ExecutionLimits { output_cap_bytes: 1024, ..quick() };
        let r = sb.run_one("while True:\n    print('x' * 100)", "python3", &tc("", "x"), &limits, &Checker::default()).unwrap();
        assert_eq!(r.failure, Some(Verdict::Other(OtherCause::OutputCapExceeded)));
    }

    #[test]
    fn judging_stops_at_first_failure() {
        let sb = Sandbox::default();
        let tests = vec![tc("1", "1"), tc("2", "3"), tc("3", "3"), tc("4", "4"), tc("5", "5")];
        let r = sb
            .judge_candidate("c", "print(input())", "python3", &tests, Stage::Hidden, &quick(), &Checker::default())
            .unwrap();
        assert_eq!(r.final_verdict, Verdict::WrongAnswer);
        assert_eq!(r.tests_run, 2);
        let all = sb
            .judge_candidate("c", "print(input())", "python3", &tests[..1], Stage::Hidden, &quick(), &Checker::default())
            .unwrap();
        assert_eq!(all.final_verdict, Verdict::Accepted);
        assert_eq!(all.tests_run, 1);
        assert!(matches!(
            sb.judge_candidate("c", "print(1)", "python3", &[], Stage::Public, &quick(), &Checker::default()),
            Err(JudgeError::NoTests)
        ));
    }

    #[test]
    fn external_checker_decides() {
        let dir = tempfile::tempdir().unwrap();
        let script = dir.path().join("check.py");
        // accepts any output whose integer equals expected modulo 10
        std::fs::write(
            &script,
            "import sys\na=int(open(sys.argv[3]).read())\ne=int(open(sys.argv[2]).read())\nsys.exit(0 if a%10==e%10 else 1)\n",
        )
        .unwrap();
        let checker = Checker { case_insensitive: true, command: Some(vec!["python3".into(), script.display().to_string()]) };
        let sb = Sandbox::default();
        let ok = sb.run_one("print(13)", "python3", &tc("", "3"), &quick(), &checker).unwrap();
        assert!(ok.passed);
        let bad = sb.run_one("print(14)", "python3", &tc("", "3"), &quick(), &checker).unwrap();
        assert_eq!(bad.failure, Some(Verdict::WrongAnswer));
    }

    #[test]
    fn programs_cannot_touch_harness_files() {
        let sb = Sandbox::default();
        let outside = tempfile::tempdir().unwrap();
        let target = outside.path().join("harness_state");
        std::fs::write(&target, "keep").unwrap();
        std::fs::set_permissions(outside.path(), std::fs::Permissions::from_mode(0o700)).unwrap();
        let src = format!(
            "import os\ntry:\n    open({:?}, 'w').write('gone')\nexcept Exception:\n    pass\nprint(os.getcwd() != {:?})",
            target.display().to_string(),
            outside.path().display().to_string()
        );
        let r = sb.run_one(&src, "python3", &tc("", "True"), &quick(), &Checker::default()).unwrap();
        assert!(r.passed);
        if sb.network_isolated() {
            assert_eq!(std::fs::read_to_string(&target).unwrap(), "keep");
        }
    }

    #[test]
    fn filter_keeps_public_passers() {
        let sb = Sandbox::default();
        let problem = Problem {
            id: "p".into(),
            title: "t".into(),
            statement: String::new(),
            rating: None,
            public_tests: vec![tc("5\n", "5")],
            hidden_tests: vec![],
            solutions: vec![],
        };
        let sources = ["print(input())", "print(4)", "print(5)"];
        let jobs: Vec<_> = sources
            .iter()
            .enumerate()
            .map(|(i, s)| JudgeJob { key: i.to_string(), source: s, language_tag: "python3" })
            .collect();
        let (survivors, results) = public_filter(&sb, &jobs, &problem, &quick(), &Checker::default(), 2).unwrap();
        assert_eq!(survivors, vec![0, 2]);
        assert_eq!(results.len(), 3);
        let (none, empty) = public_filter(&sb, &[], &problem, &quick(), &Checker::default(), 2).unwrap();
        assert!(none.is_empty() && empty.is_empty());
    }

    #[test]
    fn parallel_map_preserves_order() {
        let items: Vec<u32> = (0..50).collect();
        for w in [1, 3, 8] {
            assert_eq!(parallel_map(&items, w, |x| x * 2), items.iter().map(|x| x * 2).collect::<Vec<_>>());
        }
        assert!(parallel_map(&Vec::<u32>::new(), 4, |x| *x).is_empty());
    }
}
