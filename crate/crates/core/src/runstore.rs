//! Append-only run log.
//!
//! A log is a text file of JSON lines. The first line is a header naming
//! the format version, run id and config digest; every following line is
//! one [`RunRecord`], except an optional final seal line. Appends are
//! serialized by a mutex and synced to disk before they are acknowledged.
//! A torn final line (from a crash mid-write) is dropped when the log is
//! reopened.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::AnnotationEvent;
use crate::explainer::Explanation;
use crate::judge::{JudgeResult, Stage};
use crate::llmgateway::{CallRecorder, ChatRequest, Completion};
use crate::solver::{CandidateProgram, UnitEvent};

pub const LOG_FORMAT: &str = "explainbench-runlog";
pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("run log {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("run log {path} line {line}: {reason}")]
    Corrupt { path: PathBuf, line: usize, reason: String },
    #[error("run log {0} already exists")]
    AlreadyExists(PathBuf),
    #[error("run log is sealed")]
    Sealed,
    #[error("refusing to resume: log was written with config {found}, current config is {expected}")]
    RefusedResume { expected: String, found: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCallRecord {
    pub key: String,
    pub request: ChatRequest,
    pub completion: Completion,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeEventRecord {
    pub problem_id: String,
    pub source_sha256: String,
    pub result: JudgeResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub problem_id: String,
    pub event: UnitEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum Payload {
    ModelCall(ModelCallRecord),
    Explanation(Explanation),
    Candidate(CandidateProgram),
    JudgeEvent(JudgeEventRecord),
    Skip(SkipRecord),
    Annotation(AnnotationEvent),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RecordKind {
    ModelCall,
    Explanation,
    Candidate,
    JudgeEvent,
    Skip,
    Annotation,
}

impl Payload {
    pub fn kind(&self) -> RecordKind {
        match self {
            Payload::ModelCall(_) => RecordKind::ModelCall,
            Payload::Explanation(_) => RecordKind::Explanation,
            Payload::Candidate(_) => RecordKind::Candidate,
            Payload::JudgeEvent(_) => RecordKind::JudgeEvent,
            Payload::Skip(_) => RecordKind::Skip,
            Payload::Annotation(_) => RecordKind::Annotation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub seq: u64,
    pub timestamp: DateTime<Utc>,
    pub config_digest: String,
    #[serde(flatten)]
    pub payload: Payload,
}

impl RunRecord {
    pub fn kind(&self) -> RecordKind {
        self.payload.kind()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogHeader {
    pub format: String,
    pub version: u32,
    pub run_id: String,
    pub config_digest: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct SealLine {
    sealed_at: DateTime<Utc>,
    records: u64,
}

/// Everything read back from a log file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub header: LogHeader,
    pub records: Vec<RunRecord>,
    pub sealed: bool,
    /// Byte length of the valid prefix; anything after it was a torn write.
    valid_len: u64,
}

impl RunLog {
    pub fn model_calls(&self) -> impl Iterator<Item = &ModelCallRecord> {
        self.records.iter().filter_map(|r| match &r.payload {
            Payload::ModelCall(m) => Some(m),
            _ => None,
        })
    }

    pub fn of_kind(&self, kind: RecordKind) -> impl Iterator<Item = &RunRecord> {
        self.records.iter().filter(move |r| r.kind() == kind)
    }

    pub fn index(&self) -> LogIndex {
        LogIndex::build(self.records.iter().map(|r| &r.payload))
    }
}

/// Lookup tables over a set of payloads, used for resume and replay.
#[derive(Debug, Clone, Default)]
pub struct LogIndex {
    pub model_calls: HashMap<String, Completion>,
    pub candidates: BTreeMap<String, CandidateProgram>,
    pub explanations: BTreeMap<(String, usize, usize), Explanation>,
    pub judge_events: HashMap<(String, Stage), JudgeEventRecord>,
    pub skips: Vec<SkipRecord>,
    skip_keys: BTreeSet<String>,
}

impl LogIndex {
    pub fn build<'a>(payloads: impl IntoIterator<Item = &'a Payload>) -> Self {
        let mut index = LogIndex::default();
        for p in payloads {
            index.insert(p);
        }
        index
    }

    /// Adds a payload; returns false when an equivalent one was already
    /// indexed.
    pub fn insert(&mut self, payload: &Payload) -> bool {
        match payload {
            Payload::ModelCall(m) => self.model_calls.insert(m.key.clone(), m.completion.clone()).is_none(),
            Payload::Explanation(e) => {
                let Some(key) = explanation_key(e) else { return true };
                self.explanations.insert(key, e.clone()).is_none()
            }
            Payload::Candidate(c) => self.candidates.insert(c.key(), c.clone()).is_none(),
            Payload::JudgeEvent(j) => self
                .judge_events
                .insert((j.result.candidate.clone(), j.result.stage), j.clone())
                .is_none(),
            Payload::Skip(s) => {
                let key = skip_key(s);
                let fresh = self.skip_keys.insert(key);
                if fresh {
                    self.skips.push(s.clone());
                }
                fresh
            }
            Payload::Annotation(_) => true,
        }
    }

    pub fn contains(&self, payload: &Payload) -> bool {
        match payload {
            Payload::ModelCall(m) => self.model_calls.contains_key(&m.key),
            Payload::Explanation(e) => explanation_key(e).is_some_and(|k| self.explanations.contains_key(&k)),
            Payload::Candidate(c) => self.candidates.contains_key(&c.key()),
            Payload::JudgeEvent(j) => self.judge_events.contains_key(&(j.result.candidate.clone(), j.result.stage)),
            Payload::Skip(s) => self.skip_keys.contains(&skip_key(s)),
            Payload::Annotation(_) => false,
        }
    }
}

fn explanation_key(e: &Explanation) -> Option<(String, usize, usize)> {
    e.provenance.as_ref().map(|p| (p.problem_id.clone(), p.solution_index, p.sample_index))
}

fn skip_key(s: &SkipRecord) -> String {
    serde_json::to_string(s).unwrap_or_default()
}

pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

struct Writer {
    file: File,
    next_seq: u64,
    sealed: bool,
}

/// The single writer for one log file.
pub struct RunStore {
    path: PathBuf,
    run_id: String,
    config_digest: String,
    clock: Clock,
    writer: Mutex<Writer>,
}

impl std::fmt::Debug for RunStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RunStore").field("path", &self.path).field("run_id", &self.run_id).finish()
    }
}

fn system_clock() -> Clock {
    Arc::new(Utc::now)
}

impl RunStore {
    /// Starts a new log; fails if the file already exists.
    pub fn create(path: impl AsRef<Path>, run_id: &str, config_digest: &str) -> Result<Self, StoreError> {
        Self::create_with_clock(path, run_id, config_digest, system_clock())
    }

    pub fn create_with_clock(
        path: impl AsRef<Path>,
        run_id: &str,
        config_digest: &str,
        clock: Clock,
    ) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let mut file = OpenOptions::new().create_new(true).append(true).open(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                StoreError::AlreadyExists(path.clone())
            } else {
                StoreError::Io { path: path.clone(), source: e }
            }
        })?;
        let header = LogHeader {
            format: LOG_FORMAT.into(),
            version: LOG_VERSION,
            run_id: run_id.into(),
            config_digest: config_digest.into(),
            created_at: clock(),
        };
        let mut line = serde_json::to_string(&header).expect("header serializes");
        line.push('\n');
        file.write_all(line.as_bytes()).map_err(io_err(&path))?;
        file.sync_all().map_err(io_err(&path))?;
        Ok(RunStore {
            path,
            run_id: run_id.into(),
            config_digest: config_digest.into(),
            clock,
            writer: Mutex::new(Writer { file, next_seq: 0, sealed: false }),
        })
    }

    /// Reopens an existing log for appending. A torn final line is cut off.
    pub fn open(path: impl AsRef<Path>) -> Result<(Self, RunLog), StoreError> {
        Self::open_with_clock(path, system_clock())
    }

    pub fn open_with_clock(path: impl AsRef<Path>, clock: Clock) -> Result<(Self, RunLog), StoreError> {
        let path = path.as_ref().to_path_buf();
        let log = read_log(&path)?;
        let file = OpenOptions::new().write(true).open(&path).map_err(io_err(&path))?;
        file.set_len(log.valid_len).map_err(io_err(&path))?;
        let mut file = file;
        file.seek(SeekFrom::End(0)).map_err(io_err(&path))?;
        file.sync_all().map_err(io_err(&path))?;
        let store = RunStore {
            path,
            run_id: log.header.run_id.clone(),
            config_digest: log.header.config_digest.clone(),
            clock,
            writer: Mutex::new(Writer {
                file,
                next_seq: log.records.last().map_or(0, |r| r.seq + 1),
                sealed: log.sealed,
            }),
        };
        Ok((store, log))
    }

    /// Reopens a log only if it was written under the same config.
    pub fn resume(path: impl AsRef<Path>, config_digest: &str, clock: Option<Clock>) -> Result<(Self, RunLog), StoreError> {
        let (store, log) = Self::open_with_clock(path, clock.unwrap_or_else(system_clock))?;
        if log.header.config_digest != config_digest {
            return Err(StoreError::RefusedResume {
                expected: config_digest.into(),
                found: log.header.config_digest.clone(),
            });
        }
        Ok((store, log))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn config_digest(&self) -> &str {
        &self.config_digest
    }

    /// Writes one record and syncs it to disk before returning it.
    pub fn append(&self, payload: Payload) -> Result<RunRecord, StoreError> {
        let mut w = self.writer.lock().unwrap();
        if w.sealed {
            return Err(StoreError::Sealed);
        }
        let record = RunRecord {
            run_id: self.run_id.clone(),
            seq: w.next_seq,
            timestamp: (self.clock)(),
            config_digest: self.config_digest.clone(),
            payload,
        };
        let mut line = serde_json::to_string(&record).expect("records serialize");
        line.push('\n');
        w.file.write_all(line.as_bytes()).map_err(io_err(&self.path))?;
        w.file.sync_data().map_err(io_err(&self.path))?;
        w.next_seq += 1;
        Ok(record)
    }

    /// Marks the log complete; later appends fail.
    pub fn seal(&self) -> Result<(), StoreError> {
        let mut w = self.writer.lock().unwrap();
        if w.sealed {
            return Ok(());
        }
        let seal = SealLine { sealed_at: (self.clock)(), records: w.next_seq };
        let mut line = serde_json::to_string(&seal).expect("seal serializes");
        line.push('\n');
        w.file.write_all(line.as_bytes()).map_err(io_err(&self.path))?;
        w.file.sync_data().map_err(io_err(&self.path))?;
        w.sealed = true;
        Ok(())
    }

    pub fn is_sealed(&self) -> bool {
        self.writer.lock().unwrap().sealed
    }
}

impl CallRecorder for RunStore {
    fn record_call(&self, key: &str, request: &ChatRequest, completion: &Completion) -> Result<(), String> {
        self.append(Payload::ModelCall(ModelCallRecord {
            key: key.into(),
            request: request.clone(),
            completion: completion.clone(),
        }))
        .map(|_| ())
        .map_err(|e| e.to_string())
    }
}

/// Reads a log without modifying it. Only the final line may be torn;
/// damage anywhere else is reported as corruption.
pub fn read_log(path: impl AsRef<Path>) -> Result<RunLog, StoreError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = BufReader::new(file);
    let corrupt = |line: usize, reason: String| StoreError::Corrupt { path: path.to_path_buf(), line, reason };

    let mut raw = Vec::new();
    let mut lines: Vec<(Vec<u8>, bool)> = Vec::new();
    loop {
        raw.clear();
        let n = reader.read_until(b'\n', &mut raw).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        let complete = raw.ends_with(b"\n");
        lines.push((raw.clone(), complete));
    }
    let Some((first, first_complete)) = lines.first() else {
        return Err(corrupt(1, "empty log".into()));
    };
    if !first_complete {
        return Err(corrupt(1, "header line is incomplete".into()));
    }
    let header: LogHeader = serde_json::from_slice(first).map_err(|e| corrupt(1, format!("bad header: {e}")))?;
    if header.format != LOG_FORMAT || header.version != LOG_VERSION {
        return Err(corrupt(1, format!("unsupported log format {} v{}", header.format, header.version)));
    }
    let mut valid_len = first.len() as u64;
    let mut records = Vec::new();
    let mut sealed = false;
    let last = lines.len() - 1;
    for (i, (bytes, complete)) in lines.iter().enumerate().skip(1) {
        let line_no = i + 1;
        let parsed: Result<serde_json::Value, _> = serde_json::from_slice(bytes);
        let torn = i == last && (!complete || parsed.is_err());
        if torn {
            tracing::warn!(line = line_no, "dropping torn final record");
            break;
        }
        if sealed {
            return Err(corrupt(line_no, "record after seal".into()));
        }
        let value = parsed.map_err(|e| corrupt(line_no, e.to_string()))?;
        if value.get("sealed_at").is_some() {
            sealed = true;
        } else {
            let record: RunRecord = serde_json::from_value(value).map_err(|e| corrupt(line_no, e.to_string()))?;
            records.push(record);
        }
        valid_len += bytes.len() as u64;
    }
    Ok(RunLog { header, records, sealed, valid_len })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llmgateway::FinishReason;

    fn call(key: &str) -> Payload {
        Payload::ModelCall(ModelCallRecord {
            key: key.into(),
            request: ChatRequest {
                model_id: "m".into(),
                prompt: "p".into(),
                temperature: 0.0,
                max_output_units: 10,
                sample_index: 0,
            },
            completion: Completion {
                text: "t".into(),
                finish_reason: FinishReason::Complete,
                usage_units: 1,
                latency_ms: 0,
            },
        })
    }

    #[test]
    fn append_then_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let store = RunStore::create(&path, "r1", "d1").unwrap();
        let written = store.append(call("k1")).unwrap();
        let log = read_log(&path).unwrap();
        assert_eq!(log.records, vec![written]);
        assert_eq!(log.header.run_id, "r1");
        assert!(!log.sealed);
    }

    #[test]
    fn concurrent_appends_do_not_interleave() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let store = RunStore::create(&path, "r", "d").unwrap();
        std::thread::scope(|s| {
            for t in 0..4 {
                let store = &store;
                s.spawn(move || {
                    for i in 0..25 {
                        store.append(call(&format!("{t}-{i}"))).unwrap();
                    }
                });
            }
        });
        let log = read_log(&path).unwrap();
        assert_eq!(log.records.len(), 100);
        let seqs: BTreeSet<u64> = log.records.iter().map(|r| r.seq).collect();
        assert_eq!(seqs.len(), 100);
        assert_eq!(log.index().model_calls.len(), 100);
    }

    #[test]
    fn sealed_store_rejects_appends() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let store = RunStore::create(&path, "r", "d").unwrap();
        store.append(call("a")).unwrap();
        store.seal().unwrap();
        assert!(matches!(store.append(call("b")), Err(StoreError::Sealed)));
        drop(store);
        let (reopened, log) = RunStore::open(&path).unwrap();
        assert!(log.sealed);
        assert!(matches!(reopened.append(call("b")), Err(StoreError::Sealed)));
    }

    #[test]
    fn torn_tail_is_truncated_on_open() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let store = RunStore::create(&path, "r", "d").unwrap();
        store.append(call("a")).unwrap();
        drop(store);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"run_id\":\"r\",\"seq\":1,\"ti").unwrap();
        drop(f);
        let (store, log) = RunStore::open(&path).unwrap();
        assert_eq!(log.records.len(), 1);
        let next = store.append(call("b")).unwrap();
        assert_eq!(next.seq, 1);
        assert_eq!(read_log(&path).unwrap().records.len(), 2);
    }

    #[test]
    fn damaged_middle_line_is_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let store = RunStore::create(&path, "r", "d").unwrap();
        store.append(call("a")).unwrap();
        store.append(call("b")).unwrap();
        drop(store);
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines[1] = "{not json";
        std::fs::write(&path, lines.join("\n") + "\n").unwrap();
        assert!(matches!(read_log(&path), Err(StoreError::Corrupt { line: 2, .. })));
    }

    #[test]
    fn resume_checks_config_digest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        drop(RunStore::create(&path, "r", "digest-a").unwrap());
        assert!(RunStore::resume(&path, "digest-a", None).is_ok());
        assert!(matches!(
            RunStore::resume(&path, "digest-b", None),
            Err(StoreError::RefusedResume { .. })
        ));
    }

    #[test]
    fn create_refuses_existing_log() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        drop(RunStore::create(&path, "r", "d").unwrap());
        assert!(matches!(RunStore::create(&path, "r", "d"), Err(StoreError::AlreadyExists(_))));
    }
}
