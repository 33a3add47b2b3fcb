//! Human Likert evaluation of explanations: task assignment, score
//! submission and aggregation.
//!
//! Each explanation is scored on ten questions, one per explanation point
//! plus usefulness, clearness and understanding, on a five-point scale
//! from -2 to 2. Tasks and submissions are persisted as annotation records
//! in a run log so aggregation can be recomputed at any time.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Problem;
use crate::explainer::{Explanation, PointClass, PointId};
use crate::metrics::{likert_summary, LikertSummary};
use crate::runstore::{Payload, RunStore, StoreError};

/// Bumped whenever question wording changes.
pub const QUESTION_WORDING_VERSION: u32 = 1;
pub const SCORE_MIN: i8 = -2;
pub const SCORE_MAX: i8 = 2;

/// Question 1..=10. Questions 1-7 are the explanation points; 8 is
/// usefulness, 9 clearness, 10 understanding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QuestionId(u8);

impl QuestionId {
    pub const USEFULNESS: QuestionId = QuestionId(8);
    pub const CLEARNESS: QuestionId = QuestionId(9);
    pub const UNDERSTANDING: QuestionId = QuestionId(10);

    pub fn new(id: u8) -> Option<Self> {
        (1..=10).contains(&id).then_some(QuestionId(id))
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = QuestionId> {
        (1..=10).map(QuestionId)
    }

    pub fn for_point(point: PointId) -> Self {
        QuestionId(point.get())
    }

    pub fn point(self) -> Option<PointId> {
        PointId::new(self.0).ok().filter(|_| self.0 <= 7)
    }

    pub fn text(self) -> String {
        match self.point() {
            Some(p) => format!("How good is the \"{}\" part of the explanation?", p.title()),
            None => match self.0 {
                8 => "Usefulness: how useful is the explanation for understanding the solution?".into(),
                9 => "Clearness: how clearly does the explanation describe everything, avoiding ambiguity?".into(),
                _ => "Understanding: how well does the model grasp the key idea behind the solution?".into(),
            },
        }
    }

    /// Questions on the solution-description points (3, 4, 5) together
    /// with usefulness.
    pub fn description_and_usefulness() -> [QuestionId; 4] {
        [QuestionId(3), QuestionId(4), QuestionId(5), QuestionId::USEFULNESS]
    }

    pub fn class(self) -> Option<PointClass> {
        self.point().map(PointId::class)
    }
}

impl fmt::Display for QuestionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "q{}", self.0)
    }
}

impl std::str::FromStr for QuestionId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.strip_prefix('q')
            .and_then(|n| n.parse::<u8>().ok())
            .and_then(QuestionId::new)
            .ok_or_else(|| format!("unknown question id {s:?}"))
    }
}

impl Serialize for QuestionId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for QuestionId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Identifies one explanation within a run.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ExplanationRef {
    pub problem_id: String,
    pub solution_index: usize,
    pub explanation_index: usize,
}

impl fmt::Display for ExplanationRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/s{}/e{}", self.problem_id, self.solution_index, self.explanation_index)
    }
}

impl std::str::FromStr for ExplanationRef {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("bad explanation ref {s:?}, expected PROBLEM/sN/eM");
        let mut parts = s.rsplitn(3, '/');
        let e = parts.next().and_then(|p| p.strip_prefix('e')).and_then(|n| n.parse().ok()).ok_or_else(bad)?;
        let sol = parts.next().and_then(|p| p.strip_prefix('s')).and_then(|n| n.parse().ok()).ok_or_else(bad)?;
        let problem = parts.next().filter(|p| !p.is_empty()).ok_or_else(bad)?;
        Ok(ExplanationRef { problem_id: problem.into(), solution_index: sol, explanation_index: e })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskStatus {
    Pending,
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub task_id: String,
    pub annotator_id: String,
    pub problem_id: String,
    /// Index into the problem's oracle solutions.
    pub oracle_index: usize,
    pub explanation: ExplanationRef,
    /// Questions that must be answered; points absent from the
    /// explanation are left out.
    pub required: BTreeSet<QuestionId>,
    pub wording_version: u32,
    pub status: TaskStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LikertRecord {
    pub task_id: String,
    pub scores: BTreeMap<QuestionId, i8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub free_comment: Option<String>,
    pub submitted_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnnotationEvent {
    TaskCreated(AnnotationTask),
    ScoresSubmitted(LikertRecord),
}

/// Who scores which explanation. Without an explicit annotator the
/// author of the explained solution is used.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub explanation: ExplanationRef,
    #[serde(default)]
    pub annotator_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreSubmission {
    pub scores: BTreeMap<QuestionId, i64>,
    #[serde(default)]
    pub free_comment: Option<String>,
}

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("unknown explanation {0}")]
    UnknownExplanation(String),
    #[error("explanation {0} has no solution author; give an annotator explicitly")]
    NoAnnotator(String),
    #[error("annotator {annotator} already has a task for {explanation}")]
    DuplicateTask { annotator: String, explanation: String },
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("task {0} is already done")]
    TaskDone(String),
    #[error("score {score} for {question} is outside [-2, 2]")]
    ScoreOutOfRange { question: QuestionId, score: i64 },
    #[error("missing score for {0}")]
    MissingQuestion(QuestionId),
    #[error("{0} does not apply to this task")]
    UnexpectedQuestion(QuestionId),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl AnnotationError {
    /// The question a validation error refers to, if any.
    pub fn question(&self) -> Option<QuestionId> {
        match self {
            AnnotationError::ScoreOutOfRange { question, .. } => Some(*question),
            AnnotationError::MissingQuestion(q) | AnnotationError::UnexpectedQuestion(q) => Some(*q),
            _ => None,
        }
    }
}

/// Checks a score set against the required questions.
pub fn validate_scores(required: &BTreeSet<QuestionId>, scores: &BTreeMap<QuestionId, i64>) -> Result<(), AnnotationError> {
    for (q, s) in scores {
        if !(i64::from(SCORE_MIN)..=i64::from(SCORE_MAX)).contains(s) {
            return Err(AnnotationError::ScoreOutOfRange { question: *q, score: *s });
        }
        if !required.contains(q) {
            return Err(AnnotationError::UnexpectedQuestion(*q));
        }
    }
    if let Some(q) = required.iter().find(|q| !scores.contains_key(q)) {
        return Err(AnnotationError::MissingQuestion(*q));
    }
    Ok(())
}

/// Questions asked about an explanation: its present points plus the
/// three overall criteria.
pub fn required_questions(explanation: &Explanation) -> BTreeSet<QuestionId> {
    explanation
        .present_points
        .iter()
        .map(|p| QuestionId::for_point(*p))
        .chain([QuestionId::USEFULNESS, QuestionId::CLEARNESS, QuestionId::UNDERSTANDING])
        .collect()
}

/// An explanation available for annotation together with what the
/// annotator needs to see next to it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplanationSource {
    pub reference: ExplanationRef,
    pub oracle_index: usize,
    pub author: Option<String>,
    pub problem: Problem,
    pub explanation: Explanation,
}

/// Everything the annotation UI shows for one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskDetail {
    pub task: AnnotationTask,
    pub problem_title: String,
    pub statement: String,
    pub solution_language: String,
    pub solution_source: String,
    pub points: Vec<PointView>,
    pub questions: Vec<QuestionView>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointView {
    pub point: u8,
    pub title: String,
    pub class: PointClass,
    pub text: String,
    pub present: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionView {
    pub id: QuestionId,
    pub text: String,
    pub required: bool,
}

/// Body of the aggregate view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikertView {
    pub run_id: String,
    pub done_tasks: usize,
    pub pending_tasks: usize,
    pub summary: LikertSummary,
    /// Pooled mean over the solution-description questions and usefulness.
    pub description_and_usefulness_mean: Option<f64>,
}

/// Error body returned by the annotation service.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiErrorBody {
    pub error: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<QuestionId>,
}

impl AnnotationError {
    pub fn kind(&self) -> &'static str {
        match self {
            AnnotationError::UnknownExplanation(_) => "unknown_explanation",
            AnnotationError::NoAnnotator(_) => "no_annotator",
            AnnotationError::DuplicateTask { .. } => "duplicate_task",
            AnnotationError::UnknownTask(_) => "unknown_task",
            AnnotationError::TaskDone(_) => "task_done",
            AnnotationError::ScoreOutOfRange { .. } => "score_out_of_range",
            AnnotationError::MissingQuestion(_) => "missing_question",
            AnnotationError::UnexpectedQuestion(_) => "unexpected_question",
            AnnotationError::Store(_) => "store",
        }
    }

    pub fn body(&self) -> ApiErrorBody {
        ApiErrorBody { error: self.kind().into(), message: self.to_string(), question: self.question() }
    }
}

#[derive(Default)]
struct DeskState {
    tasks: BTreeMap<String, AnnotationTask>,
    records: BTreeMap<String, LikertRecord>,
    pairs: BTreeSet<(String, ExplanationRef)>,
}

impl DeskState {
    fn apply(&mut self, event: &AnnotationEvent) {
        match event {
            AnnotationEvent::TaskCreated(t) => {
                self.pairs.insert((t.annotator_id.clone(), t.explanation.clone()));
                self.tasks.insert(t.task_id.clone(), t.clone());
            }
            AnnotationEvent::ScoresSubmitted(r) => {
                if let Some(t) = self.tasks.get_mut(&r.task_id) {
                    t.status = TaskStatus::Done;
                }
                self.records.entry(r.task_id.clone()).or_insert_with(|| r.clone());
            }
        }
    }
}

/// Task bookkeeping for one run. All mutations go through one lock, so
/// concurrent submissions to the same task resolve first-wins.
pub struct AnnotationDesk {
    run_id: String,
    sources: BTreeMap<ExplanationRef, ExplanationSource>,
    store: Option<RunStore>,
    clock: Box<dyn Fn() -> DateTime<Utc> + Send + Sync>,
    state: Mutex<DeskState>,
}

impl AnnotationDesk {
    /// `history` replays events already persisted in `store`.
    pub fn new(
        run_id: impl Into<String>,
        sources: impl IntoIterator<Item = ExplanationSource>,
        store: Option<RunStore>,
        history: impl IntoIterator<Item = AnnotationEvent>,
    ) -> Self {
        let mut state = DeskState::default();
        for e in history {
            state.apply(&e);
        }
        AnnotationDesk {
            run_id: run_id.into(),
            sources: sources.into_iter().map(|s| (s.reference.clone(), s)).collect(),
            store,
            clock: Box::new(Utc::now),
            state: Mutex::new(state),
        }
    }

    pub fn with_clock(mut self, clock: impl Fn() -> DateTime<Utc> + Send + Sync + 'static) -> Self {
        self.clock = Box::new(clock);
        self
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn explanations(&self) -> impl Iterator<Item = &ExplanationRef> {
        self.sources.keys()
    }

    fn persist(&self, event: &AnnotationEvent) -> Result<(), AnnotationError> {
        if let Some(store) = &self.store {
            store.append(Payload::Annotation(event.clone()))?;
        }
        Ok(())
    }

    /// Creates one Pending task per assignment. The whole batch is
    /// validated before anything is written.
    pub fn create_tasks(&self, assignments: &[Assignment]) -> Result<Vec<AnnotationTask>, AnnotationError> {
        let mut state = self.state.lock().unwrap();
        let mut seen = BTreeSet::new();
        let mut planned = Vec::new();
        for a in assignments {
            let source = self
                .sources
                .get(&a.explanation)
                .ok_or_else(|| AnnotationError::UnknownExplanation(a.explanation.to_string()))?;
            let annotator = a
                .annotator_id
                .clone()
                .or_else(|| source.author.clone())
                .ok_or_else(|| AnnotationError::NoAnnotator(a.explanation.to_string()))?;
            let pair = (annotator.clone(), a.explanation.clone());
            if state.pairs.contains(&pair) || !seen.insert(pair) {
                return Err(AnnotationError::DuplicateTask { annotator, explanation: a.explanation.to_string() });
            }
            planned.push((annotator, source));
        }
        let mut created = Vec::new();
        for (annotator, source) in planned {
            let task = AnnotationTask {
                task_id: format!("t{:04}", state.tasks.len() + 1),
                annotator_id: annotator,
                problem_id: source.reference.problem_id.clone(),
                oracle_index: source.oracle_index,
                explanation: source.reference.clone(),
                required: required_questions(&source.explanation),
                wording_version: QUESTION_WORDING_VERSION,
                status: TaskStatus::Pending,
            };
            let event = AnnotationEvent::TaskCreated(task.clone());
            self.persist(&event)?;
            state.apply(&event);
            created.push(task);
        }
        Ok(created)
    }

    pub fn tasks_for(&self, annotator_id: &str) -> Vec<AnnotationTask> {
        let state = self.state.lock().unwrap();
        state.tasks.values().filter(|t| t.annotator_id == annotator_id).cloned().collect()
    }

    pub fn task(&self, task_id: &str) -> Option<AnnotationTask> {
        self.state.lock().unwrap().tasks.get(task_id).cloned()
    }

    pub fn all_tasks(&self) -> Vec<AnnotationTask> {
        self.state.lock().unwrap().tasks.values().cloned().collect()
    }

    pub fn task_detail(&self, task_id: &str) -> Result<TaskDetail, AnnotationError> {
        let task = self.task(task_id).ok_or_else(|| AnnotationError::UnknownTask(task_id.into()))?;
        let source = self
            .sources
            .get(&task.explanation)
            .ok_or_else(|| AnnotationError::UnknownExplanation(task.explanation.to_string()))?;
        let solution = source.problem.solutions.get(source.oracle_index);
        let points = PointId::all()
            .map(|p| PointView {
                point: p.get(),
                title: p.title().into(),
                class: p.class(),
                text: source.explanation.point(p).into(),
                present: source.explanation.present_points.contains(&p),
            })
            .collect();
        let questions = QuestionId::all()
            .map(|q| QuestionView { id: q, text: q.text(), required: task.required.contains(&q) })
            .collect();
        Ok(TaskDetail {
            problem_title: source.problem.title.clone(),
            statement: source.problem.statement.clone(),
            solution_language: solution.map(|s| s.language_tag.clone()).unwrap_or_default(),
            solution_source: solution.map(|s| s.source.clone()).unwrap_or_default(),
            points,
            questions,
            task,
        })
    }

    /// Validates and stores a score set; the task becomes Done.
    pub fn submit_scores(&self, task_id: &str, submission: ScoreSubmission) -> Result<LikertRecord, AnnotationError> {
        let mut state = self.state.lock().unwrap();
        let task = state.tasks.get(task_id).ok_or_else(|| AnnotationError::UnknownTask(task_id.into()))?;
        if task.status == TaskStatus::Done {
            return Err(AnnotationError::TaskDone(task_id.into()));
        }
        validate_scores(&task.required, &submission.scores)?;
        let record = LikertRecord {
            task_id: task_id.into(),
            scores: submission.scores.into_iter().map(|(q, s)| (q, s as i8)).collect(),
            free_comment: submission.free_comment.filter(|c| !c.trim().is_empty()),
            submitted_at: (self.clock)(),
        };
        let event = AnnotationEvent::ScoresSubmitted(record.clone());
        self.persist(&event)?;
        state.apply(&event);
        Ok(record)
    }

    pub fn done_records(&self) -> Vec<LikertRecord> {
        self.state.lock().unwrap().records.values().cloned().collect()
    }

    /// Per-question means over Done tasks.
    pub fn aggregate(&self) -> LikertSummary {
        likert_summary(&self.done_records())
    }

    pub fn view(&self) -> LikertView {
        let summary = self.aggregate();
        let (done, total) = {
            let state = self.state.lock().unwrap();
            (state.records.len(), state.tasks.len())
        };
        LikertView {
            run_id: self.run_id.clone(),
            done_tasks: done,
            pending_tasks: total - done,
            description_and_usefulness_mean: summary.pooled_mean(&QuestionId::description_and_usefulness()),
            summary,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{OracleSolution, TestCase};
    use crate::explainer::parse_explanation;

    fn source(problem: &str, author: Option<&str>, full: bool) -> ExplanationSource {
        let mut text = String::new();
        for p in PointId::all().take(if full { 7 } else { 6 }) {
            text.push_str(&format!("{}). {}: body {}\n", p.get(), p.title(), p.get()));
        }
        let mut solution = OracleSolution::new("Python 3", "print(1)");
        if let Some(a) = author {
            solution = solution.with_author(a);
        }
        ExplanationSource {
            reference: ExplanationRef { problem_id: problem.into(), solution_index: 0, explanation_index: 0 },
            oracle_index: 0,
            author: author.map(str::to_owned),
            problem: Problem {
                id: problem.into(),
                title: "t".into(),
                statement: "s".into(),
                rating: Some(800),
                public_tests: vec![TestCase { input: String::new(), expected: "1".into() }],
                hidden_tests: vec![],
                solutions: vec![solution],
            },
            explanation: parse_explanation(&text).unwrap(),
        }
    }

    fn zeros(required: &BTreeSet<QuestionId>) -> ScoreSubmission {
        ScoreSubmission { scores: required.iter().map(|q| (*q, 0)).collect(), free_comment: None }
    }

    #[test]
    fn question_ids_roundtrip() {
        for q in QuestionId::all() {
            assert_eq!(q.to_string().parse::<QuestionId>().unwrap(), q);
        }
        assert!("q11".parse::<QuestionId>().is_err());
        assert!("q0".parse::<QuestionId>().is_err());
        let r: ExplanationRef = "1552/A/s2/e1".parse().unwrap();
        assert_eq!(r.problem_id, "1552/A");
        assert_eq!(r.to_string(), "1552/A/s2/e1");
    }

    #[test]
    fn author_is_default_annotator_and_duplicates_rejected() {
        let desk = AnnotationDesk::new("r", [source("p1", Some("alice"), true), source("p2", None, true)], None, []);
        let r1 = ExplanationRef { problem_id: "p1".into(), solution_index: 0, explanation_index: 0 };
        let r2 = ExplanationRef { problem_id: "p2".into(), solution_index: 0, explanation_index: 0 };
        let tasks = desk.create_tasks(&[Assignment { explanation: r1.clone(), annotator_id: None }]).unwrap();
        assert_eq!(tasks[0].annotator_id, "alice");
        assert!(matches!(
            desk.create_tasks(&[Assignment { explanation: r1, annotator_id: Some("alice".into()) }]),
            Err(AnnotationError::DuplicateTask { .. })
        ));
        assert!(matches!(
            desk.create_tasks(&[Assignment { explanation: r2, annotator_id: None }]),
            Err(AnnotationError::NoAnnotator(_))
        ));
        assert!(desk.create_tasks(&[]).unwrap().is_empty());
    }

    #[test]
    fn submission_rules() {
        let desk = AnnotationDesk::new("r", [source("p1", Some("a"), true)], None, []);
        let r = ExplanationRef { problem_id: "p1".into(), solution_index: 0, explanation_index: 0 };
        let task = desk.create_tasks(&[Assignment { explanation: r, annotator_id: None }]).unwrap().remove(0);
        assert_eq!(task.required.len(), 10);

        let mut bad = zeros(&task.required);
        bad.scores.insert(QuestionId(2), 3);
        let err = desk.submit_scores(&task.task_id, bad).unwrap_err();
        assert_eq!(err.question(), Some(QuestionId(2)));

        let mut missing = zeros(&task.required);
        missing.scores.remove(&QuestionId(9));
        assert!(matches!(desk.submit_scores(&task.task_id, missing), Err(AnnotationError::MissingQuestion(q)) if q == QuestionId(9)));

        desk.submit_scores(&task.task_id, zeros(&task.required)).unwrap();
        assert_eq!(desk.task(&task.task_id).unwrap().status, TaskStatus::Done);
        assert!(matches!(desk.submit_scores(&task.task_id, zeros(&task.required)), Err(AnnotationError::TaskDone(_))));
    }

    #[test]
    fn missing_point_is_not_asked() {
        let desk = AnnotationDesk::new("r", [source("p1", Some("a"), false)], None, []);
        let r = ExplanationRef { problem_id: "p1".into(), solution_index: 0, explanation_index: 0 };
        let task = desk.create_tasks(&[Assignment { explanation: r, annotator_id: None }]).unwrap().remove(0);
        assert!(!task.required.contains(&QuestionId(7)));
        let mut with_seven = zeros(&task.required);
        with_seven.scores.insert(QuestionId(7), 1);
        assert!(matches!(desk.submit_scores(&task.task_id, with_seven), Err(AnnotationError::UnexpectedQuestion(_))));
        let detail = desk.task_detail(&task.task_id).unwrap();
        assert!(!detail.points[6].present);
        assert!(!detail.questions[6].required);
    }

    #[test]
    fn desk_state_survives_reload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("annotations.jsonl");
        let store = RunStore::create(&path, "r", "d").unwrap();
        let desk = AnnotationDesk::new("r", [source("p1", Some("a"), true)], Some(store), []);
        let r = ExplanationRef { problem_id: "p1".into(), solution_index: 0, explanation_index: 0 };
        let task = desk.create_tasks(&[Assignment { explanation: r, annotator_id: None }]).unwrap().remove(0);
        desk.submit_scores(&task.task_id, zeros(&task.required)).unwrap();
        let before = desk.aggregate();
        drop(desk);

        let (store, log) = RunStore::open(&path).unwrap();
        let history = log.records.into_iter().filter_map(|r| match r.payload {
            Payload::Annotation(e) => Some(e),
            _ => None,
        });
        let desk = AnnotationDesk::new("r", [source("p1", Some("a"), true)], Some(store), history);
        assert_eq!(desk.task(&task.task_id).unwrap().status, TaskStatus::Done);
        assert_eq!(desk.aggregate(), before);
    }
}
