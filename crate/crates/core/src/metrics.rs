//! Aggregate measures over judged candidates and Likert scores.
//!
//! `solve@k` and `public@k` are problem-wise: a problem counts when any of
//! its first k candidates is accepted on the hidden (respectively public)
//! tests. The verdict breakdown is submission-wise over every candidate
//! that passed the public tests.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::annotation::{LikertRecord, QuestionId};
use crate::corpus::{rating_bucket, RatingBucket};
use crate::judge::{OtherCause, Verdict};

/// Shown next to public@k in every report.
pub const PUBLIC_AT_K_DEFINITION: &str =
    "public@k is problem-wise: share of problems with at least one of k candidates passing all public tests";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FinalVerdict {
    Judged(Verdict),
    /// Filtered out at the public stage, so never run on hidden tests.
    NotJudgedHidden,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateOutcome {
    pub candidate: String,
    pub passed_public: bool,
    pub final_verdict: FinalVerdict,
}

impl CandidateOutcome {
    pub fn accepted(&self) -> bool {
        self.final_verdict == FinalVerdict::Judged(Verdict::Accepted)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemOutcome {
    pub problem_id: String,
    pub rating: Option<i64>,
    /// In origin order; `take_k` keeps a prefix.
    pub candidates: Vec<CandidateOutcome>,
}

impl ProblemOutcome {
    pub fn solved(&self) -> bool {
        self.candidates.iter().any(CandidateOutcome::accepted)
    }

    pub fn passed_public(&self) -> bool {
        self.candidates.iter().any(|c| c.passed_public)
    }
}

/// Restricts every problem to its first `k` candidates.
pub fn take_k(outcomes: &[ProblemOutcome], k: usize) -> Vec<ProblemOutcome> {
    outcomes
        .iter()
        .map(|o| ProblemOutcome {
            candidates: o.candidates.iter().take(k).cloned().collect(),
            ..o.clone()
        })
        .collect()
}

fn share(count: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| count as f64 / total as f64)
}

/// None for an empty corpus.
pub fn solve_at_k(outcomes: &[ProblemOutcome]) -> Option<f64> {
    share(outcomes.iter().filter(|o| o.solved()).count(), outcomes.len())
}

pub fn public_at_k(outcomes: &[ProblemOutcome]) -> Option<f64> {
    share(outcomes.iter().filter(|o| o.passed_public()).count(), outcomes.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerdictBreakdown {
    pub denominator: usize,
    pub accepted: usize,
    pub wrong_answer: usize,
    pub time_limit: usize,
    pub other: usize,
}

impl VerdictBreakdown {
    pub fn fractions(&self) -> Option<[f64; 4]> {
        let d = self.denominator;
        (d > 0).then(|| {
            [self.accepted, self.wrong_answer, self.time_limit, self.other].map(|c| c as f64 / d as f64)
        })
    }
}

/// Final verdicts of every candidate that passed the public tests.
pub fn verdict_breakdown(outcomes: &[ProblemOutcome]) -> VerdictBreakdown {
    let mut b = VerdictBreakdown { denominator: 0, accepted: 0, wrong_answer: 0, time_limit: 0, other: 0 };
    for c in outcomes.iter().flat_map(|o| &o.candidates).filter(|c| c.passed_public) {
        b.denominator += 1;
        match c.final_verdict {
            FinalVerdict::Judged(Verdict::Accepted) => b.accepted += 1,
            FinalVerdict::Judged(Verdict::WrongAnswer) => b.wrong_answer += 1,
            FinalVerdict::Judged(Verdict::TimeLimitExceeded) => b.time_limit += 1,
            FinalVerdict::Judged(Verdict::Other(_)) | FinalVerdict::NotJudgedHidden => b.other += 1,
        }
    }
    b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub bucket: RatingBucket,
    pub n: usize,
    pub share: Option<f64>,
    pub solve_at_k: Option<f64>,
}

/// One row per rating bucket, including empty buckets and the unrated row.
pub fn bucket_report(outcomes: &[ProblemOutcome]) -> Vec<BucketRow> {
    RatingBucket::ALL
        .iter()
        .map(|&bucket| {
            let members: Vec<ProblemOutcome> =
                outcomes.iter().filter(|o| rating_bucket(o.rating) == bucket).cloned().collect();
            BucketRow {
                bucket,
                n: members.len(),
                share: share(members.len(), outcomes.len()),
                solve_at_k: solve_at_k(&members),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuestionStat {
    pub n: usize,
    pub sum: i64,
    pub mean: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LikertSummary {
    pub per_question: BTreeMap<QuestionId, QuestionStat>,
}

impl LikertSummary {
    /// Mean over every score given to any of `questions`.
    pub fn pooled_mean(&self, questions: &[QuestionId]) -> Option<f64> {
        let (sum, n) = questions
            .iter()
            .filter_map(|q| self.per_question.get(q))
            .fold((0i64, 0usize), |(s, n), st| (s + st.sum, n + st.n));
        (n > 0).then(|| sum as f64 / n as f64)
    }

    pub fn render(&self) -> String {
        let mut out = String::from("question\tn\tmean\n");
        for (q, st) in &self.per_question {
            let _ = writeln!(out, "{q}\t{}\t{:.2}", st.n, st.mean);
        }
        out
    }
}

/// Per-question arithmetic means. Records are assumed validated; absent
/// questions simply do not contribute.
pub fn likert_summary(records: &[LikertRecord]) -> LikertSummary {
    let mut acc: BTreeMap<QuestionId, (i64, usize)> = BTreeMap::new();
    for r in records {
        for (q, s) in &r.scores {
            let e = acc.entry(*q).or_default();
            e.0 += i64::from(*s);
            e.1 += 1;
        }
    }
    LikertSummary {
        per_question: acc
            .into_iter()
            .map(|(q, (sum, n))| (q, QuestionStat { n, sum, mean: sum as f64 / n as f64 }))
            .collect(),
    }
}

/// Fraction as a percentage with one decimal, or "n/a".
pub fn percent(f: Option<f64>) -> String {
    match f {
        Some(f) => format!("{:.1}%", f * 100.0),
        None => "n/a".into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtK {
    pub k: usize,
    pub solve_at_k: Option<f64>,
    pub public_at_k: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub run_id: String,
    pub config_digest: String,
    pub k: usize,
    pub problems: usize,
    pub candidates: usize,
    pub by_k: Vec<AtK>,
    pub verdict_breakdown: VerdictBreakdown,
    pub per_bucket: Vec<BucketRow>,
    pub skipped: usize,
    pub config_echo: serde_json::Value,
}

/// k values reported for a run drawing `k` candidates per problem.
pub fn reported_ks(k: usize) -> Vec<usize> {
    let mut ks: Vec<usize> = [1, 5, 10].into_iter().filter(|&x| x <= k).collect();
    if !ks.contains(&k) {
        ks.push(k);
    }
    ks
}

impl MetricsReport {
    pub fn build(
        run_id: &str,
        config_digest: &str,
        k: usize,
        outcomes: &[ProblemOutcome],
        skipped: usize,
        config_echo: serde_json::Value,
    ) -> Self {
        let full = take_k(outcomes, k);
        let by_k = reported_ks(k)
            .into_iter()
            .map(|kk| {
                let o = take_k(outcomes, kk);
                AtK { k: kk, solve_at_k: solve_at_k(&o), public_at_k: public_at_k(&o) }
            })
            .collect();
        MetricsReport {
            run_id: run_id.into(),
            config_digest: config_digest.into(),
            k,
            problems: full.len(),
            candidates: full.iter().map(|o| o.candidates.len()).sum(),
            by_k,
            verdict_breakdown: verdict_breakdown(&full),
            per_bucket: bucket_report(&full),
            skipped,
            config_echo,
        }
    }

    pub fn at(&self, k: usize) -> Option<&AtK> {
        self.by_k.iter().find(|a| a.k == k)
    }

    /// Human-readable report.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "run {}  config {}", self.run_id, self.config_digest);
        let _ = writeln!(out, "note: {PUBLIC_AT_K_DEFINITION}");
        let _ = writeln!(out, "problems {}  candidates {}  skipped {}", self.problems, self.candidates, self.skipped);
        for a in &self.by_k {
            let _ = writeln!(out, "solve@{} {}  public@{} {}", a.k, percent(a.solve_at_k), a.k, percent(a.public_at_k));
        }
        let b = &self.verdict_breakdown;
        let f = b.fractions();
        let pick = |i: usize| percent(f.map(|f| f[i]));
        let _ = writeln!(
            out,
            "public-passers {}: accepted {}  wrong-answer {}  time-limit {}  other {}",
            b.denominator,
            pick(0),
            pick(1),
            pick(2),
            pick(3)
        );
        let _ = writeln!(out, "bucket\tn\tshare\tsolve@{}", self.k);
        for row in &self.per_bucket {
            let _ = writeln!(out, "{}\t{}\t{}\t{}", row.bucket.label(), row.n, percent(row.share), percent(row.solve_at_k));
        }
        let _ = writeln!(out, "config {}", self.config_echo);
        out
    }

    /// Flat tab-separated table: one metric per line.
    pub fn render_table(&self) -> String {
        let mut rows: Vec<(String, String, Option<f64>)> = Vec::new();
        for a in &self.by_k {
            rows.push((format!("solve@{}", a.k), "all".into(), a.solve_at_k));
            rows.push((format!("public@{}", a.k), "all".into(), a.public_at_k));
        }
        let f = self.verdict_breakdown.fractions();
        for (i, name) in ["accepted", "wrong_answer", "time_limit", "other"].iter().enumerate() {
            rows.push((format!("breakdown.{name}"), "public_passers".into(), f.map(|f| f[i])));
        }
        for row in &self.per_bucket {
            rows.push(("bucket.share".into(), row.bucket.label().into(), row.share));
            rows.push((format!("bucket.solve@{}", self.k), row.bucket.label().into(), row.solve_at_k));
        }
        let mut out = String::from("metric\tscope\tfraction\tpercent\n");
        for (metric, scope, value) in rows {
            let raw = value.map_or_else(|| "".to_string(), |v| format!("{v:.17}"));
            let _ = writeln!(out, "{metric}\t{scope}\t{raw}\t{}", percent(value));
        }
        let _ = writeln!(out, "skipped\tall\t{}\t", self.skipped);
        out
    }
}

/// Other-cause label for displays.
pub fn other_cause_label(c: OtherCause) -> &'static str {
    match c {
        OtherCause::MemoryLimitExceeded => "memory-limit",
        OtherCause::RuntimeError => "runtime-error",
        OtherCause::OutputCapExceeded => "output-cap",
        OtherCause::CompilationError => "compilation-error",
    }
}
