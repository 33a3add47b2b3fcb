//! Async client for the annotation service.

use explainbench::annotation::{
    AnnotationTask, ApiErrorBody, Assignment, ExplanationRef, LikertRecord, LikertView, ScoreSubmission, TaskDetail,
};
use reqwest::{Method, RequestBuilder, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("{status}: {} ({})", body.message, body.error)]
    Api { status: StatusCode, body: ApiErrorBody },
}

#[derive(Debug, Clone)]
pub struct Client {
    http: reqwest::Client,
    base: String,
    token: String,
}

impl Client {
    /// `base` is the service root, e.g. `http://127.0.0.1:8750`.
    pub fn new(base: impl Into<String>, token: impl Into<String>) -> Self {
        Client {
            http: reqwest::Client::new(),
            base: base.into().trim_end_matches('/').to_string(),
            token: token.into(),
        }
    }

    fn request(&self, method: Method, path: &str) -> RequestBuilder {
        self.http.request(method, format!("{}{path}", self.base)).bearer_auth(&self.token)
    }

    async fn send<T: DeserializeOwned>(&self, req: RequestBuilder) -> Result<T, ClientError> {
        let resp = req.send().await?;
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json().await?);
        }
        let text = resp.text().await.unwrap_or_default();
        let body = serde_json::from_str(&text).unwrap_or(ApiErrorBody {
            error: "http".into(),
            message: text,
            question: None,
        });
        Err(ClientError::Api { status, body })
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        self.send(self.request(Method::POST, path).json(body)).await
    }

    pub async fn tasks_for(&self, annotator_id: &str) -> Result<Vec<AnnotationTask>, ClientError> {
        self.send(self.request(Method::GET, &format!("/annotators/{}/tasks", segment(annotator_id)))).await
    }

    pub async fn task(&self, task_id: &str) -> Result<TaskDetail, ClientError> {
        self.send(self.request(Method::GET, &format!("/tasks/{}", segment(task_id)))).await
    }

    pub async fn submit_scores(&self, task_id: &str, submission: &ScoreSubmission) -> Result<LikertRecord, ClientError> {
        self.post(&format!("/tasks/{}/scores", segment(task_id)), submission).await
    }

    pub async fn likert(&self, run_id: &str) -> Result<LikertView, ClientError> {
        self.send(self.request(Method::GET, &format!("/runs/{}/likert", segment(run_id)))).await
    }

    pub async fn explanations(&self, run_id: &str) -> Result<Vec<ExplanationRef>, ClientError> {
        self.send(self.request(Method::GET, &format!("/runs/{}/explanations", segment(run_id)))).await
    }

    pub async fn create_tasks(&self, run_id: &str, assignments: &[Assignment]) -> Result<Vec<AnnotationTask>, ClientError> {
        self.post(&format!("/runs/{}/tasks", segment(run_id)), &assignments).await
    }
}

/// Percent-encodes a path segment.
fn segment(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || b"-._~".contains(&b) {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}
