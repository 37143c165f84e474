//! Text-completion client: a backend trait, bounded retries, and
//! scripted / recording / replay / HTTP backends.

use std::collections::{HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::jsonl;

pub const DEFAULT_N: u32 = 25;
pub const DEFAULT_TEMPERATURE: f64 = 0.6;
pub const DEFAULT_MAX_TOKENS: u32 = 256;

pub const ENV_URL: &str = "EDITVULN_COMPLETION_URL";
pub const ENV_API_KEY: &str = "EDITVULN_COMPLETION_API_KEY";
pub const ENV_MODEL: &str = "EDITVULN_COMPLETION_MODEL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub n: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<Vec<String>>,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        CompletionRequest {
            prompt: prompt.into(),
            max_tokens: DEFAULT_MAX_TOKENS,
            temperature: DEFAULT_TEMPERATURE,
            n: DEFAULT_N,
            stop: None,
        }
    }

    pub fn with_n(mut self, n: u32) -> Self {
        self.n = n;
        self
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn validate(&self) -> Result<(), CompletionError> {
        if self.n == 0 {
            return Err(CompletionError::InvalidRequest("n must be at least 1".into()));
        }
        if self.max_tokens == 0 {
            return Err(CompletionError::InvalidRequest("max_tokens must be positive".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(CompletionError::InvalidRequest("temperature must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub texts: Vec<String>,
    pub backend: String,
    pub replay_id: String,
    pub attempts: u32,
    #[serde(skip)]
    pub elapsed: Duration,
}

#[derive(Debug, thiserror::Error)]
pub enum CompletionError {
    #[error("completion backend is not configured: {0}")]
    Config(String),
    #[error("invalid completion request: {0}")]
    InvalidRequest(String),
    #[error("transient backend failure: {0}")]
    Transient(String),
    #[error("backend rejected the request: {0}")]
    Permanent(String),
    #[error("gave up after {attempts} attempts; last error: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("no recorded response for prompt hash {0}")]
    ReplayMiss(String),
    #[error("backend returned {got} completions, expected {expected}")]
    CountMismatch { expected: u32, got: usize },
    #[error("completion log error: {0}")]
    Log(String),
}

impl CompletionError {
    pub fn is_transient(&self) -> bool {
        matches!(self, CompletionError::Transient(_))
    }
}

pub trait CompletionBackend: Send + Sync {
    fn id(&self) -> String;
    fn call(&self, request: &CompletionRequest) -> Result<Vec<String>, CompletionError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub multiplier: f64,
    pub max_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            initial_backoff: Duration::from_millis(250),
            multiplier: 2.0,
            max_backoff: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    /// Same attempt budget without sleeping; for tests and replay.
    pub fn immediate() -> Self {
        RetryPolicy { initial_backoff: Duration::ZERO, max_backoff: Duration::ZERO, ..Self::default() }
    }

    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = self.multiplier.powi(attempt.saturating_sub(1) as i32);
        self.initial_backoff.mul_f64(factor).min(self.max_backoff)
    }
}

pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Calls `backend`, retrying transient failures with exponential backoff, and
/// checks that exactly `n` texts come back.
pub fn complete(
    request: &CompletionRequest,
    backend: &dyn CompletionBackend,
    policy: &RetryPolicy,
) -> Result<CompletionResult, CompletionError> {
    request.validate()?;
    let started = Instant::now();
    let replay_id = prompt_hash(&request.prompt);
    let mut attempt = 0;
    loop {
        attempt += 1;
        match backend.call(request) {
            Ok(texts) => {
                if texts.len() != request.n as usize {
                    return Err(CompletionError::CountMismatch { expected: request.n, got: texts.len() });
                }
                tracing::debug!(replay_id = %replay_id, backend = %backend.id(), attempt, n = texts.len(), "completion ok");
                return Ok(CompletionResult {
                    texts,
                    backend: backend.id(),
                    replay_id,
                    attempts: attempt,
                    elapsed: started.elapsed(),
                });
            }
            Err(e) if e.is_transient() => {
                tracing::warn!(replay_id = %replay_id, attempt, error = %e, "completion attempt failed");
                if attempt >= policy.max_attempts {
                    return Err(CompletionError::Exhausted { attempts: attempt, last: e.to_string() });
                }
                std::thread::sleep(policy.backoff(attempt));
            }
            Err(e) => return Err(e),
        }
    }
}

// ---------------------------------------------------------------------------
// Scripted mock

#[derive(Debug, Clone)]
pub enum ScriptStep {
    Respond(Vec<String>),
    FailTransient(String),
    FailPermanent(String),
}

/// Plays back a fixed sequence of responses, one per call.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    steps: Mutex<VecDeque<ScriptStep>>,
}

impl ScriptedBackend {
    pub fn new(steps: impl IntoIterator<Item = ScriptStep>) -> Self {
        ScriptedBackend { steps: Mutex::new(steps.into_iter().collect()) }
    }

    pub fn responding(texts: &[&str]) -> Self {
        Self::new([ScriptStep::Respond(texts.iter().map(|s| s.to_string()).collect())])
    }

    pub fn remaining(&self) -> usize {
        self.steps.lock().expect("script lock").len()
    }
}

impl CompletionBackend for ScriptedBackend {
    fn id(&self) -> String {
        "scripted".into()
    }

    fn call(&self, _request: &CompletionRequest) -> Result<Vec<String>, CompletionError> {
        match self.steps.lock().expect("script lock").pop_front() {
            Some(ScriptStep::Respond(texts)) => Ok(texts),
            Some(ScriptStep::FailTransient(m)) => Err(CompletionError::Transient(m)),
            Some(ScriptStep::FailPermanent(m)) => Err(CompletionError::Permanent(m)),
            None => Err(CompletionError::Permanent("script exhausted".into())),
        }
    }
}

// ---------------------------------------------------------------------------
// Record / replay

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub prompt_hash: String,
    pub texts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<String>,
}

/// Appends every successful response of `inner` to a replay log.
pub struct RecordingBackend<B> {
    inner: B,
    log: Mutex<File>,
    path: PathBuf,
}

impl<B: CompletionBackend> RecordingBackend<B> {
    pub fn create(inner: B, path: &Path) -> Result<Self, CompletionError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| CompletionError::Log(format!("{}: {e}", path.display())))?;
        Ok(RecordingBackend { inner, log: Mutex::new(file), path: path.to_path_buf() })
    }
}

impl<B: CompletionBackend> CompletionBackend for RecordingBackend<B> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn call(&self, request: &CompletionRequest) -> Result<Vec<String>, CompletionError> {
        let texts = self.inner.call(request)?;
        let record = ReplayRecord {
            prompt_hash: prompt_hash(&request.prompt),
            texts: texts.clone(),
            prompt: Some(request.prompt.clone()),
            backend: Some(self.inner.id()),
        };
        let line = serde_json::to_string(&record).expect("record serializes");
        let mut f = self.log.lock().expect("log lock");
        writeln!(f, "{line}").map_err(|e| CompletionError::Log(format!("{}: {e}", self.path.display())))?;
        Ok(texts)
    }
}

/// Serves logged responses keyed by prompt hash. A prompt recorded several
/// times yields its records in order, then wraps around.
#[derive(Debug)]
pub struct ReplayBackend {
    records: HashMap<String, Vec<Vec<String>>>,
    cursors: Mutex<HashMap<String, usize>>,
}

impl ReplayBackend {
    pub fn from_records(records: impl IntoIterator<Item = ReplayRecord>) -> Self {
        let mut map: HashMap<String, Vec<Vec<String>>> = HashMap::new();
        for r in records {
            map.entry(r.prompt_hash).or_default().push(r.texts);
        }
        ReplayBackend { records: map, cursors: Mutex::new(HashMap::new()) }
    }

    pub fn load(path: &Path) -> Result<Self, CompletionError> {
        let records: Vec<ReplayRecord> = jsonl::read_strict(path).map_err(|e| CompletionError::Log(e.to_string()))?;
        Ok(Self::from_records(records))
    }

    pub fn len(&self) -> usize {
        self.records.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl CompletionBackend for ReplayBackend {
    fn id(&self) -> String {
        "replay".into()
    }

    fn call(&self, request: &CompletionRequest) -> Result<Vec<String>, CompletionError> {
        let hash = prompt_hash(&request.prompt);
        let list = self.records.get(&hash).ok_or_else(|| CompletionError::ReplayMiss(hash.clone()))?;
        let mut cursors = self.cursors.lock().expect("cursor lock");
        let k = cursors.entry(hash).or_insert(0);
        let texts = list[*k % list.len()].clone();
        *k += 1;
        Ok(texts)
    }
}

// ---------------------------------------------------------------------------
// HTTP

/// Generic completion endpoint: POST `{prompt, max_tokens, temperature, n,
/// stop}` and read `choices[].text`. Credentials come only from the
/// environment.
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    url: String,
    api_key: String,
    model: Option<String>,
}

#[derive(Serialize)]
struct HttpBody<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
    #[serde(flatten)]
    request: &'a CompletionRequest,
}

#[derive(Deserialize)]
struct HttpResponse {
    choices: Vec<HttpChoice>,
}

#[derive(Deserialize)]
struct HttpChoice {
    text: String,
}

impl HttpBackend {
    pub fn from_env() -> Result<Self, CompletionError> {
        let get = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        let url = get(ENV_URL).ok_or_else(|| CompletionError::Config(format!("{ENV_URL} is not set")))?;
        let api_key = get(ENV_API_KEY).ok_or_else(|| CompletionError::Config(format!("{ENV_API_KEY} is not set")))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| CompletionError::Config(e.to_string()))?;
        Ok(HttpBackend { client, url, api_key, model: get(ENV_MODEL) })
    }
}

impl CompletionBackend for HttpBackend {
    fn id(&self) -> String {
        match &self.model {
            Some(m) => format!("http:{m}"),
            None => "http".into(),
        }
    }

    fn call(&self, request: &CompletionRequest) -> Result<Vec<String>, CompletionError> {
        let body = HttpBody { model: self.model.as_deref(), request };
        let resp = self
            .client
            .post(&self.url)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| CompletionError::Transient(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(CompletionError::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(CompletionError::Permanent(format!("HTTP {status}")));
        }
        let parsed: HttpResponse = resp.json().map_err(|e| CompletionError::Permanent(e.to_string()))?;
        Ok(parsed.choices.into_iter().map(|c| c.text).collect())
    }
}

/// Enforces a minimum interval between calls to `inner`.
pub struct RateLimited<B> {
    inner: B,
    interval: Duration,
    next: Mutex<Instant>,
}

impl<B> RateLimited<B> {
    pub fn new(inner: B, requests_per_second: f64) -> Self {
        let interval = if requests_per_second > 0.0 {
            Duration::from_secs_f64(1.0 / requests_per_second)
        } else {
            Duration::ZERO
        };
        RateLimited { inner, interval, next: Mutex::new(Instant::now()) }
    }
}

impl<B: CompletionBackend> CompletionBackend for RateLimited<B> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn call(&self, request: &CompletionRequest) -> Result<Vec<String>, CompletionError> {
        let wait = {
            let mut next = self.next.lock().expect("rate lock");
            let now = Instant::now();
            let slot = (*next).max(now);
            *next = slot + self.interval;
            slot - now
        };
        std::thread::sleep(wait);
        self.inner.call(request)
    }
}

impl<T: CompletionBackend + ?Sized> CompletionBackend for std::sync::Arc<T> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn call(&self, request: &CompletionRequest) -> Result<Vec<String>, CompletionError> {
        (**self).call(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(prompt: &str, n: u32) -> CompletionRequest {
        CompletionRequest::new(prompt).with_n(n)
    }

    #[test]
    fn defaults() {
        let r = CompletionRequest::new("p");
        assert_eq!((r.n, r.max_tokens, r.temperature), (25, 256, 0.6));
    }

    #[test]
    fn scripted_texts() {
        let b = ScriptedBackend::responding(&["A", "B"]);
        let out = complete(&req("p", 2), &b, &RetryPolicy::immediate()).unwrap();
        assert_eq!(out.texts, vec!["A", "B"]);
        assert_eq!(out.attempts, 1);
    }

    #[test]
    fn retries_then_succeeds() {
        let b = ScriptedBackend::new([
            ScriptStep::FailTransient("503".into()),
            ScriptStep::FailTransient("503".into()),
            ScriptStep::Respond(vec!["ok".into()]),
        ]);
        let out = complete(&req("p", 1), &b, &RetryPolicy::immediate()).unwrap();
        assert_eq!(out.attempts, 3);
    }

    #[test]
    fn exhausted_carries_last_cause() {
        let b = ScriptedBackend::new((0..3).map(|i| ScriptStep::FailTransient(format!("boom{i}"))));
        match complete(&req("p", 1), &b, &RetryPolicy::immediate()) {
            Err(CompletionError::Exhausted { attempts: 3, last }) => assert!(last.contains("boom2")),
            other => panic!("unexpected {other:?}"),
        }
        let b = ScriptedBackend::new([ScriptStep::FailPermanent("401".into()), ScriptStep::Respond(vec![])]);
        assert!(matches!(complete(&req("p", 1), &b, &RetryPolicy::immediate()), Err(CompletionError::Permanent(_))));
        assert_eq!(b.remaining(), 1);
    }

    #[test]
    fn backoff_grows_and_caps() {
        let p = RetryPolicy::default();
        assert_eq!(p.backoff(1), Duration::from_millis(250));
        assert_eq!(p.backoff(2), Duration::from_millis(500));
        assert_eq!(p.backoff(10), Duration::from_secs(8));
    }

    #[test]
    fn invalid_requests() {
        let b = ScriptedBackend::default();
        assert!(matches!(complete(&req("p", 0), &b, &RetryPolicy::immediate()), Err(CompletionError::InvalidRequest(_))));
        let b = ScriptedBackend::responding(&["only one"]);
        assert!(matches!(complete(&req("p", 2), &b, &RetryPolicy::immediate()), Err(CompletionError::CountMismatch { .. })));
    }

    #[test]
    fn record_then_replay_out_of_order() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("log.jsonl");
        let rec = RecordingBackend::create(
            ScriptedBackend::new([ScriptStep::Respond(vec!["one".into()]), ScriptStep::Respond(vec!["two".into()])]),
            &log,
        )
        .unwrap();
        complete(&req("first", 1), &rec, &RetryPolicy::immediate()).unwrap();
        complete(&req("second", 1), &rec, &RetryPolicy::immediate()).unwrap();
        drop(rec);
        let replay = ReplayBackend::load(&log).unwrap();
        assert_eq!(replay.len(), 2);
        assert_eq!(complete(&req("second", 1), &replay, &RetryPolicy::immediate()).unwrap().texts, vec!["two"]);
        assert_eq!(complete(&req("first", 1), &replay, &RetryPolicy::immediate()).unwrap().texts, vec!["one"]);
        assert!(matches!(replay.call(&req("third", 1)), Err(CompletionError::ReplayMiss(_))));
    }

    #[test]
    fn empty_log_errors_on_any_request() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("empty.jsonl");
        std::fs::write(&log, "").unwrap();
        let replay = ReplayBackend::load(&log).unwrap();
        assert!(replay.is_empty());
        assert!(replay.call(&req("x", 1)).is_err());
    }

    #[test]
    fn http_requires_environment() {
        // Only meaningful when the variables are absent, as in CI.
        if std::env::var(ENV_URL).is_err() {
            assert!(matches!(HttpBackend::from_env(), Err(CompletionError::Config(_))));
        }
    }

    #[test]
    fn rate_limit_spaces_calls() {
        let b = RateLimited::new(ScriptedBackend::new((0..3).map(|_| ScriptStep::Respond(vec!["x".into()]))), 100.0);
        let t = Instant::now();
        for _ in 0..3 {
            b.call(&req("p", 1)).unwrap();
        }
        assert!(t.elapsed() >= Duration::from_millis(19));
    }
}
