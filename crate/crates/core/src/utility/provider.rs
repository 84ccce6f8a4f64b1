//! Sources of the abstention probability `p(NO-RESPONSE | q, p)`.
//!
//! A provider answers one (question, passage) query at a time and must be
//! deterministic: asking twice for the same pair returns the same value.
//! [`HttpProvider`] talks to a completion endpoint, [`ConstantProvider`] and
//! [`TableProvider`] serve fixtures, and [`CachedProvider`] persists answers of
//! any provider on disk.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{Estimator, Passage, Question};

/// Literal answer the prompt asks for when the passage lacks the answer.
pub const NO_RESPONSE: &str = "NO-RESPONSE";

/// Prompt used to query the abstention probability of a single passage.
pub const UTILITY_PROMPT: &str = include_str!("../../assets/utility_prompt.txt");
/// Relevance-judge prompt, shipped for users who label relevance themselves.
pub const RELEVANCE_PROMPT: &str = include_str!("../../assets/relevance_prompt.txt");
/// Answer-grading prompt, shipped for users who grade outcomes themselves.
pub const ANSWER_GRADING_PROMPT: &str = include_str!("../../assets/answer_grading_prompt.txt");

/// Fills the `<document>` and `<question>` placeholders of a prompt template.
pub fn render_prompt(template: &str, question: &str, document: &str) -> String {
    template
        .replace("<document>", document)
        .replace("<question>", question)
}

/// Hex SHA-256 of a prompt template, part of every cache key.
pub fn template_hash(template: &str) -> String {
    hex::encode(Sha256::digest(template.as_bytes()))
}

#[derive(Debug, Clone, Copy)]
pub struct AbstentionRequest<'a> {
    pub question: &'a Question,
    pub passage: &'a Passage,
    pub prompt: &'a str,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbstentionEstimate {
    pub p_no_response: f64,
    pub estimator: Estimator,
}

#[derive(Debug, Clone, Error, PartialEq)]
#[error("{message}")]
pub struct ProviderError {
    pub message: String,
    /// Whether repeating the same request may succeed.
    pub retryable: bool,
}

impl ProviderError {
    pub fn permanent(message: impl Into<String>) -> Self {
        ProviderError {
            message: message.into(),
            retryable: false,
        }
    }

    pub fn transient(message: impl Into<String>) -> Self {
        ProviderError {
            message: message.into(),
            retryable: true,
        }
    }
}

pub trait AbstentionProvider: Send + Sync {
    /// Stable identifier, used in cache keys.
    fn id(&self) -> String;

    fn estimate(&self, request: &AbstentionRequest<'_>) -> Result<AbstentionEstimate, ProviderError>;
}

impl<P: AbstentionProvider + ?Sized> AbstentionProvider for Box<P> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn estimate(&self, request: &AbstentionRequest<'_>) -> Result<AbstentionEstimate, ProviderError> {
        (**self).estimate(request)
    }
}

/// Whether a first-token candidate begins the sentinel answer.
fn starts_sentinel(token: &str) -> bool {
    let t = token.trim_start();
    !t.is_empty() && (NO_RESPONSE.starts_with(t) || t.starts_with(NO_RESPONSE))
}

/// Sums the probability mass of first-token candidates that begin the
/// sentinel answer. Candidates are `(token text, natural-log probability)`.
pub fn p_no_response_from_logprobs<'a>(candidates: impl IntoIterator<Item = (&'a str, f64)>) -> f64 {
    let mass: f64 = candidates
        .into_iter()
        .filter(|(tok, _)| starts_sentinel(tok))
        .map(|(_, lp)| lp.exp())
        .sum();
    mass.clamp(0.0, 1.0)
}

/// Fraction of sampled answers that start with the sentinel.
pub fn p_no_response_from_samples<S: AsRef<str>>(samples: &[S]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let hits = samples
        .iter()
        .filter(|s| s.as_ref().trim_start().starts_with(NO_RESPONSE))
        .count();
    hits as f64 / samples.len() as f64
}

/// Returns the same probability for every pair.
#[derive(Debug, Clone)]
pub struct ConstantProvider(pub f64);

impl AbstentionProvider for ConstantProvider {
    fn id(&self) -> String {
        format!("constant:{}", self.0)
    }

    fn estimate(&self, _: &AbstentionRequest<'_>) -> Result<AbstentionEstimate, ProviderError> {
        Ok(AbstentionEstimate {
            p_no_response: self.0,
            estimator: Estimator::Logprobs,
        })
    }
}

#[derive(Debug, Deserialize)]
struct TableRow {
    question_id: String,
    passage_id: String,
    p_no_response: f64,
}

/// Serves precomputed probabilities from a JSONL table of
/// `{"question_id", "passage_id", "p_no_response"}` rows.
#[derive(Debug, Clone)]
pub struct TableProvider {
    name: String,
    table: HashMap<(String, String), f64>,
}

impl TableProvider {
    pub fn new(name: impl Into<String>, rows: impl IntoIterator<Item = ((String, String), f64)>) -> Self {
        TableProvider {
            name: name.into(),
            table: rows.into_iter().collect(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let path = path.as_ref();
        let mut table = HashMap::new();
        for (i, line) in BufReader::new(fs::File::open(path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: TableRow = serde_json::from_str(&line).map_err(|e| {
                std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("{}:{}: {e}", path.display(), i + 1),
                )
            })?;
            table.insert((row.question_id, row.passage_id), row.p_no_response);
        }
        Ok(TableProvider {
            name: path.display().to_string(),
            table,
        })
    }
}

impl AbstentionProvider for TableProvider {
    fn id(&self) -> String {
        format!("table:{}", self.name)
    }

    fn estimate(&self, r: &AbstentionRequest<'_>) -> Result<AbstentionEstimate, ProviderError> {
        self.table
            .get(&(r.question.id.clone(), r.passage.id.clone()))
            .map(|&p| AbstentionEstimate {
                p_no_response: p,
                estimator: Estimator::Logprobs,
            })
            .ok_or_else(|| ProviderError::permanent("pair not present in probability table"))
    }
}

/// Request/response dialect of a completion endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApiFlavor {
    /// `{prompt, max_generated_tokens, top_logprobs}` returning
    /// `{"top_logprobs": [{"token", "logprob"}]}` or `{"texts": [...]}`.
    #[default]
    Generic,
    /// Legacy text-completion API with `logprobs: n`.
    OpenaiCompletions,
    /// Chat-completion API with `logprobs: true, top_logprobs: n`.
    OpenaiChat,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpProviderConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default)]
    pub flavor: ApiFlavor,
    #[serde(default = "default_top_logprobs")]
    pub top_logprobs: usize,
    /// When set, estimate by sampling this many answers instead of reading logprobs.
    #[serde(default)]
    pub samples: Option<usize>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_top_logprobs() -> usize {
    20
}

fn default_timeout_secs() -> u64 {
    60
}

/// Completion endpoint queried for one generated token and its top logprobs.
pub struct HttpProvider {
    config: HttpProviderConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(config: HttpProviderConfig, api_key: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        HttpProvider {
            config,
            api_key,
            agent,
        }
    }

    fn request_body(&self, prompt: &str) -> Value {
        let c = &self.config;
        match (c.flavor, c.samples) {
            (ApiFlavor::Generic, None) => json!({
                "model": c.model,
                "prompt": prompt,
                "max_generated_tokens": 1,
                "top_logprobs": c.top_logprobs,
            }),
            (ApiFlavor::Generic, Some(n)) => json!({
                "model": c.model,
                "prompt": prompt,
                "max_generated_tokens": 8,
                "n": n,
                "temperature": c.temperature,
            }),
            (ApiFlavor::OpenaiCompletions, None) => json!({
                "model": c.model,
                "prompt": prompt,
                "max_tokens": 1,
                "logprobs": c.top_logprobs,
                "temperature": 0,
            }),
            (ApiFlavor::OpenaiCompletions, Some(n)) => json!({
                "model": c.model,
                "prompt": prompt,
                "max_tokens": 8,
                "n": n,
                "temperature": c.temperature,
            }),
            (ApiFlavor::OpenaiChat, None) => json!({
                "model": c.model,
                "messages": [{"role": "user", "content": prompt}],
                "max_tokens": 1,
                "logprobs": true,
                "top_logprobs": c.top_logprobs,
                "temperature": 0,
            }),
            (ApiFlavor::OpenaiChat, Some(n)) => json!({
                "model": c.model,
                "messages": [{"role": "user", "content": prompt}],
                "max_tokens": 8,
                "n": n,
                "temperature": c.temperature,
            }),
        }
    }

    fn post(&self, body: &Value) -> Result<Value, ProviderError> {
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(classify_http_error)?;
        resp.body_mut()
            .read_json::<Value>()
            .map_err(|e| ProviderError::permanent(format!("unreadable response body: {e}")))
    }
}

fn classify_http_error(err: ureq::Error) -> ProviderError {
    match err {
        ureq::Error::StatusCode(code) if code == 429 || code >= 500 => {
            ProviderError::transient(format!("endpoint returned HTTP {code}"))
        }
        ureq::Error::StatusCode(code) => {
            ProviderError::permanent(format!("endpoint returned HTTP {code}"))
        }
        other => ProviderError::transient(format!("request failed: {other}")),
    }
}

/// Extracts `(token, logprob)` candidates of the first generated token.
pub fn parse_top_logprobs(flavor: ApiFlavor, body: &Value) -> Result<Vec<(String, f64)>, ProviderError> {
    let bad = || ProviderError::permanent(format!("response has no first-token logprobs: {body}"));
    let list_of_objects = |v: &Value| -> Option<Vec<(String, f64)>> {
        v.as_array()?
            .iter()
            .map(|c| Some((c.get("token")?.as_str()?.to_owned(), c.get("logprob")?.as_f64()?)))
            .collect()
    };
    match flavor {
        ApiFlavor::Generic => list_of_objects(body.get("top_logprobs").ok_or_else(bad)?).ok_or_else(bad),
        ApiFlavor::OpenaiCompletions => {
            let first = body
                .pointer("/choices/0/logprobs/top_logprobs/0")
                .and_then(Value::as_object)
                .ok_or_else(bad)?;
            first
                .iter()
                .map(|(t, lp)| lp.as_f64().map(|lp| (t.clone(), lp)))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(bad)
        }
        ApiFlavor::OpenaiChat => {
            list_of_objects(body.pointer("/choices/0/logprobs/content/0/top_logprobs").ok_or_else(bad)?)
                .ok_or_else(bad)
        }
    }
}

/// Extracts sampled answer texts.
pub fn parse_samples(flavor: ApiFlavor, body: &Value) -> Result<Vec<String>, ProviderError> {
    let bad = || ProviderError::permanent(format!("response has no sampled answers: {body}"));
    let texts: Option<Vec<String>> = match flavor {
        ApiFlavor::Generic => body.get("texts").and_then(Value::as_array).and_then(|a| {
            a.iter().map(|t| t.as_str().map(str::to_owned)).collect()
        }),
        ApiFlavor::OpenaiCompletions => body.get("choices").and_then(Value::as_array).and_then(|a| {
            a.iter().map(|c| c.get("text")?.as_str().map(str::to_owned)).collect()
        }),
        ApiFlavor::OpenaiChat => body.get("choices").and_then(Value::as_array).and_then(|a| {
            a.iter()
                .map(|c| c.pointer("/message/content")?.as_str().map(str::to_owned))
                .collect()
        }),
    };
    texts.filter(|t| !t.is_empty()).ok_or_else(bad)
}

impl AbstentionProvider for HttpProvider {
    fn id(&self) -> String {
        let mode = match self.config.samples {
            Some(n) => format!("sampled{n}@{}", self.config.temperature),
            None => format!("top{}", self.config.top_logprobs),
        };
        format!("http:{}:{}:{mode}", self.config.endpoint, self.config.model)
    }

    fn estimate(&self, r: &AbstentionRequest<'_>) -> Result<AbstentionEstimate, ProviderError> {
        let body = self.post(&self.request_body(r.prompt))?;
        match self.config.samples {
            None => {
                let cands = parse_top_logprobs(self.config.flavor, &body)?;
                Ok(AbstentionEstimate {
                    p_no_response: p_no_response_from_logprobs(
                        cands.iter().map(|(t, lp)| (t.as_str(), *lp)),
                    ),
                    estimator: Estimator::Logprobs,
                })
            }
            Some(_) => {
                let samples = parse_samples(self.config.flavor, &body)?;
                Ok(AbstentionEstimate {
                    p_no_response: p_no_response_from_samples(&samples),
                    estimator: Estimator::Sampled,
                })
            }
        }
    }
}

/// Persists estimates of an inner provider under `dir`, keyed by provider id,
/// question id, passage id and prompt-template hash.
pub struct CachedProvider<P> {
    inner: P,
    dir: PathBuf,
    template_hash: String,
    calls: AtomicUsize,
    hits: AtomicUsize,
}

impl<P: AbstentionProvider> CachedProvider<P> {
    pub fn new(inner: P, dir: impl Into<PathBuf>, template: &str) -> std::io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(CachedProvider {
            inner,
            dir,
            template_hash: template_hash(template),
            calls: AtomicUsize::new(0),
            hits: AtomicUsize::new(0),
        })
    }

    /// Requests forwarded to the inner provider.
    pub fn provider_calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn cache_hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    fn entry_path(&self, question_id: &str, passage_id: &str) -> PathBuf {
        let mut h = Sha256::new();
        for part in [self.inner.id().as_str(), question_id, passage_id, &self.template_hash] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        self.dir.join(format!("{}.json", hex::encode(h.finalize())))
    }
}

impl<P: AbstentionProvider> AbstentionProvider for CachedProvider<P> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn estimate(&self, r: &AbstentionRequest<'_>) -> Result<AbstentionEstimate, ProviderError> {
        let path = self.entry_path(&r.question.id, &r.passage.id);
        if let Ok(bytes) = fs::read(&path) {
            if let Ok(est) = serde_json::from_slice::<AbstentionEstimate>(&bytes) {
                self.hits.fetch_add(1, Ordering::Relaxed);
                return Ok(est);
            }
            log::warn!("ignoring unreadable cache entry {}", path.display());
        }
        self.calls.fetch_add(1, Ordering::Relaxed);
        let est = self.inner.estimate(r)?;
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        let written = serde_json::to_vec(&est)
            .map_err(std::io::Error::from)
            .and_then(|bytes| fs::write(&tmp, bytes))
            .and_then(|()| fs::rename(&tmp, &path));
        if let Err(e) = written {
            log::warn!("failed to cache estimate at {}: {e}", path.display());
        }
        Ok(est)
    }
}
