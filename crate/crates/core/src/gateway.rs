//! Sampling requests against a completion endpoint or a recorded replay corpus.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::thread;
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::method::{Method, PromptStyle};
use crate::prompt::RenderedPrompt;
use crate::tokenizer::{LexicalTokenizer, Tokenizer};

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("invalid sampling config: {0}")]
    Config(String),
    #[error("no replay entry for {0}")]
    ReplayMissing(ReplayKey),
    #[error("duplicate replay entry for {0}")]
    DuplicateKey(ReplayKey),
    #[error("replay entry {key} holds {stored} samples, {wanted} requested")]
    ReplayShort { key: ReplayKey, stored: usize, wanted: usize },
    #[error("cannot record a transport failure for {0}")]
    NotRecordable(ReplayKey),
    #[error("replay corpus line {line}: {message}")]
    Corpus { line: usize, message: String },
    #[error("replay corpus io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub n_samples: usize,
    pub max_output_tokens: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig { temperature: 0.4, top_p: 0.95, n_samples: 10, max_output_tokens: 512 }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GatewayError::Config(format!("temperature {} must be >= 0", self.temperature)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GatewayError::Config(format!("top_p {} must be in (0, 1]", self.top_p)));
        }
        if self.n_samples == 0 {
            return Err(GatewayError::Config("n_samples must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceStatus {
    Ok,
    Oom,
    TransportError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub samples: Vec<String>,
    pub output_token_counts: Vec<usize>,
    pub input_token_count: usize,
    pub latency_seconds: f64,
    pub status: InferenceStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl InferenceResult {
    pub fn oom(input_token_count: usize, latency_seconds: f64) -> Self {
        InferenceResult {
            samples: Vec::new(),
            output_token_counts: Vec::new(),
            input_token_count,
            latency_seconds,
            status: InferenceStatus::Oom,
            error: None,
        }
    }

    fn transport(input_token_count: usize, latency_seconds: f64, message: String) -> Self {
        InferenceResult {
            error: Some(message),
            status: InferenceStatus::TransportError,
            ..InferenceResult::oom(input_token_count, latency_seconds)
        }
    }

    /// Status-dependent shape checks.
    pub fn check(&self, n_samples: usize) -> Result<(), String> {
        match self.status {
            InferenceStatus::Ok if self.samples.len() != n_samples => {
                Err(format!("{} samples returned, {n_samples} requested", self.samples.len()))
            }
            InferenceStatus::Ok if self.output_token_counts.len() != self.samples.len() => {
                Err("one output token count per sample required".into())
            }
            InferenceStatus::Oom | InferenceStatus::TransportError
                if !(self.samples.is_empty() && self.output_token_counts.is_empty()) =>
            {
                Err("failed requests carry no samples".into())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ReplayKey {
    pub bug_id: String,
    pub heuristic: Method,
    pub style: PromptStyle,
}

impl std::fmt::Display for ReplayKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}/{}", self.bug_id, self.heuristic, self.style)
    }
}

/// A prompt plus the identity of the unit it belongs to.
#[derive(Debug, Clone)]
pub struct InferenceRequest<'a> {
    pub key: ReplayKey,
    pub prompt: &'a RenderedPrompt,
}

pub trait Backend: Send + Sync {
    /// One attempt. Transport failures come back as `Err(message)`; the
    /// gateway decides about retries.
    fn attempt(&self, req: &InferenceRequest<'_>, config: &SamplingConfig) -> Result<Attempt, GatewayError>;

    fn max_retries(&self) -> usize {
        0
    }

    fn retry_delay(&self, _attempt: usize) -> Duration {
        Duration::ZERO
    }
}

/// Outcome of a single backend attempt.
#[derive(Debug, Clone, PartialEq)]
pub enum Attempt {
    Done(InferenceResult),
    Retryable(String),
    Fatal(String),
}

/// Sample `config.n_samples` completions for `req`.
pub fn generate(
    req: &InferenceRequest<'_>,
    config: &SamplingConfig,
    backend: &dyn Backend,
) -> Result<InferenceResult, GatewayError> {
    config.validate()?;
    let started = Instant::now();
    let mut attempt = 0;
    loop {
        match backend.attempt(req, config)? {
            Attempt::Done(result) => {
                if let Err(m) = result.check(config.n_samples) {
                    return Ok(InferenceResult::transport(
                        req.prompt.input_token_count,
                        started.elapsed().as_secs_f64(),
                        m,
                    ));
                }
                return Ok(result);
            }
            Attempt::Retryable(m) if attempt < backend.max_retries() => {
                log::warn!("{}: attempt {} failed: {m}", req.key, attempt + 1);
                thread::sleep(backend.retry_delay(attempt));
                attempt += 1;
            }
            Attempt::Retryable(m) | Attempt::Fatal(m) => {
                return Ok(InferenceResult::transport(
                    req.prompt.input_token_count,
                    started.elapsed().as_secs_f64(),
                    format!("after {} attempt(s): {m}", attempt + 1),
                ));
            }
        }
    }
}

/// Split `total` into integer parts proportional to `weights` (largest remainder).
pub fn apportion(total: usize, weights: &[usize]) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    if weights.is_empty() {
        return Vec::new();
    }
    if sum == 0 {
        let base = total / weights.len();
        let extra = total % weights.len();
        return (0..weights.len()).map(|i| base + usize::from(i < extra)).collect();
    }
    let mut parts: Vec<usize> = weights.iter().map(|w| total * w / sum).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(total * weights[i] % sum), i));
    let missing = total - parts.iter().sum::<usize>();
    for &i in order.iter().take(missing) {
        parts[i] += 1;
    }
    parts
}

/// Decides whether a failed HTTP response means the model ran out of memory.
#[derive(Debug, Clone)]
pub struct OomMatcher {
    pub statuses: Vec<u16>,
    pub body: Regex,
}

impl Default for OomMatcher {
    fn default() -> Self {
        OomMatcher {
            statuses: (500..600).collect(),
            body: Regex::new(r"(?i)out of memory|\bOOM\b|OutOfMemory|memory exhausted").unwrap(),
        }
    }
}

impl OomMatcher {
    pub fn matches(&self, status: u16, body: &str) -> bool {
        self.statuses.contains(&status) && self.body.is_match(body)
    }
}

#[derive(Debug, Serialize)]
struct CompletionRequest<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
    prompt: &'a str,
    n: usize,
    temperature: f64,
    top_p: f64,
    max_tokens: usize,
}

#[derive(Debug, Deserialize)]
struct CompletionChoice {
    #[serde(default)]
    index: Option<usize>,
    text: String,
}

#[derive(Debug, Deserialize)]
struct CompletionUsage {
    prompt_tokens: Option<usize>,
    completion_tokens: Option<usize>,
}

#[derive(Debug, Deserialize)]
struct CompletionResponse {
    choices: Vec<CompletionChoice>,
    #[serde(default)]
    usage: Option<CompletionUsage>,
}

/// Client for a completion endpoint of the common `{choices, usage}` shape.
pub struct HttpBackend {
    endpoint: String,
    model: Option<String>,
    api_key: Option<String>,
    retries: usize,
    backoff: Duration,
    oom: OomMatcher,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>) -> Self {
        HttpBackend {
            endpoint: endpoint.into(),
            model: None,
            api_key: None,
            retries: 3,
            backoff: Duration::from_millis(500),
            oom: OomMatcher::default(),
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(600)).build(),
        }
    }

    pub fn with_model(mut self, model: Option<String>) -> Self {
        self.model = model;
        self
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key.filter(|k| !k.is_empty());
        self
    }

    pub fn with_retries(mut self, retries: usize, backoff: Duration) -> Self {
        self.retries = retries;
        self.backoff = backoff;
        self
    }

    pub fn with_oom_matcher(mut self, oom: OomMatcher) -> Self {
        self.oom = oom;
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.agent = ureq::AgentBuilder::new().timeout(timeout).build();
        self
    }

    fn decode(&self, req: &InferenceRequest<'_>, body: CompletionResponse, latency: f64) -> Attempt {
        let mut choices = body.choices;
        if choices.iter().all(|c| c.index.is_some()) {
            choices.sort_by_key(|c| c.index);
        }
        let samples: Vec<String> = choices.into_iter().map(|c| c.text).collect();
        let local: Vec<usize> = samples.iter().map(|s| LexicalTokenizer.count(s)).collect();
        let usage = body.usage;
        let output_token_counts = match usage.as_ref().and_then(|u| u.completion_tokens) {
            Some(total) => apportion(total, &local),
            None => local,
        };
        let input_token_count = usage
            .and_then(|u| u.prompt_tokens)
            .unwrap_or(req.prompt.input_token_count);
        Attempt::Done(InferenceResult {
            samples,
            output_token_counts,
            input_token_count,
            latency_seconds: latency,
            status: InferenceStatus::Ok,
            error: None,
        })
    }
}

impl Backend for HttpBackend {
    fn attempt(&self, req: &InferenceRequest<'_>, config: &SamplingConfig) -> Result<Attempt, GatewayError> {
        let payload = CompletionRequest {
            model: self.model.as_deref(),
            prompt: &req.prompt.text,
            n: config.n_samples,
            temperature: config.temperature,
            top_p: config.top_p,
            max_tokens: config.max_output_tokens,
        };
        let mut call = self.agent.post(&self.endpoint).set("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.set("Authorization", &format!("Bearer {key}"));
        }
        let started = Instant::now();
        let outcome = call.send_json(&payload);
        let latency = started.elapsed().as_secs_f64();
        Ok(match outcome {
            Ok(resp) => match resp.into_json::<CompletionResponse>() {
                Ok(body) => self.decode(req, body, latency),
                Err(e) => Attempt::Retryable(format!("malformed completion response: {e}")),
            },
            Err(ureq::Error::Status(code, resp)) => {
                let body = resp.into_string().unwrap_or_default();
                if self.oom.matches(code, &body) {
                    Attempt::Done(InferenceResult::oom(req.prompt.input_token_count, latency))
                } else if code >= 500 || code == 429 {
                    Attempt::Retryable(format!("HTTP {code}: {body}"))
                } else {
                    Attempt::Fatal(format!("HTTP {code}: {body}"))
                }
            }
            Err(e) => Attempt::Retryable(e.to_string()),
        })
    }

    fn max_retries(&self) -> usize {
        self.retries
    }

    fn retry_delay(&self, attempt: usize) -> Duration {
        self.backoff * 2u32.saturating_pow(attempt as u32)
    }
}

/// Returns the prompt itself as every sample. Useful for wiring checks.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoBackend;

impl Backend for EchoBackend {
    fn attempt(&self, req: &InferenceRequest<'_>, config: &SamplingConfig) -> Result<Attempt, GatewayError> {
        let n = config.n_samples;
        let tokens = LexicalTokenizer.count(&req.prompt.text);
        Ok(Attempt::Done(InferenceResult {
            samples: vec![req.prompt.text.clone(); n],
            output_token_counts: vec![tokens; n],
            input_token_count: req.prompt.input_token_count,
            latency_seconds: 0.0,
            status: InferenceStatus::Ok,
            error: None,
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    #[serde(flatten)]
    pub key: ReplayKey,
    #[serde(flatten)]
    pub result: InferenceResult,
}

/// Recorded inference results keyed by (bug, method, style).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplayCorpus {
    entries: BTreeMap<ReplayKey, InferenceResult>,
}

impl ReplayCorpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_jsonl(text: &str) -> Result<Self, GatewayError> {
        let mut corpus = ReplayCorpus::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ReplayEntry = serde_json::from_str(line)
                .map_err(|e| GatewayError::Corpus { line: i + 1, message: e.to_string() })?;
            corpus.record(entry.key, entry.result)?;
        }
        Ok(corpus)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let file = fs::File::open(path)?;
        let mut text = String::new();
        for line in BufReader::new(file).lines() {
            text.push_str(&line?);
            text.push('\n');
        }
        Self::from_jsonl(&text)
    }

    /// Entries in key order, one JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (key, result) in &self.entries {
            let entry = ReplayEntry { key: key.clone(), result: result.clone() };
            out.push_str(&serde_json::to_string(&entry).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GatewayError> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_jsonl().as_bytes())?;
        Ok(f.sync_all()?)
    }

    /// Add a live result. Only ok and oom outcomes are recordable.
    pub fn record(&mut self, key: ReplayKey, result: InferenceResult) -> Result<&InferenceResult, GatewayError> {
        if result.status == InferenceStatus::TransportError {
            return Err(GatewayError::NotRecordable(key));
        }
        if self.entries.contains_key(&key) {
            return Err(GatewayError::DuplicateKey(key));
        }
        Ok(self.entries.entry(key).or_insert(result))
    }

    pub fn get(&self, key: &ReplayKey) -> Option<&InferenceResult> {
        self.entries.get(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &ReplayKey> {
        self.entries.keys()
    }
}

pub fn record_replay(
    corpus: &mut ReplayCorpus,
    key: ReplayKey,
    result: InferenceResult,
) -> Result<&InferenceResult, GatewayError> {
    corpus.record(key, result)
}

/// Serves recorded results, including their recorded latency.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    corpus: ReplayCorpus,
}

impl ReplayBackend {
    pub fn new(corpus: ReplayCorpus) -> Self {
        ReplayBackend { corpus }
    }

    pub fn corpus(&self) -> &ReplayCorpus {
        &self.corpus
    }
}

impl Backend for ReplayBackend {
    fn attempt(&self, req: &InferenceRequest<'_>, config: &SamplingConfig) -> Result<Attempt, GatewayError> {
        let stored = self
            .corpus
            .get(&req.key)
            .ok_or_else(|| GatewayError::ReplayMissing(req.key.clone()))?;
        let mut result = stored.clone();
        if result.status == InferenceStatus::Ok {
            let n = config.n_samples;
            if result.samples.len() < n {
                return Err(GatewayError::ReplayShort {
                    key: req.key.clone(),
                    stored: result.samples.len(),
                    wanted: n,
                });
            }
            result.samples.truncate(n);
            result.output_token_counts.truncate(n);
        }
        Ok(Attempt::Done(result))
    }
}
