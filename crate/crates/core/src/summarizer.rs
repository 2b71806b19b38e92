//! Pathology report summarization through a chat-completions endpoint.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SYSTEM_PREAMBLE: &str = "You are a helpful assistant for digital pathology.";

pub const INSTRUCTION_LINES: [&str; 7] = [
    "Instructions:",
    "Extract and repeat the results of the following pathology report in a single paragraph.",
    "Focus on test results, diagnoses and clinical history.",
    "Include results of the microscopic description.",
    "Omit the gross or macroscopic description.",
    "Do not acknowledge this prompt.",
    "Do not give additional comments after your final answer.",
];

pub const ENV_ENDPOINT: &str = "MMSURV_ENDPOINT";
pub const ENV_API_KEY: &str = "MMSURV_API_KEY";
pub const ENV_MODEL: &str = "MMSURV_MODEL";

pub const DEFAULT_CONCURRENCY: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

pub fn instruction_block() -> String {
    INSTRUCTION_LINES.join("\n")
}

/// The three-message prompt; the report is passed through unchanged.
pub fn build_prompt(report_text: &str) -> Result<Vec<ChatMessage>> {
    if report_text.trim().is_empty() {
        return Err(Error::EmptyReport);
    }
    Ok(vec![
        ChatMessage {
            role: Role::System,
            content: SYSTEM_PREAMBLE.to_string(),
        },
        ChatMessage {
            role: Role::System,
            content: instruction_block(),
        },
        ChatMessage {
            role: Role::User,
            content: report_text.to_string(),
        },
    ])
}

/// Decoding settings. The defaults are fixed; changing them goes through
/// [`DecodingParams::overridden`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodingParams {
    temperature: f64,
    max_tokens: u32,
    seed: u64,
    greedy: bool,
}

impl DecodingParams {
    pub const TEMPERATURE: f64 = 0.0;
    pub const MAX_TOKENS: u32 = 1024;

    /// Greedy decoding at temperature 0 with 1024 new tokens.
    pub fn new(seed: u64) -> Self {
        Self {
            temperature: Self::TEMPERATURE,
            max_tokens: Self::MAX_TOKENS,
            seed,
            greedy: true,
        }
    }

    /// Departs from the fixed settings; callers must opt in explicitly.
    pub fn overridden(seed: u64, temperature: f64, max_tokens: u32) -> Result<Self> {
        if !(temperature >= 0.0 && temperature.is_finite()) || max_tokens == 0 {
            return Err(Error::InvalidArgument(format!(
                "invalid decoding override: temperature {temperature}, max_tokens {max_tokens}"
            )));
        }
        Ok(Self {
            temperature,
            max_tokens,
            seed,
            greedy: temperature == 0.0,
        })
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn max_tokens(&self) -> u32 {
        self.max_tokens
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn greedy(&self) -> bool {
        self.greedy
    }
}

/// Request body; field order is the serialized order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: u64,
}

impl ChatRequest {
    pub fn new(model: &str, report_text: &str, params: &DecodingParams) -> Result<Self> {
        if model.is_empty() {
            return Err(Error::InvalidArgument("model name is empty".into()));
        }
        Ok(Self {
            model: model.to_string(),
            messages: build_prompt(report_text)?,
            temperature: params.temperature,
            max_tokens: params.max_tokens,
            seed: params.seed,
        })
    }

    /// Compact JSON as sent on the wire.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EndpointError {
    /// Non-2xx response.
    Status(u16, String),
    /// Connection or timeout failure.
    Transport(String),
    /// A 2xx response without a usable first choice.
    Malformed(String),
}

impl EndpointError {
    pub fn is_retryable(&self) -> bool {
        !matches!(self, EndpointError::Malformed(_))
    }
}

impl std::fmt::Display for EndpointError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EndpointError::Status(code, body) => write!(f, "http status {code}: {body}"),
            EndpointError::Transport(msg) => write!(f, "transport error: {msg}"),
            EndpointError::Malformed(msg) => write!(f, "malformed response: {msg}"),
        }
    }
}

pub trait ChatEndpoint: Sync {
    /// Sends one request and returns the first choice's text.
    fn complete(&self, body: &str) -> std::result::Result<String, EndpointError>;
}

/// Pulls `choices[0].message.content` (or `choices[0].text`) out of a
/// chat-completions response.
pub fn parse_completion(body: &str) -> std::result::Result<String, EndpointError> {
    let value: serde_json::Value =
        serde_json::from_str(body).map_err(|e| EndpointError::Malformed(e.to_string()))?;
    let choice = value
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| EndpointError::Malformed("no choices".into()))?;
    choice
        .get("message")
        .and_then(|m| m.get("content"))
        .or_else(|| choice.get("text"))
        .and_then(|t| t.as_str())
        .map(str::to_string)
        .ok_or_else(|| EndpointError::Malformed("first choice has no text".into()))
}

pub struct HttpEndpoint {
    url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpEndpoint {
    pub fn new(url: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("http client: {e}")))?;
        Ok(Self {
            url: url.into(),
            api_key,
            client,
        })
    }
}

impl ChatEndpoint for HttpEndpoint {
    fn complete(&self, body: &str) -> std::result::Result<String, EndpointError> {
        let mut request = self
            .client
            .post(&self.url)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_string());
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request
            .send()
            .map_err(|e| EndpointError::Transport(e.to_string()))?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| EndpointError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(EndpointError::Status(status.as_u16(), text));
        }
        parse_completion(&text)
    }
}

/// Endpoint URL, token and model read from the environment. The model has
/// no default.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EndpointSettings {
    pub url: String,
    pub api_key: Option<String>,
    pub model: String,
}

impl EndpointSettings {
    pub fn from_env() -> Result<Self> {
        let var = |name: &str| std::env::var(name).ok().filter(|v| !v.is_empty());
        let missing =
            |name: &str| Error::InvalidConfig(format!("environment variable {name} is not set"));
        Ok(Self {
            url: var(ENV_ENDPOINT).ok_or_else(|| missing(ENV_ENDPOINT))?,
            api_key: var(ENV_API_KEY),
            model: var(ENV_MODEL).ok_or_else(|| missing(ENV_MODEL))?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    /// Wait before the second attempt; doubles after each failure.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOptions {
    pub model: String,
    pub params: DecodingParams,
    pub concurrency: usize,
    pub retry: RetryPolicy,
}

impl BatchOptions {
    pub fn new(model: impl Into<String>, params: DecodingParams) -> Self {
        Self {
            model: model.into(),
            params,
            concurrency: DEFAULT_CONCURRENCY,
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub case_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub case_id: String,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub case_id: String,
    pub error: String,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BatchResult {
    /// In input order.
    pub summaries: Vec<Summary>,
    /// In input order.
    pub failures: Vec<Failure>,
}

/// Summary text, or the last error and the number of attempts made.
type CaseOutcome = std::result::Result<String, (String, u32)>;

fn summarize_one(
    report: &Report,
    endpoint: &dyn ChatEndpoint,
    options: &BatchOptions,
) -> CaseOutcome {
    let body = ChatRequest::new(&options.model, &report.text, &options.params)
        .and_then(|r| r.to_json())
        .map_err(|e| (e.to_string(), 0))?;
    let mut delay = options.retry.base_delay;
    let attempts = options.retry.attempts.max(1);
    for attempt in 1..=attempts {
        match endpoint.complete(&body) {
            Ok(text) => return Ok(text),
            Err(e) if e.is_retryable() && attempt < attempts => {
                warn!("case {}: attempt {attempt} failed: {e}", report.case_id);
                thread::sleep(delay);
                delay *= 2;
            }
            Err(e) => return Err((e.to_string(), attempt)),
        }
    }
    unreachable!("loop returns on the last attempt")
}

/// Summarizes every report with at most `options.concurrency` requests in
/// flight. Per-case failures are recorded, never raised.
pub fn summarize_batch(
    reports: &[Report],
    endpoint: &dyn ChatEndpoint,
    options: &BatchOptions,
) -> Result<BatchResult> {
    if reports.is_empty() {
        return Err(Error::InvalidArgument("no reports to summarize".into()));
    }
    let mut ids: Vec<&str> = reports.iter().map(|r| r.case_id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument(format!(
            "duplicate case_id {:?}",
            w[0]
        )));
    }

    let slots: Vec<Mutex<Option<CaseOutcome>>> = reports.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = options.concurrency.clamp(1, reports.len());
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(report) = reports.get(i) else { break };
                let outcome = summarize_one(report, endpoint, options);
                *slots[i].lock().expect("slot lock") = Some(outcome);
            });
        }
    });

    let mut result = BatchResult::default();
    for (report, slot) in reports.iter().zip(slots) {
        match slot
            .into_inner()
            .expect("slot lock")
            .expect("every slot filled")
        {
            Ok(summary) => result.summaries.push(Summary {
                case_id: report.case_id.clone(),
                summary,
            }),
            Err((error, attempts)) => result.failures.push(Failure {
                case_id: report.case_id.clone(),
                error,
                attempts,
            }),
        }
    }
    info!(
        "summarized {} reports, {} failures",
        result.summaries.len(),
        result.failures.len()
    );
    Ok(result)
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            file: path.to_path_buf(),
            message: format!("line {}: {e}", n + 1),
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
