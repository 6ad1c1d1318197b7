//! Chat-completion gateway with pluggable backends, a per-tag token ledger
//! and a full call trace.

pub mod extract;
mod http;
mod mock;
mod replay;

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokens::{ByteEstimator, TokenEstimator};

pub use extract::{
    extract_action, extract_json, extract_json_object, extract_sql_blocks, fenced_blocks, ActionTag,
    ExtractError,
};
pub use http::{HttpBackend, HttpConfig};
pub use mock::{MockBackend, MockRule};
pub use replay::{ReplayBackend, ReplayEntry, ReplayScript};

/// Message appended when asking the model to repair an unparseable answer.
pub const REPARSE_MESSAGE: &str =
    "Your previous output was unparseable. Reply again using exactly the required output format.";
/// Re-prompts allowed after a parse failure.
pub const DEFAULT_PARSE_RETRIES: usize = 2;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("replay script has no entry matching tag {tag:?}")]
    ScriptExhausted { tag: String },
    #[error("output for tag {tag:?} hit the limit of {limit} tokens")]
    OutputTruncated { tag: String, limit: u64 },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("trace io: {0}")]
    Io(#[from] std::io::Error),
}

/// Collapses a parsed call into "value or fall back". Truncated output counts
/// as unparseable; every other gateway error propagates.
pub fn parsed_or_fallback<T>(
    outcome: Result<Result<T, ExtractError>, GatewayError>,
) -> Result<Option<T>, GatewayError> {
    match outcome {
        Ok(Ok(v)) => Ok(Some(v)),
        Ok(Err(e)) => {
            log::warn!("{e}; using fallback");
            Ok(None)
        }
        Err(GatewayError::OutputTruncated { tag, limit }) => {
            log::warn!("{tag} output truncated at {limit} tokens; using fallback");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_output_tokens: u64,
    pub tag: String,
}

impl ChatRequest {
    pub fn new(tag: impl Into<String>, temperature: f64, max_output_tokens: u64) -> Self {
        Self {
            messages: Vec::new(),
            temperature,
            max_output_tokens,
            tag: tag.into(),
        }
    }

    /// Single user-message request.
    pub fn user_prompt(
        tag: impl Into<String>,
        prompt: impl Into<String>,
        temperature: f64,
        max_output_tokens: u64,
    ) -> Self {
        Self::new(tag, temperature, max_output_tokens).user(prompt)
    }

    pub fn system(mut self, content: impl Into<String>) -> Self {
        self.messages.push(Message {
            role: Role::System,
            content: content.into(),
        });
        self
    }

    pub fn user(mut self, content: impl Into<String>) -> Self {
        self.messages.push(Message {
            role: Role::User,
            content: content.into(),
        });
        self
    }

    pub fn assistant(mut self, content: impl Into<String>) -> Self {
        self.messages.push(Message {
            role: Role::Assistant,
            content: content.into(),
        });
        self
    }

    /// All message bodies joined with blank lines.
    pub fn joined_content(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        match self.messages.first() {
            None => return Err(GatewayError::InvalidRequest("no messages".into())),
            Some(m) if m.role == Role::Assistant => {
                return Err(GatewayError::InvalidRequest(
                    "first message must come from system or user".into(),
                ))
            }
            _ => {}
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub backend_id: String,
}

/// What a backend hands back. Token counts the backend does not report are
/// estimated by the gateway.
#[derive(Debug, Clone, Default)]
pub struct BackendReply {
    pub content: String,
    pub input_tokens: Option<u64>,
    pub output_tokens: Option<u64>,
    pub truncated: bool,
}

pub trait Backend: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, request: &ChatRequest) -> Result<BackendReply, GatewayError>;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagUsage {
    pub calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl TagUsage {
    pub fn total(&self) -> u64 {
        self.input_tokens + self.output_tokens
    }
}

/// Cumulative usage per request tag.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TokenLedger {
    pub by_tag: BTreeMap<String, TagUsage>,
}

impl TokenLedger {
    pub fn record(&mut self, tag: &str, input: u64, output: u64) {
        let u = self.by_tag.entry(tag.to_string()).or_default();
        u.calls += 1;
        u.input_tokens += input;
        u.output_tokens += output;
    }

    pub fn get(&self, tag: &str) -> TagUsage {
        self.by_tag.get(tag).copied().unwrap_or_default()
    }

    pub fn total(&self) -> TagUsage {
        self.by_tag.values().fold(TagUsage::default(), |acc, u| TagUsage {
            calls: acc.calls + u.calls,
            input_tokens: acc.input_tokens + u.input_tokens,
            output_tokens: acc.output_tokens + u.output_tokens,
        })
    }

    /// Usage recorded after `earlier` was taken from the same ledger.
    pub fn since(&self, earlier: &TokenLedger) -> TokenLedger {
        let mut out = TokenLedger::default();
        for (tag, u) in &self.by_tag {
            let before = earlier.get(tag);
            let d = TagUsage {
                calls: u.calls - before.calls.min(u.calls),
                input_tokens: u.input_tokens - before.input_tokens.min(u.input_tokens),
                output_tokens: u.output_tokens - before.output_tokens.min(u.output_tokens),
            };
            if d.calls > 0 || d.total() > 0 {
                out.by_tag.insert(tag.clone(), d);
            }
        }
        out
    }

    pub fn merge(&mut self, other: &TokenLedger) {
        for (tag, u) in &other.by_tag {
            let e = self.by_tag.entry(tag.clone()).or_default();
            e.calls += u.calls;
            e.input_tokens += u.input_tokens;
            e.output_tokens += u.output_tokens;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub tag: String,
    pub request: ChatRequest,
    pub response: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub timestamp: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Source of trace timestamps. Fixed clocks make traces byte-identical
/// across runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clock {
    System,
    Fixed(u64),
}

impl Clock {
    fn now_ms(self) -> u64 {
        match self {
            Clock::System => SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
            Clock::Fixed(t) => t,
        }
    }
}

#[derive(Default)]
struct GatewayState {
    ledger: TokenLedger,
    trace: Vec<TraceRecord>,
}

/// Entry point for all model calls. Cheap to clone handles via `fork`; a
/// fork keeps its own ledger and trace until merged back with `absorb`, so
/// concurrent work can be folded into the parent in a fixed order.
pub struct Gateway {
    backend: Arc<dyn Backend>,
    estimator: Arc<dyn TokenEstimator>,
    clock: Clock,
    state: Mutex<GatewayState>,
    sink: Option<Mutex<BufWriter<File>>>,
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Self {
            backend,
            estimator: Arc::new(ByteEstimator),
            clock: Clock::System,
            state: Mutex::new(GatewayState::default()),
            sink: None,
        }
    }

    /// Gateway over a replay script with a fixed clock.
    pub fn replay(script: ReplayScript) -> Self {
        Self::new(Arc::new(ReplayBackend::new(script))).with_clock(Clock::Fixed(0))
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_estimator(mut self, estimator: Arc<dyn TokenEstimator>) -> Self {
        self.estimator = estimator;
        self
    }

    /// Appends every trace record to `path` as JSON lines.
    pub fn with_trace_file(mut self, path: &Path) -> Result<Self, GatewayError> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        self.sink = Some(Mutex::new(BufWriter::new(file)));
        Ok(self)
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    pub fn estimator(&self) -> &dyn TokenEstimator {
        self.estimator.as_ref()
    }

    /// A child gateway on the same backend with an empty ledger and trace.
    pub fn fork(&self) -> Gateway {
        Gateway {
            backend: Arc::clone(&self.backend),
            estimator: Arc::clone(&self.estimator),
            clock: self.clock,
            state: Mutex::new(GatewayState::default()),
            sink: None,
        }
    }

    /// Folds a child's ledger and trace into this gateway.
    pub fn absorb(&self, child: Gateway) -> Result<(), GatewayError> {
        let child_state = child.state.into_inner().unwrap_or_else(|p| p.into_inner());
        self.write_sink(&child_state.trace)?;
        let mut state = self.lock();
        state.ledger.merge(&child_state.ledger);
        state.trace.extend(child_state.trace);
        Ok(())
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, GatewayState> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn write_sink(&self, records: &[TraceRecord]) -> Result<(), GatewayError> {
        if let Some(sink) = &self.sink {
            let mut w = sink.lock().unwrap_or_else(|p| p.into_inner());
            for r in records {
                serde_json::to_writer(&mut *w, r).map_err(std::io::Error::other)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
        Ok(())
    }

    fn record(&self, record: TraceRecord) -> Result<(), GatewayError> {
        self.write_sink(std::slice::from_ref(&record))?;
        let mut state = self.lock();
        state
            .ledger
            .record(&record.tag, record.input_tokens, record.output_tokens);
        state.trace.push(record);
        Ok(())
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let timestamp = self.clock.now_ms();
        match self.backend.complete(request) {
            Ok(reply) => {
                let input_tokens = reply
                    .input_tokens
                    .unwrap_or_else(|| self.estimator.estimate(&request.joined_content()));
                let output_tokens = reply
                    .output_tokens
                    .unwrap_or_else(|| self.estimator.estimate(&reply.content));
                let truncated = reply.truncated || output_tokens > request.max_output_tokens;
                self.record(TraceRecord {
                    tag: request.tag.clone(),
                    request: request.clone(),
                    response: reply.content.clone(),
                    input_tokens,
                    output_tokens,
                    timestamp,
                    error: truncated.then(|| "output truncated".to_string()),
                })?;
                if truncated {
                    return Err(GatewayError::OutputTruncated {
                        tag: request.tag.clone(),
                        limit: request.max_output_tokens,
                    });
                }
                Ok(ChatResponse {
                    content: reply.content,
                    input_tokens,
                    output_tokens,
                    backend_id: self.backend.id().to_string(),
                })
            }
            Err(e) => {
                self.record(TraceRecord {
                    tag: request.tag.clone(),
                    request: request.clone(),
                    response: String::new(),
                    input_tokens: 0,
                    output_tokens: 0,
                    timestamp,
                    error: Some(e.to_string()),
                })?;
                Err(e)
            }
        }
    }

    /// Calls the model and parses the answer, re-prompting up to `retries`
    /// times when parsing fails. The outer error is a transport failure; the
    /// inner one means every attempt was unparseable and the caller should
    /// fall back.
    pub fn complete_parsed<T>(
        &self,
        request: &ChatRequest,
        retries: usize,
        parse: impl Fn(&str) -> Result<T, ExtractError>,
    ) -> Result<Result<T, ExtractError>, GatewayError> {
        let mut req = request.clone();
        let mut last_err = None;
        for attempt in 0..=retries {
            let resp = self.complete(&req)?;
            match parse(&resp.content) {
                Ok(v) => return Ok(Ok(v)),
                Err(e) => {
                    last_err = Some(e);
                    if attempt < retries {
                        req = req.assistant(resp.content).user(REPARSE_MESSAGE);
                    }
                }
            }
        }
        Ok(Err(last_err.unwrap_or_else(|| ExtractError::ParseFailure("no attempt".into()))))
    }

    pub fn ledger(&self) -> TokenLedger {
        self.lock().ledger.clone()
    }

    pub fn total_tokens(&self) -> u64 {
        self.lock().ledger.total().total()
    }

    pub fn trace(&self) -> Vec<TraceRecord> {
        self.lock().trace.clone()
    }

    pub fn trace_len(&self) -> usize {
        self.lock().trace.len()
    }

    /// The trace as JSON lines.
    pub fn trace_jsonl(&self) -> String {
        let state = self.lock();
        let mut out = String::new();
        for r in &state.trace {
            out.push_str(&serde_json::to_string(r).unwrap_or_default());
            out.push('\n');
        }
        out
    }
}
