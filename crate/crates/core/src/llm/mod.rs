//! Chat-completion gateway.
//!
//! A [`Gateway`] wraps one configured endpoint, either an HTTP chat endpoint
//! speaking the common `{"model", "messages", "max_tokens", "temperature"}`
//! JSON shape or a [`ScriptedStub`] that replays canned replies. Every call
//! is checked against an optional token budget and recorded in a [`Journal`].

pub(crate) mod http;
mod journal;
mod stub;

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use journal::{Journal, JournalEntry};
pub use stub::{load_stub_script, ScriptedStub, StubRule, StubScriptError};

use crate::rag::{token_spans, tokenize};

/// Token count under the framework tokenizer. This approximates, and will
/// differ from, any provider's own tokenizer.
pub fn estimate_tokens(text: &str) -> usize {
    tokenize(text).len()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub model_id: String,
    pub max_output_tokens: usize,
    pub temperature: f64,
}

impl ChatRequest {
    pub fn new(model_id: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        Self {
            messages,
            model_id: model_id.into(),
            max_output_tokens: 512,
            temperature: 0.0,
        }
    }

    pub fn with_max_output_tokens(mut self, n: usize) -> Self {
        self.max_output_tokens = n;
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let invalid = |m: &str| Err(GatewayError::InvalidRequest(m.to_string()));
        if self.messages.is_empty() {
            return invalid("request has no messages");
        }
        if self.messages.iter().any(|m| m.content.is_empty()) {
            return invalid("message content must be non-empty");
        }
        if self.messages.iter().skip(1).any(|m| m.role == Role::System) {
            return invalid("only the first message may be a system message");
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return invalid("temperature must be >= 0");
        }
        Ok(())
    }

    /// Content of the last user message, used by the stub for matching.
    pub fn last_user_content(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map_or("", |m| m.content.as_str())
    }

    pub fn input_token_estimate(&self) -> usize {
        self.messages.iter().map(|m| estimate_tokens(&m.content)).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub content: String,
    pub input_token_estimate: usize,
    pub output_token_estimate: usize,
    pub latency: Duration,
    pub endpoint_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointKind {
    HttpChat,
    ScriptedStub,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuthStyle {
    /// `Authorization: Bearer <key>`
    #[default]
    Bearer,
    /// `api-key: <key>` (Azure OpenAI)
    ApiKey,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub endpoint_id: String,
    pub kind: EndpointKind,
    /// Model name sent on the wire; defaults to `endpoint_id`.
    pub model: Option<String>,
    /// Full URL of the chat-completions route (HTTP endpoints only).
    pub base_url: Option<String>,
    /// Name of the environment variable holding the API key.
    pub credential_env: Option<String>,
    pub auth: AuthStyle,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub retry_backoff_ms: u64,
    /// Cap on the total estimated tokens (input plus output) for this endpoint.
    pub budget: Option<u64>,
    /// Stub script path (scripted stubs only).
    pub script: Option<PathBuf>,
    /// Reply used when no stub rule matches; `None` makes it an error.
    pub stub_fallback: Option<String>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            endpoint_id: "stub".into(),
            kind: EndpointKind::ScriptedStub,
            model: None,
            base_url: None,
            credential_env: None,
            auth: AuthStyle::Bearer,
            timeout_secs: 60.0,
            max_retries: 2,
            retry_backoff_ms: 250,
            budget: None,
            script: None,
            stub_fallback: None,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.kind == EndpointKind::HttpChat && self.base_url.is_none() {
            return Err(GatewayError::InvalidConfig(format!(
                "endpoint {}: http_chat requires base_url",
                self.endpoint_id
            )));
        }
        if self.timeout_secs.is_nan() || self.timeout_secs <= 0.0 {
            return Err(GatewayError::InvalidConfig(format!(
                "endpoint {}: timeout must be positive",
                self.endpoint_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid endpoint config: {0}")]
    InvalidConfig(String),
    #[error("token budget exhausted: {used} used, {requested} requested, cap {cap}")]
    BudgetExhausted { used: u64, requested: u64, cap: u64 },
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint returned HTTP {status}: {body_excerpt}")]
    Protocol { status: u16, body_excerpt: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("no stub rule matches prompt {prompt_excerpt:?}")]
    NoScriptMatch { prompt_excerpt: String },
    #[error("credential environment variable {0} is not set")]
    MissingCredential(String),
    #[error(transparent)]
    Script(#[from] StubScriptError),
}

enum Backend {
    Http(http::HttpChat),
    Stub(ScriptedStub),
}

/// One live endpoint with its budget counter.
pub struct Gateway {
    config: EndpointConfig,
    backend: Backend,
    used_tokens: AtomicU64,
    journal: Journal,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("endpoint_id", &self.config.endpoint_id)
            .field("used_tokens", &self.used_tokens.load(Ordering::Relaxed))
            .finish()
    }
}

impl Gateway {
    pub fn from_config(config: EndpointConfig, journal: Journal) -> Result<Self, GatewayError> {
        config.validate()?;
        let backend = match config.kind {
            EndpointKind::HttpChat => Backend::Http(http::HttpChat::new(&config)?),
            EndpointKind::ScriptedStub => {
                let stub = match &config.script {
                    Some(path) => load_stub_script(path)?,
                    None => ScriptedStub::new(Vec::new()),
                };
                Backend::Stub(stub.with_fallback(config.stub_fallback.clone()))
            }
        };
        Ok(Self {
            config,
            backend,
            used_tokens: AtomicU64::new(0),
            journal,
        })
    }

    /// Gateway over an in-memory stub.
    pub fn from_stub(endpoint_id: impl Into<String>, stub: ScriptedStub, journal: Journal) -> Self {
        Self {
            config: EndpointConfig {
                endpoint_id: endpoint_id.into(),
                ..Default::default()
            },
            backend: Backend::Stub(stub),
            used_tokens: AtomicU64::new(0),
            journal,
        }
    }

    pub fn with_budget(mut self, cap: Option<u64>) -> Self {
        self.config.budget = cap;
        self
    }

    pub fn endpoint_id(&self) -> &str {
        &self.config.endpoint_id
    }

    pub fn model_name(&self) -> &str {
        self.config.model.as_deref().unwrap_or(&self.config.endpoint_id)
    }

    /// Request to this endpoint's model with default decoding settings.
    pub fn request(&self, messages: Vec<ChatMessage>) -> ChatRequest {
        ChatRequest::new(self.model_name(), messages)
    }

    pub fn is_stub(&self) -> bool {
        matches!(self.backend, Backend::Stub(_))
    }

    pub fn used_tokens(&self) -> u64 {
        self.used_tokens.load(Ordering::SeqCst)
    }

    pub fn journal(&self) -> &Journal {
        &self.journal
    }

    /// Reserves `input + max_output` tokens up front so concurrent callers
    /// can never jointly exceed the cap.
    fn reserve(&self, amount: u64) -> Result<(), GatewayError> {
        let Some(cap) = self.config.budget else {
            self.used_tokens.fetch_add(amount, Ordering::SeqCst);
            return Ok(());
        };
        self.used_tokens
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |used| {
                (used + amount <= cap).then_some(used + amount)
            })
            .map(|_| ())
            .map_err(|used| GatewayError::BudgetExhausted {
                used,
                requested: amount,
                cap,
            })
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let input = request.input_token_estimate();
        let reservation = (input + request.max_output_tokens) as u64;
        if let Err(err) = self.reserve(reservation) {
            self.journal.record(JournalEntry::failure(
                &self.config.endpoint_id,
                request,
                0,
                Duration::ZERO,
                &err,
            ));
            return Err(err);
        }
        let started = Instant::now();
        let outcome = match &self.backend {
            Backend::Http(client) => client.send(request),
            Backend::Stub(stub) => stub.reply(request).map(|text| (text, 1)),
        };
        let latency = started.elapsed();
        match outcome {
            Ok((content, attempts)) => {
                let content = truncate_tokens(&content, request.max_output_tokens);
                let output = estimate_tokens(&content);
                let spent = (input + output) as u64;
                self.used_tokens
                    .fetch_sub(reservation - spent, Ordering::SeqCst);
                let response = ChatResponse {
                    content,
                    input_token_estimate: input,
                    output_token_estimate: output,
                    latency,
                    endpoint_id: self.config.endpoint_id.clone(),
                };
                self.journal.record(JournalEntry::success(
                    &self.config.endpoint_id,
                    request,
                    &response,
                    attempts,
                ));
                Ok(response)
            }
            Err(err) => {
                self.used_tokens.fetch_sub(reservation, Ordering::SeqCst);
                let attempts = match &err {
                    GatewayError::Timeout { attempts } | GatewayError::Transport { attempts, .. } => *attempts,
                    _ => 1,
                };
                self.journal.record(JournalEntry::failure(
                    &self.config.endpoint_id,
                    request,
                    attempts,
                    latency,
                    &err,
                ));
                Err(err)
            }
        }
    }
}

/// Keeps the original text up to the end of the `max`-th token.
fn truncate_tokens(text: &str, max: usize) -> String {
    let spans = token_spans(text);
    if spans.len() <= max {
        return text.to_string();
    }
    if max == 0 {
        return String::new();
    }
    text[..spans[max - 1].1].to_string()
}
