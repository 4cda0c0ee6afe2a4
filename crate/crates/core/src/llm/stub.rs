//! Deterministic scripted stand-in for a model endpoint.
//!
//! Script files are JSON lines. Each line has exactly one matcher and one
//! reply:
//!
//! ```text
//! {"ordinal": 1, "reply": "AGGREGATE COUNT(*)"}
//! {"prompt": "What is the median age?", "reply": "DERIVE AGE = ..."}
//! {"prompt_sha256": "<hex of the prompt>", "reply": "..."}
//! {"any": true, "echo": true}
//! ```
//!
//! The prompt is the content of the request's last user message; `ordinal`
//! is the 1-based call number on this stub. Rules are tried in file order
//! and the first match wins. Blank lines are ignored.

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChatRequest, GatewayError};

pub fn prompt_sha256(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("stub script line {line}: {message}")]
pub struct StubScriptError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Matcher {
    Ordinal(u64),
    Exact(String),
    Hash(String),
    Any,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Reply {
    Text(String),
    Echo,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StubRule {
    matcher: Matcher,
    reply: Reply,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleLine {
    #[serde(skip_serializing_if = "Option::is_none")]
    ordinal: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    prompt: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    prompt_sha256: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    any: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reply: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    echo: Option<bool>,
}

impl StubRule {
    pub fn ordinal(n: u64, reply: impl Into<String>) -> Self {
        Self {
            matcher: Matcher::Ordinal(n),
            reply: Reply::Text(reply.into()),
        }
    }

    pub fn exact(prompt: impl Into<String>, reply: impl Into<String>) -> Self {
        Self {
            matcher: Matcher::Exact(prompt.into()),
            reply: Reply::Text(reply.into()),
        }
    }

    pub fn prompt_hash(hash: &str, reply: impl Into<String>) -> Self {
        Self {
            matcher: Matcher::Hash(hash.to_ascii_lowercase()),
            reply: Reply::Text(reply.into()),
        }
    }

    pub fn any(reply: impl Into<String>) -> Self {
        Self {
            matcher: Matcher::Any,
            reply: Reply::Text(reply.into()),
        }
    }

    /// Replies with the prompt itself.
    pub fn echo_any() -> Self {
        Self {
            matcher: Matcher::Any,
            reply: Reply::Echo,
        }
    }

    fn matches(&self, prompt: &str, prompt_hash: &str, ordinal: u64) -> bool {
        match &self.matcher {
            Matcher::Ordinal(n) => *n == ordinal,
            Matcher::Exact(p) => p == prompt,
            Matcher::Hash(h) => h == prompt_hash,
            Matcher::Any => true,
        }
    }

    fn from_line(line: RuleLine) -> Result<Self, String> {
        let mut matchers = Vec::new();
        if let Some(n) = line.ordinal {
            if n == 0 {
                return Err("ordinal is 1-based".into());
            }
            matchers.push(Matcher::Ordinal(n));
        }
        if let Some(p) = line.prompt {
            matchers.push(Matcher::Exact(p));
        }
        if let Some(h) = line.prompt_sha256 {
            if h.len() != 64 || !h.chars().all(|c| c.is_ascii_hexdigit()) {
                return Err("prompt_sha256 must be 64 hex digits".into());
            }
            matchers.push(Matcher::Hash(h.to_ascii_lowercase()));
        }
        if line.any == Some(true) {
            matchers.push(Matcher::Any);
        }
        if matchers.len() != 1 {
            return Err("exactly one of ordinal, prompt, prompt_sha256, any must be given".into());
        }
        let reply = match (line.reply, line.echo) {
            (Some(r), None | Some(false)) => Reply::Text(r),
            (None, Some(true)) => Reply::Echo,
            _ => return Err("exactly one of reply or echo=true must be given".into()),
        };
        Ok(Self {
            matcher: matchers.remove(0),
            reply,
        })
    }

    /// The rule as one script line.
    pub fn to_json_line(&self) -> String {
        let mut line = RuleLine::default();
        match &self.matcher {
            Matcher::Ordinal(n) => line.ordinal = Some(*n),
            Matcher::Exact(p) => line.prompt = Some(p.clone()),
            Matcher::Hash(h) => line.prompt_sha256 = Some(h.clone()),
            Matcher::Any => line.any = Some(true),
        }
        match &self.reply {
            Reply::Text(t) => line.reply = Some(t.clone()),
            Reply::Echo => line.echo = Some(true),
        }
        serde_json::to_string(&line).expect("rule serializes")
    }
}

#[derive(Debug)]
pub struct ScriptedStub {
    rules: Vec<StubRule>,
    fallback: Option<String>,
    calls: AtomicU64,
}

impl ScriptedStub {
    pub fn new(rules: Vec<StubRule>) -> Self {
        Self {
            rules,
            fallback: None,
            calls: AtomicU64::new(0),
        }
    }

    pub fn with_fallback(mut self, fallback: Option<String>) -> Self {
        self.fallback = fallback;
        self
    }

    pub fn rules(&self) -> &[StubRule] {
        &self.rules
    }

    pub(crate) fn reply(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let ordinal = self.calls.fetch_add(1, Ordering::SeqCst) + 1;
        let prompt = request.last_user_content();
        let hash = prompt_sha256(prompt);
        match self.rules.iter().find(|r| r.matches(prompt, &hash, ordinal)) {
            Some(StubRule {
                reply: Reply::Text(t),
                ..
            }) => Ok(t.clone()),
            Some(StubRule {
                reply: Reply::Echo, ..
            }) => Ok(prompt.to_string()),
            None => self.fallback.clone().ok_or_else(|| GatewayError::NoScriptMatch {
                prompt_excerpt: prompt.chars().take(80).collect(),
            }),
        }
    }
}

pub fn parse_stub_script(text: &str) -> Result<ScriptedStub, StubScriptError> {
    let mut rules = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let err = |message: String| StubScriptError {
            line: i + 1,
            message,
        };
        let line: RuleLine = serde_json::from_str(raw).map_err(|e| err(e.to_string()))?;
        rules.push(StubRule::from_line(line).map_err(err)?);
    }
    Ok(ScriptedStub::new(rules))
}

pub fn load_stub_script(path: &Path) -> Result<ScriptedStub, StubScriptError> {
    let text = fs::read_to_string(path).map_err(|e| StubScriptError {
        line: 0,
        message: format!("{}: {e}", path.display()),
    })?;
    parse_stub_script(&text)
}
