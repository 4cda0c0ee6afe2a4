//! Append-only run journal of every model exchange.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ChatMessage, ChatRequest, ChatResponse, GatewayError};

/// One exchange. Credentials never reach this record: requests carry only
/// messages and the model name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub seq: u64,
    pub endpoint_id: String,
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    pub response: Option<String>,
    pub error: Option<String>,
    pub input_tokens: usize,
    pub output_tokens: usize,
    pub attempts: u32,
    pub latency_ms: u64,
}

impl JournalEntry {
    pub(crate) fn success(endpoint_id: &str, request: &ChatRequest, response: &ChatResponse, attempts: u32) -> Self {
        Self {
            seq: 0,
            endpoint_id: endpoint_id.to_string(),
            model_id: request.model_id.clone(),
            messages: request.messages.clone(),
            response: Some(response.content.clone()),
            error: None,
            input_tokens: response.input_token_estimate,
            output_tokens: response.output_token_estimate,
            attempts,
            latency_ms: response.latency.as_millis() as u64,
        }
    }

    pub(crate) fn failure(
        endpoint_id: &str,
        request: &ChatRequest,
        attempts: u32,
        latency: Duration,
        error: &GatewayError,
    ) -> Self {
        Self {
            seq: 0,
            endpoint_id: endpoint_id.to_string(),
            model_id: request.model_id.clone(),
            messages: request.messages.clone(),
            response: None,
            error: Some(error.to_string()),
            input_tokens: 0,
            output_tokens: 0,
            attempts,
            latency_ms: latency.as_millis() as u64,
        }
    }
}

#[derive(Default)]
struct Inner {
    entries: Vec<JournalEntry>,
    sink: Option<BufWriter<File>>,
}

/// Shared handle; entries are numbered in completion order.
#[derive(Clone, Default)]
pub struct Journal {
    inner: Arc<Mutex<Inner>>,
}

impl std::fmt::Debug for Journal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Journal").field("entries", &self.entries().len()).finish()
    }
}

impl Journal {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Journal that also appends JSON lines to `path`.
    pub fn to_file(path: &Path) -> std::io::Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            inner: Arc::new(Mutex::new(Inner {
                entries: Vec::new(),
                sink: Some(BufWriter::new(file)),
            })),
        })
    }

    pub(crate) fn record(&self, mut entry: JournalEntry) {
        let mut inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        entry.seq = inner.entries.len() as u64 + 1;
        if let Some(sink) = inner.sink.as_mut() {
            if let Ok(line) = serde_json::to_string(&entry) {
                if writeln!(sink, "{line}").and_then(|_| sink.flush()).is_err() {
                    log::warn!("failed to append to run journal");
                }
            }
        }
        inner.entries.push(entry);
    }

    pub fn entries(&self) -> Vec<JournalEntry> {
        self.inner
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .entries
            .clone()
    }
}
