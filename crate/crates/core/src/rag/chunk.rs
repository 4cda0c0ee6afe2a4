use serde::{Deserialize, Serialize};

use super::tokenize::{detokenize, token_spans};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChunkingConfig {
    pub chunk_size: usize,
    pub overlap: usize,
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        Self {
            chunk_size: 400,
            overlap: 50,
        }
    }
}

impl ChunkingConfig {
    pub fn new(chunk_size: usize, overlap: usize) -> Result<Self, String> {
        let cfg = Self { chunk_size, overlap };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.chunk_size == 0 || self.overlap >= self.chunk_size {
            return Err(format!(
                "invalid chunking: need 0 <= overlap ({}) < chunk_size ({})",
                self.overlap, self.chunk_size
            ));
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.chunk_size - self.overlap
    }
}

/// A token window `[token_start, token_end)` of one document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: usize,
    pub doc_id: String,
    pub token_start: usize,
    pub token_end: usize,
    pub text: String,
}

/// Window start offsets for a document of `n_tokens` tokens.
pub fn window_starts(n_tokens: usize, cfg: &ChunkingConfig) -> Vec<usize> {
    let mut starts = Vec::new();
    if n_tokens == 0 {
        return starts;
    }
    let mut start = 0;
    loop {
        starts.push(start);
        if start + cfg.chunk_size >= n_tokens {
            return starts;
        }
        start += cfg.stride();
    }
}

/// Sliding windows of `chunk_size` tokens advancing by
/// `chunk_size - overlap`; the last window may be short. Chunk ids start at
/// `first_id`.
pub fn chunk_tokens(doc_id: &str, tokens: &[String], cfg: &ChunkingConfig, first_id: usize) -> Vec<Chunk> {
    window_starts(tokens.len(), cfg)
        .into_iter()
        .enumerate()
        .map(|(i, start)| {
            let end = (start + cfg.chunk_size).min(tokens.len());
            Chunk {
                chunk_id: first_id + i,
                doc_id: doc_id.to_string(),
                token_start: start,
                token_end: end,
                text: detokenize(&tokens[start..end]),
            }
        })
        .collect()
}

/// Like [`chunk_tokens`] over `tokenize(doc)`, except that each chunk's text
/// is the original slice of `doc` from its first to its last token.
pub fn chunk_document(doc_id: &str, doc: &str, cfg: &ChunkingConfig) -> Vec<Chunk> {
    let spans = token_spans(doc);
    window_starts(spans.len(), cfg)
        .into_iter()
        .enumerate()
        .map(|(i, start)| {
            let end = (start + cfg.chunk_size).min(spans.len());
            Chunk {
                chunk_id: i,
                doc_id: doc_id.to_string(),
                token_start: start,
                token_end: end,
                text: span_text(doc, &spans, start, end).to_string(),
            }
        })
        .collect()
}

/// Original text covering tokens `[start, end)`; empty when the range is.
pub fn span_text<'a>(doc: &'a str, spans: &[(usize, usize)], start: usize, end: usize) -> &'a str {
    if start >= end {
        return "";
    }
    &doc[spans[start].0..spans[end - 1].1]
}
