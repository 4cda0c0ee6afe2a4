//! Chunking, embedding, exact retrieval and grounded answering over notes.

mod chunk;
mod embed;
mod index;
mod tokenize;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::fsutil::write_atomic;
use crate::llm::{ChatMessage, Gateway, GatewayError};

pub use chunk::{chunk_document, chunk_tokens, span_text, window_starts, Chunk, ChunkingConfig};
pub use embed::{fnv1a64, normalize, EmbedError, Embedder, HashEmbedder, RemoteEmbedder};
pub use index::{hit_order, EmbeddingRecord, Hit, VectorIndex};
pub use tokenize::{detokenize, token_spans, tokenize};

#[derive(Debug, thiserror::Error)]
pub enum RagError {
    #[error("vector has dimension {found}, index expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("duplicate chunk id {0}")]
    DuplicateChunkId(usize),
    #[error("index was built with embedder {index:?} but query uses {query:?}")]
    EmbedderMismatch { index: String, query: String },
    #[error("chunk {0} is in the index but not in the chunk store")]
    MissingChunk(usize),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("malformed file: {0}")]
    Format(String),
}

impl From<serde_json::Error> for RagError {
    fn from(e: serde_json::Error) -> Self {
        RagError::Format(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub top_k: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self { top_k: 4 }
    }
}

/// Chunks keyed by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChunkStore {
    chunks: BTreeMap<usize, Chunk>,
}

impl ChunkStore {
    pub fn new(chunks: impl IntoIterator<Item = Chunk>) -> Result<Self, RagError> {
        let mut map = BTreeMap::new();
        for c in chunks {
            let id = c.chunk_id;
            if map.insert(id, c).is_some() {
                return Err(RagError::DuplicateChunkId(id));
            }
        }
        Ok(Self { chunks: map })
    }

    pub fn get(&self, id: usize) -> Option<&Chunk> {
        self.chunks.get(&id)
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    /// Chunks in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = &Chunk> {
        self.chunks.values()
    }

    pub fn save(&self, path: &Path) -> Result<(), RagError> {
        let mut out = String::new();
        for c in self.iter() {
            out.push_str(&serde_json::to_string(c)?);
            out.push('\n');
        }
        write_atomic(path, out.as_bytes()).map_err(|e| RagError::Io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self, RagError> {
        let text = fs::read_to_string(path).map_err(|e| RagError::Io(path.display().to_string(), e))?;
        let chunks = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<Vec<Chunk>, _>>()?;
        Self::new(chunks)
    }
}

/// Embeds every chunk and builds an index over them.
pub fn build_index(embedder: &dyn Embedder, chunks: &ChunkStore) -> Result<VectorIndex, RagError> {
    let texts: Vec<&str> = chunks.iter().map(|c| c.text.as_str()).collect();
    let vectors = embedder.embed(&texts)?;
    let records: Vec<EmbeddingRecord> = chunks
        .iter()
        .zip(vectors)
        .map(|(c, vector)| EmbeddingRecord {
            chunk_id: c.chunk_id,
            vector,
        })
        .collect();
    VectorIndex::build(embedder.id(), embedder.dimension(), &records)
}

pub const RAG_SYSTEM_PROMPT: &str = "You answer questions about a clinical note. \
Use only the provided context. If the context does not contain the answer, say that it is not stated in the note.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RagAnswer {
    pub question: String,
    pub retrieved: Vec<Hit>,
    pub context: String,
    pub answer: String,
    /// Nothing was retrieved, so the model saw an empty context.
    pub empty_context: bool,
}

/// Retrieved chunk texts in ascending chunk-id order, separated by a blank line.
pub fn assemble_context(hits: &[Hit], chunks: &ChunkStore) -> Result<String, RagError> {
    let mut ids: Vec<usize> = hits.iter().map(|h| h.chunk_id).collect();
    ids.sort_unstable();
    let texts = ids
        .iter()
        .map(|id| chunks.get(*id).map(|c| c.text.as_str()).ok_or(RagError::MissingChunk(*id)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(texts.join("\n\n"))
}

pub fn rag_messages(context: &str, question: &str) -> Vec<ChatMessage> {
    let context = if context.is_empty() { "(no context retrieved)" } else { context };
    vec![
        ChatMessage::system(RAG_SYSTEM_PROMPT),
        ChatMessage::user(format!("Context:\n{context}\n\nQuestion: {question}")),
    ]
}

pub fn answer_unstructured_question(
    question: &str,
    index: &VectorIndex,
    chunks: &ChunkStore,
    embedder: &dyn Embedder,
    gateway: &Gateway,
    retrieval: &RetrievalConfig,
) -> Result<RagAnswer, RagError> {
    let retrieved = index.search_text(embedder, question, retrieval.top_k)?;
    let context = assemble_context(&retrieved, chunks)?;
    let response = gateway.complete(&gateway.request(rag_messages(&context, question)))?;
    Ok(RagAnswer {
        question: question.to_string(),
        empty_context: retrieved.is_empty(),
        retrieved,
        context,
        answer: response.content,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{Journal, ScriptedStub, StubRule};

    #[test]
    fn answer_uses_retrieved_context() {
        let doc = "The patient was intubated and sedated. Blood pressure was stable. \
                   Discharge planning began on day three.";
        let chunks = ChunkStore::new(chunk_document("note", doc, &ChunkingConfig::new(6, 1).unwrap())).unwrap();
        let e = HashEmbedder::default();
        let index = build_index(&e, &chunks).unwrap();
        let gw = Gateway::from_stub(
            "stub",
            ScriptedStub::new(vec![StubRule::any("sedated")]),
            Journal::in_memory(),
        );
        let ans = answer_unstructured_question(
            "Was the patient sedated?",
            &index,
            &chunks,
            &e,
            &gw,
            &RetrievalConfig { top_k: 2 },
        )
        .unwrap();
        assert_eq!(ans.retrieved.len(), 2);
        assert!(ans.context.contains("sedated"));
        assert_eq!(ans.answer, "sedated");
        let prompt = &gw.journal().entries()[0].messages[1].content;
        assert!(prompt.starts_with("Context:\n") && prompt.ends_with("Question: Was the patient sedated?"));
    }

    #[test]
    fn mismatched_embedder_is_rejected() {
        let chunks = ChunkStore::new(chunk_document("d", "a b c", &ChunkingConfig::default())).unwrap();
        let index = build_index(&HashEmbedder::new(8), &chunks).unwrap();
        assert!(matches!(
            index.search_text(&HashEmbedder::new(16), "a", 1),
            Err(RagError::EmbedderMismatch { .. })
        ));
    }
}
