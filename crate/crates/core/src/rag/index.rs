//! Exact flat cosine index.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::embed::Embedder;
use super::RagError;
use crate::fsutil::write_atomic;
use crate::par::Execution;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub chunk_id: usize,
    pub vector: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub chunk_id: usize,
    pub score: f32,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexHeader {
    embedder_id: String,
    dimension: usize,
    size: usize,
}

/// Immutable row-major store of unit vectors tagged with the embedder that
/// produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    embedder_id: String,
    dimension: usize,
    ids: Vec<usize>,
    data: Vec<f32>,
}

/// Descending score, then ascending chunk id.
pub fn hit_order(a: &Hit, b: &Hit) -> Ordering {
    b.score.total_cmp(&a.score).then(a.chunk_id.cmp(&b.chunk_id))
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0f32;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

impl VectorIndex {
    pub fn build(embedder_id: &str, dimension: usize, records: &[EmbeddingRecord]) -> Result<Self, RagError> {
        let mut seen = HashSet::new();
        let mut data = Vec::with_capacity(records.len() * dimension);
        let mut ids = Vec::with_capacity(records.len());
        for r in records {
            if r.vector.len() != dimension {
                return Err(RagError::DimensionMismatch {
                    expected: dimension,
                    found: r.vector.len(),
                });
            }
            if !seen.insert(r.chunk_id) {
                return Err(RagError::DuplicateChunkId(r.chunk_id));
            }
            ids.push(r.chunk_id);
            data.extend_from_slice(&r.vector);
        }
        Ok(Self {
            embedder_id: embedder_id.to_string(),
            dimension,
            ids,
            data,
        })
    }

    pub fn embedder_id(&self) -> &str {
        &self.embedder_id
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = EmbeddingRecord> + '_ {
        self.ids.iter().enumerate().map(|(i, &id)| EmbeddingRecord {
            chunk_id: id,
            vector: self.data[i * self.dimension..(i + 1) * self.dimension].to_vec(),
        })
    }

    /// Exact top-`k` by dot product (cosine on unit vectors).
    pub fn search(&self, query: &[f32], k: usize) -> Result<Vec<Hit>, RagError> {
        if query.len() != self.dimension {
            return Err(RagError::DimensionMismatch {
                expected: self.dimension,
                found: query.len(),
            });
        }
        let mut hits: Vec<Hit> = self
            .ids
            .iter()
            .enumerate()
            .map(|(i, &chunk_id)| Hit {
                chunk_id,
                score: dot(&self.data[i * self.dimension..(i + 1) * self.dimension], query),
            })
            .collect();
        let k = k.min(hits.len());
        if k == 0 {
            return Ok(Vec::new());
        }
        if k < hits.len() {
            hits.select_nth_unstable_by(k - 1, hit_order);
            hits.truncate(k);
        }
        hits.sort_by(hit_order);
        Ok(hits)
    }

    pub fn search_batch(&self, queries: &[Vec<f32>], k: usize, execution: Execution) -> Result<Vec<Vec<Hit>>, RagError> {
        execution.map(queries, |q| self.search(q, k)).into_iter().collect()
    }

    /// Embeds `text` and searches; the embedder must be the one the index was
    /// built with.
    pub fn search_text(&self, embedder: &dyn Embedder, text: &str, k: usize) -> Result<Vec<Hit>, RagError> {
        if embedder.id() != self.embedder_id {
            return Err(RagError::EmbedderMismatch {
                index: self.embedder_id.clone(),
                query: embedder.id().to_string(),
            });
        }
        let v = embedder.embed(&[text])?.pop().unwrap_or_default();
        self.search(&v, k)
    }

    /// Writes a header line then one `{"chunk_id", "vector"}` line per record.
    pub fn save(&self, path: &Path) -> Result<(), RagError> {
        let mut out = serde_json::to_string(&IndexHeader {
            embedder_id: self.embedder_id.clone(),
            dimension: self.dimension,
            size: self.len(),
        })?;
        out.push('\n');
        for r in self.records() {
            out.push_str(&serde_json::to_string(&r)?);
            out.push('\n');
        }
        write_atomic(path, out.as_bytes()).map_err(|e| RagError::Io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self, RagError> {
        let file = fs::File::open(path).map_err(|e| RagError::Io(path.display().to_string(), e))?;
        let mut lines = BufReader::new(file).lines();
        let header: IndexHeader = match lines.next() {
            Some(line) => serde_json::from_str(&line.map_err(|e| RagError::Io(path.display().to_string(), e))?)?,
            None => return Err(RagError::Format("empty index file".into())),
        };
        let mut records = Vec::with_capacity(header.size);
        for line in lines {
            let line = line.map_err(|e| RagError::Io(path.display().to_string(), e))?;
            if !line.trim().is_empty() {
                records.push(serde_json::from_str(&line)?);
            }
        }
        if records.len() != header.size {
            return Err(RagError::Format(format!(
                "header declares {} records, found {}",
                header.size,
                records.len()
            )));
        }
        Self::build(&header.embedder_id, header.dimension, &records)
    }
}
