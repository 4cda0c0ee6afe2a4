//! Text embedders sharing one vector space per embedder id.

use serde_json::{json, Value as Json};

use crate::llm::http::JsonClient;
use crate::llm::{EndpointConfig, GatewayError};
use crate::par::Execution;

use super::tokenize::tokenize;

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error(transparent)]
    Remote(#[from] GatewayError),
    #[error("embedding response: {0}")]
    Malformed(String),
}

/// Maps texts to unit-norm vectors of a fixed dimension. Two embedders with
/// the same [`Embedder::id`] must produce the same vectors.
pub trait Embedder: Send + Sync {
    fn id(&self) -> &str;
    fn dimension(&self) -> usize;
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, EmbedError>;
}

/// Scales `v` to unit L2 norm. An all-zero vector becomes the uniform unit
/// vector.
pub fn normalize(v: &mut [f32]) {
    let norm = v.iter().map(|x| f64::from(*x) * f64::from(*x)).sum::<f64>().sqrt();
    if norm == 0.0 {
        let u = (1.0 / (v.len() as f64).sqrt()) as f32;
        v.iter_mut().for_each(|x| *x = u);
    } else {
        v.iter_mut().for_each(|x| *x = (f64::from(*x) / norm) as f32);
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Hashed bag of lower-cased tokens. Each token that is not pure ASCII
/// punctuation counts toward bucket `fnv1a64(token) mod dimension`; a bucket
/// with count n > 0 gets weight 1 + ln n, then the vector is normalized.
/// Deterministic and weight-free; intended for offline runs and tests.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    id: String,
    dimension: usize,
    execution: Execution,
}

impl HashEmbedder {
    pub const DEFAULT_DIMENSION: usize = 384;

    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "dimension must be positive");
        Self {
            id: format!("hash-bow-{dimension}"),
            dimension,
            execution: Execution::default(),
        }
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a64(token.to_lowercase().as_bytes()) % self.dimension as u64) as usize
    }

    fn embed_one(&self, text: &str) -> Vec<f32> {
        let mut counts = vec![0u32; self.dimension];
        for token in tokenize(text) {
            if !token.chars().all(|c| c.is_ascii_punctuation()) {
                counts[self.bucket(&token)] += 1;
            }
        }
        let mut v: Vec<f32> = counts
            .into_iter()
            .map(|n| if n == 0 { 0.0 } else { 1.0 + (n as f32).ln() })
            .collect();
        normalize(&mut v);
        v
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIMENSION)
    }
}

impl Embedder for HashEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, EmbedError> {
        Ok(self.execution.map(texts, |t| self.embed_one(t)))
    }
}

/// Embedding endpoint speaking `{"model", "input": [...]}` →
/// `{"data": [{"embedding": [...]}, ...]}`.
pub struct RemoteEmbedder {
    id: String,
    model: String,
    dimension: usize,
    client: JsonClient,
}

impl RemoteEmbedder {
    pub fn new(config: &EndpointConfig, model: &str, dimension: usize) -> Result<Self, EmbedError> {
        config.validate()?;
        Ok(Self {
            id: format!("remote:{model}:{dimension}"),
            model: model.to_string(),
            dimension,
            client: JsonClient::new(config)?,
        })
    }
}

impl Embedder for RemoteEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, EmbedError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let (resp, _) = self.client.post(&json!({ "model": self.model, "input": texts }))?;
        let data = resp
            .get("data")
            .and_then(Json::as_array)
            .ok_or_else(|| EmbedError::Malformed("missing data array".into()))?;
        if data.len() != texts.len() {
            return Err(EmbedError::Malformed(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                data.len()
            )));
        }
        data.iter()
            .map(|item| {
                let mut v: Vec<f32> = item
                    .get("embedding")
                    .and_then(Json::as_array)
                    .ok_or_else(|| EmbedError::Malformed("missing embedding".into()))?
                    .iter()
                    .map(|x| x.as_f64().map(|f| f as f32))
                    .collect::<Option<_>>()
                    .ok_or_else(|| EmbedError::Malformed("non-numeric component".into()))?;
                if v.len() != self.dimension {
                    return Err(EmbedError::Malformed(format!(
                        "expected dimension {}, got {}",
                        self.dimension,
                        v.len()
                    )));
                }
                normalize(&mut v);
                Ok(v)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cosine(a: &[f32], b: &[f32]) -> f32 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn unit_norm_and_determinism() {
        let e = HashEmbedder::default();
        let v = e.embed(&["patient intubated", "patient intubated", "", "a b c a"]).unwrap();
        assert_eq!(v[0], v[1]);
        for x in &v {
            let n = x.iter().map(|c| f64::from(*c).powi(2)).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
        assert!((cosine(&v[0], &v[1]) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn sequential_matches_parallel() {
        let texts: Vec<String> = (0..100).map(|i| format!("token{i} shared words {i}")).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let seq = HashEmbedder::default().with_execution(Execution::Sequential).embed(&refs).unwrap();
        let par = HashEmbedder::default().embed(&refs).unwrap();
        assert_eq!(seq, par);
    }
}
