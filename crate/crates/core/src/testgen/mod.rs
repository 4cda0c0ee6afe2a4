//! Structured and unstructured evaluation suites.

mod segment;
mod templates;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::fsutil::write_atomic;

pub use segment::{
    equal_segments, generate_unstructured_suite, segment_document, segments_from_cuts, Segment, Segmentation,
    UnstructuredSuite, CURATED_QUESTIONS, QA_SYSTEM_PROMPT, SEGMENTER_SYSTEM_PROMPT,
};
pub use templates::{
    complexity_of, generate_structured_suite, parse_templates, Slot, StructuredSuite, Template,
    DEFAULT_TEMPLATES,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Structured,
    Unstructured,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Structured => "structured",
            Modality::Unstructured => "unstructured",
        }
    }
}

impl std::str::FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "structured" => Ok(Modality::Structured),
            "unstructured" => Ok(Modality::Unstructured),
            other => Err(format!("unknown modality {other:?} (expected structured or unstructured)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Complexity {
    pub preprocessing_required: bool,
    /// Aggregate keyword such as `MEDIAN`.
    pub aggregation: Option<String>,
    pub operation_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub case_id: String,
    pub modality: Modality,
    pub question: String,
    pub gold_answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub complexity: Option<Complexity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_segment_id: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_program_text: Option<String>,
}

/// A candidate dropped during generation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedCase {
    pub source: String,
    pub reason: String,
}

#[derive(Debug, thiserror::Error)]
pub enum TestgenError {
    #[error("template {index}: {message}")]
    Template { index: usize, message: String },
    #[error("template {index} references column {column:?}, which is not in the table")]
    UnknownColumn { index: usize, column: String },
    #[error("only {produced} of {requested} cases could be generated")]
    Insufficient { requested: usize, produced: usize },
    #[error("document has {tokens} tokens, fewer than the {segments} segments requested")]
    DocumentTooShort { tokens: usize, segments: usize },
    #[error("segmentation: {0}")]
    Segmentation(String),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("malformed suite file: {0}")]
    Format(String),
}

pub fn save_suite(cases: &[TestCase], path: &Path) -> Result<(), TestgenError> {
    let mut out = String::new();
    for c in cases {
        out.push_str(&serde_json::to_string(c).map_err(|e| TestgenError::Format(e.to_string()))?);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes()).map_err(|e| TestgenError::Io(path.display().to_string(), e))
}

pub fn load_suite(path: &Path) -> Result<Vec<TestCase>, TestgenError> {
    let text = fs::read_to_string(path).map_err(|e| TestgenError::Io(path.display().to_string(), e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| TestgenError::Format(format!("line {}: {e}", i + 1))))
        .collect()
}
