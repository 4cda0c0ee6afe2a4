//! Scoring of run records and report aggregation.

mod annotations;
mod metrics;
mod report;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::Failure;
use crate::fsutil::write_atomic;
use crate::testgen::Modality;

pub use annotations::{ingest_annotations, parse_annotations, AnnotationRecord, Grade};
pub use metrics::{canonicalize, exact_match, exact_match_with, lcs_len, rouge_l, rouge_n, MatchMode, RougeScore};
pub use report::{aggregate_report, aggregate_report_with, EvalReport, GradeDistribution, StructuredRow, UnstructuredRow};

/// One model's answer to one test case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub case_id: String,
    pub modality: Modality,
    pub model_id: String,
    pub question: String,
    pub gold_answer: String,
    pub final_answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub program_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_result: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<Failure>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attempts: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieved_chunk_ids: Option<Vec<usize>>,
    /// Date `@ref` resolved to during the run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_date: Option<chrono::NaiveDate>,
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("run contains no records")]
    EmptyRun,
    #[error("duplicate record for model {model_id:?}, case {case_id:?}")]
    DuplicateRecord { model_id: String, case_id: String },
    #[error("invalid annotations:{}", .0.iter().map(|(l, m)| format!("\n  line {l}: {m}")).collect::<String>())]
    Annotations(Vec<(usize, String)>),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("malformed record file: {0}")]
    Format(String),
}

pub fn save_records(records: &[RunRecord], path: &Path) -> Result<(), EvalError> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).map_err(|e| EvalError::Format(e.to_string()))?);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes()).map_err(|e| EvalError::Io(path.display().to_string(), e))
}

pub fn load_records(path: &Path) -> Result<Vec<RunRecord>, EvalError> {
    let text = fs::read_to_string(path).map_err(|e| EvalError::Io(path.display().to_string(), e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| EvalError::Format(format!("line {}: {e}", i + 1))))
        .collect()
}
