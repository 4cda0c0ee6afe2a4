use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::testgen::{Modality, TestCase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grade {
    Satisfactory,
    PartiallySatisfactory,
    NotSatisfactory,
}

/// One annotator's judgement of one model's answer. Structured cases carry
/// `content_grade` (and optionally `code_correct`); unstructured cases carry
/// `content_correct`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub case_id: String,
    pub model_id: String,
    pub annotator_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code_correct: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_grade: Option<Grade>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_correct: Option<bool>,
}

/// Parses and validates annotation lines, collecting every problem.
pub fn parse_annotations(text: &str, suite: &[TestCase]) -> Result<Vec<AnnotationRecord>, EvalError> {
    let modality: HashMap<&str, Modality> = suite.iter().map(|c| (c.case_id.as_str(), c.modality)).collect();
    let mut records = Vec::new();
    let mut problems = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: AnnotationRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                problems.push((line_no, e.to_string()));
                continue;
            }
        };
        let Some(&m) = modality.get(rec.case_id.as_str()) else {
            problems.push((line_no, format!("unknown case_id {:?}", rec.case_id)));
            continue;
        };
        let shape = match m {
            Modality::Structured if rec.content_correct.is_some() => {
                Err("content_correct applies to unstructured cases; use content_grade")
            }
            Modality::Structured if rec.content_grade.is_none() => Err("structured case needs content_grade"),
            Modality::Unstructured if rec.content_grade.is_some() || rec.code_correct.is_some() => {
                Err("content_grade and code_correct apply to structured cases only")
            }
            Modality::Unstructured if rec.content_correct.is_none() => Err("unstructured case needs content_correct"),
            _ => Ok(()),
        };
        if let Err(msg) = shape {
            problems.push((line_no, msg.to_string()));
            continue;
        }
        if !seen.insert((rec.case_id.clone(), rec.model_id.clone(), rec.annotator_id.clone())) {
            problems.push((
                line_no,
                format!(
                    "duplicate annotation for case {:?}, model {:?}, annotator {:?}",
                    rec.case_id, rec.model_id, rec.annotator_id
                ),
            ));
            continue;
        }
        records.push(rec);
    }
    if problems.is_empty() {
        Ok(records)
    } else {
        Err(EvalError::Annotations(problems))
    }
}

pub fn ingest_annotations(path: &Path, suite: &[TestCase]) -> Result<Vec<AnnotationRecord>, EvalError> {
    let text = fs::read_to_string(path).map_err(|e| EvalError::Io(path.display().to_string(), e))?;
    parse_annotations(&text, suite)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn suite() -> Vec<TestCase> {
        let case = |id: &str, modality| TestCase {
            case_id: id.into(),
            modality,
            question: "q".into(),
            gold_answer: "a".into(),
            complexity: None,
            source_segment_id: None,
            gold_program_text: None,
        };
        vec![case("S001", Modality::Structured), case("U001", Modality::Unstructured)]
    }

    #[test]
    fn accepts_valid_records() {
        let text = r#"{"case_id":"S001","model_id":"m","annotator_id":"a","code_correct":true,"content_grade":"satisfactory"}
{"case_id":"U001","model_id":"m","annotator_id":"a","content_correct":false}"#;
        let recs = parse_annotations(text, &suite()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].content_grade, Some(Grade::Satisfactory));
    }

    #[test]
    fn reports_every_bad_line() {
        let text = r#"{"case_id":"S001","model_id":"m","annotator_id":"a","content_grade":"maybe"}
{"case_id":"S999","model_id":"m","annotator_id":"a","content_grade":"satisfactory"}
{"case_id":"S001","model_id":"m","annotator_id":"a","content_grade":"satisfactory"}
{"case_id":"S001","model_id":"m","annotator_id":"a","content_grade":"not_satisfactory"}
{"case_id":"U001","model_id":"m","annotator_id":"a","content_grade":"satisfactory"}"#;
        let Err(EvalError::Annotations(problems)) = parse_annotations(text, &suite()) else {
            panic!("expected annotation errors");
        };
        let lines: Vec<usize> = problems.iter().map(|p| p.0).collect();
        assert_eq!(lines, [1, 2, 4, 5]);
        assert!(problems[0].1.contains("partially_satisfactory"));
        assert!(problems[2].1.contains("duplicate"));
    }
}
