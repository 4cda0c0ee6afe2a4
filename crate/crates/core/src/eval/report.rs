use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::annotations::{AnnotationRecord, Grade};
use super::metrics::{exact_match_with, rouge_l, rouge_n, MatchMode, RougeScore};
use super::{EvalError, RunRecord};
use crate::par::Execution;
use crate::testgen::Modality;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradeDistribution {
    pub satisfactory_pct: f64,
    pub partially_satisfactory_pct: f64,
    pub not_satisfactory_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredRow {
    pub model_id: String,
    pub cases: usize,
    pub exact_matches: usize,
    pub exact_match_pct: f64,
    /// Annotation records counted for this model.
    pub annotated: usize,
    pub code_correct_pct: Option<f64>,
    pub grades: Option<GradeDistribution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnstructuredRow {
    pub model_id: String,
    pub cases: usize,
    pub annotated: usize,
    pub content_correct_pct: Option<f64>,
    pub rouge_1: RougeScore,
    pub rouge_2: RougeScore,
    pub rouge_l: RougeScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub match_mode: MatchMode,
    pub structured: Vec<StructuredRow>,
    pub unstructured: Vec<UnstructuredRow>,
}

fn pct(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

fn mean_score(scores: &[RougeScore]) -> RougeScore {
    if scores.is_empty() {
        return RougeScore::default();
    }
    let n = scores.len() as f64;
    RougeScore {
        precision: scores.iter().map(|s| s.precision).sum::<f64>() / n,
        recall: scores.iter().map(|s| s.recall).sum::<f64>() / n,
        f1: scores.iter().map(|s| s.f1).sum::<f64>() / n,
    }
}

enum Scored {
    Structured { exact: bool },
    Unstructured { r1: RougeScore, r2: RougeScore, rl: RougeScore },
}

pub fn aggregate_report(records: &[RunRecord], annotations: &[AnnotationRecord]) -> Result<EvalReport, EvalError> {
    aggregate_report_with(records, annotations, MatchMode::Canonical, Execution::default())
}

/// Per-model aggregation. A failed case scores as a non-match. Annotations
/// count only when their (model, case) pair is in `records`.
pub fn aggregate_report_with(
    records: &[RunRecord],
    annotations: &[AnnotationRecord],
    mode: MatchMode,
    execution: Execution,
) -> Result<EvalReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyRun);
    }
    let mut sorted: Vec<&RunRecord> = records.iter().collect();
    sorted.sort_by(|a, b| (&a.model_id, &a.case_id).cmp(&(&b.model_id, &b.case_id)));
    for w in sorted.windows(2) {
        if (&w[0].model_id, &w[0].case_id) == (&w[1].model_id, &w[1].case_id) {
            return Err(EvalError::DuplicateRecord {
                model_id: w[0].model_id.clone(),
                case_id: w[0].case_id.clone(),
            });
        }
    }
    let scored = execution.map(&sorted, |r| match r.modality {
        Modality::Structured => Scored::Structured {
            exact: r.failure.is_none() && exact_match_with(&r.gold_answer, &r.final_answer, mode),
        },
        Modality::Unstructured => Scored::Unstructured {
            r1: rouge_n(&r.final_answer, &r.gold_answer, 1),
            r2: rouge_n(&r.final_answer, &r.gold_answer, 2),
            rl: rouge_l(&r.final_answer, &r.gold_answer),
        },
    });

    let present: HashSet<(&str, &str, Modality)> = sorted
        .iter()
        .map(|r| (r.model_id.as_str(), r.case_id.as_str(), r.modality))
        .collect();
    let mut sorted_ann: Vec<&AnnotationRecord> = annotations.iter().collect();
    sorted_ann.sort_by(|a, b| {
        (&a.model_id, &a.case_id, &a.annotator_id).cmp(&(&b.model_id, &b.case_id, &b.annotator_id))
    });

    #[derive(Default)]
    struct Acc {
        cases: usize,
        exact: usize,
        rouge: Vec<(RougeScore, RougeScore, RougeScore)>,
        annotated: usize,
        code: (usize, usize),
        grades: [usize; 3],
        graded: usize,
        content: (usize, usize),
    }
    let mut acc: BTreeMap<(Modality, &str), Acc> = BTreeMap::new();
    for (r, s) in sorted.iter().zip(&scored) {
        let a = acc.entry((r.modality, r.model_id.as_str())).or_default();
        a.cases += 1;
        match s {
            Scored::Structured { exact } => a.exact += usize::from(*exact),
            Scored::Unstructured { r1, r2, rl } => a.rouge.push((*r1, *r2, *rl)),
        }
    }
    for ann in sorted_ann {
        let modality = if ann.content_correct.is_some() {
            Modality::Unstructured
        } else {
            Modality::Structured
        };
        if !present.contains(&(ann.model_id.as_str(), ann.case_id.as_str(), modality)) {
            continue;
        }
        let Some(a) = acc.get_mut(&(modality, ann.model_id.as_str())) else {
            continue;
        };
        a.annotated += 1;
        if let Some(c) = ann.code_correct {
            a.code.0 += usize::from(c);
            a.code.1 += 1;
        }
        if let Some(g) = ann.content_grade {
            a.graded += 1;
            a.grades[match g {
                Grade::Satisfactory => 0,
                Grade::PartiallySatisfactory => 1,
                Grade::NotSatisfactory => 2,
            }] += 1;
        }
        if let Some(c) = ann.content_correct {
            a.content.0 += usize::from(c);
            a.content.1 += 1;
        }
    }

    let mut report = EvalReport {
        match_mode: mode,
        structured: Vec::new(),
        unstructured: Vec::new(),
    };
    for ((modality, model), a) in acc {
        match modality {
            Modality::Structured => report.structured.push(StructuredRow {
                model_id: model.to_string(),
                cases: a.cases,
                exact_matches: a.exact,
                exact_match_pct: pct(a.exact, a.cases).unwrap_or(0.0),
                annotated: a.annotated,
                code_correct_pct: pct(a.code.0, a.code.1),
                grades: (a.graded > 0).then(|| GradeDistribution {
                    satisfactory_pct: pct(a.grades[0], a.graded).unwrap_or(0.0),
                    partially_satisfactory_pct: pct(a.grades[1], a.graded).unwrap_or(0.0),
                    not_satisfactory_pct: pct(a.grades[2], a.graded).unwrap_or(0.0),
                }),
            }),
            Modality::Unstructured => {
                let pick = |f: fn(&(RougeScore, RougeScore, RougeScore)) -> RougeScore| {
                    mean_score(&a.rouge.iter().map(f).collect::<Vec<_>>())
                };
                report.unstructured.push(UnstructuredRow {
                    model_id: model.to_string(),
                    cases: a.cases,
                    annotated: a.annotated,
                    content_correct_pct: pct(a.content.0, a.content.1),
                    rouge_1: pick(|t| t.0),
                    rouge_2: pick(|t| t.1),
                    rouge_l: pick(|t| t.2),
                })
            }
        }
    }
    Ok(report)
}

const NA: &str = "n/a";

fn fmt_pct(v: Option<f64>) -> String {
    v.map_or_else(|| NA.to_string(), |p| format!("{}%", p.round() as i64))
}

fn fmt_score(v: f64) -> String {
    format!("{:.2}", (v * 100.0).round() / 100.0)
}

fn render_fixed(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, s)| format!("{s:<w$}", w = widths[c]))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

impl EvalReport {
    fn structured_rows(&self) -> Vec<Vec<String>> {
        let mut rows = vec![
            [
                "Model",
                "% of Exact Match Outputs",
                "Code Correctness",
                "Content correct of matches",
                "",
                "",
            ]
            .map(String::from)
            .to_vec(),
            ["", "", "", "Satisfactory", "Partially Satisfactory", "Not Satisfactory"]
                .map(String::from)
                .to_vec(),
        ];
        for r in &self.structured {
            let g = r.grades;
            rows.push(vec![
                r.model_id.clone(),
                fmt_pct(Some(r.exact_match_pct)),
                fmt_pct(r.code_correct_pct),
                fmt_pct(g.map(|g| g.satisfactory_pct)),
                fmt_pct(g.map(|g| g.partially_satisfactory_pct)),
                fmt_pct(g.map(|g| g.not_satisfactory_pct)),
            ]);
        }
        rows
    }

    fn unstructured_rows(&self) -> Vec<Vec<String>> {
        let mut head = vec!["Model".to_string(), "% of content correct of matches".to_string()];
        for group in ["Precision", "Recall", "F1 Score"] {
            head.extend([group.to_string(), String::new(), String::new()]);
        }
        let mut sub = vec![String::new(), String::new()];
        for _ in 0..3 {
            sub.extend(["R1", "R2", "RL"].map(String::from));
        }
        let mut rows = vec![head, sub];
        for r in &self.unstructured {
            let mut row = vec![r.model_id.clone(), fmt_pct(r.content_correct_pct)];
            let s = [r.rouge_1, r.rouge_2, r.rouge_l];
            row.extend(s.iter().map(|x| fmt_score(x.precision)));
            row.extend(s.iter().map(|x| fmt_score(x.recall)));
            row.extend(s.iter().map(|x| fmt_score(x.f1)));
            rows.push(row);
        }
        rows
    }

    /// Fixed-width tables; sections without rows are omitted.
    pub fn to_text(&self) -> String {
        let mut parts = Vec::new();
        if !self.structured.is_empty() {
            parts.push(format!("Structured data: NL to query program\n\n{}", render_fixed(&self.structured_rows())));
        }
        if !self.unstructured.is_empty() {
            parts.push(format!("Unstructured data: RAG\n\n{}", render_fixed(&self.unstructured_rows())));
        }
        parts.join("\n")
    }

    pub fn to_tsv(&self) -> String {
        let mut parts = Vec::new();
        for (name, rows, present) in [
            ("structured", self.structured_rows(), !self.structured.is_empty()),
            ("unstructured", self.unstructured_rows(), !self.unstructured.is_empty()),
        ] {
            if present {
                let mut s = format!("# {name}\n");
                for r in rows {
                    s.push_str(&r.join("\t"));
                    s.push('\n');
                }
                parts.push(s);
            }
        }
        parts.join("\n")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable") + "\n"
    }
}
