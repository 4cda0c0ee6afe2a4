use std::collections::{BTreeMap, HashSet};

use serde::Deserialize;

use super::{Complexity, Modality, SkippedCase, TestCase, TestgenError};
use crate::par::Execution;
use crate::query::{
    execute_program, parse_program, validate_program, ExecutionContext, QueryProgram, Stage, ValidatedProgram,
    ValidationError,
};
use crate::rng::SplitMix64;
use crate::table::{Table, Value};

/// The shipped template set.
pub const DEFAULT_TEMPLATES: &str = include_str!("../../data/structured_templates.toml");

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Slot {
    /// A value drawn from the distinct non-null values of a column.
    Column(String),
    /// `(question text, program text)` pairs.
    Choices(Vec<(String, String)>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub question: String,
    pub program: String,
    pub slots: BTreeMap<String, Slot>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    #[serde(default)]
    template: Vec<RawTemplate>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTemplate {
    question: String,
    program: String,
    #[serde(default)]
    slots: BTreeMap<String, RawSlot>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSlot {
    column: Option<String>,
    choices: Option<Vec<(String, String)>>,
}

fn placeholders(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if after[..close].chars().all(|c| c.is_ascii_alphanumeric() || c == '_') && close > 0 => {
                out.push(&after[..close]);
                rest = &after[close + 1..];
            }
            _ => rest = after,
        }
    }
    out
}

/// Parses a TOML template file and checks that every placeholder has a slot.
pub fn parse_templates(text: &str) -> Result<Vec<Template>, TestgenError> {
    let raw: RawFile = toml::from_str(text).map_err(|e| TestgenError::Template {
        index: 0,
        message: e.to_string(),
    })?;
    raw.template
        .into_iter()
        .enumerate()
        .map(|(i, t)| {
            let index = i + 1;
            let err = |message: String| TestgenError::Template { index, message };
            let mut slots = BTreeMap::new();
            for (name, s) in t.slots {
                let slot = match (s.column, s.choices) {
                    (Some(c), None) => Slot::Column(c),
                    (None, Some(ch)) if !ch.is_empty() => Slot::Choices(ch),
                    _ => return Err(err(format!("slot {name:?} needs exactly one of column or non-empty choices"))),
                };
                slots.insert(name, slot);
            }
            for p in placeholders(&t.question).into_iter().chain(placeholders(&t.program)) {
                if !slots.contains_key(p) {
                    return Err(err(format!("placeholder {{{p}}} has no slot")));
                }
            }
            Ok(Template {
                question: t.question,
                program: t.program,
                slots,
            })
        })
        .collect()
}

pub fn complexity_of(program: &QueryProgram) -> Complexity {
    Complexity {
        preprocessing_required: program.stages().iter().any(|s| matches!(s, Stage::Derive { .. })),
        aggregation: program.stages().iter().find_map(|s| match s {
            Stage::Aggregate { function, .. } => Some(function.keyword().to_string()),
            _ => None,
        }),
        operation_count: program.operation_count(),
    }
}

fn program_text(v: &Value) -> String {
    match v {
        Value::Str(s) => s.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', "\\n").replace('\t', "\\t"),
        Value::Bool(true) => "TRUE".into(),
        Value::Bool(false) => "FALSE".into(),
        Value::Float(f) => format!("{f:?}"),
        other => other.to_csv_cell(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StructuredSuite {
    pub cases: Vec<TestCase>,
    pub skipped: Vec<SkippedCase>,
}

struct Candidate {
    question: String,
    program: ValidatedProgram,
}

/// Instantiates templates round-robin until `n` distinct questions have gold
/// answers. Gold answers come from executing the gold program.
pub fn generate_structured_suite(
    table: &Table,
    ctx: &ExecutionContext,
    templates: &[Template],
    seed: u64,
    n: usize,
    execution: Execution,
) -> Result<StructuredSuite, TestgenError> {
    if templates.is_empty() && n > 0 {
        return Err(TestgenError::Insufficient { requested: n, produced: 0 });
    }
    let mut pools: BTreeMap<&str, Vec<Value>> = BTreeMap::new();
    for (i, t) in templates.iter().enumerate() {
        for slot in t.slots.values() {
            let Slot::Column(col) = slot else { continue };
            if pools.contains_key(col.as_str()) {
                continue;
            }
            let values = table.column(col).ok_or_else(|| TestgenError::UnknownColumn {
                index: i + 1,
                column: col.clone(),
            })?;
            let mut distinct: Vec<Value> = values.filter(|v| !v.is_null()).cloned().collect();
            distinct.sort_by(|a, b| a.total_cmp(b).then_with(|| a.to_csv_cell().cmp(&b.to_csv_cell())));
            distinct.dedup_by(|a, b| a.to_csv_cell() == b.to_csv_cell());
            if distinct.is_empty() {
                return Err(TestgenError::Template {
                    index: i + 1,
                    message: format!("column {col:?} has no values to sample"),
                });
            }
            pools.insert(col, distinct);
        }
    }

    let mut rng = SplitMix64::new(seed);
    let mut seen = HashSet::new();
    let mut suite = StructuredSuite::default();
    let max_draws = 64 * n + templates.len();
    let mut draws = 0;
    while suite.cases.len() < n && draws < max_draws {
        let mut batch = Vec::new();
        while batch.len() < n - suite.cases.len() && draws < max_draws {
            let index = draws % templates.len();
            let t = &templates[index];
            draws += 1;
            let mut question = t.question.clone();
            let mut program = t.program.clone();
            for (name, slot) in &t.slots {
                let (q, p) = match slot {
                    Slot::Column(col) => {
                        let pool = &pools[col.as_str()];
                        let v = &pool[rng.below(pool.len() as u64) as usize];
                        (v.render(), program_text(v))
                    }
                    Slot::Choices(ch) => ch[rng.below(ch.len() as u64) as usize].clone(),
                };
                let key = format!("{{{name}}}");
                question = question.replace(&key, &q);
                program = program.replace(&key, &p);
            }
            if !seen.insert(question.clone()) {
                continue;
            }
            let parsed = parse_program(&program).map_err(|e| TestgenError::Template {
                index: index + 1,
                message: format!("gold program {program:?}: {e}"),
            })?;
            let validated = validate_program(&parsed, table.schema()).map_err(|e| match e {
                ValidationError::UnknownColumn { column, .. } => TestgenError::UnknownColumn {
                    index: index + 1,
                    column,
                },
                other => TestgenError::Template {
                    index: index + 1,
                    message: format!("gold program {program:?}: {other}"),
                },
            })?;
            batch.push(Candidate {
                question,
                program: validated,
            });
        }
        let results = execution.map(&batch, |c| execute_program(&c.program, table, ctx));
        for (c, result) in batch.into_iter().zip(results) {
            let text = c.program.program().to_string();
            match result {
                Ok(r) => suite.cases.push(TestCase {
                    case_id: format!("S{:03}", suite.cases.len() + 1),
                    modality: Modality::Structured,
                    question: c.question,
                    gold_answer: r.render(),
                    complexity: Some(complexity_of(c.program.program())),
                    source_segment_id: None,
                    gold_program_text: Some(text),
                }),
                Err(e) => suite.skipped.push(SkippedCase {
                    source: format!("{}  [{}]", c.question, text),
                    reason: e.to_string(),
                }),
            }
        }
    }
    if suite.cases.len() < n {
        return Err(TestgenError::Insufficient {
            requested: n,
            produced: suite.cases.len(),
        });
    }
    Ok(suite)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::run_query;
    use crate::table::{ColumnKind, Schema};
    use chrono::NaiveDate;

    fn table() -> Table {
        let schema = Schema::from_pairs([
            ("SUBJECT_ID", ColumnKind::Integer),
            ("GENDER", ColumnKind::String),
            ("DRUG", ColumnKind::String),
            ("DOB_Demo", ColumnKind::Date),
        ])
        .unwrap();
        let rows = (0..12)
            .map(|i| {
                vec![
                    Value::Int(i),
                    Value::Str(if i % 3 == 0 { "M" } else { "F" }.into()),
                    Value::Str(["Heparin", "Aspirin \"EC\"", "Insulin"][i as usize % 3].into()),
                    Value::Date(NaiveDate::from_ymd_opt(1940 + i as i32 * 3, 5, 1).unwrap()),
                ]
            })
            .collect();
        Table::new(schema, rows).unwrap()
    }

    #[test]
    fn default_templates_parse() {
        let t = parse_templates(DEFAULT_TEMPLATES).unwrap();
        assert!(t.len() >= 20);
        assert_eq!(t[0].question, "What is the median age?");
        assert_eq!(t[1].question, "What is the median age of female subjects?");
    }

    #[test]
    fn placeholder_without_slot_is_rejected() {
        let err = parse_templates("[[template]]\nquestion = \"{x}\"\nprogram = \"AGGREGATE COUNT(*)\"").unwrap_err();
        assert!(matches!(err, TestgenError::Template { index: 1, .. }));
    }

    #[test]
    fn gold_answers_reexecute_and_escape_strings() {
        let templates = parse_templates(
            r#"
[[template]]
question = "What is the median age?"
program = "DERIVE AGE = YEARS_BETWEEN(DOB_Demo, @ref) | AGGREGATE MEDIAN(AGE)"

[[template]]
question = "How many rows are for {drug}?"
program = 'FILTER DRUG == "{drug}" | AGGREGATE COUNT(*)'
slots.drug = { column = "DRUG" }
"#,
        )
        .unwrap();
        let ctx = ExecutionContext::default();
        let suite = generate_structured_suite(&table(), &ctx, &templates, 1, 4, Execution::Parallel).unwrap();
        assert_eq!(suite.cases.len(), 4);
        let ids: Vec<&str> = suite.cases.iter().map(|c| c.case_id.as_str()).collect();
        assert_eq!(ids, ["S001", "S002", "S003", "S004"]);
        for c in &suite.cases {
            let again = run_query(c.gold_program_text.as_deref().unwrap(), &table(), &ctx).unwrap();
            assert_eq!(again.render(), c.gold_answer);
        }
        let c = complexity_of(&parse_program(suite.cases[0].gold_program_text.as_deref().unwrap()).unwrap());
        assert_eq!(c.operation_count, 2);
        assert!(c.preprocessing_required);
        assert_eq!(c.aggregation.as_deref(), Some("MEDIAN"));
        assert!(suite.cases.iter().any(|c| c.question.contains("Aspirin \"EC\"")));
    }

    #[test]
    fn unknown_slot_column_is_an_error() {
        let templates = parse_templates(
            "[[template]]\nquestion = \"{x}\"\nprogram = \"AGGREGATE COUNT(*)\"\nslots.x = { column = \"NOPE\" }",
        )
        .unwrap();
        let err = generate_structured_suite(&table(), &ExecutionContext::default(), &templates, 1, 1, Execution::Sequential)
            .unwrap_err();
        assert!(matches!(err, TestgenError::UnknownColumn { column, .. } if column == "NOPE"));
    }

    #[test]
    fn too_few_distinct_questions() {
        let templates = parse_templates("[[template]]\nquestion = \"q\"\nprogram = \"AGGREGATE COUNT(*)\"").unwrap();
        let err = generate_structured_suite(&table(), &ExecutionContext::default(), &templates, 1, 2, Execution::Sequential)
            .unwrap_err();
        assert!(matches!(err, TestgenError::Insufficient { requested: 2, produced: 1 }));
    }
}
