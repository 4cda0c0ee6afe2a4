//! A closed, whitelisted query language for tabular data.
//!
//! Programs are pipelines of stages separated by `|`:
//!
//! ```text
//! FILTER GENDER == "F" | DERIVE AGE = YEARS_BETWEEN(DOB_Demo, @ref) | AGGREGATE MEDIAN(AGE)
//! ```
//!
//! Text is parsed into a [`QueryProgram`], resolved against a schema by
//! [`validate_program`], and only a [`ValidatedProgram`] can be run by
//! [`execute_program`]. The full grammar lives in `docs/query-language.md`.

mod ast;
mod exec;
mod parser;
mod validate;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

pub use ast::{
    operation_count, AggFunc, AggTarget, ArithOp, Comparator, DateRef, Expr, Literal,
    QueryProgram, SortDirection, Stage, MAX_STAGES,
};
pub use exec::{execute_program, years_between, ExecError, NegativeAgeError};
pub use parser::{parse_program, ParseError, MAX_PROGRAM_BYTES};
pub use validate::{validate_program, ValidatedProgram, ValidationError};

use crate::table::{Table, Value};

/// Compact grammar reference embedded in the agent's system prompt.
pub const GRAMMAR_SUMMARY: &str = r#"program   := stage ( "|" stage )*
stage     := FILTER column cmp literal
           | DERIVE name "=" expr
           | GROUP BY column ( "," column )*      -- must be followed by AGGREGATE
           | AGGREGATE func "(" ( column | "*" ) ")"
           | SELECT column ( "," column )*
           | SORT column [ ASC | DESC ]
           | LIMIT integer
cmp       := "==" | "!=" | "<" | "<=" | ">" | ">=" | CONTAINS
func      := COUNT | SUM | MEAN | MEDIAN | MIN | MAX | COUNT_DISTINCT   -- only COUNT accepts "*"
expr      := term ( ( "+" | "-" ) term )*
term      := factor ( ( "*" | "/" ) factor )*
factor    := number | column | "(" expr ")" | YEARS_BETWEEN "(" column "," ( @ref | DATE "YYYY-MM-DD" ) ")"
literal   := number | "string" | DATE "YYYY-MM-DD" | TRUE | FALSE
Rules: after AGGREGATE only SORT/LIMIT may follow (and nothing after an ungrouped AGGREGATE).
The aggregate output column is named after the function (e.g. COUNT, MEDIAN).
@ref is the dataset snapshot date. == and != on strings are case-sensitive; CONTAINS is case-insensitive.
Rows with a null tested value are dropped by FILTER; aggregates skip nulls."#;

/// Per-run execution settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionContext {
    /// Anchor for `YEARS_BETWEEN(..., @ref)`.
    pub reference_date: NaiveDate,
}

impl Default for ExecutionContext {
    fn default() -> Self {
        Self {
            reference_date: NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date"),
        }
    }
}

/// Either a scalar (ungrouped aggregate) or a table.
#[derive(Debug, Clone, PartialEq)]
pub enum QueryResult {
    Scalar(Value),
    Table(Table),
}

impl QueryResult {
    /// Canonical text form. Scalars use [`Value::render`]; tables render as a
    /// header line followed by one line per row, cells joined by `", "`.
    pub fn render(&self) -> String {
        match self {
            QueryResult::Scalar(v) => v.render(),
            QueryResult::Table(t) => {
                let mut lines = vec![t.schema().names().collect::<Vec<_>>().join(", ")];
                lines.extend(
                    t.rows()
                        .iter()
                        .map(|r| r.iter().map(Value::render).collect::<Vec<_>>().join(", ")),
                );
                lines.join("\n")
            }
        }
    }
}

/// Errors from the parse → validate → execute chain.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QueryError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error(transparent)]
    Execution(#[from] ExecError),
}

/// Parses, validates and executes `text` in one call.
pub fn run_query(text: &str, table: &Table, ctx: &ExecutionContext) -> Result<QueryResult, QueryError> {
    let program = parse_program(text)?;
    let validated = validate_program(&program, table.schema())?;
    Ok(execute_program(&validated, table, ctx)?)
}
