//! Typed in-memory tables and the clinical cohort assembly steps.

mod cohort;
mod csv_io;
mod value;

pub use cohort::{
    join_cohort, left_join, project_columns, sample_cohort, synthesize_dob, CohortConfig,
    JOIN_KEY_ICD9, JOIN_KEY_SUBJECT,
};
pub use csv_io::{
    load_csv, read_csv, read_schema_sidecar, write_csv, write_schema_sidecar, CsvLoad,
};
pub use value::{parse_date, ColumnKind, ColumnSpec, Schema, Table, Value};

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error at line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("ragged row at line {line}: expected {expected} fields, found {found}")]
    RaggedRow {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("header does not match schema hint: {0}")]
    HintMismatch(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("row {row}: {message}")]
    InvalidRow { row: usize, message: String },
    #[error("missing column {column:?} in {table}")]
    MissingColumn { table: String, column: String },
    #[error("unknown column(s): {}", .0.join(", "))]
    UnknownColumns(Vec<String>),
    #[error("duplicate {column} value {value} at row {row}")]
    DuplicateKey {
        column: String,
        value: String,
        row: usize,
    },
    #[error("column {0:?} already exists")]
    ColumnCollision(String),
    #[error("invalid cohort config: {0}")]
    InvalidConfig(String),
    #[error("table is empty")]
    EmptyTable,
}
