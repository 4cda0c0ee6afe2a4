//! RFC-4180 CSV reading and writing plus the `name,kind` schema sidecar.
//!
//! Empty cells are null for every column kind.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use super::value::{ColumnKind, ColumnSpec, Schema, Table, Value};
use super::TableError;
use crate::fsutil::write_atomic;

/// Result of reading a CSV source.
#[derive(Debug, Clone)]
pub struct CsvLoad {
    pub table: Table,
    /// Cells that did not parse under a hinted kind and were nulled.
    pub unparseable_cells: usize,
}

pub fn load_csv(path: &Path, schema_hint: Option<&Schema>) -> Result<Table, TableError> {
    if !path.exists() {
        return Err(TableError::MissingFile(path.to_path_buf()));
    }
    let file = File::open(path).map_err(|source| TableError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let load = read_csv(file, schema_hint)?;
    if load.unparseable_cells > 0 {
        log::warn!(
            "{}: {} unparseable cell(s) replaced by null",
            path.display(),
            load.unparseable_cells
        );
    }
    Ok(load.table)
}

pub fn read_csv<R: Read>(reader: R, schema_hint: Option<&Schema>) -> Result<CsvLoad, TableError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(csv_error)?
        .iter()
        .map(|h| h.trim_start_matches('\u{feff}').to_string())
        .collect();

    if let Some(hint) = schema_hint {
        let hinted: Vec<&str> = hint.names().collect();
        if hinted != header.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(TableError::HintMismatch(format!(
                "header [{}] vs hint [{}]",
                header.join(","),
                hinted.join(",")
            )));
        }
    }

    let mut raw_rows: Vec<Vec<String>> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        if record.len() != header.len() {
            return Err(TableError::RaggedRow {
                line: record.position().map_or(0, |p| p.line()),
                expected: header.len(),
                found: record.len(),
            });
        }
        raw_rows.push(record.iter().map(str::to_string).collect());
    }

    let schema = match schema_hint {
        Some(hint) => hint.clone(),
        None => Schema::new(
            header
                .iter()
                .enumerate()
                .map(|(i, name)| ColumnSpec {
                    name: name.clone(),
                    kind: infer_kind(raw_rows.iter().map(|r| r[i].as_str())),
                })
                .collect(),
        )?,
    };

    let mut unparseable = 0;
    let rows = raw_rows
        .iter()
        .map(|raw| {
            raw.iter()
                .zip(schema.columns())
                .map(|(cell, col)| {
                    col.kind.parse_cell(cell).unwrap_or_else(|| {
                        unparseable += 1;
                        Value::Null
                    })
                })
                .collect()
        })
        .collect();
    Ok(CsvLoad {
        table: Table::from_parts_unchecked(schema, rows),
        unparseable_cells: unparseable,
    })
}

/// A column takes the first kind in integer, float, date, boolean order that
/// parses every non-empty cell; otherwise string.
fn infer_kind<'a>(cells: impl Iterator<Item = &'a str> + Clone) -> ColumnKind {
    let mut non_empty = cells.filter(|c| !c.is_empty()).peekable();
    if non_empty.peek().is_none() {
        return ColumnKind::String;
    }
    [
        ColumnKind::Integer,
        ColumnKind::Float,
        ColumnKind::Date,
        ColumnKind::Boolean,
    ]
    .into_iter()
    .find(|kind| non_empty.clone().all(|c| kind.parse_cell(c).is_some()))
    .unwrap_or(ColumnKind::String)
}

fn csv_error(err: csv::Error) -> TableError {
    let line = err.position().map_or(0, |p| p.line());
    TableError::Csv {
        line,
        message: err.to_string(),
    }
}

pub fn write_csv(table: &Table, path: &Path) -> Result<(), TableError> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let io_err = |e: csv::Error| TableError::Csv {
        line: 0,
        message: e.to_string(),
    };
    wtr.write_record(table.schema().names()).map_err(io_err)?;
    for row in table.rows() {
        wtr.write_record(row.iter().map(Value::to_csv_cell))
            .map_err(io_err)?;
    }
    let bytes = wtr.into_inner().map_err(|e| TableError::Csv {
        line: 0,
        message: e.to_string(),
    })?;
    write_atomic(path, &bytes).map_err(|source| TableError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_schema_sidecar(schema: &Schema, path: &Path) -> Result<(), TableError> {
    let mut out = String::new();
    for col in schema.columns() {
        out.push_str(&col.name);
        out.push(',');
        out.push_str(col.kind.as_str());
        out.push('\n');
    }
    write_atomic(path, out.as_bytes()).map_err(|source| TableError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_schema_sidecar(path: &Path) -> Result<Schema, TableError> {
    let file = File::open(path).map_err(|source| TableError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut columns = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| TableError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let (name, kind) = line.rsplit_once(',').ok_or_else(|| {
            TableError::InvalidSchema(format!("line {}: expected name,kind", i + 1))
        })?;
        let kind = kind
            .parse()
            .map_err(|e| TableError::InvalidSchema(format!("line {}: {e}", i + 1)))?;
        columns.push(ColumnSpec {
            name: name.to_string(),
            kind,
        });
    }
    Schema::new(columns)
}
