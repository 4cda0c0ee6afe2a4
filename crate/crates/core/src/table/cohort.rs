//! Cohort sampling, synthetic birth dates and the left-join chain.

use std::collections::{HashMap, HashSet};

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use super::value::{ColumnKind, ColumnSpec, Schema, Table, Value};
use super::TableError;
use crate::rng::SplitMix64;

pub const JOIN_KEY_SUBJECT: &str = "SUBJECT_ID";
pub const JOIN_KEY_ICD9: &str = "ICD9_CODE";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortConfig {
    pub n_patients: usize,
    pub seed: u64,
    pub dob_start: NaiveDate,
    pub dob_end: NaiveDate,
    pub dob_column_name: String,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            n_patients: 101,
            seed: 42,
            dob_start: NaiveDate::from_ymd_opt(1930, 1, 1).expect("valid date"),
            dob_end: NaiveDate::from_ymd_opt(2000, 12, 31).expect("valid date"),
            dob_column_name: "DOB_Demo".to_string(),
        }
    }
}

impl CohortConfig {
    pub fn validate(&self) -> Result<(), TableError> {
        if self.n_patients == 0 {
            return Err(TableError::InvalidConfig("n_patients must be at least 1".into()));
        }
        if self.dob_start > self.dob_end {
            return Err(TableError::InvalidConfig(format!(
                "inverted DOB range {} > {}",
                self.dob_start, self.dob_end
            )));
        }
        if self.dob_column_name.is_empty() {
            return Err(TableError::InvalidConfig("empty DOB column name".into()));
        }
        Ok(())
    }
}

/// Seeded uniform sample of patients without replacement. Selected rows keep
/// their original relative order.
pub fn sample_cohort(patients: &Table, cfg: &CohortConfig) -> Result<Table, TableError> {
    cfg.validate()?;
    let key = patients
        .schema()
        .index_of(JOIN_KEY_SUBJECT)
        .ok_or_else(|| TableError::MissingColumn {
            table: "patients".into(),
            column: JOIN_KEY_SUBJECT.into(),
        })?;
    let mut seen = HashSet::new();
    for (row_idx, row) in patients.rows().iter().enumerate() {
        let cell = row[key].to_csv_cell();
        if !seen.insert(cell.clone()) {
            return Err(TableError::DuplicateKey {
                column: JOIN_KEY_SUBJECT.into(),
                value: cell,
                row: row_idx,
            });
        }
    }
    let n = patients.num_rows();
    if cfg.n_patients >= n {
        return Ok(patients.clone());
    }
    let mut rng = SplitMix64::new(cfg.seed);
    let picked = rng.sample_indices(n, cfg.n_patients);
    let rows = picked.iter().map(|&i| patients.rows()[i].clone()).collect();
    Ok(Table::from_parts_unchecked(patients.schema().clone(), rows))
}

/// Appends a date column drawn uniformly (inclusive) from the configured
/// range. The generator is reseeded from `cfg.seed` on every call.
pub fn synthesize_dob(table: &Table, cfg: &CohortConfig) -> Result<Table, TableError> {
    cfg.validate()?;
    if table.num_rows() == 0 {
        return Err(TableError::EmptyTable);
    }
    if table.schema().index_of(&cfg.dob_column_name).is_some() {
        return Err(TableError::ColumnCollision(cfg.dob_column_name.clone()));
    }
    let span = (cfg.dob_end - cfg.dob_start).num_days() as u64 + 1;
    // Stream separated from the cohort sampler so both can share one seed.
    let mut rng = SplitMix64::new(cfg.seed ^ 0xD0B0_D0B0_D0B0_D0B0);
    let mut columns = table.schema().columns().to_vec();
    columns.push(ColumnSpec {
        name: cfg.dob_column_name.clone(),
        kind: ColumnKind::Date,
    });
    let rows = table
        .rows()
        .iter()
        .map(|row| {
            let offset = rng.below(span) as i64;
            let mut row = row.clone();
            row.push(Value::Date(cfg.dob_start + Duration::days(offset)));
            row
        })
        .collect();
    Ok(Table::from_parts_unchecked(Schema::new(columns)?, rows))
}

fn key_text(value: &Value) -> Option<String> {
    (!value.is_null()).then(|| value.to_csv_cell())
}

/// Left join of `left` with `right` on `left_key == right_key`.
///
/// Keys compare by their CSV text so an integer code column can join a string
/// one. Null keys never match. The right key column is dropped from the
/// output; other right columns whose names collide get `_{label}` appended.
/// Output rows follow left order, then right order within a key.
pub fn left_join(
    left: &Table,
    right: &Table,
    left_key: &str,
    right_key: &str,
    right_label: &str,
) -> Result<Table, TableError> {
    let missing = |table: &str, column: &str| TableError::MissingColumn {
        table: table.into(),
        column: column.into(),
    };
    let lk = left
        .schema()
        .index_of(left_key)
        .ok_or_else(|| missing("left", left_key))?;
    let rk = right
        .schema()
        .index_of(right_key)
        .ok_or_else(|| missing(right_label, right_key))?;

    let mut columns = left.schema().columns().to_vec();
    let mut right_cols = Vec::new();
    for (i, col) in right.schema().columns().iter().enumerate() {
        if i == rk {
            continue;
        }
        let mut name = col.name.clone();
        if columns.iter().any(|c| c.name == name) {
            name = format!("{}_{}", col.name, right_label);
            if columns.iter().any(|c| c.name == name) {
                return Err(TableError::ColumnCollision(name));
            }
        }
        columns.push(ColumnSpec {
            name,
            kind: col.kind,
        });
        right_cols.push(i);
    }
    let schema = Schema::new(columns)?;

    let mut index: HashMap<String, Vec<usize>> = HashMap::new();
    for (i, row) in right.rows().iter().enumerate() {
        if let Some(k) = key_text(&row[rk]) {
            index.entry(k).or_default().push(i);
        }
    }

    let mut rows = Vec::new();
    for lrow in left.rows() {
        let matches = key_text(&lrow[lk]).and_then(|k| index.get(&k));
        match matches {
            Some(hits) => {
                for &ri in hits {
                    let rrow = &right.rows()[ri];
                    let mut row = lrow.clone();
                    row.extend(right_cols.iter().map(|&c| rrow[c].clone()));
                    rows.push(row);
                }
            }
            None => {
                let mut row = lrow.clone();
                row.extend(std::iter::repeat_n(Value::Null, right_cols.len()));
                rows.push(row);
            }
        }
    }
    Ok(Table::from_parts_unchecked(schema, rows))
}

/// patients → prescriptions (SUBJECT_ID) → diagnoses (SUBJECT_ID) →
/// diagnosis dictionary (ICD9_CODE), all left joins.
pub fn join_cohort(
    patients: &Table,
    prescriptions: &Table,
    diagnoses: &Table,
    d_icd: &Table,
) -> Result<Table, TableError> {
    for (label, table, key) in [
        ("patients", patients, JOIN_KEY_SUBJECT),
        ("prescriptions", prescriptions, JOIN_KEY_SUBJECT),
        ("diagnoses", diagnoses, JOIN_KEY_SUBJECT),
        ("diagnoses", diagnoses, JOIN_KEY_ICD9),
        ("d_icd_diagnoses", d_icd, JOIN_KEY_ICD9),
    ] {
        if table.schema().index_of(key).is_none() {
            return Err(TableError::MissingColumn {
                table: label.into(),
                column: key.into(),
            });
        }
    }
    let step = left_join(
        patients,
        prescriptions,
        JOIN_KEY_SUBJECT,
        JOIN_KEY_SUBJECT,
        "PRESCRIPTIONS",
    )?;
    let step = left_join(&step, diagnoses, JOIN_KEY_SUBJECT, JOIN_KEY_SUBJECT, "DIAGNOSES")?;
    left_join(&step, d_icd, JOIN_KEY_ICD9, JOIN_KEY_ICD9, "D_ICD")
}

pub fn project_columns(table: &Table, keep: &[impl AsRef<str>]) -> Result<Table, TableError> {
    let schema = table.schema();
    let unknown: Vec<String> = keep
        .iter()
        .map(AsRef::as_ref)
        .filter(|k| schema.index_of(k).is_none())
        .map(str::to_string)
        .collect();
    if !unknown.is_empty() {
        return Err(TableError::UnknownColumns(unknown));
    }
    let idx: Vec<usize> = keep
        .iter()
        .filter_map(|k| schema.index_of(k.as_ref()))
        .collect();
    let projected = Schema::new(idx.iter().map(|&i| schema.columns()[i].clone()).collect())?;
    let rows = table
        .rows()
        .iter()
        .map(|r| idx.iter().map(|&i| r[i].clone()).collect())
        .collect();
    Ok(Table::from_parts_unchecked(projected, rows))
}
