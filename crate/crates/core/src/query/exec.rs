//! Eager, left-to-right interpreter for validated programs.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};

use chrono::{Datelike, NaiveDate};

use super::ast::{AggFunc, ArithOp, Comparator};
use super::validate::{Plan, TypedExpr, ValidatedProgram};
use super::{ExecutionContext, QueryResult};
use crate::table::{ColumnKind, Table, Value};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExecError {
    #[error("table schema differs from the schema the program was validated against")]
    SchemaMismatch,
    #[error("stage {stage}, row {row}: division by zero")]
    DivisionByZero { stage: usize, row: usize },
    #[error("stage {stage}, row {row}: integer overflow")]
    Overflow { stage: usize, row: usize },
    #[error("stage {stage}, row {row}: non-finite arithmetic result")]
    NonFinite { stage: usize, row: usize },
    #[error("stage {stage}, row {row}: date of birth {dob} is after reference date {reference}")]
    NegativeAge {
        stage: usize,
        row: usize,
        dob: NaiveDate,
        reference: NaiveDate,
    },
    #[error("stage {stage}: {function} over zero non-null values")]
    EmptyAggregate { stage: usize, function: &'static str },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("date of birth {dob} is after reference date {reference}")]
pub struct NegativeAgeError {
    pub dob: NaiveDate,
    pub reference: NaiveDate,
}

/// Completed calendar years from `dob` to `reference`. A 29 February
/// birthday is reached on 1 March in non-leap years.
pub fn years_between(dob: NaiveDate, reference: NaiveDate) -> Result<i64, NegativeAgeError> {
    if dob > reference {
        return Err(NegativeAgeError { dob, reference });
    }
    let mut years = i64::from(reference.year() - dob.year());
    if (reference.month(), reference.day()) < (dob.month(), dob.day()) {
        years -= 1;
    }
    Ok(years)
}

fn compare(value: &Value, comparator: Comparator, literal: &Value) -> bool {
    if comparator == Comparator::Contains {
        return match (value, literal) {
            (Value::Str(s), Value::Str(needle)) => s.to_lowercase().contains(&needle.to_lowercase()),
            _ => false,
        };
    }
    let ord = match (value, literal) {
        (Value::Int(a), Value::Int(b)) => a.cmp(b),
        (Value::Int(_) | Value::Float(_), Value::Int(_) | Value::Float(_)) => {
            let (a, b) = (value.as_f64().unwrap_or_default(), literal.as_f64().unwrap_or_default());
            match a.partial_cmp(&b) {
                Some(o) => o,
                None => return false,
            }
        }
        (Value::Str(a), Value::Str(b)) => a.cmp(b),
        (Value::Date(a), Value::Date(b)) => a.cmp(b),
        (Value::Bool(a), Value::Bool(b)) => a.cmp(b),
        _ => return false,
    };
    match comparator {
        Comparator::Eq => ord == Ordering::Equal,
        Comparator::Ne => ord != Ordering::Equal,
        Comparator::Lt => ord == Ordering::Less,
        Comparator::Le => ord != Ordering::Greater,
        Comparator::Gt => ord == Ordering::Greater,
        Comparator::Ge => ord != Ordering::Less,
        Comparator::Contains => unreachable!(),
    }
}

struct RowCtx<'a> {
    stage: usize,
    row: usize,
    reference: NaiveDate,
    values: &'a [Value],
}

fn eval(expr: &TypedExpr, ctx: &RowCtx<'_>) -> Result<Value, ExecError> {
    match expr {
        TypedExpr::Column(i) => Ok(ctx.values[*i].clone()),
        TypedExpr::Int(i) => Ok(Value::Int(*i)),
        TypedExpr::Float(f) => Ok(Value::Float(*f)),
        TypedExpr::YearsBetween { column, reference } => match &ctx.values[*column] {
            Value::Date(dob) => {
                let reference = reference.unwrap_or(ctx.reference);
                years_between(*dob, reference)
                    .map(Value::Int)
                    .map_err(|e| ExecError::NegativeAge {
                        stage: ctx.stage,
                        row: ctx.row,
                        dob: e.dob,
                        reference: e.reference,
                    })
            }
            _ => Ok(Value::Null),
        },
        TypedExpr::Binary { op, lhs, rhs, kind } => {
            let l = eval(lhs, ctx)?;
            let r = eval(rhs, ctx)?;
            if l.is_null() || r.is_null() {
                return Ok(Value::Null);
            }
            if *kind == ColumnKind::Integer {
                let (Value::Int(a), Value::Int(b)) = (&l, &r) else {
                    unreachable!("validator types integer arithmetic");
                };
                let out = match op {
                    ArithOp::Add => a.checked_add(*b),
                    ArithOp::Sub => a.checked_sub(*b),
                    ArithOp::Mul => a.checked_mul(*b),
                    ArithOp::Div => unreachable!("division is typed float"),
                };
                return out.map(Value::Int).ok_or(ExecError::Overflow {
                    stage: ctx.stage,
                    row: ctx.row,
                });
            }
            let (a, b) = (l.as_f64().unwrap_or_default(), r.as_f64().unwrap_or_default());
            let out = match op {
                ArithOp::Add => a + b,
                ArithOp::Sub => a - b,
                ArithOp::Mul => a * b,
                ArithOp::Div => {
                    if b == 0.0 {
                        return Err(ExecError::DivisionByZero {
                            stage: ctx.stage,
                            row: ctx.row,
                        });
                    }
                    a / b
                }
            };
            if !out.is_finite() {
                return Err(ExecError::NonFinite {
                    stage: ctx.stage,
                    row: ctx.row,
                });
            }
            Ok(Value::Float(out))
        }
    }
}

fn aggregate<'a>(
    stage: usize,
    function: AggFunc,
    values: Option<impl Iterator<Item = &'a Value>>,
    row_count: usize,
    out_kind: ColumnKind,
) -> Result<Value, ExecError> {
    let empty = || ExecError::EmptyAggregate {
        stage,
        function: function.keyword(),
    };
    let Some(values) = values else {
        return Ok(Value::Int(row_count as i64));
    };
    let non_null: Vec<&Value> = values.filter(|v| !v.is_null()).collect();
    match function {
        AggFunc::Count => Ok(Value::Int(non_null.len() as i64)),
        AggFunc::CountDistinct => {
            let distinct: HashSet<String> = non_null.iter().map(|v| v.to_csv_cell()).collect();
            Ok(Value::Int(distinct.len() as i64))
        }
        _ if non_null.is_empty() => Err(empty()),
        AggFunc::Sum if out_kind == ColumnKind::Integer => {
            let mut total: i64 = 0;
            for v in &non_null {
                if let Value::Int(i) = v {
                    total = total.checked_add(*i).ok_or(ExecError::Overflow { stage, row: 0 })?;
                }
            }
            Ok(Value::Int(total))
        }
        AggFunc::Sum => Ok(Value::Float(non_null.iter().filter_map(|v| v.as_f64()).sum())),
        AggFunc::Mean => {
            let sum: f64 = non_null.iter().filter_map(|v| v.as_f64()).sum();
            Ok(Value::Float(sum / non_null.len() as f64))
        }
        AggFunc::Median => {
            let mut xs: Vec<f64> = non_null.iter().filter_map(|v| v.as_f64()).collect();
            xs.sort_by(f64::total_cmp);
            let mid = xs.len() / 2;
            Ok(Value::Float(if xs.len() % 2 == 1 {
                xs[mid]
            } else {
                (xs[mid - 1] + xs[mid]) / 2.0
            }))
        }
        AggFunc::Min => Ok(non_null
            .iter()
            .copied()
            .reduce(|best, v| if v.total_cmp(best) == Ordering::Less { v } else { best })
            .cloned()
            .ok_or_else(empty)?),
        AggFunc::Max => Ok(non_null
            .iter()
            .copied()
            .reduce(|best, v| if v.total_cmp(best) == Ordering::Greater { v } else { best })
            .cloned()
            .ok_or_else(empty)?),
    }
}

fn sort_key_cmp(a: &Value, b: &Value, descending: bool) -> Ordering {
    match (a.is_null(), b.is_null()) {
        (true, true) => Ordering::Equal,
        (true, false) => Ordering::Greater,
        (false, true) => Ordering::Less,
        _ if descending => b.total_cmp(a),
        _ => a.total_cmp(b),
    }
}

/// Runs `program` over `table`. The input table is never modified.
pub fn execute_program(
    program: &ValidatedProgram,
    table: &Table,
    ctx: &ExecutionContext,
) -> Result<QueryResult, ExecError> {
    if table.schema() != program.input_schema() {
        return Err(ExecError::SchemaMismatch);
    }
    let mut rows: Vec<Vec<Value>> = table.rows().to_vec();
    let mut scalar = None;
    for (i, step) in program.plan.iter().enumerate() {
        let stage = i + 1;
        match step {
            Plan::Filter {
                column,
                comparator,
                literal,
            } => rows.retain(|r| !r[*column].is_null() && compare(&r[*column], *comparator, literal)),
            Plan::Derive { expr } => {
                for (row, values) in rows.iter_mut().enumerate() {
                    let v = eval(
                        expr,
                        &RowCtx {
                            stage,
                            row,
                            reference: ctx.reference_date,
                            values,
                        },
                    )?;
                    values.push(v);
                }
            }
            Plan::Aggregate {
                keys: None,
                function,
                target,
                out_kind,
            } => {
                let all = &rows;
                let values = target.map(|t| all.iter().map(move |r| &r[t]));
                let v = aggregate(stage, *function, values, rows.len(), *out_kind)?;
                rows = vec![vec![v.clone()]];
                scalar = Some(v);
            }
            Plan::Aggregate {
                keys: Some(keys),
                function,
                target,
                out_kind,
            } => {
                // Rows with a null key are dropped; groups come out ordered
                // by key.
                let mut groups: BTreeMap<GroupKey, Vec<usize>> = BTreeMap::new();
                for (ri, r) in rows.iter().enumerate() {
                    if keys.iter().any(|&k| r[k].is_null()) {
                        continue;
                    }
                    let key = GroupKey(keys.iter().map(|&k| r[k].clone()).collect());
                    groups.entry(key).or_default().push(ri);
                }
                let mut out = Vec::with_capacity(groups.len());
                for (key, members) in groups {
                    let rows = &rows;
                    let values = target.map(|t| members.iter().map(move |&m| &rows[m][t]));
                    let v = aggregate(stage, *function, values, members.len(), *out_kind)?;
                    let mut row = key.0;
                    row.push(v);
                    out.push(row);
                }
                rows = out;
            }
            Plan::Select(cols) => {
                rows = rows
                    .iter()
                    .map(|r| cols.iter().map(|&c| r[c].clone()).collect())
                    .collect();
            }
            Plan::Sort { column, descending } => {
                rows.sort_by(|a, b| sort_key_cmp(&a[*column], &b[*column], *descending));
            }
            Plan::Limit(n) => rows.truncate(*n),
        }
    }
    if program.returns_scalar() {
        return Ok(QueryResult::Scalar(scalar.expect("scalar programs end in an aggregate")));
    }
    Ok(QueryResult::Table(Table::from_parts_unchecked(
        program.output_schema().clone(),
        rows,
    )))
}

#[derive(Debug, Clone, PartialEq)]
struct GroupKey(Vec<Value>);

impl Eq for GroupKey {}

impl PartialOrd for GroupKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for GroupKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    }
}
