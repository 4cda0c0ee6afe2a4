//! Column resolution and type checking.

use chrono::NaiveDate;

use super::ast::*;
use crate::table::{ColumnKind, ColumnSpec, Schema, Value};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ValidationError {
    #[error("stage {stage}: unknown column {column:?}")]
    UnknownColumn { stage: usize, column: String },
    #[error("stage {stage}: type mismatch: {detail}")]
    TypeMismatch { stage: usize, detail: String },
    #[error("stage {stage}: column {column:?} already exists")]
    DuplicateColumn { stage: usize, column: String },
}

impl ValidationError {
    /// 1-based index of the offending stage.
    pub fn stage(&self) -> usize {
        match self {
            ValidationError::UnknownColumn { stage, .. }
            | ValidationError::TypeMismatch { stage, .. }
            | ValidationError::DuplicateColumn { stage, .. } => *stage,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum TypedExpr {
    Column(usize),
    Int(i64),
    Float(f64),
    Binary {
        op: ArithOp,
        lhs: Box<TypedExpr>,
        rhs: Box<TypedExpr>,
        kind: ColumnKind,
    },
    YearsBetween {
        column: usize,
        reference: Option<NaiveDate>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Plan {
    Filter {
        column: usize,
        comparator: Comparator,
        literal: Value,
    },
    Derive {
        expr: TypedExpr,
    },
    Aggregate {
        keys: Option<Vec<usize>>,
        function: AggFunc,
        target: Option<usize>,
        out_kind: ColumnKind,
    },
    Select(Vec<usize>),
    Sort {
        column: usize,
        descending: bool,
    },
    Limit(usize),
}

/// A program whose column references are resolved to indices against a
/// specific input schema.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedProgram {
    program: QueryProgram,
    input_schema: Schema,
    output_schema: Schema,
    pub(crate) plan: Vec<Plan>,
    scalar: bool,
}

impl ValidatedProgram {
    pub fn program(&self) -> &QueryProgram {
        &self.program
    }

    pub fn input_schema(&self) -> &Schema {
        &self.input_schema
    }

    /// Schema of a table result; for scalar programs, the single aggregate
    /// column.
    pub fn output_schema(&self) -> &Schema {
        &self.output_schema
    }

    /// True when the program ends in an ungrouped aggregate.
    pub fn returns_scalar(&self) -> bool {
        self.scalar
    }
}

fn literal_value(lit: &Literal) -> Value {
    match lit {
        Literal::Int(i) => Value::Int(*i),
        Literal::Float(f) => Value::Float(*f),
        Literal::Str(s) => Value::Str(s.clone()),
        Literal::Date(d) => Value::Date(*d),
        Literal::Bool(b) => Value::Bool(*b),
    }
}

fn literal_kind(lit: &Literal) -> &'static str {
    match lit {
        Literal::Int(_) => "integer",
        Literal::Float(_) => "float",
        Literal::Str(_) => "string",
        Literal::Date(_) => "date",
        Literal::Bool(_) => "boolean",
    }
}

struct Scope {
    columns: Vec<ColumnSpec>,
}

impl Scope {
    fn resolve(&self, stage: usize, name: &str) -> Result<(usize, ColumnKind), ValidationError> {
        self.columns
            .iter()
            .position(|c| c.name == name)
            .map(|i| (i, self.columns[i].kind))
            .ok_or_else(|| ValidationError::UnknownColumn {
                stage,
                column: name.to_string(),
            })
    }
}

fn type_expr(scope: &Scope, stage: usize, expr: &Expr) -> Result<(TypedExpr, ColumnKind), ValidationError> {
    let mismatch = |detail: String| ValidationError::TypeMismatch { stage, detail };
    match expr {
        Expr::Column(name) => {
            let (idx, kind) = scope.resolve(stage, name)?;
            if !kind.is_numeric() {
                return Err(mismatch(format!(
                    "arithmetic needs a numeric column; {name} is {kind}"
                )));
            }
            Ok((TypedExpr::Column(idx), kind))
        }
        Expr::Int(i) => Ok((TypedExpr::Int(*i), ColumnKind::Integer)),
        Expr::Float(f) => Ok((TypedExpr::Float(*f), ColumnKind::Float)),
        Expr::YearsBetween { column, reference } => {
            let (idx, kind) = scope.resolve(stage, column)?;
            if kind != ColumnKind::Date {
                return Err(mismatch(format!(
                    "YEARS_BETWEEN needs a date column; {column} is {kind}"
                )));
            }
            let reference = match reference {
                DateRef::Context => None,
                DateRef::Fixed(d) => Some(*d),
            };
            Ok((TypedExpr::YearsBetween { column: idx, reference }, ColumnKind::Integer))
        }
        Expr::Binary { op, lhs, rhs } => {
            let (l, lk) = type_expr(scope, stage, lhs)?;
            let (r, rk) = type_expr(scope, stage, rhs)?;
            let kind = if *op == ArithOp::Div || lk == ColumnKind::Float || rk == ColumnKind::Float {
                ColumnKind::Float
            } else {
                ColumnKind::Integer
            };
            Ok((
                TypedExpr::Binary {
                    op: *op,
                    lhs: Box::new(l),
                    rhs: Box::new(r),
                    kind,
                },
                kind,
            ))
        }
    }
}

fn check_filter(
    stage: usize,
    column: &str,
    kind: ColumnKind,
    comparator: Comparator,
    literal: &Literal,
) -> Result<Value, ValidationError> {
    let ok = match (kind, literal) {
        (_, Literal::Str(_)) if comparator == Comparator::Contains => kind == ColumnKind::String,
        (_, _) if comparator == Comparator::Contains => false,
        (ColumnKind::Integer | ColumnKind::Float, Literal::Int(_) | Literal::Float(_)) => true,
        (ColumnKind::String, Literal::Str(_)) => true,
        (ColumnKind::Date, Literal::Date(_)) => true,
        (ColumnKind::Boolean, Literal::Bool(_)) => !comparator.is_ordering(),
        _ => false,
    };
    if ok {
        Ok(literal_value(literal))
    } else {
        Err(ValidationError::TypeMismatch {
            stage,
            detail: format!(
                "cannot apply {} to {column} ({kind}) with a {} literal",
                comparator.symbol(),
                literal_kind(literal)
            ),
        })
    }
}

fn aggregate_kind(stage: usize, function: AggFunc, target: Option<(&str, ColumnKind)>) -> Result<ColumnKind, ValidationError> {
    let Some((name, kind)) = target else {
        return Ok(ColumnKind::Integer);
    };
    let mismatch = || ValidationError::TypeMismatch {
        stage,
        detail: format!("{} is not defined for {name} ({kind})", function.keyword()),
    };
    match function {
        AggFunc::Count | AggFunc::CountDistinct => Ok(ColumnKind::Integer),
        AggFunc::Sum if kind.is_numeric() => Ok(kind),
        AggFunc::Mean | AggFunc::Median if kind.is_numeric() => Ok(ColumnKind::Float),
        AggFunc::Min | AggFunc::Max if kind != ColumnKind::Boolean => Ok(kind),
        _ => Err(mismatch()),
    }
}

/// Resolves every column reference against `schema` (plus columns produced by
/// earlier DERIVE stages) and type-checks comparisons, expressions and
/// aggregates.
pub fn validate_program(program: &QueryProgram, schema: &Schema) -> Result<ValidatedProgram, ValidationError> {
    let mut scope = Scope {
        columns: schema.columns().to_vec(),
    };
    let mut plan = Vec::with_capacity(program.stages().len());
    let mut pending_keys: Option<Vec<usize>> = None;
    let mut scalar = false;
    for (i, stage) in program.stages().iter().enumerate() {
        let n = i + 1;
        match stage {
            Stage::Filter {
                column,
                comparator,
                literal,
            } => {
                let (idx, kind) = scope.resolve(n, column)?;
                let literal = check_filter(n, column, kind, *comparator, literal)?;
                plan.push(Plan::Filter {
                    column: idx,
                    comparator: *comparator,
                    literal,
                });
            }
            Stage::Derive { name, expr } => {
                let (expr, kind) = type_expr(&scope, n, expr)?;
                if scope.columns.iter().any(|c| &c.name == name) {
                    return Err(ValidationError::DuplicateColumn {
                        stage: n,
                        column: name.clone(),
                    });
                }
                scope.columns.push(ColumnSpec {
                    name: name.clone(),
                    kind,
                });
                plan.push(Plan::Derive { expr });
            }
            Stage::GroupBy(cols) => {
                let mut keys = Vec::with_capacity(cols.len());
                for c in cols {
                    let (idx, _) = scope.resolve(n, c)?;
                    if keys.contains(&idx) {
                        return Err(ValidationError::DuplicateColumn {
                            stage: n,
                            column: c.clone(),
                        });
                    }
                    keys.push(idx);
                }
                pending_keys = Some(keys);
            }
            Stage::Aggregate { function, target } => {
                let resolved = match target {
                    AggTarget::AllRows => None,
                    AggTarget::Column(c) => Some((c.as_str(), scope.resolve(n, c)?)),
                };
                let out_kind = aggregate_kind(n, *function, resolved.map(|(name, (_, k))| (name, k)))?;
                let target = resolved.map(|(_, (idx, _))| idx);
                let out_name = function.keyword().to_string();
                let keys = pending_keys.take();
                let mut out_cols: Vec<ColumnSpec> = keys
                    .iter()
                    .flatten()
                    .map(|&k| scope.columns[k].clone())
                    .collect();
                if out_cols.iter().any(|c| c.name == out_name) {
                    return Err(ValidationError::DuplicateColumn {
                        stage: n,
                        column: out_name,
                    });
                }
                scalar = keys.is_none();
                out_cols.push(ColumnSpec {
                    name: out_name,
                    kind: out_kind,
                });
                scope.columns = out_cols;
                plan.push(Plan::Aggregate {
                    keys,
                    function: *function,
                    target,
                    out_kind,
                });
            }
            Stage::Select(cols) => {
                let mut idx = Vec::with_capacity(cols.len());
                for c in cols {
                    let (i, _) = scope.resolve(n, c)?;
                    if idx.contains(&i) {
                        return Err(ValidationError::DuplicateColumn {
                            stage: n,
                            column: c.clone(),
                        });
                    }
                    idx.push(i);
                }
                scope.columns = idx.iter().map(|&i| scope.columns[i].clone()).collect();
                plan.push(Plan::Select(idx));
            }
            Stage::Sort { column, direction } => {
                let (idx, _) = scope.resolve(n, column)?;
                plan.push(Plan::Sort {
                    column: idx,
                    descending: *direction == SortDirection::Desc,
                });
            }
            Stage::Limit(k) => plan.push(Plan::Limit(*k)),
        }
    }
    let output_schema = Schema::new(scope.columns).expect("scope keeps names unique");
    Ok(ValidatedProgram {
        program: program.clone(),
        input_schema: schema.clone(),
        output_schema,
        plan,
        scalar,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::parse_program;

    fn schema() -> Schema {
        Schema::from_pairs([
            ("SUBJECT_ID", ColumnKind::Integer),
            ("GENDER", ColumnKind::String),
            ("DOB_Demo", ColumnKind::Date),
            ("DOSE", ColumnKind::Float),
            ("FLAG", ColumnKind::Boolean),
        ])
        .unwrap()
    }

    fn check(text: &str) -> Result<ValidatedProgram, ValidationError> {
        validate_program(&parse_program(text).unwrap(), &schema())
    }

    #[test]
    fn unknown_column_is_named() {
        match check("FILTER GENDERX == \"F\"") {
            Err(ValidationError::UnknownColumn { stage, column }) => {
                assert_eq!((stage, column.as_str()), (1, "GENDERX"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn median_age_resolves_derived_column() {
        let v = check("DERIVE AGE = YEARS_BETWEEN(DOB_Demo, @ref) | AGGREGATE MEDIAN(AGE)").unwrap();
        assert!(v.returns_scalar());
        assert_eq!(
            v.plan[1],
            Plan::Aggregate {
                keys: None,
                function: AggFunc::Median,
                target: Some(5),
                out_kind: ColumnKind::Float
            }
        );
    }

    #[test]
    fn derived_column_out_of_scope_before_derive() {
        let err = check("FILTER AGE > 50 | DERIVE AGE = YEARS_BETWEEN(DOB_Demo, @ref)").unwrap_err();
        assert_eq!(
            err,
            ValidationError::UnknownColumn {
                stage: 1,
                column: "AGE".into()
            }
        );
    }

    #[test]
    fn type_mismatches() {
        for text in [
            "FILTER GENDER < 5",
            "FILTER SUBJECT_ID == \"5\"",
            "FILTER DOB_Demo > 1990",
            "FILTER FLAG < TRUE",
            "FILTER SUBJECT_ID CONTAINS \"1\"",
            "DERIVE X = GENDER + 1",
            "DERIVE X = YEARS_BETWEEN(SUBJECT_ID, @ref)",
            "AGGREGATE MEDIAN(GENDER)",
            "AGGREGATE MAX(FLAG)",
        ] {
            assert!(
                matches!(check(text), Err(ValidationError::TypeMismatch { .. })),
                "{text}"
            );
        }
    }

    #[test]
    fn grouped_output_schema() {
        let v = check("GROUP BY GENDER | AGGREGATE COUNT(*) | SORT COUNT DESC").unwrap();
        assert!(!v.returns_scalar());
        let names: Vec<&str> = v.output_schema().names().collect();
        assert_eq!(names, ["GENDER", "COUNT"]);
        assert!(check("DERIVE GENDER = SUBJECT_ID * 2").is_err());
        assert!(check("SELECT GENDER | SORT SUBJECT_ID").is_err());
    }
}
