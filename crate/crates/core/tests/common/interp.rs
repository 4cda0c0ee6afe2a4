//! Naive row-scan interpreter and a random program generator.
//!
//! The interpreter works on the program AST directly and looks columns up by
//! name on every access; it shares no code with the crate's executor.

use std::cmp::Ordering;

use chrono::{Datelike, NaiveDate};
use ehrbench::query::{
    AggFunc, AggTarget, ArithOp, Comparator, DateRef, Expr, Literal, QueryProgram, QueryResult, SortDirection, Stage,
};
use ehrbench::rng::SplitMix64;
use ehrbench::table::{ColumnKind, Schema, Table, Value};

pub const FLOAT_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleError {
    DivisionByZero,
    Overflow,
    NonFinite,
    NegativeAge,
    EmptyAggregate,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OracleResult {
    Scalar(Value),
    Table(Vec<String>, Vec<Vec<Value>>),
}

/// Completed years, found by stepping anniversaries one year at a time.
/// A 29 February birthday falls on 1 March in common years.
pub fn years_between_iterative(dob: NaiveDate, reference: NaiveDate) -> Option<i64> {
    if dob > reference {
        return None;
    }
    let anniversary = |k: i32| {
        NaiveDate::from_ymd_opt(dob.year() + k, dob.month(), dob.day())
            .unwrap_or_else(|| NaiveDate::from_ymd_opt(dob.year() + k, 3, 1).unwrap())
    };
    let mut years = 0;
    while anniversary(years + 1) <= reference {
        years += 1;
    }
    Some(i64::from(years))
}

fn num(v: &Value) -> f64 {
    match v {
        Value::Int(i) => *i as f64,
        Value::Float(f) => *f,
        _ => panic!("not numeric: {v:?}"),
    }
}

fn order(a: &Value, b: &Value) -> Ordering {
    match (a, b) {
        (Value::Int(x), Value::Int(y)) => x.cmp(y),
        (Value::Int(_) | Value::Float(_), Value::Int(_) | Value::Float(_)) => num(a).total_cmp(&num(b)),
        (Value::Str(x), Value::Str(y)) => x.cmp(y),
        (Value::Date(x), Value::Date(y)) => x.cmp(y),
        (Value::Bool(x), Value::Bool(y)) => x.cmp(y),
        _ => panic!("incomparable {a:?} {b:?}"),
    }
}

fn same(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Float(x), Value::Float(y)) => x.to_bits() == y.to_bits(),
        _ => a == b,
    }
}

fn literal(l: &Literal) -> Value {
    match l {
        Literal::Int(i) => Value::Int(*i),
        Literal::Float(f) => Value::Float(*f),
        Literal::Str(s) => Value::Str(s.clone()),
        Literal::Date(d) => Value::Date(*d),
        Literal::Bool(b) => Value::Bool(*b),
    }
}

fn passes(v: &Value, cmp: Comparator, lit: &Value) -> bool {
    if v.is_null() {
        return false;
    }
    if cmp == Comparator::Contains {
        let (Value::Str(s), Value::Str(n)) = (v, lit) else { return false };
        return s.to_lowercase().contains(&n.to_lowercase());
    }
    let o = match (v, lit) {
        (Value::Int(_) | Value::Float(_), Value::Int(_) | Value::Float(_)) if !matches!((v, lit), (Value::Int(_), Value::Int(_))) => {
            match num(v).partial_cmp(&num(lit)) {
                Some(o) => o,
                None => return false,
            }
        }
        _ => order(v, lit),
    };
    match cmp {
        Comparator::Eq => o.is_eq(),
        Comparator::Ne => o.is_ne(),
        Comparator::Lt => o.is_lt(),
        Comparator::Le => o.is_le(),
        Comparator::Gt => o.is_gt(),
        Comparator::Ge => o.is_ge(),
        Comparator::Contains => unreachable!(),
    }
}

struct Frame {
    names: Vec<String>,
    rows: Vec<Vec<Value>>,
}

impl Frame {
    fn get<'a>(&self, row: &'a [Value], name: &str) -> &'a Value {
        let i = self.names.iter().position(|n| n == name).expect("validated column");
        &row[i]
    }
}

fn is_int_expr(e: &Expr, kinds: &dyn Fn(&str) -> ColumnKind) -> bool {
    match e {
        Expr::Column(c) => kinds(c) == ColumnKind::Integer,
        Expr::Int(_) | Expr::YearsBetween { .. } => true,
        Expr::Float(_) => false,
        Expr::Binary { op, lhs, rhs } => *op != ArithOp::Div && is_int_expr(lhs, kinds) && is_int_expr(rhs, kinds),
    }
}

fn eval(
    e: &Expr,
    f: &Frame,
    row: &[Value],
    reference: NaiveDate,
    kinds: &dyn Fn(&str) -> ColumnKind,
) -> Result<Value, OracleError> {
    Ok(match e {
        Expr::Column(c) => f.get(row, c).clone(),
        Expr::Int(i) => Value::Int(*i),
        Expr::Float(x) => Value::Float(*x),
        Expr::YearsBetween { column, reference: r } => match f.get(row, column) {
            Value::Date(dob) => {
                let r = match r {
                    DateRef::Context => reference,
                    DateRef::Fixed(d) => *d,
                };
                Value::Int(years_between_iterative(*dob, r).ok_or(OracleError::NegativeAge)?)
            }
            _ => Value::Null,
        },
        Expr::Binary { op, lhs, rhs } => {
            let a = eval(lhs, f, row, reference, kinds)?;
            let b = eval(rhs, f, row, reference, kinds)?;
            if a.is_null() || b.is_null() {
                return Ok(Value::Null);
            }
            if is_int_expr(e, kinds) {
                let (Value::Int(x), Value::Int(y)) = (a, b) else { panic!("integer expression") };
                let r = match op {
                    ArithOp::Add => x.checked_add(y),
                    ArithOp::Sub => x.checked_sub(y),
                    ArithOp::Mul => x.checked_mul(y),
                    ArithOp::Div => unreachable!(),
                };
                Value::Int(r.ok_or(OracleError::Overflow)?)
            } else {
                let (x, y) = (num(&a), num(&b));
                let r = match op {
                    ArithOp::Add => x + y,
                    ArithOp::Sub => x - y,
                    ArithOp::Mul => x * y,
                    ArithOp::Div if y == 0.0 => return Err(OracleError::DivisionByZero),
                    ArithOp::Div => x / y,
                };
                if !r.is_finite() {
                    return Err(OracleError::NonFinite);
                }
                Value::Float(r)
            }
        }
    })
}

fn agg(function: AggFunc, values: Option<Vec<Value>>, rows: usize, int_target: bool) -> Result<Value, OracleError> {
    let Some(values) = values else { return Ok(Value::Int(rows as i64)) };
    let vals: Vec<Value> = values.into_iter().filter(|v| !v.is_null()).collect();
    match function {
        AggFunc::Count => return Ok(Value::Int(vals.len() as i64)),
        AggFunc::CountDistinct => {
            let mut distinct: Vec<&Value> = Vec::new();
            for v in &vals {
                if !distinct.iter().any(|d| same(d, v)) {
                    distinct.push(v);
                }
            }
            return Ok(Value::Int(distinct.len() as i64));
        }
        _ => {}
    }
    if vals.is_empty() {
        return Err(OracleError::EmptyAggregate);
    }
    Ok(match function {
        AggFunc::Sum if int_target => {
            let mut t: i64 = 0;
            for v in &vals {
                let Value::Int(i) = v else { panic!("int column") };
                t = t.checked_add(*i).ok_or(OracleError::Overflow)?;
            }
            Value::Int(t)
        }
        AggFunc::Sum => Value::Float(vals.iter().map(num).fold(0.0, |a, b| a + b)),
        AggFunc::Mean => Value::Float(vals.iter().map(num).fold(0.0, |a, b| a + b) / vals.len() as f64),
        AggFunc::Median => {
            let mut xs: Vec<f64> = vals.iter().map(num).collect();
            // Insertion sort keeps this independent of the library sort.
            for i in 1..xs.len() {
                let mut j = i;
                while j > 0 && xs[j - 1] > xs[j] {
                    xs.swap(j - 1, j);
                    j -= 1;
                }
            }
            let n = xs.len();
            Value::Float(if n % 2 == 1 { xs[n / 2] } else { (xs[n / 2 - 1] + xs[n / 2]) / 2.0 })
        }
        AggFunc::Min => {
            let mut best = &vals[0];
            for v in &vals[1..] {
                if order(v, best).is_lt() {
                    best = v;
                }
            }
            best.clone()
        }
        AggFunc::Max => {
            let mut best = &vals[0];
            for v in &vals[1..] {
                if order(v, best).is_gt() {
                    best = v;
                }
            }
            best.clone()
        }
        AggFunc::Count | AggFunc::CountDistinct => unreachable!(),
    })
}

/// Interprets `program` over `table` one row at a time.
pub fn interpret(program: &QueryProgram, table: &Table, reference: NaiveDate) -> Result<OracleResult, OracleError> {
    let mut kinds: Vec<(String, ColumnKind)> =
        table.schema().columns().iter().map(|c| (c.name.clone(), c.kind)).collect();
    let mut f = Frame {
        names: kinds.iter().map(|k| k.0.clone()).collect(),
        rows: table.rows().to_vec(),
    };
    let mut group: Option<Vec<String>> = None;
    for stage in program.stages() {
        let kind_of = |kinds: &[(String, ColumnKind)], n: &str| kinds.iter().find(|k| k.0 == n).expect("column").1;
        match stage {
            Stage::Filter { column, comparator, literal: l } => {
                let lit = literal(l);
                let mut kept = Vec::new();
                for row in &f.rows {
                    if passes(f.get(row, column), *comparator, &lit) {
                        kept.push(row.clone());
                    }
                }
                f.rows = kept;
            }
            Stage::Derive { name, expr } => {
                let snapshot = kinds.clone();
                let lookup = |n: &str| kind_of(&snapshot, n);
                let mut out = Vec::new();
                for row in &f.rows {
                    let v = eval(expr, &f, row, reference, &lookup)?;
                    let mut r = row.clone();
                    r.push(v);
                    out.push(r);
                }
                let kind = if is_int_expr(expr, &lookup) { ColumnKind::Integer } else { ColumnKind::Float };
                f.rows = out;
                f.names.push(name.clone());
                kinds.push((name.clone(), kind));
            }
            Stage::GroupBy(cols) => group = Some(cols.clone()),
            Stage::Aggregate { function, target } => {
                let int_target = match target {
                    AggTarget::Column(c) => kind_of(&kinds, c) == ColumnKind::Integer,
                    AggTarget::AllRows => false,
                };
                let out_kind = match (function, target) {
                    (AggFunc::Count | AggFunc::CountDistinct, _) | (_, AggTarget::AllRows) => ColumnKind::Integer,
                    (AggFunc::Mean | AggFunc::Median, _) => ColumnKind::Float,
                    (_, AggTarget::Column(c)) => kind_of(&kinds, c),
                };
                let values_of = |rows: &[&Vec<Value>]| match target {
                    AggTarget::AllRows => None,
                    AggTarget::Column(c) => Some(rows.iter().map(|r| f.get(r, c).clone()).collect()),
                };
                match group.take() {
                    None => {
                        let rows: Vec<&Vec<Value>> = f.rows.iter().collect();
                        let v = agg(*function, values_of(&rows), rows.len(), int_target)?;
                        return Ok(OracleResult::Scalar(v));
                    }
                    Some(keys) => {
                        let mut groups: Vec<(Vec<Value>, Vec<&Vec<Value>>)> = Vec::new();
                        for row in &f.rows {
                            let key: Vec<Value> = keys.iter().map(|k| f.get(row, k).clone()).collect();
                            if key.iter().any(Value::is_null) {
                                continue;
                            }
                            match groups.iter_mut().find(|(k, _)| k.iter().zip(&key).all(|(a, b)| same(a, b))) {
                                Some((_, members)) => members.push(row),
                                None => groups.push((key, vec![row])),
                            }
                        }
                        groups.sort_by(|(a, _), (b, _)| {
                            a.iter().zip(b).map(|(x, y)| order(x, y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
                        });
                        let mut rows = Vec::new();
                        for (key, members) in groups {
                            let v = agg(*function, values_of(&members), members.len(), int_target)?;
                            let mut r = key;
                            r.push(v);
                            rows.push(r);
                        }
                        let mut names = keys.clone();
                        names.push(function.keyword().to_string());
                        kinds = names
                            .iter()
                            .map(|n| {
                                let k = if n == function.keyword() { out_kind } else { kind_of(&kinds, n) };
                                (n.clone(), k)
                            })
                            .collect();
                        f = Frame { names, rows };
                    }
                }
            }
            Stage::Select(cols) => {
                let rows = f.rows.iter().map(|r| cols.iter().map(|c| f.get(r, c).clone()).collect()).collect();
                kinds = cols.iter().map(|c| (c.clone(), kind_of(&kinds, c))).collect();
                f = Frame { names: cols.clone(), rows };
            }
            Stage::Sort { column, direction } => {
                let i = f.names.iter().position(|n| n == column).expect("column");
                let desc = *direction == SortDirection::Desc;
                // Stable insertion sort; nulls last either way.
                let mut rows = std::mem::take(&mut f.rows);
                for k in 1..rows.len() {
                    let mut j = k;
                    while j > 0 {
                        let (a, b) = (&rows[j - 1][i], &rows[j][i]);
                        let after = match (a.is_null(), b.is_null()) {
                            (true, false) => true,
                            (_, true) => false,
                            _ if desc => order(a, b).is_lt(),
                            _ => order(a, b).is_gt(),
                        };
                        if !after {
                            break;
                        }
                        rows.swap(j - 1, j);
                        j -= 1;
                    }
                }
                f.rows = rows;
            }
            Stage::Limit(n) => f.rows.truncate(*n),
        }
    }
    Ok(OracleResult::Table(f.names, f.rows))
}

pub fn values_match(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Float(x), Value::Float(y)) => x == y || (x - y).abs() <= FLOAT_REL_TOL * x.abs().max(y.abs()),
        _ => a == b,
    }
}

/// Compares an executor result with an oracle result; `Err` describes the
/// first difference.
pub fn compare(actual: &QueryResult, expected: &OracleResult) -> Result<(), String> {
    match (actual, expected) {
        (QueryResult::Scalar(a), OracleResult::Scalar(e)) if values_match(a, e) => Ok(()),
        (QueryResult::Table(t), OracleResult::Table(names, rows)) => {
            let got: Vec<&str> = t.schema().names().collect();
            if got != names.iter().map(String::as_str).collect::<Vec<_>>() {
                return Err(format!("columns {got:?} vs {names:?}"));
            }
            if t.rows().len() != rows.len() {
                return Err(format!("{} rows vs {}", t.rows().len(), rows.len()));
            }
            for (i, (a, e)) in t.rows().iter().zip(rows).enumerate() {
                if a.len() != e.len() || !a.iter().zip(e).all(|(x, y)| values_match(x, y)) {
                    return Err(format!("row {i}: {a:?} vs {e:?}"));
                }
            }
            Ok(())
        }
        _ => Err(format!("{actual:?} vs {expected:?}")),
    }
}

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

const WORDS: [&str; 6] = ["alpha", "Beta", "gamma", "ALPHA", "delta x", "beta"];

/// A random table of at most `max_rows` rows over a fixed six-column schema
/// with about 10% nulls per column.
pub fn random_table(rng: &mut SplitMix64, max_rows: usize) -> Table {
    let schema = Schema::from_pairs([
        ("I", ColumnKind::Integer),
        ("F", ColumnKind::Float),
        ("S", ColumnKind::String),
        ("D", ColumnKind::Date),
        ("B", ColumnKind::Boolean),
        ("T", ColumnKind::Integer),
    ])
    .unwrap();
    let n = rng.below(max_rows as u64 + 1) as usize;
    let rows = (0..n)
        .map(|_| {
            let i = Value::Int(rng.below(41) as i64 - 20);
            let f = Value::Float((rng.below(81) as f64 - 40.0) / 4.0 + 0.5);
            let s = Value::Str(WORDS[rng.below(6) as usize].to_string());
            let d = if rng.below(50) == 0 {
                date(2020, 6, 1)
            } else {
                date(1930, 1, 1) + chrono::Duration::days(rng.below(90 * 365) as i64)
            };
            let b = Value::Bool(rng.below(2) == 0);
            let t = Value::Int(rng.below(4) as i64);
            [i, f, s, Value::Date(d), b, t]
                .into_iter()
                .map(|v| if rng.below(10) == 0 { Value::Null } else { v })
                .collect()
        })
        .collect();
    Table::new(schema, rows).unwrap()
}

fn pick<'a, T>(rng: &mut SplitMix64, xs: &'a [T]) -> &'a T {
    &xs[rng.below(xs.len() as u64) as usize]
}

fn random_literal(rng: &mut SplitMix64, kind: ColumnKind, contains: bool) -> Literal {
    match kind {
        ColumnKind::Integer if rng.below(3) == 0 => Literal::Float(rng.below(21) as f64 / 2.0 - 5.0),
        ColumnKind::Integer => Literal::Int(rng.below(21) as i64 - 10),
        ColumnKind::Float if rng.below(3) == 0 => Literal::Int(rng.below(21) as i64 - 10),
        ColumnKind::Float => Literal::Float(rng.below(41) as f64 / 4.0 - 5.0),
        ColumnKind::String if contains => Literal::Str(pick(rng, &["al", "TA", "x", "a"]).to_string()),
        ColumnKind::String => Literal::Str(pick(rng, &WORDS).to_string()),
        ColumnKind::Date => Literal::Date(date(1930 + rng.below(90) as i32, 1 + rng.below(12) as u32, 1)),
        ColumnKind::Boolean => Literal::Bool(rng.below(2) == 0),
    }
}

fn random_expr(rng: &mut SplitMix64, scope: &[(String, ColumnKind)], depth: u32) -> Expr {
    let numeric: Vec<&String> = scope.iter().filter(|c| c.1.is_numeric()).map(|c| &c.0).collect();
    let dates: Vec<&String> = scope.iter().filter(|c| c.1 == ColumnKind::Date).map(|c| &c.0).collect();
    match rng.below(if depth == 0 { 4 } else { 7 }) {
        0 if !dates.is_empty() => Expr::YearsBetween {
            column: pick(rng, &dates).to_string(),
            reference: if rng.below(3) == 0 { DateRef::Fixed(date(2010, 7, 15)) } else { DateRef::Context },
        },
        1 => Expr::Int(rng.below(7) as i64 - 3),
        2 => Expr::Float(rng.below(9) as f64 / 2.0 - 2.0),
        0..=3 if !numeric.is_empty() => Expr::Column(pick(rng, &numeric).to_string()),
        0..=3 => Expr::Int(2),
        _ => Expr::Binary {
            op: *pick(rng, &[ArithOp::Add, ArithOp::Sub, ArithOp::Mul, ArithOp::Div]),
            lhs: Box::new(random_expr(rng, scope, depth - 1)),
            rhs: Box::new(random_expr(rng, scope, depth - 1)),
        },
    }
}

/// A random, structurally valid program over `schema`. Most draws also
/// validate; callers skip the ones that do not.
pub fn random_program(rng: &mut SplitMix64, schema: &Schema) -> QueryProgram {
    loop {
        let mut scope: Vec<(String, ColumnKind)> = schema.columns().iter().map(|c| (c.name.clone(), c.kind)).collect();
        let mut stages = Vec::new();
        let mut derived = 0;
        for _ in 0..rng.below(5) {
            match rng.below(10) {
                0..=3 => {
                    let (col, kind) = pick(rng, &scope).clone();
                    let contains = kind == ColumnKind::String && rng.below(3) == 0;
                    let comparator = if contains {
                        Comparator::Contains
                    } else if kind == ColumnKind::Boolean {
                        *pick(rng, &[Comparator::Eq, Comparator::Ne])
                    } else {
                        *pick(
                            rng,
                            &[Comparator::Eq, Comparator::Ne, Comparator::Lt, Comparator::Le, Comparator::Gt, Comparator::Ge],
                        )
                    };
                    stages.push(Stage::Filter {
                        column: col,
                        comparator,
                        literal: random_literal(rng, kind, contains),
                    });
                }
                4..=6 => {
                    derived += 1;
                    let name = format!("X{derived}");
                    let expr = random_expr(rng, &scope, 2);
                    scope.push((name.clone(), ColumnKind::Float));
                    stages.push(Stage::Derive { name, expr });
                }
                7 => {
                    let col = pick(rng, &scope).0.clone();
                    let direction = *pick(rng, &[SortDirection::Asc, SortDirection::Desc]);
                    stages.push(Stage::Sort { column: col, direction });
                }
                8 => stages.push(Stage::Limit(rng.below(60) as usize)),
                _ => {
                    let n = 1 + rng.below(3) as usize;
                    let mut cols: Vec<String> = Vec::new();
                    for _ in 0..n {
                        let c = pick(rng, &scope).0.clone();
                        if !cols.contains(&c) {
                            cols.push(c);
                        }
                    }
                    scope.retain(|s| cols.contains(&s.0));
                    scope.sort_by_key(|s| cols.iter().position(|c| c == &s.0));
                    stages.push(Stage::Select(cols));
                }
            }
        }
        if rng.below(10) < 7 {
            let grouped = rng.below(2) == 0;
            if grouped {
                let mut keys = vec![pick(rng, &scope).0.clone()];
                if rng.below(3) == 0 {
                    let k = pick(rng, &scope).0.clone();
                    if !keys.contains(&k) {
                        keys.push(k);
                    }
                }
                stages.push(Stage::GroupBy(keys));
            }
            let function = *pick(rng, &AggFunc::ALL);
            let target = if function == AggFunc::Count && rng.below(2) == 0 {
                AggTarget::AllRows
            } else {
                AggTarget::Column(pick(rng, &scope).0.clone())
            };
            stages.push(Stage::Aggregate { function, target });
            if grouped {
                if rng.below(2) == 0 {
                    let direction = *pick(rng, &[SortDirection::Asc, SortDirection::Desc]);
                    stages.push(Stage::Sort { column: function.keyword().to_string(), direction });
                }
                if rng.below(2) == 0 {
                    stages.push(Stage::Limit(rng.below(5) as usize));
                }
            }
        }
        if let Ok(p) = QueryProgram::new(stages) {
            return p;
        }
    }
}
