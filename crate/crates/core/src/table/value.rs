use std::cmp::Ordering;
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::TableError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Integer,
    Float,
    String,
    Date,
    Boolean,
}

impl ColumnKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ColumnKind::Integer => "integer",
            ColumnKind::Float => "float",
            ColumnKind::String => "string",
            ColumnKind::Date => "date",
            ColumnKind::Boolean => "boolean",
        }
    }

    pub fn is_numeric(self) -> bool {
        matches!(self, ColumnKind::Integer | ColumnKind::Float)
    }

    /// Parses a raw CSV cell as this kind. Empty cells are null.
    pub fn parse_cell(self, raw: &str) -> Option<Value> {
        if raw.is_empty() {
            return Some(Value::Null);
        }
        match self {
            ColumnKind::Integer => raw.trim().parse().ok().map(Value::Int),
            ColumnKind::Float => raw
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|f| f.is_finite())
                .map(Value::Float),
            ColumnKind::String => Some(Value::Str(raw.to_string())),
            ColumnKind::Date => parse_date(raw).map(Value::Date),
            ColumnKind::Boolean => match raw.trim().to_ascii_lowercase().as_str() {
                "true" => Some(Value::Bool(true)),
                "false" => Some(Value::Bool(false)),
                _ => None,
            },
        }
    }
}

impl fmt::Display for ColumnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ColumnKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "integer" => Ok(ColumnKind::Integer),
            "float" => Ok(ColumnKind::Float),
            "string" => Ok(ColumnKind::String),
            "date" => Ok(ColumnKind::Date),
            "boolean" => Ok(ColumnKind::Boolean),
            other => Err(format!("unknown column kind {other:?}")),
        }
    }
}

/// ISO-8601 `YYYY-MM-DD`, optionally followed by a time part which is dropped.
pub fn parse_date(raw: &str) -> Option<NaiveDate> {
    let raw = raw.trim();
    let date_part = match raw.find([' ', 'T']) {
        Some(10) => &raw[..10],
        Some(_) => return None,
        None => raw,
    };
    if date_part.len() != 10 {
        return None;
    }
    NaiveDate::parse_from_str(date_part, "%Y-%m-%d").ok()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Null,
    Int(i64),
    Float(f64),
    Str(String),
    Date(NaiveDate),
    Bool(bool),
}

impl Value {
    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn kind(&self) -> Option<ColumnKind> {
        match self {
            Value::Null => None,
            Value::Int(_) => Some(ColumnKind::Integer),
            Value::Float(_) => Some(ColumnKind::Float),
            Value::Str(_) => Some(ColumnKind::String),
            Value::Date(_) => Some(ColumnKind::Date),
            Value::Bool(_) => Some(ColumnKind::Boolean),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Float(f) => Some(*f),
            _ => None,
        }
    }

    /// Cell text as written to CSV. Null is the empty string; floats keep a
    /// decimal point so they re-infer as floats.
    pub fn to_csv_cell(&self) -> String {
        match self {
            Value::Null => String::new(),
            Value::Int(i) => i.to_string(),
            Value::Float(f) => format!("{f:?}"),
            Value::Str(s) => s.clone(),
            Value::Date(d) => d.format("%Y-%m-%d").to_string(),
            Value::Bool(b) => b.to_string(),
        }
    }

    /// Human-facing canonical rendering: integers without a decimal point,
    /// floats with at most six significant digits and no trailing zeros,
    /// dates as ISO-8601.
    pub fn render(&self) -> String {
        match self {
            Value::Null => "null".to_string(),
            Value::Float(f) => render_float(*f),
            other => other.to_csv_cell(),
        }
    }

    /// Total order used by SORT, MIN and MAX. Numbers compare across int and
    /// float; nulls sort after everything else.
    pub fn total_cmp(&self, other: &Value) -> Ordering {
        use Value::*;
        match (self, other) {
            (Null, Null) => Ordering::Equal,
            (Null, _) => Ordering::Greater,
            (_, Null) => Ordering::Less,
            (Int(a), Int(b)) => a.cmp(b),
            (Int(_) | Float(_), Int(_) | Float(_)) => {
                let (a, b) = (self.as_f64().unwrap_or(0.0), other.as_f64().unwrap_or(0.0));
                a.total_cmp(&b)
            }
            (Str(a), Str(b)) => a.cmp(b),
            (Date(a), Date(b)) => a.cmp(b),
            (Bool(a), Bool(b)) => a.cmp(b),
            _ => rank(self).cmp(&rank(other)),
        }
    }
}

fn rank(v: &Value) -> u8 {
    match v {
        Value::Bool(_) => 0,
        Value::Int(_) | Value::Float(_) => 1,
        Value::Date(_) => 2,
        Value::Str(_) => 3,
        Value::Null => 4,
    }
}

fn render_float(f: f64) -> String {
    if f == 0.0 || !f.is_finite() {
        return if f.is_finite() { "0".into() } else { f.to_string() };
    }
    // Round to six significant digits via scientific formatting, then expand.
    let sci = format!("{f:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    let negative = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
    let point = exp + 1;
    let mut out = String::new();
    if negative {
        out.push('-');
    }
    if point <= 0 {
        out.push_str("0.");
        out.extend(std::iter::repeat_n('0', (-point) as usize));
        out.push_str(&digits);
    } else if point as usize >= digits.len() {
        out.push_str(&digits);
        out.extend(std::iter::repeat_n('0', point as usize - digits.len()));
    } else {
        out.push_str(&digits[..point as usize]);
        out.push('.');
        out.push_str(&digits[point as usize..]);
    }
    if out.contains('.') {
        while out.ends_with('0') {
            out.pop();
        }
        if out.ends_with('.') {
            out.pop();
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

/// Ordered, uniquely named columns.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Schema {
    columns: Vec<ColumnSpec>,
}

impl Schema {
    pub fn new(columns: Vec<ColumnSpec>) -> Result<Self, TableError> {
        let mut seen = std::collections::HashSet::new();
        for col in &columns {
            if col.name.is_empty() {
                return Err(TableError::InvalidSchema("empty column name".into()));
            }
            if !seen.insert(col.name.as_str()) {
                return Err(TableError::InvalidSchema(format!(
                    "duplicate column name {:?}",
                    col.name
                )));
            }
        }
        Ok(Self { columns })
    }

    pub fn from_pairs<'a>(
        pairs: impl IntoIterator<Item = (&'a str, ColumnKind)>,
    ) -> Result<Self, TableError> {
        Self::new(
            pairs
                .into_iter()
                .map(|(name, kind)| ColumnSpec {
                    name: name.to_string(),
                    kind,
                })
                .collect(),
        )
    }

    pub fn columns(&self) -> &[ColumnSpec] {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn kind_of(&self, name: &str) -> Option<ColumnKind> {
        self.index_of(name).map(|i| self.columns[i].kind)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }
}

/// Row-major table. Every row has the schema's arity and every non-null
/// value matches its column kind.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    schema: Schema,
    rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(schema: Schema, rows: Vec<Vec<Value>>) -> Result<Self, TableError> {
        for (i, row) in rows.iter().enumerate() {
            if row.len() != schema.len() {
                return Err(TableError::InvalidRow {
                    row: i,
                    message: format!("expected {} values, found {}", schema.len(), row.len()),
                });
            }
            for (value, col) in row.iter().zip(schema.columns()) {
                if let Some(kind) = value.kind() {
                    if kind != col.kind {
                        return Err(TableError::InvalidRow {
                            row: i,
                            message: format!(
                                "column {} expects {}, found {}",
                                col.name, col.kind, kind
                            ),
                        });
                    }
                }
            }
        }
        Ok(Self { schema, rows })
    }

    pub(crate) fn from_parts_unchecked(schema: Schema, rows: Vec<Vec<Value>>) -> Self {
        debug_assert!(rows.iter().all(|r| r.len() == schema.len()));
        Self { schema, rows }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn rows(&self) -> &[Vec<Value>] {
        &self.rows
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_columns(&self) -> usize {
        self.schema.len()
    }

    pub fn column(&self, name: &str) -> Option<impl Iterator<Item = &Value>> {
        let idx = self.schema.index_of(name)?;
        Some(self.rows.iter().map(move |r| &r[idx]))
    }

    pub fn into_parts(self) -> (Schema, Vec<Vec<Value>>) {
        (self.schema, self.rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_rendering() {
        let cases = [
            (50.0, "50"),
            (2.5, "2.5"),
            (1.0 / 3.0, "0.333333"),
            (123456789.0, "123457000"),
            (0.000123456789, "0.000123457"),
            (-7.25, "-7.25"),
            (0.0, "0"),
            (-0.0, "0"),
            (66.66666666, "66.6667"),
        ];
        for (f, want) in cases {
            assert_eq!(Value::Float(f).render(), want, "{f}");
        }
        assert_eq!(Value::Int(42).render(), "42");
        assert_eq!(
            Value::Date(NaiveDate::from_ymd_opt(2020, 1, 2).unwrap()).render(),
            "2020-01-02"
        );
    }

    #[test]
    fn dates_accept_time_suffix() {
        assert_eq!(parse_date("2101-10-20 00:00:00"), NaiveDate::from_ymd_opt(2101, 10, 20));
        assert_eq!(parse_date("2101-10-20T12:00"), NaiveDate::from_ymd_opt(2101, 10, 20));
        assert_eq!(parse_date("20-10-2101"), None);
        assert_eq!(parse_date("2101-13-01"), None);
    }

    #[test]
    fn schema_rejects_duplicates_and_blanks() {
        assert!(Schema::from_pairs([("A", ColumnKind::Integer), ("A", ColumnKind::Float)]).is_err());
        assert!(Schema::from_pairs([("", ColumnKind::Integer)]).is_err());
    }

    #[test]
    fn table_checks_arity_and_kinds() {
        let schema = Schema::from_pairs([("A", ColumnKind::Integer)]).unwrap();
        assert!(Table::new(schema.clone(), vec![vec![Value::Int(1), Value::Int(2)]]).is_err());
        assert!(Table::new(schema.clone(), vec![vec![Value::Str("x".into())]]).is_err());
        assert!(Table::new(schema, vec![vec![Value::Null]]).is_ok());
    }

    #[test]
    fn nulls_sort_last() {
        let mut v = vec![Value::Null, Value::Int(3), Value::Float(1.5)];
        v.sort_by(Value::total_cmp);
        assert_eq!(v, vec![Value::Float(1.5), Value::Int(3), Value::Null]);
    }
}
