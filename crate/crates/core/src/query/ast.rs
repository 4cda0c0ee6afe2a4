use std::fmt;

use chrono::NaiveDate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Comparator {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Contains,
}

impl Comparator {
    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Eq => "==",
            Comparator::Ne => "!=",
            Comparator::Lt => "<",
            Comparator::Le => "<=",
            Comparator::Gt => ">",
            Comparator::Ge => ">=",
            Comparator::Contains => "CONTAINS",
        }
    }

    pub fn is_ordering(self) -> bool {
        matches!(
            self,
            Comparator::Lt | Comparator::Le | Comparator::Gt | Comparator::Ge
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Int(i64),
    Float(f64),
    Str(String),
    Date(NaiveDate),
    Bool(bool),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl ArithOp {
    pub fn symbol(self) -> char {
        match self {
            ArithOp::Add => '+',
            ArithOp::Sub => '-',
            ArithOp::Mul => '*',
            ArithOp::Div => '/',
        }
    }

    fn precedence(self) -> u8 {
        match self {
            ArithOp::Add | ArithOp::Sub => 1,
            ArithOp::Mul | ArithOp::Div => 2,
        }
    }
}

/// Anchor date for `YEARS_BETWEEN`: `@ref` (the execution context) or an
/// explicit `DATE "YYYY-MM-DD"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DateRef {
    Context,
    Fixed(NaiveDate),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Column(String),
    Int(i64),
    Float(f64),
    Binary {
        op: ArithOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    YearsBetween {
        column: String,
        reference: DateRef,
    },
}

impl Expr {
    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary { op, .. } => op.precedence(),
            _ => u8::MAX,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AggFunc {
    Count,
    Sum,
    Mean,
    Median,
    Min,
    Max,
    CountDistinct,
}

impl AggFunc {
    pub const ALL: [AggFunc; 7] = [
        AggFunc::Count,
        AggFunc::Sum,
        AggFunc::Mean,
        AggFunc::Median,
        AggFunc::Min,
        AggFunc::Max,
        AggFunc::CountDistinct,
    ];

    pub fn keyword(self) -> &'static str {
        match self {
            AggFunc::Count => "COUNT",
            AggFunc::Sum => "SUM",
            AggFunc::Mean => "MEAN",
            AggFunc::Median => "MEDIAN",
            AggFunc::Min => "MIN",
            AggFunc::Max => "MAX",
            AggFunc::CountDistinct => "COUNT_DISTINCT",
        }
    }

    pub fn from_keyword(word: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.keyword().eq_ignore_ascii_case(word))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AggTarget {
    AllRows,
    Column(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SortDirection {
    Asc,
    Desc,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stage {
    Filter {
        column: String,
        comparator: Comparator,
        literal: Literal,
    },
    Derive {
        name: String,
        expr: Expr,
    },
    GroupBy(Vec<String>),
    Aggregate {
        function: AggFunc,
        target: AggTarget,
    },
    Select(Vec<String>),
    Sort {
        column: String,
        direction: SortDirection,
    },
    Limit(usize),
}

impl Stage {
    pub fn keyword(&self) -> &'static str {
        match self {
            Stage::Filter { .. } => "FILTER",
            Stage::Derive { .. } => "DERIVE",
            Stage::GroupBy(_) => "GROUP BY",
            Stage::Aggregate { .. } => "AGGREGATE",
            Stage::Select(_) => "SELECT",
            Stage::Sort { .. } => "SORT",
            Stage::Limit(_) => "LIMIT",
        }
    }
}

/// Upper bound on stages accepted by the parser and by [`QueryProgram::new`].
pub const MAX_STAGES: usize = 32;

/// A structurally well-formed pipeline of stages.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryProgram {
    stages: Vec<Stage>,
}

impl QueryProgram {
    /// Checks the structural rules: at least one stage, at most
    /// [`MAX_STAGES`], at most one GROUP BY which must be followed directly
    /// by AGGREGATE, at most one AGGREGATE followed only by SORT/LIMIT (and by
    /// nothing when ungrouped), `*` only as a COUNT target.
    pub fn new(stages: Vec<Stage>) -> Result<Self, String> {
        if stages.is_empty() {
            return Err("program has no stages".into());
        }
        if stages.len() > MAX_STAGES {
            return Err(format!(
                "program has {} stages; at most {MAX_STAGES} allowed",
                stages.len()
            ));
        }
        let mut grouped = false;
        let mut aggregated = false;
        for (i, stage) in stages.iter().enumerate() {
            if aggregated && !grouped {
                return Err(format!(
                    "stage {}: nothing may follow an ungrouped AGGREGATE",
                    i + 1
                ));
            }
            match stage {
                Stage::GroupBy(cols) => {
                    if grouped {
                        return Err(format!("stage {}: only one GROUP BY allowed", i + 1));
                    }
                    if cols.is_empty() {
                        return Err(format!("stage {}: GROUP BY needs columns", i + 1));
                    }
                    if !matches!(stages.get(i + 1), Some(Stage::Aggregate { .. })) {
                        return Err(format!(
                            "stage {}: GROUP BY must be followed by AGGREGATE",
                            i + 1
                        ));
                    }
                    grouped = true;
                }
                Stage::Aggregate { function, target } => {
                    if aggregated {
                        return Err(format!("stage {}: only one AGGREGATE allowed", i + 1));
                    }
                    if *target == AggTarget::AllRows && *function != AggFunc::Count {
                        return Err(format!(
                            "stage {}: {}(*) is not allowed; only COUNT(*)",
                            i + 1,
                            function.keyword()
                        ));
                    }
                    aggregated = true;
                }
                Stage::Sort { .. } | Stage::Limit(_) => {}
                Stage::Select(cols) if cols.is_empty() => {
                    return Err(format!("stage {}: SELECT needs columns", i + 1));
                }
                other if aggregated => {
                    return Err(format!(
                        "stage {}: {} may not follow AGGREGATE",
                        i + 1,
                        other.keyword()
                    ));
                }
                _ => {}
            }
        }
        Ok(Self { stages })
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    /// Number of stages; the complexity measure attached to test cases.
    pub fn operation_count(&self) -> usize {
        self.stages.len()
    }
}

pub fn operation_count(program: &QueryProgram) -> usize {
    program.operation_count()
}

pub(crate) fn is_plain_ident(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

struct Ident<'a>(&'a str);

impl fmt::Display for Ident<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if is_plain_ident(self.0) {
            f.write_str(self.0)
        } else {
            write!(f, "`{}`", self.0.replace('`', "``"))
        }
    }
}

fn write_list(f: &mut fmt::Formatter<'_>, cols: &[String]) -> fmt::Result {
    for (i, c) in cols.iter().enumerate() {
        if i > 0 {
            f.write_str(", ")?;
        }
        write!(f, "{}", Ident(c))?;
    }
    Ok(())
}

fn write_quoted(f: &mut fmt::Formatter<'_>, s: &str) -> fmt::Result {
    f.write_str("\"")?;
    for c in s.chars() {
        match c {
            '"' => f.write_str("\\\"")?,
            '\\' => f.write_str("\\\\")?,
            '\n' => f.write_str("\\n")?,
            '\t' => f.write_str("\\t")?,
            c => write!(f, "{c}")?,
        }
    }
    f.write_str("\"")
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Int(i) => write!(f, "{i}"),
            Literal::Float(x) => write!(f, "{x:?}"),
            Literal::Str(s) => write_quoted(f, s),
            Literal::Date(d) => write!(f, "DATE \"{}\"", d.format("%Y-%m-%d")),
            Literal::Bool(true) => f.write_str("TRUE"),
            Literal::Bool(false) => f.write_str("FALSE"),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Column(c) => write!(f, "{}", Ident(c)),
            Expr::Int(i) => write!(f, "{i}"),
            Expr::Float(x) => write!(f, "{x:?}"),
            Expr::YearsBetween { column, reference } => {
                write!(f, "YEARS_BETWEEN({}, ", Ident(column))?;
                match reference {
                    DateRef::Context => f.write_str("@ref")?,
                    DateRef::Fixed(d) => write!(f, "DATE \"{}\"", d.format("%Y-%m-%d"))?,
                }
                f.write_str(")")
            }
            Expr::Binary { op, lhs, rhs } => {
                let prec = op.precedence();
                if lhs.precedence() < prec {
                    write!(f, "({lhs})")?;
                } else {
                    write!(f, "{lhs}")?;
                }
                write!(f, " {} ", op.symbol())?;
                if rhs.precedence() <= prec {
                    write!(f, "({rhs})")
                } else {
                    write!(f, "{rhs}")
                }
            }
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage::Filter {
                column,
                comparator,
                literal,
            } => write!(f, "FILTER {} {} {literal}", Ident(column), comparator.symbol()),
            Stage::Derive { name, expr } => write!(f, "DERIVE {} = {expr}", Ident(name)),
            Stage::GroupBy(cols) => {
                f.write_str("GROUP BY ")?;
                write_list(f, cols)
            }
            Stage::Aggregate { function, target } => {
                write!(f, "AGGREGATE {}(", function.keyword())?;
                match target {
                    AggTarget::AllRows => f.write_str("*")?,
                    AggTarget::Column(c) => write!(f, "{}", Ident(c))?,
                }
                f.write_str(")")
            }
            Stage::Select(cols) => {
                f.write_str("SELECT ")?;
                write_list(f, cols)
            }
            Stage::Sort { column, direction } => write!(
                f,
                "SORT {} {}",
                Ident(column),
                match direction {
                    SortDirection::Asc => "ASC",
                    SortDirection::Desc => "DESC",
                }
            ),
            Stage::Limit(n) => write!(f, "LIMIT {n}"),
        }
    }
}

/// Canonical printed form: upper-case keywords, single spaces, stages joined
/// by `" | "`.
impl fmt::Display for QueryProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, stage) in self.stages.iter().enumerate() {
            if i > 0 {
                f.write_str(" | ")?;
            }
            write!(f, "{stage}")?;
        }
        Ok(())
    }
}
