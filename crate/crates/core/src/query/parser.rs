//! Hand-written lexer and recursive-descent parser for the query language.
//!
//! Keywords are matched case-insensitively and only where the grammar
//! expects them, so a column may share a keyword's spelling.

use std::fmt;

use chrono::NaiveDate;

use super::ast::*;

/// Programs longer than this are rejected before lexing.
pub const MAX_PROGRAM_BYTES: usize = 8 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("syntax error at line {line}, column {column}: {message} (found {found})")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub found: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Quoted(String),
    Str(String),
    Number(String),
    Cmp(Comparator),
    Assign,
    Pipe,
    LParen,
    RParen,
    Comma,
    Plus,
    Minus,
    Star,
    Slash,
    RefDate,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "'{s}'"),
            Tok::Quoted(s) => write!(f, "'`{s}`'"),
            Tok::Str(s) => write!(f, "string {s:?}"),
            Tok::Number(s) => write!(f, "'{s}'"),
            Tok::Cmp(c) => write!(f, "'{}'", c.symbol()),
            Tok::Assign => f.write_str("'='"),
            Tok::Pipe => f.write_str("'|'"),
            Tok::LParen => f.write_str("'('"),
            Tok::RParen => f.write_str("')'"),
            Tok::Comma => f.write_str("','"),
            Tok::Plus => f.write_str("'+'"),
            Tok::Minus => f.write_str("'-'"),
            Tok::Star => f.write_str("'*'"),
            Tok::Slash => f.write_str("'/'"),
            Tok::RefDate => f.write_str("'@ref'"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    column: usize,
}

fn lex(text: &str) -> Result<Vec<Spanned>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let err = |line, column, found: String, message: &str| ParseError {
        line,
        column,
        found,
        message: message.to_string(),
    };
    while i < chars.len() {
        let c = chars[i];
        let (start_line, start_col) = (line, col);
        let advance = |n: usize, i: &mut usize, col: &mut usize| {
            *i += n;
            *col += n;
        };
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            advance(1, &mut i, &mut col);
            continue;
        }
        let two: String = chars[i..chars.len().min(i + 2)].iter().collect();
        let tok = match (c, two.as_str()) {
            (_, "==") => {
                advance(2, &mut i, &mut col);
                Tok::Cmp(Comparator::Eq)
            }
            (_, "!=") => {
                advance(2, &mut i, &mut col);
                Tok::Cmp(Comparator::Ne)
            }
            (_, "<=") => {
                advance(2, &mut i, &mut col);
                Tok::Cmp(Comparator::Le)
            }
            (_, ">=") => {
                advance(2, &mut i, &mut col);
                Tok::Cmp(Comparator::Ge)
            }
            ('<', _) => {
                advance(1, &mut i, &mut col);
                Tok::Cmp(Comparator::Lt)
            }
            ('>', _) => {
                advance(1, &mut i, &mut col);
                Tok::Cmp(Comparator::Gt)
            }
            ('=', _) => {
                advance(1, &mut i, &mut col);
                Tok::Assign
            }
            ('|', _) => {
                advance(1, &mut i, &mut col);
                Tok::Pipe
            }
            ('(', _) => {
                advance(1, &mut i, &mut col);
                Tok::LParen
            }
            (')', _) => {
                advance(1, &mut i, &mut col);
                Tok::RParen
            }
            (',', _) => {
                advance(1, &mut i, &mut col);
                Tok::Comma
            }
            ('+', _) => {
                advance(1, &mut i, &mut col);
                Tok::Plus
            }
            ('-', _) => {
                advance(1, &mut i, &mut col);
                Tok::Minus
            }
            ('*', _) => {
                advance(1, &mut i, &mut col);
                Tok::Star
            }
            ('/', _) => {
                advance(1, &mut i, &mut col);
                Tok::Slash
            }
            ('@', _) => {
                let word: String = chars[i + 1..]
                    .iter()
                    .take_while(|c| c.is_ascii_alphanumeric() || **c == '_')
                    .collect();
                if !word.eq_ignore_ascii_case("ref") {
                    return Err(err(line, col, format!("'@{word}'"), "unknown reference; expected @ref"));
                }
                advance(1 + word.chars().count(), &mut i, &mut col);
                Tok::RefDate
            }
            ('"', _) => {
                let mut s = String::new();
                let mut j = i + 1;
                loop {
                    match chars.get(j) {
                        None | Some('\n') => {
                            return Err(err(start_line, start_col, "'\"'".into(), "unterminated string literal"));
                        }
                        Some('"') => break,
                        Some('\\') => {
                            let esc = match chars.get(j + 1) {
                                Some('"') => '"',
                                Some('\\') => '\\',
                                Some('n') => '\n',
                                Some('t') => '\t',
                                other => {
                                    return Err(err(
                                        line,
                                        col + (j - i),
                                        format!("'\\{}'", other.map(|c| c.to_string()).unwrap_or_default()),
                                        "invalid escape sequence",
                                    ));
                                }
                            };
                            s.push(esc);
                            j += 2;
                        }
                        Some(&ch) => {
                            s.push(ch);
                            j += 1;
                        }
                    }
                }
                advance(j + 1 - i, &mut i, &mut col);
                Tok::Str(s)
            }
            ('`', _) => {
                let mut s = String::new();
                let mut j = i + 1;
                loop {
                    match (chars.get(j), chars.get(j + 1)) {
                        (None | Some('\n'), _) => {
                            return Err(err(start_line, start_col, "'`'".into(), "unterminated quoted identifier"));
                        }
                        (Some('`'), Some('`')) => {
                            s.push('`');
                            j += 2;
                        }
                        (Some('`'), _) => break,
                        (Some(&ch), _) => {
                            s.push(ch);
                            j += 1;
                        }
                    }
                }
                advance(j + 1 - i, &mut i, &mut col);
                Tok::Quoted(s)
            }
            (c, _) if c.is_ascii_digit() => {
                let mut j = i;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
                if j < chars.len() && chars[j] == '.' {
                    j += 1;
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                }
                if j < chars.len() && (chars[j] == 'e' || chars[j] == 'E') {
                    let mut k = j + 1;
                    if k < chars.len() && (chars[k] == '+' || chars[k] == '-') {
                        k += 1;
                    }
                    if k < chars.len() && chars[k].is_ascii_digit() {
                        while k < chars.len() && chars[k].is_ascii_digit() {
                            k += 1;
                        }
                        j = k;
                    }
                }
                let text: String = chars[i..j].iter().collect();
                advance(j - i, &mut i, &mut col);
                Tok::Number(text)
            }
            (c, _) if c.is_ascii_alphabetic() || c == '_' => {
                let word: String = chars[i..]
                    .iter()
                    .take_while(|c| c.is_ascii_alphanumeric() || **c == '_')
                    .collect();
                advance(word.chars().count(), &mut i, &mut col);
                Tok::Ident(word)
            }
            (other, _) => {
                return Err(err(line, col, format!("'{other}'"), "unexpected character"));
            }
        };
        out.push(Spanned {
            tok,
            line: start_line,
            column: start_col,
        });
    }
    out.push(Spanned {
        tok: Tok::Eof,
        line,
        column: col,
    });
    Ok(out)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Spanned {
        &self.toks[self.pos]
    }

    fn peek_at(&self, offset: usize) -> &Tok {
        &self.toks[(self.pos + offset).min(self.toks.len() - 1)].tok
    }

    fn bump(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, message: impl Into<String>) -> ParseError {
        let t = self.peek();
        ParseError {
            line: t.line,
            column: t.column,
            found: t.tok.to_string(),
            message: message.into(),
        }
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(w) if w.eq_ignore_ascii_case(kw))
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.at_keyword(kw) {
            self.bump();
            Ok(())
        } else {
            Err(self.error(format!("expected {kw}")))
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ParseError> {
        if self.peek().tok == tok {
            self.bump();
            Ok(())
        } else {
            Err(self.error(format!("expected {what}")))
        }
    }

    fn column(&mut self) -> Result<String, ParseError> {
        match &self.peek().tok {
            Tok::Ident(w) | Tok::Quoted(w) if !w.is_empty() => {
                let w = w.clone();
                self.bump();
                Ok(w)
            }
            _ => Err(self.error("expected column name")),
        }
    }

    fn column_list(&mut self) -> Result<Vec<String>, ParseError> {
        let mut cols = vec![self.column()?];
        while self.peek().tok == Tok::Comma {
            self.bump();
            cols.push(self.column()?);
        }
        Ok(cols)
    }

    fn program(&mut self) -> Result<QueryProgram, ParseError> {
        let mut stages = vec![self.stage()?];
        loop {
            match self.peek().tok {
                Tok::Pipe => {
                    self.bump();
                    if stages.len() == MAX_STAGES {
                        return Err(self.error(format!("too many stages; at most {MAX_STAGES} allowed")));
                    }
                    stages.push(self.stage()?);
                }
                Tok::Eof => break,
                _ => return Err(self.error("expected '|' or end of program")),
            }
        }
        let end = self.peek().clone();
        QueryProgram::new(stages).map_err(|message| ParseError {
            line: end.line,
            column: end.column,
            found: end.tok.to_string(),
            message,
        })
    }

    fn stage(&mut self) -> Result<Stage, ParseError> {
        let word = match &self.peek().tok {
            Tok::Ident(w) => w.to_ascii_uppercase(),
            _ => return Err(self.error("expected a stage keyword (FILTER, DERIVE, GROUP BY, AGGREGATE, SELECT, SORT, LIMIT)")),
        };
        match word.as_str() {
            "FILTER" => {
                self.bump();
                let column = self.column()?;
                let comparator = match self.peek().tok {
                    Tok::Cmp(c) => {
                        self.bump();
                        c
                    }
                    Tok::Ident(ref w) if w.eq_ignore_ascii_case("CONTAINS") => {
                        self.bump();
                        Comparator::Contains
                    }
                    _ => return Err(self.error("expected comparator (==, !=, <, <=, >, >=, CONTAINS)")),
                };
                let literal = self.literal()?;
                Ok(Stage::Filter {
                    column,
                    comparator,
                    literal,
                })
            }
            "DERIVE" => {
                self.bump();
                let name = self.column()?;
                self.expect(Tok::Assign, "'='")?;
                let expr = self.expr()?;
                Ok(Stage::Derive { name, expr })
            }
            "GROUP" => {
                self.bump();
                self.expect_keyword("BY")?;
                Ok(Stage::GroupBy(self.column_list()?))
            }
            "AGGREGATE" => {
                self.bump();
                let function = match &self.peek().tok {
                    Tok::Ident(w) => AggFunc::from_keyword(w),
                    _ => None,
                }
                .ok_or_else(|| self.error("expected aggregate function (COUNT, SUM, MEAN, MEDIAN, MIN, MAX, COUNT_DISTINCT)"))?;
                self.bump();
                self.expect(Tok::LParen, "'('")?;
                let target = if self.peek().tok == Tok::Star {
                    self.bump();
                    AggTarget::AllRows
                } else {
                    AggTarget::Column(self.column()?)
                };
                self.expect(Tok::RParen, "')'")?;
                Ok(Stage::Aggregate { function, target })
            }
            "SELECT" => {
                self.bump();
                Ok(Stage::Select(self.column_list()?))
            }
            "SORT" => {
                self.bump();
                let column = self.column()?;
                let direction = if self.at_keyword("ASC") {
                    self.bump();
                    SortDirection::Asc
                } else if self.at_keyword("DESC") {
                    self.bump();
                    SortDirection::Desc
                } else {
                    SortDirection::Asc
                };
                Ok(Stage::Sort { column, direction })
            }
            "LIMIT" => {
                self.bump();
                match &self.peek().tok {
                    Tok::Number(n) if n.chars().all(|c| c.is_ascii_digit()) => {
                        let n = n.parse().map_err(|_| self.error("LIMIT out of range"))?;
                        self.bump();
                        Ok(Stage::Limit(n))
                    }
                    _ => Err(self.error("expected non-negative integer")),
                }
            }
            _ => Err(self.error("expected a stage keyword (FILTER, DERIVE, GROUP BY, AGGREGATE, SELECT, SORT, LIMIT)")),
        }
    }

    fn number(&mut self, negative: bool) -> Result<Literal, ParseError> {
        let Tok::Number(text) = self.peek().tok.clone() else {
            return Err(self.error("expected number"));
        };
        let text = if negative { format!("-{text}") } else { text };
        let lit = if text.contains(['.', 'e', 'E']) {
            text.parse::<f64>()
                .ok()
                .filter(|f| f.is_finite())
                .map(Literal::Float)
        } else {
            text.parse::<i64>().ok().map(Literal::Int)
        };
        let lit = lit.ok_or_else(|| self.error("numeric literal out of range"))?;
        self.bump();
        Ok(lit)
    }

    fn date_literal(&mut self) -> Result<NaiveDate, ParseError> {
        self.expect_keyword("DATE")?;
        match &self.peek().tok {
            Tok::Str(s) => {
                let d = NaiveDate::parse_from_str(s, "%Y-%m-%d")
                    .map_err(|_| self.error("expected date in YYYY-MM-DD form"))?;
                self.bump();
                Ok(d)
            }
            _ => Err(self.error("expected quoted date after DATE")),
        }
    }

    fn literal(&mut self) -> Result<Literal, ParseError> {
        match self.peek().tok.clone() {
            Tok::Number(_) => self.number(false),
            Tok::Minus if matches!(self.peek_at(1), Tok::Number(_)) => {
                self.bump();
                self.number(true)
            }
            Tok::Str(s) => {
                self.bump();
                Ok(Literal::Str(s))
            }
            Tok::Ident(w) if w.eq_ignore_ascii_case("TRUE") => {
                self.bump();
                Ok(Literal::Bool(true))
            }
            Tok::Ident(w) if w.eq_ignore_ascii_case("FALSE") => {
                self.bump();
                Ok(Literal::Bool(false))
            }
            Tok::Ident(w) if w.eq_ignore_ascii_case("DATE") => Ok(Literal::Date(self.date_literal()?)),
            _ => Err(self.error("expected literal (number, \"string\", DATE \"YYYY-MM-DD\", TRUE, FALSE)")),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek().tok {
                Tok::Plus => ArithOp::Add,
                Tok::Minus => ArithOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek().tok {
                Tok::Star => ArithOp::Mul,
                Tok::Slash => ArithOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.factor()?;
            lhs = Expr::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        let numeric = |lit: Literal| match lit {
            Literal::Int(i) => Expr::Int(i),
            Literal::Float(f) => Expr::Float(f),
            _ => unreachable!("number() yields numeric literals"),
        };
        match self.peek().tok.clone() {
            Tok::Number(_) => Ok(numeric(self.number(false)?)),
            Tok::Minus if matches!(self.peek_at(1), Tok::Number(_)) => {
                self.bump();
                Ok(numeric(self.number(true)?))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(e)
            }
            Tok::Ident(w) if w.eq_ignore_ascii_case("YEARS_BETWEEN") && *self.peek_at(1) == Tok::LParen => {
                self.bump();
                self.bump();
                let column = self.column()?;
                self.expect(Tok::Comma, "','")?;
                let reference = if self.peek().tok == Tok::RefDate {
                    self.bump();
                    DateRef::Context
                } else if self.at_keyword("DATE") {
                    DateRef::Fixed(self.date_literal()?)
                } else {
                    return Err(self.error("expected @ref or DATE \"YYYY-MM-DD\""));
                };
                self.expect(Tok::RParen, "')'")?;
                Ok(Expr::YearsBetween { column, reference })
            }
            Tok::Ident(_) | Tok::Quoted(_) => Ok(Expr::Column(self.column()?)),
            _ => Err(self.error("expected expression")),
        }
    }
}

pub fn parse_program(text: &str) -> Result<QueryProgram, ParseError> {
    if text.len() > MAX_PROGRAM_BYTES {
        return Err(ParseError {
            line: 1,
            column: 1,
            found: format!("{} bytes", text.len()),
            message: format!("program too large; at most {MAX_PROGRAM_BYTES} bytes allowed"),
        });
    }
    let toks = lex(text)?;
    let mut parser = Parser { toks, pos: 0 };
    parser.program()
}
