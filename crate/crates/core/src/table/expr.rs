//! Scalar expressions over a row: column references, literals, arithmetic,
//! comparison and boolean connectives with SQL-style null propagation.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::schema::Schema;
use super::value::{format_number, DataType, Value};
use super::TableError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
}

impl BinaryOp {
    fn precedence(self) -> u8 {
        match self {
            BinaryOp::Or => 1,
            BinaryOp::And => 2,
            BinaryOp::Eq | BinaryOp::Ne | BinaryOp::Lt | BinaryOp::Le | BinaryOp::Gt | BinaryOp::Ge => 4,
            BinaryOp::Add | BinaryOp::Sub => 5,
            BinaryOp::Mul | BinaryOp::Div => 6,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Eq => "=",
            BinaryOp::Ne => "!=",
            BinaryOp::Lt => "<",
            BinaryOp::Le => "<=",
            BinaryOp::Gt => ">",
            BinaryOp::Ge => ">=",
            BinaryOp::And => "and",
            BinaryOp::Or => "or",
        }
    }

    fn is_comparison(self) -> bool {
        self.precedence() == 4
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Column(String),
    Literal(Value),
    Unary { op: UnaryOp, expr: Box<Expr> },
    Binary { op: BinaryOp, left: Box<Expr>, right: Box<Expr> },
}

impl Expr {
    pub fn col(name: &str) -> Expr {
        Expr::Column(name.to_string())
    }

    pub fn lit(v: impl Into<Value>) -> Expr {
        Expr::Literal(v.into())
    }

    pub fn binary(op: BinaryOp, left: Expr, right: Expr) -> Expr {
        Expr::Binary { op, left: Box::new(left), right: Box::new(right) }
    }

    pub fn eq(left: Expr, right: Expr) -> Expr {
        Expr::binary(BinaryOp::Eq, left, right)
    }

    pub fn and(left: Expr, right: Expr) -> Expr {
        Expr::binary(BinaryOp::And, left, right)
    }

    /// `column = literal`
    pub fn col_eq(column: &str, v: impl Into<Value>) -> Expr {
        Expr::eq(Expr::col(column), Expr::lit(v))
    }

    pub fn parse(src: &str) -> Result<Expr, ParseError> {
        let tokens = tokenize(src)?;
        let mut p = Parser { tokens, pos: 0 };
        let e = p.expr(0)?;
        match p.peek() {
            None => Ok(e),
            Some(t) => Err(ParseError { offset: t.offset, message: format!("unexpected `{}`", t.text) }),
        }
    }

    pub fn columns(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_columns(&mut out);
        out
    }

    fn collect_columns(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Column(c) => {
                out.insert(c.clone());
            }
            Expr::Literal(_) => {}
            Expr::Unary { expr, .. } => expr.collect_columns(out),
            Expr::Binary { left, right, .. } => {
                left.collect_columns(out);
                right.collect_columns(out);
            }
        }
    }

    /// Rewrites column references through `f`.
    pub fn rename(&self, f: &dyn Fn(&str) -> String) -> Expr {
        match self {
            Expr::Column(c) => Expr::Column(f(c)),
            Expr::Literal(v) => Expr::Literal(v.clone()),
            Expr::Unary { op, expr } => Expr::Unary { op: *op, expr: Box::new(expr.rename(f)) },
            Expr::Binary { op, left, right } => {
                Expr::Binary { op: *op, left: Box::new(left.rename(f)), right: Box::new(right.rename(f)) }
            }
        }
    }

    /// Splits a predicate into its top-level conjuncts.
    pub fn conjuncts(&self) -> Vec<Expr> {
        match self {
            Expr::Binary { op: BinaryOp::And, left, right } => {
                let mut v = left.conjuncts();
                v.extend(right.conjuncts());
                v
            }
            other => vec![other.clone()],
        }
    }

    /// Folds a conjunct list back into one predicate (`None` for an empty list).
    pub fn conjoin(parts: &[Expr]) -> Option<Expr> {
        let mut it = parts.iter().cloned();
        let first = it.next()?;
        Some(it.fold(first, Expr::and))
    }

    /// Static type of the expression, or `None` for a bare null literal.
    pub fn infer_type(&self, schema: &Schema) -> Result<Option<DataType>, TableError> {
        use DataType::*;
        match self {
            Expr::Column(c) => schema.require(c).map(Some),
            Expr::Literal(v) => Ok(v.data_type()),
            Expr::Unary { op: UnaryOp::Neg, expr } => {
                expect_type(self, expr.infer_type(schema)?, Number)?;
                Ok(Some(Number))
            }
            Expr::Unary { op: UnaryOp::Not, expr } => {
                expect_type(self, expr.infer_type(schema)?, Boolean)?;
                Ok(Some(Boolean))
            }
            Expr::Binary { op, left, right } => {
                let lt = left.infer_type(schema)?;
                let rt = right.infer_type(schema)?;
                match op {
                    BinaryOp::Add | BinaryOp::Sub | BinaryOp::Mul | BinaryOp::Div => {
                        expect_type(self, lt, Number)?;
                        expect_type(self, rt, Number)?;
                        Ok(Some(Number))
                    }
                    BinaryOp::And | BinaryOp::Or => {
                        expect_type(self, lt, Boolean)?;
                        expect_type(self, rt, Boolean)?;
                        Ok(Some(Boolean))
                    }
                    _ => {
                        if let (Some(l), Some(r)) = (lt, rt) {
                            if l != r {
                                return Err(TableError::Type(format!("cannot compare {l} with {r} in `{self}`")));
                            }
                        }
                        Ok(Some(Boolean))
                    }
                }
            }
        }
    }

    /// Type-checks a predicate position.
    pub fn check_predicate(&self, schema: &Schema) -> Result<(), TableError> {
        match self.infer_type(schema)? {
            Some(DataType::Boolean) | None => Ok(()),
            Some(t) => Err(TableError::Type(format!("predicate `{self}` has type {t}, expected boolean"))),
        }
    }

    /// Evaluates against one row; `lookup` resolves a column name to a cell.
    pub fn eval<'a>(&self, lookup: &dyn Fn(&str) -> Option<&'a Value>) -> Result<Value, TableError> {
        match self {
            Expr::Column(c) => {
                lookup(c).cloned().ok_or_else(|| TableError::UnknownColumn { column: c.clone(), schema: String::new() })
            }
            Expr::Literal(v) => Ok(v.clone()),
            Expr::Unary { op, expr } => {
                let v = expr.eval(lookup)?;
                Ok(match (op, v) {
                    (_, Value::Null) => Value::Null,
                    (UnaryOp::Neg, Value::Number(x)) => Value::Number(-x),
                    (UnaryOp::Not, Value::Bool(b)) => Value::Bool(!b),
                    (_, v) => return Err(TableError::Type(format!("bad operand {v} in `{self}`"))),
                })
            }
            Expr::Binary { op: BinaryOp::And, left, right } => {
                let l = left.eval(lookup)?;
                if l == Value::Bool(false) {
                    return Ok(l);
                }
                let r = right.eval(lookup)?;
                Ok(match (l, r) {
                    (_, Value::Bool(false)) => Value::Bool(false),
                    (Value::Bool(true), Value::Bool(true)) => Value::Bool(true),
                    _ => Value::Null,
                })
            }
            Expr::Binary { op: BinaryOp::Or, left, right } => {
                let l = left.eval(lookup)?;
                if l == Value::Bool(true) {
                    return Ok(l);
                }
                let r = right.eval(lookup)?;
                Ok(match (l, r) {
                    (_, Value::Bool(true)) => Value::Bool(true),
                    (Value::Bool(false), Value::Bool(false)) => Value::Bool(false),
                    _ => Value::Null,
                })
            }
            Expr::Binary { op, left, right } => {
                let l = left.eval(lookup)?;
                let r = right.eval(lookup)?;
                if l.is_null() || r.is_null() {
                    return Ok(Value::Null);
                }
                if op.is_comparison() {
                    if l.data_type() != r.data_type() {
                        return Err(TableError::Type(format!("cannot compare {l} with {r} in `{self}`")));
                    }
                    let ord = l.total_cmp(&r);
                    use std::cmp::Ordering::*;
                    let b = match op {
                        BinaryOp::Eq => ord == Equal,
                        BinaryOp::Ne => ord != Equal,
                        BinaryOp::Lt => ord == Less,
                        BinaryOp::Le => ord != Greater,
                        BinaryOp::Gt => ord == Greater,
                        _ => ord != Less,
                    };
                    return Ok(Value::Bool(b));
                }
                let (Some(x), Some(y)) = (l.as_f64(), r.as_f64()) else {
                    return Err(TableError::Type(format!("arithmetic on non-numbers in `{self}`")));
                };
                let out = match op {
                    BinaryOp::Add => x + y,
                    BinaryOp::Sub => x - y,
                    BinaryOp::Mul => x * y,
                    _ => {
                        if y == 0.0 {
                            return Err(TableError::DivisionByZero { expr: self.to_string() });
                        }
                        x / y
                    }
                };
                Value::number(out).ok_or_else(|| TableError::NonFinite { expr: self.to_string() })
            }
        }
    }
}

fn expect_type(e: &Expr, got: Option<DataType>, want: DataType) -> Result<(), TableError> {
    match got {
        None => Ok(()),
        Some(t) if t == want => Ok(()),
        Some(t) => Err(TableError::Type(format!("`{e}` expects {want} operands, found {t}"))),
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(self, f, 0)
    }
}

fn write_expr(e: &Expr, f: &mut fmt::Formatter<'_>, min_prec: u8) -> fmt::Result {
    match e {
        Expr::Column(c) => f.write_str(c),
        Expr::Literal(Value::Number(x)) if *x < 0.0 => {
            // keep `a - -1` unambiguous
            write!(f, "({})", format_number(*x))
        }
        Expr::Literal(v) => f.write_str(&v.to_literal()),
        Expr::Unary { op: UnaryOp::Neg, expr } => {
            f.write_str("-")?;
            write_expr(expr, f, 7)
        }
        Expr::Unary { op: UnaryOp::Not, expr } => {
            let paren = min_prec > 3;
            if paren {
                f.write_str("(")?;
            }
            f.write_str("not ")?;
            write_expr(expr, f, 3)?;
            if paren {
                f.write_str(")")?;
            }
            Ok(())
        }
        Expr::Binary { op, left, right } => {
            let p = op.precedence();
            let paren = p < min_prec;
            if paren {
                f.write_str("(")?;
            }
            // left-associative: right operand needs strictly higher precedence;
            // comparisons do not chain at all
            let left_min = if op.is_comparison() { p + 1 } else { p };
            write_expr(left, f, left_min)?;
            write!(f, " {} ", op.symbol())?;
            write_expr(right, f, p + 1)?;
            if paren {
                f.write_str(")")?;
            }
            Ok(())
        }
    }
}

impl Serialize for Expr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Expr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Expr::parse(&s).map_err(|e| serde::de::Error::custom(format!("in expression `{s}`: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{message} at offset {offset}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    Str(String),
    Sym(&'static str),
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    text: String,
    offset: usize,
}

fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            let s = &src[start..i];
            out.push(Token { tok: Tok::Ident(s.to_string()), text: s.to_string(), offset: start });
        } else if c.is_ascii_digit() || (c == '.' && i + 1 < bytes.len() && (bytes[i + 1] as char).is_ascii_digit()) {
            while i < bytes.len() && ((bytes[i] as char).is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let save = i;
                i += 1;
                if i < bytes.len() && (bytes[i] == b'+' || bytes[i] == b'-') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                    while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                        i += 1;
                    }
                } else {
                    i = save;
                }
            }
            let s = &src[start..i];
            let x: f64 = s.parse().map_err(|_| ParseError { offset: start, message: format!("bad number `{s}`") })?;
            out.push(Token { tok: Tok::Number(x), text: s.to_string(), offset: start });
        } else if c == '\'' {
            i += 1;
            let mut s = String::new();
            loop {
                if i >= bytes.len() {
                    return Err(ParseError { offset: start, message: "unterminated string".into() });
                }
                if bytes[i] == b'\'' {
                    if i + 1 < bytes.len() && bytes[i + 1] == b'\'' {
                        s.push('\'');
                        i += 2;
                        continue;
                    }
                    i += 1;
                    break;
                }
                let ch = src[i..].chars().next().unwrap();
                s.push(ch);
                i += ch.len_utf8();
            }
            out.push(Token { tok: Tok::Str(s), text: src[start..i].to_string(), offset: start });
        } else {
            const SYMS: [&str; 14] = ["<=", ">=", "!=", "<>", "==", "=", "<", ">", "+", "-", "*", "/", "(", ")"];
            let Some(sym) = SYMS.iter().find(|s| src[i..].starts_with(**s)) else {
                return Err(ParseError { offset: i, message: format!("unexpected character `{c}`") });
            };
            i += sym.len();
            out.push(Token { tok: Tok::Sym(sym), text: sym.to_string(), offset: start });
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn end_offset(&self) -> usize {
        self.tokens.last().map(|t| t.offset + t.text.len()).unwrap_or(0)
    }

    fn binary_op(&self) -> Option<BinaryOp> {
        let t = self.peek()?;
        Some(match &t.tok {
            Tok::Sym("+") => BinaryOp::Add,
            Tok::Sym("-") => BinaryOp::Sub,
            Tok::Sym("*") => BinaryOp::Mul,
            Tok::Sym("/") => BinaryOp::Div,
            Tok::Sym("=") | Tok::Sym("==") => BinaryOp::Eq,
            Tok::Sym("!=") | Tok::Sym("<>") => BinaryOp::Ne,
            Tok::Sym("<") => BinaryOp::Lt,
            Tok::Sym("<=") => BinaryOp::Le,
            Tok::Sym(">") => BinaryOp::Gt,
            Tok::Sym(">=") => BinaryOp::Ge,
            Tok::Ident(s) if s.eq_ignore_ascii_case("and") => BinaryOp::And,
            Tok::Ident(s) if s.eq_ignore_ascii_case("or") => BinaryOp::Or,
            _ => return None,
        })
    }

    fn expr(&mut self, min_prec: u8) -> Result<Expr, ParseError> {
        let mut left = self.unary()?;
        while let Some(op) = self.binary_op() {
            let p = op.precedence();
            if p < min_prec {
                break;
            }
            let offset = self.peek().map(|t| t.offset).unwrap_or(0);
            self.pos += 1;
            let right = self.expr(p + 1)?;
            if op.is_comparison() {
                if let Some(next) = self.binary_op() {
                    if next.is_comparison() {
                        return Err(ParseError { offset, message: "comparisons do not chain".into() });
                    }
                }
            }
            left = Expr::binary(op, left, right);
        }
        Ok(left)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.peek().map(|t| t.tok.clone()) {
            Some(Tok::Ident(s)) if s.eq_ignore_ascii_case("not") => {
                self.pos += 1;
                let e = self.expr(3)?;
                Ok(Expr::Unary { op: UnaryOp::Not, expr: Box::new(e) })
            }
            Some(Tok::Sym("-")) => {
                self.pos += 1;
                let e = self.unary()?;
                Ok(match e {
                    Expr::Literal(Value::Number(x)) => Expr::Literal(Value::Number(-x)),
                    e => Expr::Unary { op: UnaryOp::Neg, expr: Box::new(e) },
                })
            }
            _ => self.primary(),
        }
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let Some(t) = self.peek().cloned() else {
            return Err(ParseError { offset: self.end_offset(), message: "unexpected end of expression".into() });
        };
        self.pos += 1;
        match t.tok {
            Tok::Number(x) => Ok(Expr::Literal(Value::Number(x))),
            Tok::Str(s) => Ok(Expr::Literal(Value::Text(s))),
            Tok::Ident(s) => match s.to_ascii_lowercase().as_str() {
                "true" => Ok(Expr::Literal(Value::Bool(true))),
                "false" => Ok(Expr::Literal(Value::Bool(false))),
                "null" => Ok(Expr::Literal(Value::Null)),
                "and" | "or" | "not" => Err(ParseError { offset: t.offset, message: format!("unexpected `{s}`") }),
                _ => Ok(Expr::Column(s)),
            },
            Tok::Sym("(") => {
                let e = self.expr(0)?;
                match self.peek() {
                    Some(Token { tok: Tok::Sym(")"), .. }) => {
                        self.pos += 1;
                        Ok(e)
                    }
                    _ => Err(ParseError { offset: t.offset, message: "unbalanced `(`".into() }),
                }
            }
            Tok::Sym(s) => Err(ParseError { offset: t.offset, message: format!("unexpected `{s}`") }),
        }
    }
}
