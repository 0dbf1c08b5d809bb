//! Analytic tasks `q(D)`: a pipeline over the source table plus an optional
//! scalar extraction, with templates and enumerable task sets.

mod parser;
mod taskset;
mod template;

use std::fmt;

use serde::Serialize;

use crate::table::{Expr, Pipeline, Schema, Table, TableError, Value};

pub use parser::{parse_document, parse_task, Document};
pub use taskset::{enumerate_task_set, Member, TaskSet};
pub use template::{HoleDomain, HoleKind, Param, TaskTemplate};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TaskError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("line {line}: {source}")]
    Invalid { line: usize, source: TableError },
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("extraction error: {0}")]
    Extraction(String),
    #[error("template error: {0}")]
    Template(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CombineOp {
    Sum,
    Difference,
    Ratio,
}

impl CombineOp {
    pub fn from_name(s: &str) -> Option<CombineOp> {
        match s {
            "sum" => Some(CombineOp::Sum),
            "difference" => Some(CombineOp::Difference),
            "ratio" => Some(CombineOp::Ratio),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CombineOp::Sum => "sum",
            CombineOp::Difference => "difference",
            CombineOp::Ratio => "ratio",
        }
    }

    pub fn apply(self, l: f64, r: f64) -> Result<f64, TableError> {
        let v = match self {
            CombineOp::Sum => l + r,
            CombineOp::Difference => l - r,
            CombineOp::Ratio => {
                if r == 0.0 {
                    return Err(TableError::DivisionByZero { expr: format!("{l} / {r}") });
                }
                l / r
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(TableError::NonFinite { expr: format!("{} of {l} and {r}", self.name()) })
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            CombineOp::Sum => "+",
            CombineOp::Difference => "-",
            CombineOp::Ratio => "/",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum Scalar {
    /// The `column` value of the single row matching `at`.
    ValueAt {
        column: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        at: Option<Expr>,
    },
    Combine {
        op: CombineOp,
        left: Box<Scalar>,
        right: Box<Scalar>,
    },
}

impl Scalar {
    fn check(&self, out: &Schema) -> Result<(), TableError> {
        match self {
            Scalar::ValueAt { column, at } => {
                out.require(column)?;
                if let Some(p) = at {
                    p.check_predicate(out)?;
                }
                Ok(())
            }
            Scalar::Combine { left, right, .. } => {
                left.check(out)?;
                right.check(out)
            }
        }
    }

    fn eval(&self, t: &Table) -> Result<Value, TaskError> {
        match self {
            Scalar::ValueAt { column, at } => {
                let mut hits = Vec::new();
                for (i, r) in t.rows().iter().enumerate() {
                    let keep = match at {
                        None => true,
                        Some(p) => {
                            let lookup = |n: &str| t.schema().index_of(n).map(|j| &r[j]);
                            p.eval(&lookup)? == Value::Bool(true)
                        }
                    };
                    if keep {
                        hits.push(i);
                    }
                }
                match hits.as_slice() {
                    [i] => Ok(t.get(*i, column).cloned().unwrap_or(Value::Null)),
                    _ => Err(TaskError::Extraction(format!(
                        "{} matched {} rows, expected exactly one",
                        self,
                        hits.len()
                    ))),
                }
            }
            Scalar::Combine { op, left, right } => {
                let (l, r) = (left.eval(t)?, right.eval(t)?);
                match (l.as_f64(), r.as_f64()) {
                    (Some(l), Some(r)) => Ok(Value::from(op.apply(l, r)?)),
                    _ => Err(TaskError::Extraction(format!("{} needs two numbers, got {l} and {r}", op.name()))),
                }
            }
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::ValueAt { column, at: Some(p) } => write!(f, "{column} at {p}"),
            Scalar::ValueAt { column, at: None } => write!(f, "{column}"),
            Scalar::Combine { op, left, right } => write!(f, "({left}) {} ({right})", op.symbol()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum ResultSpec {
    FullTable,
    Scalar { scalar: Scalar },
}

/// `q(D)` over a declared input schema.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskQuery {
    pub schema: Schema,
    pub body: Pipeline,
    pub result: ResultSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum TaskResult {
    Table(Table),
    Scalar(Value),
}

impl TaskResult {
    pub fn approx_eq(&self, other: &TaskResult, eps: f64) -> bool {
        match (self, other) {
            (TaskResult::Table(a), TaskResult::Table(b)) => crate::table::tables_equal(a, b, eps),
            (TaskResult::Scalar(a), TaskResult::Scalar(b)) => crate::table::values_approx_eq(a, b, eps),
            _ => false,
        }
    }
}

impl fmt::Display for TaskResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskResult::Table(t) => write!(f, "{t}"),
            TaskResult::Scalar(v) => write!(f, "{v}"),
        }
    }
}

impl TaskQuery {
    pub fn new(schema: Schema, body: Pipeline, result: ResultSpec) -> Result<Self, TableError> {
        let out = body.output_schema(&schema)?;
        if let ResultSpec::Scalar { scalar } = &result {
            scalar.check(&out)?;
        }
        Ok(TaskQuery { schema, body, result })
    }

    pub fn output_schema(&self) -> Schema {
        self.body.output_schema(&self.schema).expect("checked at construction")
    }

    pub fn scalar(&self) -> Option<&Scalar> {
        match &self.result {
            ResultSpec::Scalar { scalar } => Some(scalar),
            ResultSpec::FullTable => None,
        }
    }
}

impl fmt::Display for TaskQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.result {
            ResultSpec::FullTable => write!(f, "{}", self.body),
            ResultSpec::Scalar { scalar } => write!(f, "{} => {scalar}", self.body),
        }
    }
}

/// Ground truth: `q` executed directly on `d`.
pub fn evaluate_task(q: &TaskQuery, d: &Table) -> Result<TaskResult, TaskError> {
    if d.schema() != &q.schema {
        return Err(TaskError::Table(TableError::Schema(format!(
            "data schema {} does not match task schema {}",
            d.schema(),
            q.schema
        ))));
    }
    let out = q.body.execute(d)?;
    match &q.result {
        ResultSpec::FullTable => Ok(TaskResult::Table(out)),
        ResultSpec::Scalar { scalar } => scalar.eval(&out).map(TaskResult::Scalar),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::{DataType::*, Schema};

    fn ab() -> Schema {
        Schema::of(&[("a", Text), ("b", Number)])
    }

    fn d(rows: &[(&str, f64)]) -> Table {
        Table::new(ab(), rows.iter().map(|(a, b)| vec![(*a).into(), (*b).into()]).collect()).unwrap()
    }

    #[test]
    fn percent_of_a() {
        let q = parse_task("percent_of b by a at a='A'", Some(&ab())).unwrap();
        assert_eq!(evaluate_task(&q, &d(&[("A", 1.0), ("B", 3.0)])).unwrap(), TaskResult::Scalar(Value::Number(0.25)));
    }

    #[test]
    fn count_by_a() {
        let q = parse_task("count by a", Some(&ab())).unwrap();
        let got = evaluate_task(&q, &d(&[("A", 1.0), ("A", 2.0), ("B", 3.0)])).unwrap();
        let want = Table::new(
            Schema::of(&[("a", Text), ("c", Number)]),
            vec![vec!["A".into(), 2.0.into()], vec!["B".into(), 1.0.into()]],
        )
        .unwrap();
        assert!(got.approx_eq(&TaskResult::Table(want), 0.0));
    }

    #[test]
    fn empty_data_fails_extraction() {
        let q = parse_task("percent_of b by a at a='A'", Some(&ab())).unwrap();
        assert!(matches!(evaluate_task(&q, &d(&[])), Err(TaskError::Extraction(_))));
    }

    #[test]
    fn full_table_matches_pipeline() {
        let q = parse_task("avg b by a", Some(&ab())).unwrap();
        let data = d(&[("A", 1.0), ("A", 2.0), ("B", 3.0)]);
        assert_eq!(evaluate_task(&q, &data).unwrap(), TaskResult::Table(q.body.execute(&data).unwrap()));
    }

    #[test]
    fn combine_difference() {
        let q = parse_task(
            "x = percent_of b by a at a='B'\ny = percent_of b by a at a='C'\ncombine(x, difference, y)",
            Some(&ab()),
        )
        .unwrap();
        let r = evaluate_task(&q, &d(&[("A", 1.0), ("B", 2.0), ("C", 1.0)])).unwrap();
        assert!(r.approx_eq(&TaskResult::Scalar(Value::Number(0.25)), 1e-12));
    }
}
