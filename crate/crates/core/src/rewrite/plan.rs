use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::table::{AggFn, Aggregate, DataType, Expr, Pipeline, Schema, Table, TableError, TransformOp, Value};
use crate::task::TaskResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Over {
    /// Marks kept by the latest `FilterMarks`.
    Selected,
    All,
}

/// A total the viewer is assumed to know: `func(input)` over the source rows
/// passing `filter`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct TotalRef {
    #[serde(rename = "fn")]
    pub func: AggFn,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<Expr>,
}

impl TotalRef {
    pub fn compute(&self, d: &Table) -> Result<f64, TableError> {
        let mut ops = Vec::new();
        if let Some(p) = &self.filter {
            ops.push(TransformOp::Filter { predicate: p.clone() });
        }
        ops.push(TransformOp::GroupAggregate {
            keys: Vec::new(),
            aggs: vec![Aggregate::new(self.func, self.input.as_deref(), "__total")],
        });
        let t = Pipeline::new(ops).execute(d)?;
        Ok(t.rows()[0][0].as_f64().unwrap_or(0.0))
    }
}

impl fmt::Display for TotalRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.func, self.input.as_deref().unwrap_or(""))?;
        if let Some(p) = &self.filter {
            write!(f, " where {p}")?;
        }
        Ok(())
    }
}

/// One step of a proxy computation over the marks. Plans run on a stack:
/// reads and aggregates push, arithmetic pops its operands and pushes the result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "camelCase", deny_unknown_fields)]
pub enum ProxyOp {
    FilterMarks {
        predicate: Expr,
    },
    /// Without `keys`, reads the single selected mark. With `keys`, reads a
    /// table of key columns and `attr`.
    ReadValue {
        attr: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        keys: Option<Vec<String>>,
        over: Over,
    },
    ComputeAggregate {
        #[serde(rename = "fn")]
        func: AggFn,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        attr: Option<String>,
        #[serde(default, rename = "groupBy", skip_serializing_if = "Vec::is_empty")]
        group_by: Vec<String>,
        over: Over,
    },
    SumK {
        k: usize,
    },
    Difference,
    Ratio,
    /// Segment size from stack endpoints: upper minus lower.
    InvertStack,
    /// Multiplies a share by a total the viewer knows.
    InvertNormalize {
        total: TotalRef,
    },
}

impl ProxyOp {
    pub const KINDS: [&'static str; 8] = [
        "filterMarks",
        "readValue",
        "computeAggregate",
        "sumK",
        "difference",
        "ratio",
        "invertStack",
        "invertNormalize",
    ];

    pub fn kind(&self) -> &'static str {
        match self {
            ProxyOp::FilterMarks { .. } => "filterMarks",
            ProxyOp::ReadValue { .. } => "readValue",
            ProxyOp::ComputeAggregate { .. } => "computeAggregate",
            ProxyOp::SumK { .. } => "sumK",
            ProxyOp::Difference => "difference",
            ProxyOp::Ratio => "ratio",
            ProxyOp::InvertStack => "invertStack",
            ProxyOp::InvertNormalize { .. } => "invertNormalize",
        }
    }

    pub fn is_inversion(&self) -> bool {
        matches!(self, ProxyOp::InvertStack | ProxyOp::InvertNormalize { .. })
    }

    /// Mark attributes the op reads.
    pub fn attributes(&self) -> Vec<String> {
        match self {
            ProxyOp::FilterMarks { predicate } => predicate.columns().into_iter().collect(),
            ProxyOp::ReadValue { attr, keys, .. } => {
                let mut v = keys.clone().unwrap_or_default();
                v.push(attr.clone());
                v
            }
            ProxyOp::ComputeAggregate { attr, group_by, .. } => {
                let mut v = group_by.clone();
                v.extend(attr.clone());
                v
            }
            _ => Vec::new(),
        }
    }
}

impl fmt::Display for ProxyOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let over = |o: &Over| if *o == Over::All { " over all" } else { "" };
        match self {
            ProxyOp::FilterMarks { predicate } => write!(f, "filterMarks({predicate})"),
            ProxyOp::ReadValue { attr, keys: None, over: o } => write!(f, "read({attr}){}", over(o)),
            ProxyOp::ReadValue { attr, keys: Some(k), over: o } => {
                write!(f, "read({attr} by {}){}", k.join(", "), over(o))
            }
            ProxyOp::ComputeAggregate { func, attr, group_by, over: o } => {
                write!(f, "{func}({})", attr.as_deref().unwrap_or(""))?;
                if !group_by.is_empty() {
                    write!(f, " by {}", group_by.join(", "))?;
                }
                f.write_str(over(o))
            }
            ProxyOp::SumK { k } => write!(f, "sum of {k}"),
            ProxyOp::Difference => f.write_str("difference"),
            ProxyOp::Ratio => f.write_str("ratio"),
            ProxyOp::InvertStack => f.write_str("invertStack"),
            ProxyOp::InvertNormalize { total } => write!(f, "invertNormalize(× {total})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossyReason {
    CountFromSum,
    SumFromCount,
    AvgFromSum,
    AvgFromCount,
    AbsoluteFromNormalized,
    RawRowFromAggregate,
    FinerFromCoarserGrouping,
    GroupingMismatch,
    StatMismatch,
    UnreadableAttribute,
    RowsFilteredOut,
    FilterOnAggregatedColumn,
}

impl LossyReason {
    pub const ALL: [LossyReason; 12] = [
        LossyReason::CountFromSum,
        LossyReason::SumFromCount,
        LossyReason::AvgFromSum,
        LossyReason::AvgFromCount,
        LossyReason::AbsoluteFromNormalized,
        LossyReason::RawRowFromAggregate,
        LossyReason::FinerFromCoarserGrouping,
        LossyReason::GroupingMismatch,
        LossyReason::StatMismatch,
        LossyReason::UnreadableAttribute,
        LossyReason::RowsFilteredOut,
        LossyReason::FilterOnAggregatedColumn,
    ];

    pub fn name(self) -> String {
        serde_json::to_value(self).unwrap().as_str().unwrap().to_string()
    }
}

impl fmt::Display for LossyReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum Verdict {
    Precomputed,
    Derivable,
    Adverse { inversions: Vec<String> },
    Impossible { reason: LossyReason },
}

impl Verdict {
    pub fn is_answerable(&self) -> bool {
        !matches!(self, Verdict::Impossible { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Verdict::Precomputed => "precomputed",
            Verdict::Derivable => "derivable",
            Verdict::Adverse { .. } => "adverse",
            Verdict::Impossible { .. } => "impossible",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Adverse { inversions } => write!(f, "adverse ({})", inversions.join(", ")),
            Verdict::Impossible { reason } => write!(f, "impossible ({reason})"),
            v => f.write_str(v.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum Assumption {
    KnownTotal {
        total: TotalRef,
    },
    /// Averages recovered as sum over count require the input to have no nulls.
    NonNull {
        column: String,
    },
    /// The key column only takes these values; the first is the stack base.
    KeyDomain {
        column: String,
        values: Vec<Value>,
    },
}

/// Size of the mark table used to price scans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CardinalityHint {
    pub marks: usize,
    pub per_selection: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProxyPlan {
    pub verdict: Verdict,
    pub ops: Vec<ProxyOp>,
    pub view_level: bool,
    pub assumptions: Vec<Assumption>,
    /// Column names of a table-valued result, in order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<Vec<String>>,
    pub rules: Vec<String>,
    pub task_steps: Vec<String>,
    pub precomputed_steps: Vec<String>,
    pub hint: CardinalityHint,
}

impl ProxyPlan {
    pub fn impossible(reason: LossyReason, view_level: bool, task_steps: Vec<String>, hint: CardinalityHint) -> Self {
        ProxyPlan {
            verdict: Verdict::Impossible { reason },
            ops: Vec::new(),
            view_level,
            assumptions: Vec::new(),
            output: None,
            rules: Vec::new(),
            task_steps,
            precomputed_steps: Vec::new(),
            hint,
        }
    }

    pub fn attributes(&self) -> Vec<String> {
        let mut v: Vec<String> = self.ops.iter().flat_map(ProxyOp::attributes).collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn summary(&self) -> String {
        if let Verdict::Impossible { reason } = &self.verdict {
            return format!("no plan ({reason})");
        }
        self.ops.iter().map(|o| o.to_string()).collect::<Vec<_>>().join("; ")
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlanError {
    #[error("plan reads attribute {attr}, which the marks do not carry")]
    UnreadableAttribute { attr: String },
    #[error("plan evaluation: {0}")]
    Eval(String),
    #[error("plan needs known total {0}, which was not supplied")]
    MissingTotal(String),
    #[error(transparent)]
    Table(#[from] TableError),
}

/// Totals the viewer is assumed to know, keyed by their rendering.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExecContext {
    totals: BTreeMap<String, f64>,
}

impl ExecContext {
    /// Computes every total a plan assumes from the source data.
    pub fn from_source(plan: &ProxyPlan, d: &Table) -> Result<Self, TableError> {
        let mut totals = BTreeMap::new();
        for op in &plan.ops {
            if let ProxyOp::InvertNormalize { total } = op {
                totals.insert(total.to_string(), total.compute(d)?);
            }
        }
        Ok(ExecContext { totals })
    }
}

#[derive(Debug, Clone)]
enum Entry {
    Scalar(Value),
    Table(Table),
}

fn num(v: &Value) -> Result<Option<f64>, PlanError> {
    match v {
        Value::Null => Ok(None),
        Value::Number(x) => Ok(Some(*x)),
        other => Err(PlanError::Eval(format!("expected a number, got {other}"))),
    }
}

fn combine(l: &Value, r: &Value, f: &dyn Fn(f64, f64) -> Result<f64, PlanError>) -> Result<Value, PlanError> {
    match (num(l)?, num(r)?) {
        (Some(a), Some(b)) => Ok(Value::from(f(a, b)?)),
        _ => Ok(Value::Null),
    }
}

fn key_of(row: &[Value]) -> Vec<Value> {
    row[..row.len() - 1].to_vec()
}

fn with_values(t: &Table, values: Vec<Value>) -> Result<Table, TableError> {
    let n = t.schema().len();
    let mut cols = t.schema().columns().to_vec();
    cols[n - 1].ty = DataType::Number;
    let rows = t
        .rows()
        .iter()
        .zip(values)
        .map(|(r, v)| {
            let mut r = r.clone();
            r[n - 1] = v;
            r
        })
        .collect();
    Table::new(Schema::new(cols)?, rows)
}

fn binary(l: Entry, r: Entry, f: &dyn Fn(f64, f64) -> Result<f64, PlanError>) -> Result<Entry, PlanError> {
    match (l, r) {
        (Entry::Scalar(a), Entry::Scalar(b)) => Ok(Entry::Scalar(combine(&a, &b, f)?)),
        (Entry::Table(t), Entry::Scalar(s)) => {
            let vals = t.rows().iter().map(|r| combine(r.last().unwrap(), &s, f)).collect::<Result<_, _>>()?;
            Ok(Entry::Table(with_values(&t, vals)?))
        }
        (Entry::Scalar(s), Entry::Table(t)) => {
            let vals = t.rows().iter().map(|r| combine(&s, r.last().unwrap(), f)).collect::<Result<_, _>>()?;
            Ok(Entry::Table(with_values(&t, vals)?))
        }
        (Entry::Table(a), Entry::Table(b)) => {
            if a.len() != b.len() || a.schema().len() != b.schema().len() {
                return Err(PlanError::Eval("operand tables do not align".into()));
            }
            let mut vals = Vec::with_capacity(a.len());
            for ra in a.rows() {
                let k = key_of(ra);
                let mut hits = b.rows().iter().filter(|rb| key_of(rb) == k);
                let (Some(rb), None) = (hits.next(), hits.next()) else {
                    return Err(PlanError::Eval("operand tables do not align on keys".into()));
                };
                vals.push(combine(ra.last().unwrap(), rb.last().unwrap(), f)?);
            }
            Ok(Entry::Table(with_values(&a, vals)?))
        }
    }
}

fn ratio(a: f64, b: f64) -> Result<f64, PlanError> {
    if b == 0.0 {
        return Err(PlanError::Table(TableError::DivisionByZero { expr: format!("{a} / {b}") }));
    }
    Ok(a / b)
}

fn marks_table(view: &Table, rows: &[usize]) -> Result<Table, TableError> {
    Table::new(view.schema().clone(), rows.iter().map(|&i| view.rows()[i].clone()).collect())
}

/// Runs `plan` against the marks `view` (the prepared table, or its readable
/// projection).
pub fn execute_plan(plan: &ProxyPlan, view: &Table, ctx: &ExecContext) -> Result<TaskResult, PlanError> {
    for a in plan.attributes() {
        if !view.schema().contains(&a) {
            return Err(PlanError::UnreadableAttribute { attr: a });
        }
    }
    let all: Vec<usize> = (0..view.len()).collect();
    let mut selected = all.clone();
    let mut stack: Vec<Entry> = Vec::new();
    let pop = |stack: &mut Vec<Entry>| stack.pop().ok_or_else(|| PlanError::Eval("stack underflow".into()));
    for op in &plan.ops {
        match op {
            ProxyOp::FilterMarks { predicate } => {
                selected.clear();
                for (i, r) in view.rows().iter().enumerate() {
                    let lookup = |n: &str| view.schema().index_of(n).map(|j| &r[j]);
                    if predicate.eval(&lookup)? == Value::Bool(true) {
                        selected.push(i);
                    }
                }
            }
            ProxyOp::ReadValue { attr, keys, over } => {
                let rows = if *over == Over::All { &all } else { &selected };
                match keys {
                    None => match rows.as_slice() {
                        [i] => stack.push(Entry::Scalar(view.get(*i, attr).cloned().unwrap_or(Value::Null))),
                        _ => {
                            return Err(PlanError::Eval(format!(
                                "read({attr}) needs exactly one mark, {} selected",
                                rows.len()
                            )))
                        }
                    },
                    Some(keys) => {
                        let mut cols: Vec<&str> = keys.iter().map(String::as_str).collect();
                        cols.push(attr);
                        stack.push(Entry::Table(marks_table(view, rows)?.project(&cols)?));
                    }
                }
            }
            ProxyOp::ComputeAggregate { func, attr, group_by, over } => {
                let rows = if *over == Over::All { &all } else { &selected };
                let name = if group_by.iter().any(|k| k == "value") { "__value" } else { "value" };
                let p = Pipeline::new(vec![TransformOp::GroupAggregate {
                    keys: group_by.clone(),
                    aggs: vec![Aggregate::new(*func, attr.as_deref(), name)],
                }]);
                let t = p.execute(&marks_table(view, rows)?)?;
                if group_by.is_empty() {
                    stack.push(Entry::Scalar(t.rows()[0][0].clone()));
                } else {
                    stack.push(Entry::Table(t));
                }
            }
            ProxyOp::SumK { k } => {
                if *k == 0 || stack.len() < *k {
                    return Err(PlanError::Eval(format!("sum of {k} needs {k} operands")));
                }
                let mut acc = pop(&mut stack)?;
                for _ in 1..*k {
                    let l = pop(&mut stack)?;
                    acc = binary(l, acc, &|a, b| Ok(a + b))?;
                }
                stack.push(acc);
            }
            ProxyOp::Difference | ProxyOp::InvertStack => {
                let r = pop(&mut stack)?;
                let l = pop(&mut stack)?;
                stack.push(binary(l, r, &|a, b| Ok(a - b))?);
            }
            ProxyOp::Ratio => {
                let r = pop(&mut stack)?;
                let l = pop(&mut stack)?;
                stack.push(binary(l, r, &ratio)?);
            }
            ProxyOp::InvertNormalize { total } => {
                let key = total.to_string();
                let t = *ctx.totals.get(&key).ok_or(PlanError::MissingTotal(key))?;
                let x = pop(&mut stack)?;
                stack.push(binary(x, Entry::Scalar(Value::Number(t)), &|a, b| Ok(a * b))?);
            }
        }
    }
    let top = pop(&mut stack)?;
    if !stack.is_empty() {
        return Err(PlanError::Eval(format!("{} values left over", stack.len())));
    }
    match (top, &plan.output) {
        (Entry::Scalar(v), None) => Ok(TaskResult::Scalar(v)),
        (Entry::Table(t), Some(names)) => Ok(TaskResult::Table(t.renamed(names)?)),
        (Entry::Scalar(v), Some(names)) if names.len() == 1 => {
            let ty = v.data_type().unwrap_or(DataType::Number);
            Ok(TaskResult::Table(Table::new(Schema::of(&[(names[0].as_str(), ty)]), vec![vec![v]])?))
        }
        (Entry::Table(_), None) => Err(PlanError::Eval("plan yields a table, task wants a value".into())),
        (Entry::Scalar(_), Some(_)) => Err(PlanError::Eval("plan yields a value, task wants a table".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::DataType::*;

    fn marks() -> Table {
        Table::new(
            Schema::of(&[("a", Text), ("d0", Number), ("d", Number)]),
            vec![
                vec!["A".into(), 0.0.into(), 0.375.into()],
                vec!["B".into(), 0.375.into(), 0.75.into()],
                vec!["C".into(), 0.75.into(), 1.0.into()],
            ],
        )
        .unwrap()
    }

    fn plan(ops: Vec<ProxyOp>, output: Option<Vec<String>>) -> ProxyPlan {
        ProxyPlan {
            verdict: Verdict::Derivable,
            ops,
            view_level: true,
            assumptions: Vec::new(),
            output,
            rules: Vec::new(),
            task_steps: Vec::new(),
            precomputed_steps: Vec::new(),
            hint: CardinalityHint { marks: 3, per_selection: 1 },
        }
    }

    fn read(attr: &str) -> ProxyOp {
        ProxyOp::ReadValue { attr: attr.into(), keys: None, over: Over::Selected }
    }

    #[test]
    fn segment_from_endpoints() {
        let p = plan(
            vec![
                ProxyOp::FilterMarks { predicate: Expr::col_eq("a", "B") },
                read("d"),
                read("d0"),
                ProxyOp::InvertStack,
            ],
            None,
        );
        let got = execute_plan(&p, &marks(), &ExecContext::default()).unwrap();
        assert!(got.approx_eq(&TaskResult::Scalar(Value::Number(0.375)), 1e-12));
    }

    #[test]
    fn table_arithmetic_aligns_on_keys() {
        let p = plan(
            vec![
                ProxyOp::ReadValue { attr: "d".into(), keys: Some(vec!["a".into()]), over: Over::All },
                ProxyOp::ReadValue { attr: "d0".into(), keys: Some(vec!["a".into()]), over: Over::All },
                ProxyOp::InvertStack,
            ],
            Some(vec!["a".into(), "p".into()]),
        );
        let TaskResult::Table(t) = execute_plan(&p, &marks(), &ExecContext::default()).unwrap() else { panic!() };
        assert_eq!(t.get(2, "p"), Some(&Value::Number(0.25)));
    }

    #[test]
    fn read_needs_one_mark() {
        let p = plan(vec![read("d")], None);
        assert!(matches!(execute_plan(&p, &marks(), &ExecContext::default()), Err(PlanError::Eval(_))));
    }

    #[test]
    fn unreadable_attribute_is_reported() {
        let p = plan(vec![read("perc")], None);
        assert_eq!(
            execute_plan(&p, &marks(), &ExecContext::default()),
            Err(PlanError::UnreadableAttribute { attr: "perc".into() })
        );
    }

    #[test]
    fn aggregate_over_all_ignores_selection() {
        let p = plan(
            vec![
                ProxyOp::FilterMarks { predicate: Expr::col_eq("a", "A") },
                ProxyOp::ComputeAggregate {
                    func: AggFn::Sum,
                    attr: Some("d".into()),
                    group_by: vec![],
                    over: Over::All,
                },
            ],
            None,
        );
        let got = execute_plan(&p, &marks(), &ExecContext::default()).unwrap();
        assert!(got.approx_eq(&TaskResult::Scalar(Value::Number(2.125)), 1e-12));
    }

    #[test]
    fn op_serde_round_trip() {
        let op =
            ProxyOp::ComputeAggregate { func: AggFn::Count, attr: None, group_by: vec!["a".into()], over: Over::All };
        let j = serde_json::to_string(&op).unwrap();
        assert_eq!(j, r#"{"op":"computeAggregate","fn":"count","groupBy":["a"],"over":"all"}"#);
        assert_eq!(serde_json::from_str::<ProxyOp>(&j).unwrap(), op);
        assert_eq!(LossyReason::CountFromSum.name(), "count-from-sum");
    }
}
