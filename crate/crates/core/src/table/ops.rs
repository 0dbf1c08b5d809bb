use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::expr::Expr;
use super::schema::Schema;
use super::table::Table;
use super::value::{DataType, Value};
use super::TableError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggFn {
    Sum,
    Count,
    Avg,
    Min,
    Max,
}

impl AggFn {
    pub const ALL: [AggFn; 5] = [AggFn::Sum, AggFn::Count, AggFn::Avg, AggFn::Min, AggFn::Max];

    pub fn name(self) -> &'static str {
        match self {
            AggFn::Sum => "sum",
            AggFn::Count => "count",
            AggFn::Avg => "avg",
            AggFn::Min => "min",
            AggFn::Max => "max",
        }
    }

    pub fn from_name(s: &str) -> Option<AggFn> {
        AggFn::ALL.into_iter().find(|f| f.name() == s)
    }

    /// Applies the aggregate to one group. `count` counts rows, the others
    /// skip nulls and yield null when nothing is left.
    pub fn apply<'a>(self, values: impl Iterator<Item = &'a Value>, rows: usize) -> Value {
        if self == AggFn::Count {
            return Value::Number(rows as f64);
        }
        let present: Vec<&Value> = values.filter(|v| !v.is_null()).collect();
        if present.is_empty() {
            return Value::Null;
        }
        match self {
            AggFn::Sum => Value::from(present.iter().filter_map(|v| v.as_f64()).sum::<f64>()),
            AggFn::Avg => {
                let s: f64 = present.iter().filter_map(|v| v.as_f64()).sum();
                Value::from(s / present.len() as f64)
            }
            AggFn::Min => (*present.iter().min_by(|a, b| a.total_cmp(b)).unwrap()).clone(),
            AggFn::Max => (*present.iter().max_by(|a, b| a.total_cmp(b)).unwrap()).clone(),
            AggFn::Count => unreachable!(),
        }
    }
}

impl fmt::Display for AggFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aggregate {
    #[serde(rename = "fn")]
    pub func: AggFn,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
    #[serde(rename = "as")]
    pub output: String,
}

impl Aggregate {
    pub fn new(func: AggFn, input: Option<&str>, output: &str) -> Self {
        Aggregate { func, input: input.map(str::to_string), output: output.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SortKey {
    pub column: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub descending: bool,
}

impl SortKey {
    pub fn asc(column: &str) -> Self {
        SortKey { column: column.to_string(), descending: false }
    }
}

/// One step of a design-specific transformation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "camelCase", deny_unknown_fields)]
pub enum TransformOp {
    Filter {
        predicate: Expr,
    },
    Derive {
        #[serde(rename = "as")]
        output: String,
        expr: Expr,
    },
    Project {
        columns: Vec<String>,
    },
    GroupAggregate {
        keys: Vec<String>,
        aggs: Vec<Aggregate>,
    },
    /// `value / sum(column)` over the whole table.
    Normalize {
        input: String,
        #[serde(rename = "as")]
        output: String,
    },
    /// Running sum in `order_by` order, emitted as `[lower, upper)` endpoints.
    /// Row order is left untouched.
    Stack {
        input: String,
        #[serde(rename = "orderBy")]
        order_by: Vec<String>,
        lower: String,
        upper: String,
    },
    Bin {
        input: String,
        width: f64,
        #[serde(rename = "as")]
        output: String,
    },
    Sort {
        keys: Vec<SortKey>,
    },
    Limit {
        n: usize,
    },
}

impl TransformOp {
    pub fn kind(&self) -> &'static str {
        match self {
            TransformOp::Filter { .. } => "filter",
            TransformOp::Derive { .. } => "derive",
            TransformOp::Project { .. } => "project",
            TransformOp::GroupAggregate { .. } => "groupAggregate",
            TransformOp::Normalize { .. } => "normalize",
            TransformOp::Stack { .. } => "stack",
            TransformOp::Bin { .. } => "bin",
            TransformOp::Sort { .. } => "sort",
            TransformOp::Limit { .. } => "limit",
        }
    }

    /// Schema produced by this op given its input schema.
    pub fn output_schema(&self, input: &Schema) -> Result<Schema, TableError> {
        match self {
            TransformOp::Filter { predicate } => {
                predicate.check_predicate(input)?;
                Ok(input.clone())
            }
            TransformOp::Derive { output, expr } => {
                let ty = expr.infer_type(input)?.unwrap_or(DataType::Number);
                input.with(output, ty)
            }
            TransformOp::Project { columns } => {
                let cols = columns
                    .iter()
                    .map(|c| input.require(c).map(|t| super::Column::new(c.clone(), t)))
                    .collect::<Result<Vec<_>, _>>()?;
                Schema::new(cols)
            }
            TransformOp::GroupAggregate { keys, aggs } => {
                let mut out = Vec::new();
                for k in keys {
                    out.push(super::Column::new(k.clone(), input.require(k)?));
                }
                let mut schema = Schema::new(out)?;
                for a in aggs {
                    let ty = match (a.func, &a.input) {
                        (AggFn::Count, None) => DataType::Number,
                        (AggFn::Count, Some(c)) => {
                            input.require(c)?;
                            DataType::Number
                        }
                        (_, None) => return Err(TableError::InvalidOp(format!("{}() needs an input column", a.func))),
                        (AggFn::Sum | AggFn::Avg, Some(c)) => {
                            require_number(input, c)?;
                            DataType::Number
                        }
                        (_, Some(c)) => input.require(c)?,
                    };
                    schema = schema.with(&a.output, ty)?;
                }
                Ok(schema)
            }
            TransformOp::Normalize { input: col, output } => {
                require_number(input, col)?;
                input.with(output, DataType::Number)
            }
            TransformOp::Stack { input: col, order_by, lower, upper } => {
                require_number(input, col)?;
                for k in order_by {
                    input.require(k)?;
                }
                if order_by.is_empty() {
                    return Err(TableError::InvalidOp("stack needs an orderBy column".into()));
                }
                input.with(lower, DataType::Number)?.with(upper, DataType::Number)
            }
            TransformOp::Bin { input: col, width, output } => {
                require_number(input, col)?;
                if !(width.is_finite() && *width > 0.0) {
                    return Err(TableError::InvalidOp(format!("bin width must be positive, got {width}")));
                }
                input.with(output, DataType::Number)
            }
            TransformOp::Sort { keys } => {
                for k in keys {
                    input.require(&k.column)?;
                }
                Ok(input.clone())
            }
            TransformOp::Limit { .. } => Ok(input.clone()),
        }
    }

    /// Executes the op; assumes `output_schema` already accepted the input.
    fn apply(&self, t: &Table, out_schema: Schema) -> Result<Table, TableError> {
        let schema = t.schema();
        let rows = t.rows();
        let out = match self {
            TransformOp::Filter { predicate } => {
                let mut keep = Vec::new();
                for r in rows {
                    if predicate.eval(&row_lookup(schema, r))? == Value::Bool(true) {
                        keep.push(r.clone());
                    }
                }
                keep
            }
            TransformOp::Derive { expr, .. } => rows
                .iter()
                .map(|r| {
                    let v = expr.eval(&row_lookup(schema, r))?;
                    let mut r = r.clone();
                    r.push(v);
                    Ok(r)
                })
                .collect::<Result<_, TableError>>()?,
            TransformOp::Project { columns } => {
                return t.project(&columns.iter().map(String::as_str).collect::<Vec<_>>());
            }
            TransformOp::GroupAggregate { keys, aggs } => group_aggregate(t, keys, aggs),
            TransformOp::Normalize { input, .. } => {
                let i = schema.index_of(input).unwrap();
                let present: Vec<f64> = rows.iter().filter_map(|r| r[i].as_f64()).collect();
                let total: f64 = present.iter().sum();
                if !present.is_empty() && total == 0.0 {
                    return Err(TableError::ZeroTotal { column: input.clone() });
                }
                rows.iter()
                    .map(|r| {
                        let mut r = r.clone();
                        let v = match r[i].as_f64() {
                            Some(x) => Value::number(x / total)
                                .ok_or_else(|| TableError::NonFinite { expr: format!("{input} / total") })?,
                            None => Value::Null,
                        };
                        r.push(v);
                        Ok(r)
                    })
                    .collect::<Result<_, TableError>>()?
            }
            TransformOp::Stack { input, order_by, .. } => {
                let i = schema.index_of(input).unwrap();
                let key_idx: Vec<usize> = order_by.iter().map(|k| schema.index_of(k).unwrap()).collect();
                let mut order: Vec<usize> = (0..rows.len()).collect();
                order.sort_by(|&x, &y| {
                    key_idx
                        .iter()
                        .map(|&k| rows[x][k].total_cmp(&rows[y][k]))
                        .find(|o| o.is_ne())
                        .unwrap_or(Ordering::Equal)
                });
                let mut ends = vec![(Value::Null, Value::Null); rows.len()];
                let mut acc = 0.0;
                for &r in &order {
                    if let Some(x) = rows[r][i].as_f64() {
                        let lo = acc;
                        acc += x;
                        ends[r] = (Value::from(lo), Value::from(acc));
                    }
                }
                rows.iter()
                    .zip(ends)
                    .map(|(r, (lo, hi))| {
                        let mut r = r.clone();
                        r.push(lo);
                        r.push(hi);
                        r
                    })
                    .collect()
            }
            TransformOp::Bin { input, width, .. } => {
                let i = schema.index_of(input).unwrap();
                rows.iter()
                    .map(|r| {
                        let mut r = r.clone();
                        let b = r[i].as_f64().map(|x| Value::from((x / width).floor() * width)).unwrap_or(Value::Null);
                        r.push(b);
                        r
                    })
                    .collect()
            }
            TransformOp::Sort { keys } => {
                let idx: Vec<(usize, bool)> =
                    keys.iter().map(|k| (schema.index_of(&k.column).unwrap(), k.descending)).collect();
                let mut out = rows.to_vec();
                out.sort_by(|a, b| {
                    idx.iter()
                        .map(|&(i, desc)| {
                            let o = a[i].total_cmp(&b[i]);
                            if desc {
                                o.reverse()
                            } else {
                                o
                            }
                        })
                        .find(|o| o.is_ne())
                        .unwrap_or(Ordering::Equal)
                });
                out
            }
            TransformOp::Limit { n } => rows.iter().take(*n).cloned().collect(),
        };
        Ok(Table::from_parts_unchecked(out_schema, out))
    }
}

fn row_lookup<'a>(schema: &'a Schema, row: &'a [Value]) -> impl Fn(&str) -> Option<&'a Value> + 'a {
    move |name| schema.index_of(name).map(|i| &row[i])
}

fn require_number(schema: &Schema, col: &str) -> Result<(), TableError> {
    match schema.require(col)? {
        DataType::Number => Ok(()),
        t => Err(TableError::Type(format!("column {col} is {t}, expected number"))),
    }
}

#[derive(Debug, Clone)]
struct GroupKey(Vec<Value>);

impl PartialEq for GroupKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for GroupKey {}
impl PartialOrd for GroupKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for GroupKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.iter().zip(&other.0).map(|(a, b)| a.total_cmp(b)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
    }
}

/// Groups in first-appearance order of their keys.
fn group_aggregate(t: &Table, keys: &[String], aggs: &[Aggregate]) -> Vec<Vec<Value>> {
    let schema = t.schema();
    let key_idx: Vec<usize> = keys.iter().map(|k| schema.index_of(k).unwrap()).collect();
    let mut slot: BTreeMap<GroupKey, usize> = BTreeMap::new();
    let mut groups: Vec<(Vec<Value>, Vec<usize>)> = Vec::new();
    for (ri, r) in t.rows().iter().enumerate() {
        let key = GroupKey(key_idx.iter().map(|&i| r[i].clone()).collect());
        let g = *slot.entry(key.clone()).or_insert_with(|| {
            groups.push((key.0, Vec::new()));
            groups.len() - 1
        });
        groups[g].1.push(ri);
    }
    if keys.is_empty() && groups.is_empty() {
        groups.push((Vec::new(), Vec::new()));
    }
    groups
        .into_iter()
        .map(|(mut key, members)| {
            for a in aggs {
                let col = a.input.as_ref().and_then(|c| schema.index_of(c));
                let values = members.iter().filter_map(|&m| col.map(|c| &t.rows()[m][c]));
                key.push(a.func.apply(values, members.len()));
            }
            key
        })
        .collect()
}

/// The design-specific transformation `f`: an ordered list of operators.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Pipeline {
    pub ops: Vec<TransformOp>,
}

impl Pipeline {
    pub fn new(ops: Vec<TransformOp>) -> Self {
        Pipeline { ops }
    }

    pub fn identity() -> Self {
        Pipeline::default()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Schema-checks every op against its predecessor's output.
    pub fn output_schema(&self, input: &Schema) -> Result<Schema, TableError> {
        self.schemas(input).map(|mut v| v.pop().unwrap())
    }

    /// Input schema followed by the output schema of each op.
    pub fn schemas(&self, input: &Schema) -> Result<Vec<Schema>, TableError> {
        let mut out = vec![input.clone()];
        for (i, op) in self.ops.iter().enumerate() {
            let next = op.output_schema(out.last().unwrap()).map_err(|e| match e {
                TableError::InvalidOp(m) => TableError::InvalidOp(format!("step {} ({}): {m}", i + 1, op.kind())),
                other => other,
            })?;
            out.push(next);
        }
        Ok(out)
    }

    /// Materializes `P = f(D)`. Pure: the input is never modified.
    pub fn execute(&self, input: &Table) -> Result<Table, TableError> {
        let schemas = self.schemas(input.schema())?;
        let mut cur = input.clone();
        for (op, schema) in self.ops.iter().zip(schemas.into_iter().skip(1)) {
            cur = op.apply(&cur, schema)?;
        }
        Ok(cur)
    }
}

impl fmt::Display for TransformOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransformOp::Filter { predicate } => write!(f, "filter({predicate})"),
            TransformOp::Derive { output, expr } => write!(f, "derive({output} = {expr})"),
            TransformOp::Project { columns } => write!(f, "project({})", columns.join(", ")),
            TransformOp::GroupAggregate { keys, aggs } => {
                let a: Vec<String> = aggs
                    .iter()
                    .map(|a| format!("{}({})->{}", a.func, a.input.as_deref().unwrap_or(""), a.output))
                    .collect();
                write!(f, "groupAggregate({}; {})", keys.join(", "), a.join(", "))
            }
            TransformOp::Normalize { input, output } => write!(f, "normalize({input}->{output})"),
            TransformOp::Stack { input, order_by, lower, upper } => {
                write!(f, "stack({input} by {}->{lower}, {upper})", order_by.join(", "))
            }
            TransformOp::Bin { input, width, output } => write!(f, "bin({input}, {width}->{output})"),
            TransformOp::Sort { keys } => {
                let k: Vec<String> = keys
                    .iter()
                    .map(|k| if k.descending { format!("{} desc", k.column) } else { k.column.clone() })
                    .collect();
                write!(f, "sort({})", k.join(", "))
            }
            TransformOp::Limit { n } => write!(f, "limit({n})"),
        }
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ops.is_empty() {
            return f.write_str("identity");
        }
        let parts: Vec<String> = self.ops.iter().map(|o| o.to_string()).collect();
        f.write_str(&parts.join(" | "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::{tables_equal, DataType::*};
    use proptest::prelude::*;

    fn ab(rows: &[(&str, f64)]) -> Table {
        Table::new(
            Schema::of(&[("a", Text), ("b", Number)]),
            rows.iter().map(|(a, b)| vec![Value::text(*a), Value::Number(*b)]).collect(),
        )
        .unwrap()
    }

    fn sum_by_a() -> TransformOp {
        TransformOp::GroupAggregate { keys: vec!["a".into()], aggs: vec![Aggregate::new(AggFn::Sum, Some("b"), "c")] }
    }

    fn pie() -> Pipeline {
        Pipeline::new(vec![
            sum_by_a(),
            TransformOp::Normalize { input: "c".into(), output: "perc".into() },
            TransformOp::Stack {
                input: "perc".into(),
                order_by: vec!["a".into()],
                lower: "d0".into(),
                upper: "d".into(),
            },
        ])
    }

    #[test]
    fn group_sum_in_first_appearance_order() {
        let p = Pipeline::new(vec![sum_by_a()]).execute(&ab(&[("B", 3.0), ("A", 1.0), ("A", 2.0)])).unwrap();
        assert_eq!(p.schema(), &Schema::of(&[("a", Text), ("c", Number)]));
        assert_eq!(p.rows()[0], vec![Value::text("B"), Value::Number(3.0)]);
        assert_eq!(p.rows()[1], vec![Value::text("A"), Value::Number(3.0)]);
    }

    #[test]
    fn normalize_then_stack() {
        let p = pie().execute(&ab(&[("A", 1.0), ("B", 3.0)])).unwrap();
        let s = Schema::of(&[("a", Text), ("c", Number), ("perc", Number), ("d0", Number), ("d", Number)]);
        let want = Table::new(
            s,
            vec![
                vec!["A".into(), 1.0.into(), 0.25.into(), 0.0.into(), 0.25.into()],
                vec!["B".into(), 3.0.into(), 0.75.into(), 0.25.into(), 1.0.into()],
            ],
        )
        .unwrap();
        assert!(tables_equal(&p, &want, 1e-12));
    }

    #[test]
    fn stack_keeps_row_order() {
        let p = pie().execute(&ab(&[("B", 3.0), ("A", 1.0)])).unwrap();
        assert_eq!(p.get(0, "a"), Some(&Value::text("B")));
        assert_eq!(p.get(0, "d0"), Some(&Value::Number(0.25)));
    }

    #[test]
    fn zero_total_is_an_error() {
        let e = pie().execute(&ab(&[("A", 0.0)])).unwrap_err();
        assert!(matches!(e, TableError::ZeroTotal { .. }));
    }

    #[test]
    fn empty_keys_give_one_row() {
        let op = TransformOp::GroupAggregate {
            keys: vec![],
            aggs: vec![Aggregate::new(AggFn::Count, None, "n"), Aggregate::new(AggFn::Sum, Some("b"), "s")],
        };
        let p = Pipeline::new(vec![op]).execute(&ab(&[])).unwrap();
        assert_eq!(p.rows(), &[vec![Value::Number(0.0), Value::Null]]);
    }

    #[test]
    fn aggregates_skip_nulls() {
        let t = Table::new(
            Schema::of(&[("a", Text), ("b", Number)]),
            vec![vec!["A".into(), 2.0.into()], vec!["A".into(), Value::Null]],
        )
        .unwrap();
        let op = TransformOp::GroupAggregate {
            keys: vec!["a".into()],
            aggs: vec![
                Aggregate::new(AggFn::Count, None, "n"),
                Aggregate::new(AggFn::Avg, Some("b"), "m"),
                Aggregate::new(AggFn::Min, Some("b"), "lo"),
            ],
        };
        let p = Pipeline::new(vec![op]).execute(&t).unwrap();
        assert_eq!(p.rows()[0][1..], [Value::Number(2.0), Value::Number(2.0), Value::Number(2.0)]);
    }

    #[test]
    fn schema_errors_name_the_column() {
        let e = Pipeline::new(vec![sum_by_a()]).output_schema(&Schema::of(&[("a", Text)])).unwrap_err();
        assert!(e.to_string().contains("unknown column b"), "{e}");
        let dup = TransformOp::Derive { output: "b".into(), expr: Expr::parse("b + 1").unwrap() };
        assert!(dup.output_schema(&Schema::of(&[("b", Number)])).is_err());
    }

    #[test]
    fn filter_bin_sort_limit() {
        let t = ab(&[("A", 7.0), ("B", 2.0), ("C", 13.0)]);
        let p = Pipeline::new(vec![
            TransformOp::Filter { predicate: Expr::parse("b > 1").unwrap() },
            TransformOp::Bin { input: "b".into(), width: 5.0, output: "bin".into() },
            TransformOp::Sort { keys: vec![SortKey { column: "b".into(), descending: true }] },
            TransformOp::Limit { n: 2 },
        ])
        .execute(&t)
        .unwrap();
        assert_eq!(
            p.column("bin").unwrap().cloned().collect::<Vec<_>>(),
            vec![Value::Number(10.0), Value::Number(5.0)]
        );
    }

    #[test]
    fn serde_shape() {
        let json = r#"[{"op":"groupAggregate","keys":["a"],"aggs":[{"fn":"sum","input":"b","as":"c"}]},
                       {"op":"normalize","input":"c","as":"perc"},
                       {"op":"stack","input":"perc","orderBy":["a"],"lower":"d0","upper":"d"}]"#;
        let p: Pipeline = serde_json::from_str(json).unwrap();
        assert_eq!(p, pie());
        let back: Pipeline = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(back, p);
        assert!(serde_json::from_str::<Pipeline>(r#"[{"op":"limit","n":1,"extra":0}]"#).is_err());
    }

    fn reference_sums(rows: &[(u8, i32)]) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = Vec::new();
        for (k, v) in rows {
            let k = format!("k{k}");
            match out.iter_mut().find(|(g, _)| *g == k) {
                Some(slot) => slot.1 += *v as f64,
                None => out.push((k, *v as f64)),
            }
        }
        out
    }

    proptest! {
        #[test]
        fn group_sum_matches_reference(rows in prop::collection::vec((0u8..4, -20i32..20), 0..12)) {
            let t = Table::new(
                Schema::of(&[("a", Text), ("b", Number)]),
                rows.iter().map(|(k, v)| vec![Value::text(format!("k{k}")), Value::Number(*v as f64)]).collect(),
            ).unwrap();
            let p = Pipeline::new(vec![sum_by_a()]).execute(&t).unwrap();
            let got: Vec<(String, f64)> = p.rows().iter()
                .map(|r| (r[0].to_string(), r[1].as_f64().unwrap())).collect();
            prop_assert_eq!(got, reference_sums(&rows));
        }

        #[test]
        fn execution_is_pure(rows in prop::collection::vec((0u8..4, 1i32..20), 1..8)) {
            let t = Table::new(
                Schema::of(&[("a", Text), ("b", Number)]),
                rows.iter().map(|(k, v)| vec![Value::text(format!("k{k}")), Value::Number(*v as f64)]).collect(),
            ).unwrap();
            let before = t.clone();
            let p1 = pie().execute(&t).unwrap();
            let p2 = pie().execute(&t).unwrap();
            prop_assert_eq!(&t, &before);
            prop_assert_eq!(p1, p2);
        }
    }
}
