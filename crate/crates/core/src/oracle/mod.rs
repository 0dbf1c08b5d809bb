//! Brute-force checks of the rewriter: proxy plans replayed on sampled data,
//! and searches for pairs of datasets a chart cannot tell apart.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::rewrite::{execute_plan, ExecContext, LossyReason, PlanError, ProxyPlan};
use crate::spec::{readable_attributes, VisSpec};
use crate::table::{canonicalize, tables_equal, DataType, Table, TableError, Value};
use crate::task::{evaluate_task, TaskQuery, TaskResult};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("dataset family: {0}")]
    Family(String),
    #[error("plan/spec mismatch: {0}")]
    Harness(String),
    #[error("cannot verify an impossible plan")]
    Impossible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct DatasetFamily {
    pub group_domain: Vec<String>,
    pub row_range: [usize; 2],
    pub value_range: [i64; 2],
    pub seed: u64,
    /// Draw fractional values instead of integers.
    #[serde(default)]
    pub float_values: bool,
}

impl Default for DatasetFamily {
    fn default() -> Self {
        DatasetFamily {
            group_domain: vec!["A".into(), "B".into(), "C".into()],
            row_range: [1, 6],
            value_range: [1, 9],
            seed: 0,
            float_values: false,
        }
    }
}

impl DatasetFamily {
    pub fn validate(&self) -> Result<(), OracleError> {
        let n = self.group_domain.len();
        if n == 0 || n > 4 {
            return Err(OracleError::Family(format!("group domain must have 1 to 4 values, has {n}")));
        }
        let [lo, hi] = self.row_range;
        if lo > hi || hi > 8 {
            return Err(OracleError::Family(format!("row range [{lo}, {hi}] must satisfy min <= max <= 8")));
        }
        if self.value_range[0] > self.value_range[1] {
            return Err(OracleError::Family("value range is empty".into()));
        }
        Ok(())
    }

    fn in_range(&self, x: f64) -> bool {
        x >= self.value_range[0] as f64 && x <= self.value_range[1] as f64
    }

    /// Tolerance for calling two task results different.
    fn difference_eps(&self, eps: f64) -> f64 {
        if self.float_values {
            100.0 * eps
        } else {
            eps
        }
    }
}

/// Dataset `index` of the family over `schema`. Text columns draw from the
/// group domain, numbers from the value range.
pub fn sample_dataset(family: &DatasetFamily, schema: &crate::table::Schema, index: u64) -> Table {
    let mut rng = ChaCha8Rng::seed_from_u64(family.seed);
    rng.set_stream(index);
    let n = rng.gen_range(family.row_range[0]..=family.row_range[1]);
    let [lo, hi] = family.value_range;
    let rows = (0..n)
        .map(|_| {
            schema
                .columns()
                .iter()
                .map(|c| match c.ty {
                    DataType::Text => {
                        Value::text(family.group_domain[rng.gen_range(0..family.group_domain.len())].clone())
                    }
                    DataType::Number if family.float_values => {
                        let x: f64 = rng.gen_range(lo as f64..=hi as f64);
                        Value::Number((x * 1000.0).round() / 1000.0)
                    }
                    DataType::Number => Value::Number(rng.gen_range(lo..=hi) as f64),
                    DataType::Boolean => Value::Bool(rng.gen_bool(0.5)),
                })
                .collect()
        })
        .collect();
    Table::new(schema.clone(), rows).expect("sampled rows match the schema")
}

/// `p` restricted to the columns bound to a channel, in `p`'s order.
pub fn readable_projection(spec: &VisSpec, p: &Table) -> Table {
    let readable = readable_attributes(spec);
    let cols: Vec<&str> = p.schema().names().filter(|n| readable.contains(*n)).collect();
    p.project(&cols).expect("readable attributes exist in the prepared table")
}

fn marks(spec: &VisSpec, d: &Table, view_level: bool) -> Result<Table, TableError> {
    let p = spec.pipeline.execute(d)?;
    Ok(if view_level { readable_projection(spec, &p) } else { p })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Failure {
    pub trial: u64,
    pub dataset: Table,
    pub expected: TaskResult,
    pub got: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct VerificationResult {
    pub trials: u64,
    pub skipped: u64,
    pub failures: Vec<Failure>,
    pub passed: bool,
}

enum Trial {
    Pass,
    Skip,
    Fail(Failure),
}

fn run_trial(q: &TaskQuery, spec: &VisSpec, plan: &ProxyPlan, family: &DatasetFamily, i: u64, eps: f64) -> Trial {
    let d = sample_dataset(family, &q.schema, i);
    let Ok(expected) = evaluate_task(q, &d) else { return Trial::Skip };
    let Ok(view) = marks(spec, &d, plan.view_level) else { return Trial::Skip };
    let got =
        ExecContext::from_source(plan, &d).map_err(PlanError::from).and_then(|ctx| execute_plan(plan, &view, &ctx));
    match got {
        Ok(g) if g.approx_eq(&expected, eps) => Trial::Pass,
        Ok(g) => Trial::Fail(Failure { trial: i, dataset: d, expected, got: g.to_string() }),
        Err(e) => Trial::Fail(Failure { trial: i, dataset: d, expected, got: format!("error: {e}") }),
    }
}

/// How trials are spread over threads. Without the `parallel` feature both
/// run sequentially.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

fn run_trials<T: Send>(n: u64, mode: Execution, f: impl Fn(u64) -> T + Sync + Send) -> Vec<T> {
    match mode {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

/// Replays `plan` on the marks of `n` sampled datasets and compares with the task.
pub fn verify_proxy(
    q: &TaskQuery,
    spec: &VisSpec,
    plan: &ProxyPlan,
    family: &DatasetFamily,
    n: u64,
    eps: f64,
) -> Result<VerificationResult, OracleError> {
    verify_proxy_with(q, spec, plan, family, n, eps, Execution::default())
}

pub fn verify_proxy_with(
    q: &TaskQuery,
    spec: &VisSpec,
    plan: &ProxyPlan,
    family: &DatasetFamily,
    n: u64,
    eps: f64,
    mode: Execution,
) -> Result<VerificationResult, OracleError> {
    family.validate()?;
    if !plan.verdict.is_answerable() {
        return Err(OracleError::Impossible);
    }
    let available: Vec<String> = if plan.view_level {
        readable_attributes(spec).into_iter().collect()
    } else {
        spec.prepared_schema().names().map(String::from).collect()
    };
    if let Some(a) = plan.attributes().into_iter().find(|a| !available.contains(a)) {
        return Err(OracleError::Harness(format!("plan reads {a}, which {} does not show", spec.name)));
    }
    let outcomes = run_trials(n, mode, |i| run_trial(q, spec, plan, family, i, eps));
    let mut skipped = 0;
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Trial::Pass => {}
            Trial::Skip => skipped += 1,
            Trial::Fail(f) => failures.push(f),
        }
    }
    Ok(VerificationResult { trials: n, skipped, passed: failures.is_empty(), failures })
}

/// Ways to alter a dataset that keep some chart unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Construction {
    /// Pairs a row with two rows of the same group that add up to it.
    MergeRows,
    /// Moves one unit between two rows of a group, keeping its sum and count.
    ShiftWithinGroup,
    PerturbValue,
    /// Doubles every value, keeping all shares.
    ScaleAll,
    /// Moves one row to another group.
    RelabelKey,
    /// Two independent samples.
    Random,
}

impl Construction {
    const TARGETED: [Construction; 5] = [
        Construction::MergeRows,
        Construction::ShiftWithinGroup,
        Construction::PerturbValue,
        Construction::ScaleAll,
        Construction::RelabelKey,
    ];

    fn preferred(reason: Option<LossyReason>) -> Vec<Construction> {
        use Construction::*;
        use LossyReason::*;
        let first: &[Construction] = match reason {
            Some(CountFromSum | AvgFromSum) => &[MergeRows],
            Some(AbsoluteFromNormalized) => &[ScaleAll],
            Some(RawRowFromAggregate | StatMismatch) => &[ShiftWithinGroup, MergeRows],
            Some(FinerFromCoarserGrouping | GroupingMismatch) => &[RelabelKey],
            Some(AvgFromCount | SumFromCount | UnreadableAttribute | RowsFilteredOut | FilterOnAggregatedColumn) => {
                &[PerturbValue]
            }
            None => &[],
        };
        let mut out = first.to_vec();
        out.extend(Self::TARGETED.iter().filter(|c| !first.contains(c)));
        out
    }
}

fn number_cols(t: &Table) -> Vec<usize> {
    t.schema().columns().iter().enumerate().filter(|(_, c)| c.ty == DataType::Number).map(|(i, _)| i).collect()
}

fn text_cols(t: &Table) -> Vec<usize> {
    t.schema().columns().iter().enumerate().filter(|(_, c)| c.ty == DataType::Text).map(|(i, _)| i).collect()
}

fn same_group(t: &Table, i: usize, j: usize) -> bool {
    text_cols(t).iter().all(|&c| t.rows()[i][c] == t.rows()[j][c])
}

fn rebuild(t: &Table, rows: Vec<Vec<Value>>) -> Option<Table> {
    Table::new(t.schema().clone(), rows).ok()
}

/// Applies `c` to `d`, or `None` when `d` offers no place to apply it.
fn construct(c: Construction, d: &Table, family: &DatasetFamily) -> Option<Table> {
    let nums = number_cols(d);
    let rows = d.rows();
    let v = |i: usize, c: usize| rows[i][c].as_f64();
    let [lo, hi] = family.value_range;
    match c {
        Construction::MergeRows => {
            if rows.len() >= family.row_range[1] {
                return None;
            }
            let &col = nums.first()?;
            for i in 0..rows.len() {
                let x = v(i, col)?;
                for s in lo..=hi {
                    let (s, rest) = (s as f64, x - s as f64);
                    if family.in_range(rest) && family.in_range(s) {
                        let mut out = rows.to_vec();
                        out[i][col] = Value::Number(rest);
                        let mut extra = rows[i].clone();
                        extra[col] = Value::Number(s);
                        out.insert(i + 1, extra);
                        return rebuild(d, out);
                    }
                }
            }
            None
        }
        Construction::ShiftWithinGroup => {
            let &col = nums.first()?;
            for i in 0..rows.len() {
                for j in 0..rows.len() {
                    if i == j || !same_group(d, i, j) {
                        continue;
                    }
                    let (a, b) = (v(i, col)? + 1.0, v(j, col)? - 1.0);
                    if family.in_range(a) && family.in_range(b) && a != v(j, col)? {
                        let mut out = rows.to_vec();
                        out[i][col] = Value::Number(a);
                        out[j][col] = Value::Number(b);
                        return rebuild(d, out);
                    }
                }
            }
            None
        }
        Construction::PerturbValue => {
            let &col = nums.first()?;
            for i in 0..rows.len() {
                for delta in [1.0, -1.0] {
                    let x = v(i, col)? + delta;
                    if family.in_range(x) {
                        let mut out = rows.to_vec();
                        out[i][col] = Value::Number(x);
                        return rebuild(d, out);
                    }
                }
            }
            None
        }
        Construction::ScaleAll => {
            if nums.is_empty() || rows.is_empty() {
                return None;
            }
            let mut out = rows.to_vec();
            for r in &mut out {
                for &c in &nums {
                    let x = r[c].as_f64()? * 2.0;
                    if !family.in_range(x) || x == 0.0 {
                        return None;
                    }
                    r[c] = Value::Number(x);
                }
            }
            rebuild(d, out)
        }
        Construction::RelabelKey => {
            let &col = text_cols(d).first()?;
            for i in 0..rows.len() {
                let cur = rows[i][col].as_text()?;
                if let Some(other) = family.group_domain.iter().find(|g| g.as_str() != cur) {
                    let mut out = rows.to_vec();
                    out[i][col] = Value::text(other.clone());
                    return rebuild(d, out);
                }
            }
            None
        }
        Construction::Random => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Counterexample {
    pub d1: Table,
    pub d2: Table,
    /// The shared marks (prepared table or its readable projection), canonical order.
    pub marks: Table,
    pub q1: TaskResult,
    pub q2: TaskResult,
    pub construction: Construction,
    /// Candidate pairs examined, this one included.
    pub candidates: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SearchOptions {
    pub view_level: bool,
    /// Lossy pattern whose constructions to try first.
    pub reason: Option<LossyReason>,
    pub eps: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions { view_level: true, reason: None, eps: 1e-9 }
    }
}

/// Re-executes everything and returns the pair only if the chart shows the
/// same marks while the task answers differ.
pub fn certify(
    q: &TaskQuery,
    spec: &VisSpec,
    d1: &Table,
    d2: &Table,
    family: &DatasetFamily,
    opts: &SearchOptions,
) -> Option<(Table, TaskResult, TaskResult)> {
    let m1 = marks(spec, d1, opts.view_level).ok()?;
    let m2 = marks(spec, d2, opts.view_level).ok()?;
    if !tables_equal(&m1, &m2, opts.eps) {
        return None;
    }
    let q1 = evaluate_task(q, d1).ok()?;
    let q2 = evaluate_task(q, d2).ok()?;
    if q1.approx_eq(&q2, family.difference_eps(opts.eps)) {
        return None;
    }
    Some((canonicalize(&m1), q1, q2))
}

/// Looks for datasets with identical marks but different task answers.
/// Targeted constructions run on each sample before it joins the pool of
/// random samples bucketed by their marks.
pub fn search_counterexample(
    q: &TaskQuery,
    spec: &VisSpec,
    family: &DatasetFamily,
    budget: u64,
    opts: &SearchOptions,
) -> Result<Option<Counterexample>, OracleError> {
    family.validate()?;
    let order = Construction::preferred(opts.reason);
    let mut tried = 0u64;
    let mut buckets: BTreeMap<String, Vec<(Table, TaskResult)>> = BTreeMap::new();
    let max_samples = budget.saturating_mul(4).max(16);
    for index in 0..max_samples {
        let d = sample_dataset(family, &q.schema, index);
        for &c in &order {
            if tried >= budget {
                return Ok(None);
            }
            let Some(d2) = construct(c, &d, family) else { continue };
            tried += 1;
            if let Some((marks, q1, q2)) = certify(q, spec, &d, &d2, family, opts) {
                return Ok(Some(Counterexample { d1: d, d2, marks, q1, q2, construction: c, candidates: tried }));
            }
        }
        let (Ok(m), Ok(r)) = (marks(spec, &d, opts.view_level), evaluate_task(q, &d)) else { continue };
        let key = serde_json::to_string(&canonicalize(&m)).unwrap_or_default();
        let bucket = buckets.entry(key).or_default();
        for (other, other_r) in bucket.iter() {
            if other_r.approx_eq(&r, family.difference_eps(opts.eps)) {
                continue;
            }
            if tried >= budget {
                return Ok(None);
            }
            tried += 1;
            if let Some((marks, q1, q2)) = certify(q, spec, other, &d, family, opts) {
                return Ok(Some(Counterexample {
                    d1: other.clone(),
                    d2: d,
                    marks,
                    q1,
                    q2,
                    construction: Construction::Random,
                    candidates: tried,
                }));
            }
        }
        if bucket.len() < 8 {
            bucket.push((d, r));
        }
    }
    Ok(None)
}
