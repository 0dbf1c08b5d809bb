use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::facts::{abstract_pipeline, filter_set, Abstraction, Fact, Grain};
use super::plan::{Assumption, CardinalityHint, LossyReason, Over, ProxyOp, ProxyPlan, TotalRef, Verdict};
use crate::cost::{default_profile, ExpertiseProfile};
use crate::spec::{readable_attributes, VisSpec};
use crate::table::{AggFn, BinaryOp, Expr, Value};
use crate::task::{CombineOp, ResultSpec, Scalar, TaskQuery};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SizeHint {
    pub rows: usize,
    pub groups: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct AnalysisOptions {
    /// Restrict plans to attributes bound to a channel.
    pub view_level: bool,
    /// The viewer knows the totals that normalization divides by.
    pub known_total: bool,
    pub depth_bound: usize,
    /// Known value sets of key columns.
    pub key_domains: BTreeMap<String, Vec<Value>>,
    pub size_hint: SizeHint,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            view_level: true,
            known_total: false,
            depth_bound: 6,
            key_domains: BTreeMap::new(),
            size_hint: SizeHint { rows: 4, groups: 3 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("task schema {task} does not match spec schema {spec}")]
    SchemaMismatch { task: String, spec: String },
    #[error("unknown: {0}")]
    Unknown(String),
}

#[derive(Debug, Clone, PartialEq)]
enum Goal {
    /// One value of `fact`, from the row selected by `at`.
    Value {
        fact: Fact,
        grain: Grain,
        filter: Vec<Expr>,
        at: Option<Expr>,
    },
    /// Sum of `fact` over all groups of `grain`.
    Total {
        fact: Fact,
        grain: Grain,
        filter: Vec<Expr>,
    },
    /// Keys plus one value column.
    Table {
        fact: Fact,
        keys: Vec<String>,
        filter: Vec<Expr>,
    },
    Rows {
        columns: Vec<String>,
        filter: Vec<Expr>,
    },
    Combine {
        op: CombineOp,
        left: Box<Goal>,
        right: Box<Goal>,
    },
}

fn push_unique(v: &mut Vec<String>, items: Vec<String>) {
    for s in items {
        if !v.contains(&s) {
            v.push(s);
        }
    }
}

fn filter_steps(f: &[Expr]) -> Vec<String> {
    f.iter().map(|c| format!("filter {c}")).collect()
}

impl Goal {
    fn steps(&self) -> Vec<String> {
        let mut out = Vec::new();
        match self {
            Goal::Value { fact, grain, filter, .. } | Goal::Total { fact, grain, filter } => {
                push_unique(&mut out, filter_steps(filter));
                push_unique(&mut out, fact.steps(grain.keys().unwrap_or(&[])));
            }
            Goal::Table { fact, keys, filter } => {
                push_unique(&mut out, filter_steps(filter));
                push_unique(&mut out, fact.steps(Grain::groups(keys).keys().unwrap()));
            }
            Goal::Rows { filter, .. } => push_unique(&mut out, filter_steps(filter)),
            Goal::Combine { left, right, .. } => {
                push_unique(&mut out, left.steps());
                push_unique(&mut out, right.steps());
            }
        }
        out
    }

    fn filter(&self) -> &[Expr] {
        match self {
            Goal::Value { filter, .. }
            | Goal::Total { filter, .. }
            | Goal::Table { filter, .. }
            | Goal::Rows { filter, .. } => filter,
            Goal::Combine { left, .. } => left.filter(),
        }
    }
}

fn scalar_goal(s: &Scalar, abs: &Abstraction) -> Result<Goal, String> {
    match s {
        Scalar::ValueAt { column, at } => {
            let fact = abs.fact_of(column).cloned().ok_or_else(|| format!("no column {column}"))?;
            let at = match at {
                None => None,
                Some(p) => Some(abs.to_source(p).ok_or_else(|| format!("selector `{p}` refers to a computed column"))?),
            };
            Ok(Goal::Value { fact, grain: abs.grain.clone(), filter: abs.filter.clone(), at })
        }
        Scalar::Combine { op, left, right } => Ok(Goal::Combine {
            op: *op,
            left: Box::new(scalar_goal(left, abs)?),
            right: Box::new(scalar_goal(right, abs)?),
        }),
    }
}

fn task_goal(q: &TaskQuery) -> Result<(Goal, Option<Vec<String>>), String> {
    let abs = abstract_pipeline(&q.schema, &q.body);
    if let Some(why) = &abs.opaque {
        return Err(format!("task outside the fact lattice: {why}"));
    }
    let scalar = match &q.result {
        ResultSpec::Scalar { scalar } => scalar,
        ResultSpec::FullTable => {
            let names: Vec<String> = abs.columns.iter().map(|(c, _)| c.clone()).collect();
            let goal = match &abs.grain {
                Grain::Rows => {
                    let cols: Option<Vec<String>> = abs.columns.iter().map(|(c, _)| abs.source_of(c)).collect();
                    let columns = cols.ok_or("row-level task with computed columns")?;
                    if columns.is_empty() {
                        return Err("task has no output columns".into());
                    }
                    Goal::Rows { columns, filter: abs.filter.clone() }
                }
                Grain::Groups { keys: grain } => {
                    let (last, init) = abs.columns.split_last().ok_or("task has no output columns")?;
                    let keys: Option<Vec<String>> = init.iter().map(|(c, _)| abs.source_of(c)).collect();
                    let keys = keys.ok_or("grouped task must list keys first and one value column last")?;
                    if Grain::groups(&keys) != abs.grain
                        || keys.len() != grain.len()
                        || abs.source_of(&last.0).is_some()
                    {
                        return Err("grouped task must list each key once and one value column last".into());
                    }
                    Goal::Table { fact: last.1.clone(), keys, filter: abs.filter.clone() }
                }
            };
            return Ok((goal, Some(names)));
        }
    };
    Ok((scalar_goal(scalar, &abs)?, None))
}

#[derive(Debug, Clone, Default)]
struct Derivation {
    ops: Vec<ProxyOp>,
    assumptions: Vec<Assumption>,
    read_steps: Vec<String>,
    rules: Vec<String>,
}

impl Derivation {
    fn leaf(rule: &str, ops: Vec<ProxyOp>, read_steps: Vec<String>) -> Self {
        Derivation { ops, assumptions: Vec::new(), read_steps, rules: vec![rule.to_string()] }
    }

    fn assume(mut self, a: Assumption) -> Self {
        if !self.assumptions.contains(&a) {
            self.assumptions.push(a);
        }
        self
    }

    fn append(&mut self, other: Derivation) {
        self.ops.extend(other.ops);
        for a in other.assumptions {
            if !self.assumptions.contains(&a) {
                self.assumptions.push(a);
            }
        }
        push_unique(&mut self.read_steps, other.read_steps);
        self.rules.extend(other.rules);
    }
}

/// `Err(true)` when the depth bound cut the search short.
type Found = Result<Derivation, bool>;

struct View {
    abs: Abstraction,
    readable: BTreeSet<String>,
}

impl View {
    fn readable_cols(&self) -> impl Iterator<Item = &(String, Fact)> {
        self.abs.columns.iter().filter(|(c, _)| self.readable.contains(c))
    }

    fn find(&self, fact: &Fact) -> Option<String> {
        self.readable_cols().find(|(_, f)| f == fact).map(|(c, _)| c.clone())
    }

    /// Upper and lower endpoint columns of a stacked `fact`, with the stack order.
    fn find_stack(&self, fact: &Fact) -> Option<(String, String, Vec<String>)> {
        self.readable_cols().find_map(|(u, f)| match f {
            Fact::Upper { of, order } if **of == *fact => {
                let lower = Fact::Lower { of: of.clone(), order: order.clone() };
                self.find(&lower).map(|l| (u.clone(), l, order.clone()))
            }
            _ => None,
        })
    }

    fn find_upper(&self, fact: &Fact, order: &[String]) -> Option<String> {
        self.find(&Fact::Upper { of: Box::new(fact.clone()), order: order.to_vec() })
    }

    fn is_rows(&self) -> bool {
        self.abs.grain == Grain::Rows
    }

    fn key_col(&self, src: &str) -> Option<String> {
        let want = if self.is_rows() { Fact::raw(src) } else { Fact::key(src) };
        self.find(&want)
    }

    fn map_pred(&self, e: &Expr) -> Option<Expr> {
        let cols = e.columns();
        let map: BTreeMap<String, String> =
            cols.iter().map(|c| self.key_col(c).map(|v| (c.clone(), v))).collect::<Option<_>>()?;
        Some(e.rename(&|c| map[c].clone()))
    }

    fn map_keys(&self, keys: &[String]) -> Option<Vec<String>> {
        keys.iter().map(|k| self.key_col(k)).collect()
    }

    fn same_filter(&self, f: &[Expr]) -> bool {
        filter_set(&self.abs.filter) == filter_set(f)
    }

    /// Task conjuncts not already applied by the view, if the view applies
    /// nothing the task does not.
    fn residual(&self, f: &[Expr]) -> Option<Vec<Expr>> {
        let task = filter_set(f);
        if !filter_set(&self.abs.filter).is_subset(&task) {
            return None;
        }
        let have = filter_set(&self.abs.filter);
        Some(f.iter().filter(|c| !have.contains(&c.to_string())).cloned().collect())
    }

    fn grain_keys(&self) -> &[String] {
        self.abs.grain.keys().unwrap_or(&[])
    }

    fn steps_for(&self, fact: &Fact) -> Vec<String> {
        let mut s = filter_steps(&self.abs.filter);
        push_unique(&mut s, fact.steps(self.grain_keys()));
        s
    }

    /// Whether the view grouping strictly refines `keys`.
    fn refines(&self, keys: &[String]) -> bool {
        match &self.abs.grain {
            Grain::Groups { keys: kv } => {
                keys.iter().all(|k| kv.contains(k)) && kv.len() > Grain::groups(keys).keys().unwrap().len()
            }
            Grain::Rows => false,
        }
    }
}

fn selection(pred: Option<Expr>) -> (Vec<ProxyOp>, Over) {
    match pred {
        Some(p) => (vec![ProxyOp::FilterMarks { predicate: p }], Over::Selected),
        None => (Vec::new(), Over::All),
    }
}

/// How a coarser statistic is recomputed from a finer one.
fn rollup_source(fact: &Fact) -> Option<(AggFn, Fact)> {
    match fact {
        Fact::Stat { func: f @ (AggFn::Sum | AggFn::Min | AggFn::Max), .. } => Some((*f, fact.clone())),
        Fact::Stat { func: AggFn::Count, .. } => Some((AggFn::Sum, fact.clone())),
        _ => None,
    }
}

fn combine_op(op: CombineOp) -> ProxyOp {
    match op {
        CombineOp::Sum => ProxyOp::SumK { k: 2 },
        CombineOp::Difference => ProxyOp::Difference,
        CombineOp::Ratio => ProxyOp::Ratio,
    }
}

fn key_equality(e: &Expr) -> Option<(&str, &Value)> {
    match e {
        Expr::Binary { op: BinaryOp::Eq, left, right } => match (&**left, &**right) {
            (Expr::Column(c), Expr::Literal(v)) | (Expr::Literal(v), Expr::Column(c)) => Some((c, v)),
            _ => None,
        },
        _ => None,
    }
}

struct Engine<'a> {
    view: View,
    opts: &'a AnalysisOptions,
    profile: ExpertiseProfile,
    hint: CardinalityHint,
}

impl Engine<'_> {
    fn better(&self, a: &Derivation, b: &Derivation) -> bool {
        let cost = |d: &Derivation| {
            self.profile.base.op_costs(&d.ops, self.hint).map(|v| v.iter().sum::<f64>()).unwrap_or(f64::INFINITY)
        };
        let key = |d: &Derivation| serde_json::to_string(&d.ops).unwrap_or_default();
        let (ca, cb) = (cost(a), cost(b));
        ca.total_cmp(&cb).then(a.ops.len().cmp(&b.ops.len())).then_with(|| key(a).cmp(&key(b))).is_lt()
    }

    fn solve(&self, goal: &Goal, depth: usize, path: &mut Vec<String>) -> Found {
        if depth >= self.opts.depth_bound {
            return Err(true);
        }
        let id = format!("{goal:?}");
        if path.contains(&id) {
            return Err(false);
        }
        path.push(id);
        let candidates = self.candidates(goal, depth + 1, path);
        path.pop();
        let mut best: Option<Derivation> = None;
        let mut cut = false;
        for c in candidates {
            match c {
                Ok(d) => {
                    if best.as_ref().is_none_or(|b| self.better(&d, b)) {
                        best = Some(d);
                    }
                }
                Err(c) => cut |= c,
            }
        }
        best.ok_or(cut)
    }

    fn seq(&self, parts: Vec<Goal>, tail: Vec<ProxyOp>, rule: &str, depth: usize, path: &mut Vec<String>) -> Found {
        let mut d = Derivation::default();
        for g in &parts {
            d.append(self.solve(g, depth, path)?);
        }
        d.ops.extend(tail);
        d.rules.push(rule.to_string());
        Ok(d)
    }

    fn candidates(&self, goal: &Goal, depth: usize, path: &mut Vec<String>) -> Vec<Found> {
        match goal {
            Goal::Value { fact, grain, filter, at } => self.value_rules(fact, grain, filter, at.as_ref(), depth, path),
            Goal::Total { fact, grain, filter } => self.total_rules(fact, grain, filter, depth, path),
            Goal::Table { fact, keys, filter } => self.table_rules(fact, keys, filter, depth, path),
            Goal::Rows { columns, filter } => self.rows_rules(columns, filter).into_iter().map(Ok).collect(),
            Goal::Combine { op, left, right } => {
                vec![self.seq(vec![(**left).clone(), (**right).clone()], vec![combine_op(*op)], "combine", depth, path)]
            }
        }
    }

    fn value_rules(
        &self,
        fact: &Fact,
        grain: &Grain,
        filter: &[Expr],
        at: Option<&Expr>,
        depth: usize,
        path: &mut Vec<String>,
    ) -> Vec<Found> {
        let v = &self.view;
        let mut out = Vec::new();
        let same = v.abs.grain == *grain && v.same_filter(filter);
        let at_m: Option<Option<Expr>> = match at {
            None => Some(None),
            Some(e) => v.map_pred(e).map(Some),
        };
        let single = at.is_some() || grain.keys().is_some_and(|k| k.is_empty());

        if let (true, Some(sel)) = (same, at_m.clone()) {
            if let Some(col) = v.find(fact) {
                let (mut ops, over) = selection(sel.clone());
                ops.push(ProxyOp::ReadValue { attr: col, keys: None, over });
                out.push(Ok(Derivation::leaf("direct-read", ops, v.steps_for(fact))));
            }
            if let Some((u, l, order)) = v.find_stack(fact) {
                let (mut ops, over) = selection(sel.clone());
                ops.push(ProxyOp::ReadValue { attr: u, keys: None, over });
                ops.push(ProxyOp::ReadValue { attr: l, keys: None, over });
                ops.push(ProxyOp::InvertStack);
                let steps = v.steps_for(&Fact::Upper { of: Box::new(fact.clone()), order });
                out.push(Ok(Derivation::leaf("stack-inversion", ops, steps)));
            }
        }

        if let (true, Some((k, lit))) = (same, at.and_then(key_equality)) {
            let base = self.opts.key_domains.get(k).and_then(|d| d.iter().min_by(|a, b| a.total_cmp(b)));
            if let (Some(u), Some(base), Some(Some(sel))) = (v.find_upper(fact, &[k.to_string()]), base, at_m.clone()) {
                if base == lit {
                    let ops = vec![
                        ProxyOp::FilterMarks { predicate: sel },
                        ProxyOp::ReadValue { attr: u, keys: None, over: Over::Selected },
                    ];
                    let steps = v.steps_for(&Fact::Upper { of: Box::new(fact.clone()), order: vec![k.to_string()] });
                    let d = Derivation::leaf("first-segment", ops, steps).assume(Assumption::KeyDomain {
                        column: k.to_string(),
                        values: self.opts.key_domains[k].clone(),
                    });
                    out.push(Ok(d));
                }
            }
        }

        if let (Fact::Share { of }, Grain::Groups { .. }) = (fact, grain) {
            out.push(self.seq(
                vec![
                    Goal::Value {
                        fact: (**of).clone(),
                        grain: grain.clone(),
                        filter: filter.to_vec(),
                        at: at.cloned(),
                    },
                    Goal::Total { fact: (**of).clone(), grain: grain.clone(), filter: filter.to_vec() },
                ],
                vec![ProxyOp::Ratio],
                "share-from-values",
                depth,
                path,
            ));
        }

        if let (Fact::Stat { func, input }, Grain::Groups { .. }, true) = (fact, grain, single) {
            if v.is_rows() {
                if let Some(d) = self.aggregate_rows(*func, input.as_deref(), &[], filter, at) {
                    out.push(Ok(d));
                }
            }
            if let (true, true, Some(sel), Some((agg, src))) =
                (v.refines(grain.keys().unwrap()), v.same_filter(filter), at_m.clone(), rollup_source(fact))
            {
                if let Some(col) = v.find(&src) {
                    let (mut ops, over) = selection(sel);
                    ops.push(ProxyOp::ComputeAggregate { func: agg, attr: Some(col), group_by: vec![], over });
                    out.push(Ok(Derivation::leaf("rollup", ops, v.steps_for(&src))));
                }
            }
        }

        if let (Fact::Stat { func: AggFn::Avg, input: Some(x) }, Grain::Groups { .. }, false) =
            (fact, grain, v.is_rows())
        {
            let part = |f: AggFn| Goal::Value {
                fact: Fact::stat(f, Some(x)),
                grain: grain.clone(),
                filter: filter.to_vec(),
                at: at.cloned(),
            };
            out.push(
                self.seq(
                    vec![part(AggFn::Sum), part(AggFn::Count)],
                    vec![ProxyOp::Ratio],
                    "avg-from-sum-and-count",
                    depth,
                    path,
                )
                .map(|d| d.assume(Assumption::NonNull { column: x.clone() })),
            );
        }

        if let Some(d) = self.known_total(fact, grain, filter, depth, path, |share| Goal::Value {
            fact: share,
            grain: grain.clone(),
            filter: filter.to_vec(),
            at: at.cloned(),
        }) {
            out.push(d);
        }
        out
    }

    fn known_total(
        &self,
        fact: &Fact,
        grain: &Grain,
        filter: &[Expr],
        depth: usize,
        path: &mut Vec<String>,
        goal: impl Fn(Fact) -> Goal,
    ) -> Option<Found> {
        let Fact::Stat { func: func @ (AggFn::Sum | AggFn::Count), input } = fact else { return None };
        if !self.opts.known_total || grain.keys().is_none() {
            return None;
        }
        let total = TotalRef { func: *func, input: input.clone(), filter: Expr::conjoin(filter) };
        let d = self.seq(
            vec![goal(Fact::share(fact.clone()))],
            vec![ProxyOp::InvertNormalize { total: total.clone() }],
            "known-total",
            depth,
            path,
        );
        Some(d.map(|d| d.assume(Assumption::KnownTotal { total })))
    }

    /// `func(input)` recomputed from raw marks, grouped by `keys`.
    fn aggregate_rows(
        &self,
        func: AggFn,
        input: Option<&str>,
        keys: &[String],
        filter: &[Expr],
        at: Option<&Expr>,
    ) -> Option<Derivation> {
        let v = &self.view;
        let mut conj = v.residual(filter)?;
        conj.extend(at.cloned());
        let pred = match Expr::conjoin(&conj) {
            None => None,
            Some(p) => Some(v.map_pred(&p)?),
        };
        let attr = match input {
            None => None,
            Some(x) => Some(v.key_col(x)?),
        };
        let group_by = v.map_keys(keys)?;
        let (mut ops, over) = selection(pred);
        ops.push(ProxyOp::ComputeAggregate { func, attr, group_by, over });
        Some(Derivation::leaf("aggregate-rows", ops, filter_steps(&v.abs.filter)))
    }

    fn total_rules(
        &self,
        fact: &Fact,
        grain: &Grain,
        filter: &[Expr],
        depth: usize,
        path: &mut Vec<String>,
    ) -> Vec<Found> {
        let v = &self.view;
        let mut out = Vec::new();
        if v.abs.grain == *grain && v.same_filter(filter) {
            if let Some(col) = v.find(fact) {
                let ops = vec![ProxyOp::ComputeAggregate {
                    func: AggFn::Sum,
                    attr: Some(col),
                    group_by: vec![],
                    over: Over::All,
                }];
                out.push(Ok(Derivation::leaf("total-of-marks", ops, v.steps_for(fact))));
            }
        }
        if matches!(fact, Fact::Stat { func: AggFn::Sum | AggFn::Count, .. }) {
            out.push(self.seq(
                vec![Goal::Value { fact: fact.clone(), grain: Grain::groups(&[]), filter: filter.to_vec(), at: None }],
                vec![],
                "total-as-global",
                depth,
                path,
            ));
        }
        out
    }

    fn table_rules(
        &self,
        fact: &Fact,
        keys: &[String],
        filter: &[Expr],
        depth: usize,
        path: &mut Vec<String>,
    ) -> Vec<Found> {
        let v = &self.view;
        let grain = Grain::groups(keys);
        let mut out = Vec::new();
        let kcols = v.map_keys(keys);
        if let (true, Some(kc)) = (v.abs.grain == grain && v.same_filter(filter), kcols.clone()) {
            if let Some(col) = v.find(fact) {
                let ops = vec![ProxyOp::ReadValue { attr: col, keys: Some(kc.clone()), over: Over::All }];
                out.push(Ok(Derivation::leaf("direct-read", ops, v.steps_for(fact))));
            }
            if let Some((u, l, order)) = v.find_stack(fact) {
                let ops = vec![
                    ProxyOp::ReadValue { attr: u, keys: Some(kc.clone()), over: Over::All },
                    ProxyOp::ReadValue { attr: l, keys: Some(kc), over: Over::All },
                    ProxyOp::InvertStack,
                ];
                let steps = v.steps_for(&Fact::Upper { of: Box::new(fact.clone()), order });
                out.push(Ok(Derivation::leaf("stack-inversion", ops, steps)));
            }
        }
        if let Fact::Share { of } = fact {
            out.push(self.seq(
                vec![
                    Goal::Table { fact: (**of).clone(), keys: keys.to_vec(), filter: filter.to_vec() },
                    Goal::Total { fact: (**of).clone(), grain: grain.clone(), filter: filter.to_vec() },
                ],
                vec![ProxyOp::Ratio],
                "share-from-values",
                depth,
                path,
            ));
        }
        if let Fact::Stat { func, input } = fact {
            if v.is_rows() {
                if let Some(d) = self.aggregate_rows(*func, input.as_deref(), keys, filter, None) {
                    out.push(Ok(d));
                }
            }
            if let (true, true, Some(kc), Some((agg, src))) =
                (v.refines(keys), v.same_filter(filter), kcols, rollup_source(fact))
            {
                if let Some(col) = v.find(&src) {
                    let ops =
                        vec![ProxyOp::ComputeAggregate { func: agg, attr: Some(col), group_by: kc, over: Over::All }];
                    out.push(Ok(Derivation::leaf("rollup", ops, v.steps_for(&src))));
                }
            }
        }
        if let (Fact::Stat { func: AggFn::Avg, input: Some(x) }, false) = (fact, v.is_rows()) {
            let part =
                |f: AggFn| Goal::Table { fact: Fact::stat(f, Some(x)), keys: keys.to_vec(), filter: filter.to_vec() };
            out.push(
                self.seq(
                    vec![part(AggFn::Sum), part(AggFn::Count)],
                    vec![ProxyOp::Ratio],
                    "avg-from-sum-and-count",
                    depth,
                    path,
                )
                .map(|d| d.assume(Assumption::NonNull { column: x.clone() })),
            );
        }
        if let Some(d) = self.known_total(fact, &grain, filter, depth, path, |share| Goal::Table {
            fact: share,
            keys: keys.to_vec(),
            filter: filter.to_vec(),
        }) {
            out.push(d);
        }
        out
    }

    fn rows_rules(&self, columns: &[String], filter: &[Expr]) -> Option<Derivation> {
        let v = &self.view;
        if !v.is_rows() {
            return None;
        }
        let conj = v.residual(filter)?;
        let pred = match Expr::conjoin(&conj) {
            None => None,
            Some(p) => Some(v.map_pred(&p)?),
        };
        let mut cols = v.map_keys(columns)?;
        let attr = cols.pop()?;
        let (mut ops, over) = selection(pred);
        ops.push(ProxyOp::ReadValue { attr, keys: Some(cols), over });
        Some(Derivation::leaf("read-rows", ops, filter_steps(&v.abs.filter)))
    }

    /// Names the lossy pattern that blocks `goal`, when one is certain.
    fn diagnose(&self, goal: &Goal, all: &View) -> Option<LossyReason> {
        let v = &self.view;
        if let Goal::Combine { left, right, .. } = goal {
            return self.diagnose(left, all).or_else(|| self.diagnose(right, all));
        }
        if v.residual(goal.filter()).is_none() {
            return goal.filter().is_empty().then_some(LossyReason::RowsFilteredOut);
        }
        let (fact, keys): (&Fact, Vec<String>) = match goal {
            Goal::Rows { columns, .. } => {
                if !v.is_rows() {
                    return Some(LossyReason::RawRowFromAggregate);
                }
                let missing = columns.iter().any(|c| v.key_col(c).is_none() && all.key_col(c).is_some());
                return missing.then_some(LossyReason::UnreadableAttribute);
            }
            Goal::Value { fact, grain: Grain::Groups { keys }, .. }
            | Goal::Total { fact, grain: Grain::Groups { keys }, .. }
            | Goal::Table { fact, keys, .. } => (fact, keys.clone()),
            _ => return None,
        };
        let mut needed: Vec<String> = keys.clone();
        if let Goal::Value { at: Some(p), .. } = goal {
            needed.extend(p.columns());
        }
        for c in goal.filter() {
            needed.extend(c.columns());
        }
        let base = match fact {
            Fact::Share { of } => &**of,
            f => f,
        };
        if v.is_rows() {
            if let Fact::Stat { input: Some(x), .. } = base {
                needed.push(x.clone());
            }
            let unreadable = needed.iter().any(|c| v.key_col(c).is_none() && all.key_col(c).is_some());
            return unreadable.then_some(LossyReason::UnreadableAttribute);
        }
        let kv = v.grain_keys();
        if !keys.iter().all(|k| kv.contains(k)) {
            return Some(if kv.iter().all(|k| keys.contains(k)) {
                LossyReason::FinerFromCoarserGrouping
            } else {
                LossyReason::GroupingMismatch
            });
        }
        let residual = v.residual(goal.filter()).unwrap_or_default();
        if residual.iter().any(|c| c.columns().iter().any(|col| !kv.contains(col))) {
            return Some(LossyReason::FilterOnAggregatedColumn);
        }
        let selectors: Vec<&String> = needed.iter().filter(|c| kv.contains(c)).collect();
        if selectors.iter().any(|c| v.key_col(c).is_none() && all.key_col(c).is_some()) {
            return Some(LossyReason::UnreadableAttribute);
        }
        let Fact::Stat { func, input } = base else { return None };
        let stats = |view: &View, relative: bool| -> BTreeSet<(AggFn, Option<String>)> {
            view.readable_cols()
                .filter_map(|(_, f)| match (f, relative) {
                    (Fact::Stat { func, input }, false) => Some((*func, input.clone())),
                    (Fact::Share { of } | Fact::Upper { of, .. } | Fact::Lower { of, .. }, true) => match &**of {
                        Fact::Stat { func, input } => Some((*func, input.clone())),
                        Fact::Share { of } => match &**of {
                            Fact::Stat { func, input } => Some((*func, input.clone())),
                            _ => None,
                        },
                        _ => None,
                    },
                    _ => None,
                })
                .collect()
        };
        let want = (*func, input.clone());
        let (abs_v, rel_v) = (stats(v, false), stats(v, true));
        let hidden = (stats(all, false).contains(&want) && !abs_v.contains(&want))
            || (stats(all, true).contains(&want) && !rel_v.contains(&want) && !abs_v.contains(&want));
        let has = |f: AggFn, set: &BTreeSet<(AggFn, Option<String>)>| set.iter().any(|(g, _)| *g == f);
        let any = |f: AggFn| has(f, &abs_v) || has(f, &rel_v);
        let reason = match func {
            AggFn::Count if any(AggFn::Sum) => LossyReason::CountFromSum,
            AggFn::Count if has(AggFn::Count, &rel_v) && !self.opts.known_total => LossyReason::AbsoluteFromNormalized,
            AggFn::Avg if has(AggFn::Count, &abs_v) && !abs_v.contains(&(AggFn::Sum, input.clone())) => {
                LossyReason::AvgFromCount
            }
            AggFn::Avg if any(AggFn::Sum) && !has(AggFn::Count, &abs_v) => LossyReason::AvgFromSum,
            AggFn::Sum if rel_v.contains(&want) && !self.opts.known_total => LossyReason::AbsoluteFromNormalized,
            AggFn::Sum if has(AggFn::Count, &abs_v) && !any(AggFn::Sum) => LossyReason::SumFromCount,
            _ if hidden => LossyReason::UnreadableAttribute,
            _ => LossyReason::StatMismatch,
        };
        Some(reason)
    }
}

fn hint_for(abs: &Abstraction, opts: &AnalysisOptions) -> CardinalityHint {
    let SizeHint { rows, groups } = opts.size_hint;
    match &abs.grain {
        Grain::Rows => CardinalityHint { marks: rows, per_selection: rows.div_ceil(groups.max(1)) },
        Grain::Groups { keys } if keys.is_empty() => CardinalityHint { marks: 1, per_selection: 1 },
        Grain::Groups { .. } => CardinalityHint { marks: groups, per_selection: 1 },
    }
}

/// Decides whether `q` can be answered from the marks of `spec` and builds
/// the cheapest proxy plan found.
pub fn analyze(q: &TaskQuery, spec: &VisSpec, opts: &AnalysisOptions) -> Result<ProxyPlan, AnalysisError> {
    if q.schema != spec.schema {
        return Err(AnalysisError::SchemaMismatch { task: q.schema.to_string(), spec: spec.schema.to_string() });
    }
    let abs = abstract_pipeline(&spec.schema, &spec.pipeline);
    if let Some(why) = &abs.opaque {
        return Err(AnalysisError::Unknown(format!("spec pipeline outside the fact lattice: {why}")));
    }
    let (goal, output) = task_goal(q).map_err(AnalysisError::Unknown)?;
    let all_cols: BTreeSet<String> = abs.columns.iter().map(|(c, _)| c.clone()).collect();
    let readable = if opts.view_level { readable_attributes(spec) } else { all_cols.clone() };
    let hint = hint_for(&abs, opts);
    let engine = Engine { view: View { abs: abs.clone(), readable }, opts, profile: default_profile(), hint };
    let task_steps = goal.steps();
    match engine.solve(&goal, 0, &mut Vec::new()) {
        Ok(d) => {
            let inversions: Vec<String> =
                d.ops.iter().filter(|o| o.is_inversion()).map(|o| o.kind().to_string()).collect();
            let precomputed: Vec<String> = task_steps.iter().filter(|s| d.read_steps.contains(s)).cloned().collect();
            let lookup_only =
                d.ops.iter().all(|o| matches!(o, ProxyOp::FilterMarks { .. } | ProxyOp::ReadValue { .. }));
            let verdict = if !inversions.is_empty() {
                Verdict::Adverse { inversions }
            } else if lookup_only && !precomputed.is_empty() {
                Verdict::Precomputed
            } else {
                Verdict::Derivable
            };
            Ok(ProxyPlan {
                verdict,
                ops: d.ops,
                view_level: opts.view_level,
                assumptions: d.assumptions,
                output,
                rules: d.rules,
                task_steps,
                precomputed_steps: precomputed,
                hint,
            })
        }
        Err(true) => Err(AnalysisError::Unknown(format!("rewrite depth bound {} exceeded", opts.depth_bound))),
        Err(false) => {
            let all = View { abs, readable: all_cols };
            match engine.diagnose(&goal, &all) {
                Some(reason) => Ok(ProxyPlan::impossible(reason, opts.view_level, task_steps, hint)),
                None => Err(AnalysisError::Unknown("no rewrite applies and no lossy pattern matches".into())),
            }
        }
    }
}
