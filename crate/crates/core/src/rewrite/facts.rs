use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;

use crate::table::{AggFn, Expr, Pipeline, Schema, TransformOp};

/// What a column of a pipeline's output means in terms of the source table.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum Fact {
    /// A source column, one value per source row.
    Raw {
        column: String,
    },
    /// A grouping key.
    Key {
        column: String,
    },
    /// A per-group statistic. `count` always has no input.
    Stat {
        func: AggFn,
        input: Option<String>,
    },
    /// The fact divided by its total over the table.
    Share {
        of: Box<Fact>,
    },
    Lower {
        of: Box<Fact>,
        order: Vec<String>,
    },
    Upper {
        of: Box<Fact>,
        order: Vec<String>,
    },
    Other {
        label: String,
    },
}

impl Fact {
    pub fn raw(c: &str) -> Fact {
        Fact::Raw { column: c.to_string() }
    }

    pub fn key(c: &str) -> Fact {
        Fact::Key { column: c.to_string() }
    }

    pub fn stat(func: AggFn, input: Option<&str>) -> Fact {
        let input = if func == AggFn::Count { None } else { input.map(str::to_string) };
        Fact::Stat { func, input }
    }

    pub fn share(f: Fact) -> Fact {
        Fact::Share { of: Box::new(f) }
    }

    /// Logical computation steps that produce this fact at grouping `keys`.
    pub fn steps(&self, keys: &[String]) -> Vec<String> {
        match self {
            Fact::Raw { .. } | Fact::Key { .. } | Fact::Other { .. } => Vec::new(),
            Fact::Stat { .. } => vec![format!("{self} by [{}]", keys.join(", "))],
            Fact::Share { of } => {
                let mut s = of.steps(keys);
                s.push(format!("total of {of}"));
                s.push(format!("normalize {of}"));
                s
            }
            Fact::Lower { of, order } | Fact::Upper { of, order } => {
                let mut s = of.steps(keys);
                s.push(format!("stack {of} by [{}]", order.join(", ")));
                s
            }
        }
    }
}

impl fmt::Display for Fact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fact::Raw { column } => write!(f, "{column}"),
            Fact::Key { column } => write!(f, "key {column}"),
            Fact::Stat { func, input } => write!(f, "{func}({})", input.as_deref().unwrap_or("")),
            Fact::Share { of } => write!(f, "share of {of}"),
            Fact::Lower { of, .. } => write!(f, "lower end of {of}"),
            Fact::Upper { of, .. } => write!(f, "upper end of {of}"),
            Fact::Other { label } => write!(f, "{label}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum Grain {
    Rows,
    /// Grouping keys as source column names, sorted.
    Groups {
        keys: Vec<String>,
    },
}

impl Grain {
    pub fn groups(keys: &[String]) -> Grain {
        let mut k = keys.to_vec();
        k.sort();
        k.dedup();
        Grain::Groups { keys: k }
    }

    pub fn keys(&self) -> Option<&[String]> {
        match self {
            Grain::Rows => None,
            Grain::Groups { keys } => Some(keys),
        }
    }
}

/// Fact-level summary of what a pipeline computes.
#[derive(Debug, Clone, PartialEq)]
pub struct Abstraction {
    pub grain: Grain,
    /// Conjuncts over source columns applied before any grouping.
    pub filter: Vec<Expr>,
    pub columns: Vec<(String, Fact)>,
    /// Set when the pipeline uses something the fact lattice cannot describe.
    pub opaque: Option<String>,
}

pub fn filter_set(f: &[Expr]) -> BTreeSet<String> {
    f.iter().map(|e| e.to_string()).collect()
}

impl Abstraction {
    pub fn fact_of(&self, col: &str) -> Option<&Fact> {
        self.columns.iter().find(|(c, _)| c == col).map(|(_, f)| f)
    }

    /// Source column behind a key (grouped) or raw (row-level) column.
    pub fn source_of(&self, col: &str) -> Option<String> {
        match (self.fact_of(col)?, &self.grain) {
            (Fact::Key { column }, Grain::Groups { .. }) | (Fact::Raw { column }, Grain::Rows) => Some(column.clone()),
            _ => None,
        }
    }

    /// Rewrites `e` from output column names to source column names.
    pub fn to_source(&self, e: &Expr) -> Option<Expr> {
        let cols = e.columns();
        if !cols.iter().all(|c| self.source_of(c).is_some()) {
            return None;
        }
        Some(e.rename(&|c| self.source_of(c).unwrap()))
    }

    pub fn filter_steps(&self) -> Vec<String> {
        self.filter.iter().map(|c| format!("filter {c}")).collect()
    }
}

/// Abstract interpretation of `pipeline` over a source table with `schema`.
pub fn abstract_pipeline(schema: &Schema, pipeline: &Pipeline) -> Abstraction {
    let mut a = Abstraction {
        grain: Grain::Rows,
        filter: Vec::new(),
        columns: schema.names().map(|n| (n.to_string(), Fact::raw(n))).collect(),
        opaque: None,
    };
    let mut shaped = false;
    for (i, op) in pipeline.ops.iter().enumerate() {
        if a.opaque.is_some() {
            break;
        }
        match op {
            TransformOp::Filter { predicate } => {
                if shaped {
                    a.opaque = Some("filter after normalize or stack".into());
                    continue;
                }
                match a.to_source(predicate) {
                    Some(p) => {
                        for c in p.conjuncts() {
                            if !a.filter.contains(&c) {
                                a.filter.push(c);
                            }
                        }
                    }
                    None => a.opaque = Some(format!("filter `{predicate}` on a computed column")),
                }
            }
            TransformOp::Derive { output, expr } => {
                let fact = match expr {
                    Expr::Column(c) => a.fact_of(c).cloned().unwrap_or(Fact::Other { label: c.clone() }),
                    _ => Fact::Other { label: format!("{expr} #{i}") },
                };
                a.columns.push((output.clone(), fact));
            }
            TransformOp::Project { columns } => {
                a.columns = columns.iter().filter_map(|c| a.fact_of(c).map(|f| (c.clone(), f.clone()))).collect();
            }
            TransformOp::GroupAggregate { keys, aggs } => {
                if shaped {
                    a.opaque = Some("grouping after normalize or stack".into());
                    continue;
                }
                let mut src_keys = Vec::new();
                let mut cols = Vec::new();
                for k in keys {
                    match a.source_of(k) {
                        Some(s) => {
                            cols.push((k.clone(), Fact::key(&s)));
                            src_keys.push(s);
                        }
                        None => {
                            a.opaque = Some(format!("grouping on computed column {k}"));
                        }
                    }
                }
                if a.opaque.is_some() {
                    continue;
                }
                if let Grain::Groups { keys: old } = &a.grain {
                    if !src_keys.iter().all(|k| old.contains(k)) {
                        a.opaque = Some("regrouping on a non-key column".into());
                        continue;
                    }
                }
                for ag in aggs {
                    let input = ag.input.as_ref().and_then(|c| a.fact_of(c));
                    let fact = match (&a.grain, ag.func, input) {
                        (Grain::Rows, AggFn::Count, _) => Fact::stat(AggFn::Count, None),
                        (Grain::Rows, f, Some(Fact::Raw { column })) => Fact::stat(f, Some(column)),
                        (Grain::Groups { .. }, AggFn::Sum, Some(Fact::Stat { func: AggFn::Count, .. })) => {
                            Fact::stat(AggFn::Count, None)
                        }
                        (Grain::Groups { .. }, f, Some(Fact::Stat { func, input }))
                            if f == *func && matches!(f, AggFn::Sum | AggFn::Min | AggFn::Max) =>
                        {
                            Fact::stat(f, input.as_deref())
                        }
                        _ => Fact::Other { label: format!("{}({}) #{i}", ag.func, ag.input.as_deref().unwrap_or("")) },
                    };
                    cols.push((ag.output.clone(), fact));
                }
                a.grain = Grain::groups(&src_keys);
                a.columns = cols;
            }
            TransformOp::Normalize { input, output } => {
                shaped = true;
                let fact = match a.fact_of(input) {
                    Some(f @ (Fact::Stat { .. } | Fact::Raw { .. })) => Fact::share(f.clone()),
                    _ => Fact::Other { label: format!("normalize({input}) #{i}") },
                };
                a.columns.push((output.clone(), fact));
            }
            TransformOp::Stack { input, order_by, lower, upper } => {
                shaped = true;
                let order: Option<Vec<String>> = order_by.iter().map(|c| a.source_of(c)).collect();
                let Some(order) = order else {
                    a.opaque = Some("stack ordered by a computed column".into());
                    continue;
                };
                let f = a.fact_of(input).cloned().unwrap_or(Fact::Other { label: input.clone() });
                a.columns.push((lower.clone(), Fact::Lower { of: Box::new(f.clone()), order: order.clone() }));
                a.columns.push((upper.clone(), Fact::Upper { of: Box::new(f), order }));
            }
            TransformOp::Bin { input, width, output } => {
                a.columns.push((output.clone(), Fact::Other { label: format!("bin({input}, {width}) #{i}") }));
            }
            TransformOp::Sort { .. } => {}
            TransformOp::Limit { .. } => a.opaque = Some("limit drops rows".into()),
        }
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::gallery_spec;

    #[test]
    fn pie_facts() {
        let s = gallery_spec("pie").unwrap();
        let a = abstract_pipeline(&s.schema, &s.pipeline);
        assert_eq!(a.grain, Grain::groups(&["a".to_string()]));
        let sum = Fact::stat(AggFn::Sum, Some("b"));
        assert_eq!(a.fact_of("perc"), Some(&Fact::share(sum.clone())));
        assert_eq!(a.fact_of("d"), Some(&Fact::Upper { of: Box::new(Fact::share(sum)), order: vec!["a".into()] }));
        assert_eq!(a.source_of("a").as_deref(), Some("a"));
    }

    #[test]
    fn filters_on_keys_move_to_source() {
        let p: Pipeline = serde_json::from_str(
            r#"[{"op":"groupAggregate","keys":["a"],"aggs":[{"fn":"count","as":"n"}]},{"op":"filter","predicate":"a = 'A'"}]"#,
        )
        .unwrap();
        let s = gallery_spec("bar").unwrap().schema;
        let a = abstract_pipeline(&s, &p);
        assert_eq!(a.filter, vec![Expr::col_eq("a", "A")]);
        assert!(a.opaque.is_none());
    }

    #[test]
    fn limit_is_opaque() {
        let p: Pipeline = serde_json::from_str(r#"[{"op":"limit","n":2}]"#).unwrap();
        let s = gallery_spec("bar").unwrap().schema;
        assert!(abstract_pipeline(&s, &p).opaque.is_some());
    }

    #[test]
    fn share_steps() {
        let f = Fact::share(Fact::stat(AggFn::Sum, Some("b")));
        assert_eq!(f.steps(&["a".into()]), vec!["sum(b) by [a]", "total of sum(b)", "normalize sum(b)"]);
    }
}
