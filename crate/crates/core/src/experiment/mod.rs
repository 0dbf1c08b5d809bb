//! What a study comparing two charts on one task would measure.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::rewrite::{analyze, AnalysisError, AnalysisOptions, ProxyPlan};
use crate::spec::{Encoding, VisSpec};
use crate::table::{Expr, Pipeline, Schema, TransformOp};
use crate::task::TaskQuery;

fn commutes(prev: &TransformOp, filter: &Expr) -> bool {
    let cols = filter.columns();
    match prev {
        TransformOp::Derive { output, .. } | TransformOp::Bin { output, .. } => !cols.contains(output),
        TransformOp::Sort { .. } => true,
        TransformOp::GroupAggregate { keys, .. } => cols.iter().all(|c| keys.contains(c)),
        TransformOp::Project { columns } => cols.iter().all(|c| columns.contains(c)),
        _ => false,
    }
}

fn outputs(op: &TransformOp) -> Vec<&String> {
    match op {
        TransformOp::Derive { output, .. }
        | TransformOp::Bin { output, .. }
        | TransformOp::Normalize { output, .. } => {
            vec![output]
        }
        TransformOp::GroupAggregate { aggs, .. } => aggs.iter().map(|a| &a.output).collect(),
        TransformOp::Stack { lower, upper, .. } => vec![lower, upper],
        _ => vec![],
    }
}

/// Canonical form of `p`: filters as early as they can go, one conjunction
/// per run, sorted grouping keys and aggregates, derived columns renamed in
/// order of creation, and a single trailing projection onto sorted names.
pub fn normal_form(p: &Pipeline, input: &Schema) -> Option<Pipeline> {
    let out = p.output_schema(input).ok()?;
    let stripped: Vec<TransformOp> =
        p.ops.iter().filter(|o| !matches!(o, TransformOp::Project { .. })).cloned().collect();
    let mut ops = if Pipeline::new(stripped.clone()).output_schema(input).is_ok() { stripped } else { p.ops.clone() };

    for i in 0..ops.len() {
        if let TransformOp::Filter { predicate } = &ops[i] {
            let pred = predicate.clone();
            let mut j = i;
            while j > 0 && commutes(&ops[j - 1], &pred) {
                ops.swap(j - 1, j);
                j -= 1;
            }
        }
    }
    let mut merged: Vec<TransformOp> = Vec::new();
    for op in ops {
        match (merged.last_mut(), op) {
            (Some(TransformOp::Filter { predicate: prev }), TransformOp::Filter { predicate }) => {
                let mut parts = prev.conjuncts();
                parts.extend(predicate.conjuncts());
                *prev = Expr::conjoin(&parts).expect("non-empty");
            }
            (_, op) => merged.push(op),
        }
    }
    for op in &mut merged {
        match op {
            TransformOp::Filter { predicate } => {
                let mut parts = predicate.conjuncts();
                parts.sort_by_key(|e| e.to_string());
                parts.dedup();
                *predicate = Expr::conjoin(&parts).expect("non-empty");
            }
            TransformOp::GroupAggregate { keys, aggs } => {
                keys.sort();
                aggs.sort_by(|x, y| (x.func.name(), &x.input).cmp(&(y.func.name(), &y.input)));
            }
            _ => {}
        }
    }

    let mut names: BTreeMap<String, String> = input.names().map(|n| (n.to_string(), n.to_string())).collect();
    let mut fresh = 0;
    let mut renamed = Vec::new();
    for op in merged {
        let r = |n: &String| names.get(n).cloned().unwrap_or_else(|| n.clone());
        let mut op = match op {
            TransformOp::Filter { predicate } => {
                TransformOp::Filter { predicate: predicate.rename(&|n| r(&n.to_string())) }
            }
            TransformOp::Derive { output, expr } => {
                TransformOp::Derive { output, expr: expr.rename(&|n| r(&n.to_string())) }
            }
            TransformOp::Project { columns } => TransformOp::Project { columns: columns.iter().map(r).collect() },
            TransformOp::GroupAggregate { keys, aggs } => TransformOp::GroupAggregate {
                keys: keys.iter().map(r).collect(),
                aggs: aggs
                    .into_iter()
                    .map(|mut a| {
                        a.input = a.input.as_ref().map(r);
                        a
                    })
                    .collect(),
            },
            TransformOp::Normalize { input, output } => TransformOp::Normalize { input: r(&input), output },
            TransformOp::Stack { input, order_by, lower, upper } => {
                TransformOp::Stack { input: r(&input), order_by: order_by.iter().map(r).collect(), lower, upper }
            }
            TransformOp::Bin { input, width, output } => TransformOp::Bin { input: r(&input), width, output },
            TransformOp::Sort { mut keys } => {
                for k in &mut keys {
                    k.column = r(&k.column);
                }
                TransformOp::Sort { keys }
            }
            op @ TransformOp::Limit { .. } => op,
        };
        let new: Vec<(String, String)> = outputs(&op)
            .into_iter()
            .map(|o| {
                fresh += 1;
                (o.clone(), format!("#{fresh}"))
            })
            .collect();
        match &mut op {
            TransformOp::Derive { output, .. }
            | TransformOp::Bin { output, .. }
            | TransformOp::Normalize { output, .. } => {
                *output = new[0].1.clone();
            }
            TransformOp::GroupAggregate { aggs, .. } => {
                for (a, (_, n)) in aggs.iter_mut().zip(&new) {
                    a.output = n.clone();
                }
            }
            TransformOp::Stack { lower, upper, .. } => {
                *lower = new[0].1.clone();
                *upper = new[1].1.clone();
            }
            _ => {}
        }
        names.extend(new);
        renamed.push(op);
    }
    let mut cols: Vec<String> = out.names().map(|n| names.get(n).cloned().unwrap_or_else(|| n.to_string())).collect();
    cols.sort();
    renamed.push(TransformOp::Project { columns: cols });
    Some(Pipeline::new(renamed))
}

/// Whether two pipelines over `input` perform the same preparation up to
/// reordering and renaming. False when either fails to schema-check.
pub fn pipelines_equivalent(a: &Pipeline, b: &Pipeline, input: &Schema) -> bool {
    match (normal_form(a, input), normal_form(b, input)) {
        (Some(x), Some(y)) => x == y,
        _ => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub enum Similarity {
    Identical,
    SameFamily,
    Different,
}

pub fn encodings_similar(a: &Encoding, b: &Encoding) -> Similarity {
    let unranged = |e: &Encoding| -> Vec<_> {
        e.bindings.iter().map(|(c, b)| (*c, b.attr.clone(), b.scale.kind, b.scale.domain.clone())).collect()
    };
    if a.mark == b.mark && unranged(a) == unranged(b) {
        Similarity::Identical
    } else if a.mark == b.mark && a.mark.is_polar() == b.mark.is_polar() {
        Similarity::SameFamily
    } else {
        Similarity::Different
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum Classification {
    Inappropriate { which: Vec<Side> },
    MeasuresEncoding,
    MeasuresTransformation,
    Confounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Factor {
    Transformation,
    Encoding,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Rationale {
    pub pipelines_equal: bool,
    pub encoding_similarity: Similarity,
    /// Inversions in B's plan minus those in A's.
    pub inversion_delta: i64,
    pub varied_factors: Vec<Factor>,
    /// An analysis assumption under which neither chart is inappropriate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flipped_by: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PerSpec {
    pub spec: String,
    pub summary: String,
    pub plan: ProxyPlan,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ComparisonReport {
    pub classification: Classification,
    pub per_spec: [PerSpec; 2],
    pub rationale: Rationale,
}

fn inversions(p: &ProxyPlan) -> i64 {
    p.ops.iter().filter(|o| o.is_inversion()).count() as i64
}

fn inappropriate(a: &ProxyPlan, b: &ProxyPlan) -> Vec<Side> {
    let mut which = Vec::new();
    if !a.verdict.is_answerable() {
        which.push(Side::A);
    }
    if !b.verdict.is_answerable() {
        which.push(Side::B);
    }
    which
}

pub fn classify_comparison(
    a: &VisSpec,
    b: &VisSpec,
    q: &TaskQuery,
    opts: &AnalysisOptions,
) -> Result<ComparisonReport, AnalysisError> {
    let pa = analyze(q, a, opts)?;
    let pb = analyze(q, b, opts)?;
    let pipelines_equal = a.schema == b.schema && pipelines_equivalent(&a.pipeline, &b.pipeline, &a.schema);
    let encoding_similarity = encodings_similar(&a.encoding, &b.encoding);
    let which = inappropriate(&pa, &pb);
    let classification = if !which.is_empty() {
        Classification::Inappropriate { which }
    } else if pipelines_equal {
        Classification::MeasuresEncoding
    } else if encoding_similarity != Similarity::Different {
        Classification::MeasuresTransformation
    } else {
        Classification::Confounded
    };
    let mut flipped_by = None;
    if matches!(classification, Classification::Inappropriate { .. }) && !opts.known_total {
        let relaxed = AnalysisOptions { known_total: true, ..opts.clone() };
        let (ra, rb) = (analyze(q, a, &relaxed), analyze(q, b, &relaxed));
        if let (Ok(ra), Ok(rb)) = (ra, rb) {
            if inappropriate(&ra, &rb).is_empty() {
                flipped_by = Some("known-total".to_string());
            }
        }
    }
    let mut varied_factors = Vec::new();
    if !pipelines_equal {
        varied_factors.push(Factor::Transformation);
    }
    if encoding_similarity != Similarity::Identical {
        varied_factors.push(Factor::Encoding);
    }
    let rationale = Rationale {
        pipelines_equal,
        encoding_similarity,
        inversion_delta: inversions(&pb) - inversions(&pa),
        varied_factors,
        flipped_by,
    };
    Ok(ComparisonReport {
        classification,
        per_spec: [
            PerSpec { spec: a.name.clone(), summary: pa.summary(), plan: pa },
            PerSpec { spec: b.name.clone(), summary: pb.summary(), plan: pb },
        ],
        rationale,
    })
}
