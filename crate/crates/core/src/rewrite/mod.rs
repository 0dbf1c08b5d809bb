//! Answering tasks from what a chart shows: proxy plans over the marks,
//! verdicts, and how the work is split between the chart and the viewer.

mod engine;
mod facts;
mod plan;

use serde::Serialize;

use crate::spec::VisSpec;
use crate::task::TaskQuery;

pub use engine::{analyze, AnalysisError, AnalysisOptions, SizeHint};
pub use facts::{abstract_pipeline, Abstraction, Fact, Grain};
pub use plan::{
    execute_plan, Assumption, CardinalityHint, ExecContext, LossyReason, Over, PlanError, ProxyOp, ProxyPlan, TotalRef,
    Verdict,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct WorkSplit {
    pub precomputed_steps: Vec<String>,
    pub residual_ops: Vec<ProxyOp>,
    pub residual_share: f64,
}

/// Steps the chart already performed versus ops left to the viewer. Mark
/// filtering is selection, not computation, and is not counted.
pub fn work_split(plan: &ProxyPlan) -> Option<WorkSplit> {
    if !plan.verdict.is_answerable() {
        return None;
    }
    let residual_ops: Vec<ProxyOp> =
        plan.ops.iter().filter(|o| !matches!(o, ProxyOp::FilterMarks { .. })).cloned().collect();
    let (r, s) = (residual_ops.len() as f64, plan.precomputed_steps.len() as f64);
    let residual_share = if r + s == 0.0 { 0.0 } else { r / (r + s) };
    Some(WorkSplit { precomputed_steps: plan.precomputed_steps.clone(), residual_ops, residual_share })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct FlexibilityRow {
    pub task: String,
    pub verdict: Verdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual_share: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct FlexibilityReport {
    pub spec: String,
    pub rows: Vec<FlexibilityRow>,
    pub coverage: f64,
    /// Mean over answerable tasks only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_residual_share: Option<f64>,
}

pub fn flexibility_report(
    spec: &VisSpec,
    tasks: &[TaskQuery],
    opts: &AnalysisOptions,
) -> Result<FlexibilityReport, AnalysisError> {
    let mut rows = Vec::with_capacity(tasks.len());
    let mut shares = Vec::new();
    for q in tasks {
        let plan = analyze(q, spec, opts)?;
        let residual_share = work_split(&plan).map(|w| w.residual_share);
        shares.extend(residual_share);
        rows.push(FlexibilityRow { task: q.to_string(), verdict: plan.verdict, residual_share });
    }
    let coverage = if tasks.is_empty() { 1.0 } else { shares.len() as f64 / tasks.len() as f64 };
    let mean_residual_share = (!shares.is_empty()).then(|| shares.iter().sum::<f64>() / shares.len() as f64);
    Ok(FlexibilityReport { spec: spec.name.clone(), rows, coverage, mean_residual_share })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::spec::{counts_by_g, gallery, gallery_spec};
    use crate::table::{DataType::*, Expr, Schema, Table, Value};
    use crate::task::{evaluate_task, parse_task};

    fn ab() -> Schema {
        Schema::of(&[("a", Text), ("b", Number)])
    }

    fn task(text: &str) -> TaskQuery {
        parse_task(text, Some(&ab())).unwrap()
    }

    fn opts() -> AnalysisOptions {
        AnalysisOptions::default()
    }

    fn run(text: &str, spec: &str) -> ProxyPlan {
        analyze(&task(text), &gallery_spec(spec).unwrap(), &opts()).unwrap()
    }

    fn fixture() -> Table {
        let rows = [("A", 1.0), ("A", 2.0), ("B", 3.0), ("C", 2.0)];
        Table::new(ab(), rows.iter().map(|(a, b)| vec![(*a).into(), (*b).into()]).collect()).unwrap()
    }

    fn check_on_fixture(q: &TaskQuery, spec: &VisSpec, plan: &ProxyPlan) {
        let d = fixture();
        let p = spec.pipeline.execute(&d).unwrap();
        let cols: Vec<String> = if plan.view_level {
            p.schema()
                .names()
                .filter(|n| crate::spec::readable_attributes(spec).contains(*n))
                .map(String::from)
                .collect()
        } else {
            p.schema().names().map(String::from).collect()
        };
        let view = p.project(&cols.iter().map(String::as_str).collect::<Vec<_>>()).unwrap();
        let ctx = ExecContext::from_source(plan, &d).unwrap();
        let got = execute_plan(plan, &view, &ctx).unwrap();
        let want = evaluate_task(q, &d).unwrap();
        assert!(got.approx_eq(&want, 1e-9), "{}: plan gave {got}, task gave {want}", spec.name);
    }

    const PERC_A: &str = "percent_of b by a at a='A'";
    const PERC_B: &str = "percent_of b by a at a='B'";
    const PERC_AB: &str = "x = percent_of b by a at a='A'\ny = percent_of b by a at a='B'\ncombine(x, sum, y)";

    #[test]
    fn pie_percent_of_a_is_a_lookup() {
        let plan = run(PERC_A, "pie");
        assert_eq!(plan.verdict, Verdict::Precomputed);
        assert_eq!(
            plan.ops,
            vec![
                ProxyOp::FilterMarks { predicate: Expr::col_eq("a", "A") },
                ProxyOp::ReadValue { attr: "perc".into(), keys: None, over: Over::Selected },
            ]
        );
        let w = work_split(&plan).unwrap();
        assert_eq!(w.residual_ops.len(), 1);
        assert_eq!(w.residual_share, 0.25);
    }

    #[test]
    fn bar_count_is_impossible() {
        let plan = run("count by a", "bar");
        assert_eq!(plan.verdict, Verdict::Impossible { reason: LossyReason::CountFromSum });
        assert!(plan.ops.is_empty());
        assert_eq!(run("count by a", "pie").verdict, Verdict::Impossible { reason: LossyReason::CountFromSum });
    }

    #[test]
    fn stacked_percent_of_b_inverts_the_stack() {
        let plan = run(PERC_B, "propStacked");
        assert_eq!(plan.verdict, Verdict::Adverse { inversions: vec!["invertStack".into()] });
        let reads: Vec<&str> = plan
            .ops
            .iter()
            .filter_map(|o| match o {
                ProxyOp::ReadValue { attr, .. } => Some(attr.as_str()),
                _ => None,
            })
            .collect();
        assert_eq!(reads, ["d", "d0"]);
    }

    #[test]
    fn bar_percent_sum_is_derivable() {
        let plan = run(PERC_AB, "bar");
        assert_eq!(plan.verdict, Verdict::Derivable);
        let ratios = plan.ops.iter().filter(|o| **o == ProxyOp::Ratio).count();
        assert_eq!(ratios, 2);
        assert_eq!(plan.ops.last(), Some(&ProxyOp::SumK { k: 2 }));
        check_on_fixture(&task(PERC_AB), &gallery_spec("bar").unwrap(), &plan);
    }

    #[test]
    fn parts_to_whole_sum_needs_one_sum() {
        for name in ["pie", "propStacked"] {
            let plan = run(PERC_AB, name);
            let sums: Vec<&ProxyOp> = plan.ops.iter().filter(|o| matches!(o, ProxyOp::SumK { .. })).collect();
            assert_eq!(sums, [&ProxyOp::SumK { k: 2 }], "{name}");
        }
        assert_eq!(run(PERC_AB, "pie").verdict, Verdict::Derivable);
    }

    #[test]
    fn scatter_answers_every_fixture_task() {
        let s = gallery_spec("scatter").unwrap();
        for text in
            [PERC_A, PERC_B, PERC_AB, "count by a", "sum b by a", "rows at a='A'", "avg b by a", "percent_of b by a"]
        {
            let plan = analyze(&task(text), &s, &opts()).unwrap();
            assert_eq!(plan.verdict, Verdict::Derivable, "{text}");
            check_on_fixture(&task(text), &s, &plan);
        }
    }

    #[test]
    fn counts_cannot_give_averages() {
        let q = parse_task("avg v by g", Some(&counts_by_g().schema)).unwrap();
        let plan = analyze(&q, &counts_by_g(), &opts()).unwrap();
        assert_eq!(plan.verdict, Verdict::Impossible { reason: LossyReason::AvgFromCount });
    }

    #[test]
    fn plans_match_the_task_on_the_fixture() {
        let mut o = opts();
        o.key_domains.insert("a".into(), vec![Value::text("A"), Value::text("B"), Value::text("C")]);
        let tasks = [PERC_A, PERC_B, PERC_AB, "sum b by a", "percent_of b by a", "value sum b by a at a='C'", "sum b"];
        for s in gallery() {
            for text in tasks {
                let q = task(text);
                let plan = analyze(&q, &s, &o).unwrap();
                if plan.verdict.is_answerable() {
                    check_on_fixture(&q, &s, &plan);
                }
            }
        }
    }

    #[test]
    fn first_segment_reads_upper_end() {
        let mut o = opts();
        o.key_domains.insert("a".into(), vec![Value::text("A"), Value::text("B"), Value::text("C")]);
        let plan = analyze(&task(PERC_A), &gallery_spec("propStacked").unwrap(), &o).unwrap();
        assert_eq!(plan.ops.len(), 2);
        assert_eq!(plan.verdict, Verdict::Precomputed);
        assert!(matches!(plan.assumptions[0], Assumption::KeyDomain { .. }));
    }

    #[test]
    fn readbar_needs_known_total_on_normalized_charts() {
        let q = task("value sum b by a at a='B'");
        assert_eq!(run("value sum b by a at a='B'", "bar").verdict, Verdict::Precomputed);
        for name in ["pie", "propStacked"] {
            let s = gallery_spec(name).unwrap();
            let plan = analyze(&q, &s, &opts()).unwrap();
            assert_eq!(plan.verdict, Verdict::Impossible { reason: LossyReason::AbsoluteFromNormalized });
            let known = AnalysisOptions { known_total: true, ..opts() };
            let plan = analyze(&q, &s, &known).unwrap();
            assert!(matches!(plan.verdict, Verdict::Adverse { .. }), "{name}");
            assert!(matches!(plan.assumptions[0], Assumption::KnownTotal { .. }));
            check_on_fixture(&q, &s, &plan);
        }
    }

    #[test]
    fn raw_rows_are_lost_by_grouping() {
        assert_eq!(
            run("rows at a='A'", "bar").verdict,
            Verdict::Impossible { reason: LossyReason::RawRowFromAggregate }
        );
    }

    #[test]
    fn work_shares_order_charts() {
        let share = |s: &str| work_split(&run(PERC_A, s)).unwrap().residual_share;
        assert_eq!(share("scatter"), 1.0);
        assert!(share("pie") < share("bar") && share("bar") < share("scatter"));
        assert!(run(PERC_A, "bar").precomputed_steps.contains(&"sum(b) by [a]".to_string()));
    }

    #[test]
    fn schema_mismatch_is_an_error() {
        let q = parse_task("count by g", Some(&counts_by_g().schema)).unwrap();
        assert!(matches!(
            analyze(&q, &gallery_spec("bar").unwrap(), &opts()),
            Err(AnalysisError::SchemaMismatch { .. })
        ));
    }

    #[test]
    fn depth_bound_gives_unknown() {
        let o = AnalysisOptions { depth_bound: 1, ..opts() };
        let r = analyze(&task(PERC_AB), &gallery_spec("bar").unwrap(), &o);
        assert!(matches!(r, Err(AnalysisError::Unknown(_))));
    }

    #[test]
    fn hidden_attribute_is_unreadable_at_view_level() {
        let bar = gallery_spec("bar").unwrap();
        let e = crate::spec::Encoding::new(
            crate::spec::Mark::Bar,
            &[(crate::spec::Channel::X, crate::spec::Binding::new("a"))],
        );
        let hidden = bar.with_encoding(e).unwrap();
        let q = task("sum b by a");
        let view = analyze(&q, &hidden, &opts()).unwrap();
        assert_eq!(view.verdict, Verdict::Impossible { reason: LossyReason::UnreadableAttribute });
        let full = analyze(&q, &hidden, &AnalysisOptions { view_level: false, ..opts() }).unwrap();
        assert_eq!(full.verdict, Verdict::Precomputed);
    }

    #[test]
    fn count_flexibility() {
        let tasks = vec![task("count by a")];
        for s in gallery() {
            let r = flexibility_report(&s, &tasks, &opts()).unwrap();
            let want = if s.name == "scatter" { 1.0 } else { 0.0 };
            assert_eq!(r.coverage, want, "{}", s.name);
        }
        let _ = BTreeMap::<String, String>::new();
    }
}
