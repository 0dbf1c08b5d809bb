//! Predicted user effort for proxy plans, expert shortcuts, and rankings.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::rewrite::{analyze, AnalysisError, AnalysisOptions, CardinalityHint, Over, ProxyOp, ProxyPlan, Verdict};
use crate::spec::VisSpec;
use crate::task::TaskQuery;

const DEFAULT_PROFILE: &str = include_str!("../../../../profiles/default.json");

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CostError {
    #[error("profile: {0}")]
    Profile(String),
    #[error("op kind {0} has no unit cost in the profile")]
    Unpriced(String),
    #[error("cannot price an impossible plan")]
    Impossible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct CostProfile {
    pub unit_costs: BTreeMap<String, f64>,
    pub per_value_scan_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct MetaOp {
    pub name: String,
    /// Op kinds of a contiguous run of plan steps.
    pub pattern: Vec<String>,
    pub replacement_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ExpertiseProfile {
    pub name: String,
    pub base: CostProfile,
    #[serde(default)]
    pub shortcuts: Vec<MetaOp>,
}

fn nonneg(what: &str, x: f64) -> Result<(), CostError> {
    if x.is_finite() && x >= 0.0 {
        Ok(())
    } else {
        Err(CostError::Profile(format!("{what} must be a nonnegative number, got {x}")))
    }
}

impl CostProfile {
    pub fn validate(&self) -> Result<(), CostError> {
        for (k, v) in &self.unit_costs {
            if !ProxyOp::KINDS.contains(&k.as_str()) {
                return Err(CostError::Profile(format!("unknown op kind {k}")));
            }
            nonneg(k, *v)?;
        }
        for k in ProxyOp::KINDS {
            if !self.unit_costs.contains_key(k) {
                return Err(CostError::Unpriced(k.to_string()));
            }
        }
        nonneg("perValueScanCost", self.per_value_scan_cost)
    }

    fn unit(&self, kind: &str) -> Result<f64, CostError> {
        self.unit_costs.get(kind).copied().ok_or_else(|| CostError::Unpriced(kind.to_string()))
    }

    /// Every cost multiplied by `c`.
    pub fn scaled(&self, c: f64) -> CostProfile {
        CostProfile {
            unit_costs: self.unit_costs.iter().map(|(k, v)| (k.clone(), v * c)).collect(),
            per_value_scan_cost: self.per_value_scan_cost * c,
        }
    }

    /// Cost of each op on its own. Scans are priced by the number of marks
    /// they touch, estimated from `hint`.
    pub fn op_costs(&self, ops: &[ProxyOp], hint: CardinalityHint) -> Result<Vec<f64>, CostError> {
        let mut selected = hint.marks;
        let mut out = Vec::with_capacity(ops.len());
        for op in ops {
            let unit = self.unit(op.kind())?;
            let scope = |over: &Over| if *over == Over::All { hint.marks } else { selected };
            let c = match op {
                ProxyOp::FilterMarks { .. } => {
                    selected = hint.per_selection;
                    unit
                }
                ProxyOp::ReadValue { keys: None, .. } => unit,
                ProxyOp::ReadValue { keys: Some(_), over, .. } => unit * scope(over) as f64,
                ProxyOp::ComputeAggregate { over, .. } => unit + self.per_value_scan_cost * scope(over) as f64,
                ProxyOp::SumK { k } => unit * k.saturating_sub(1) as f64,
                _ => unit,
            };
            out.push(c);
        }
        Ok(out)
    }
}

impl ExpertiseProfile {
    pub fn from_json(text: &str) -> Result<Self, CostError> {
        let p: ExpertiseProfile = serde_json::from_str(text).map_err(|e| CostError::Profile(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self, CostError> {
        let text = std::fs::read_to_string(path).map_err(|e| CostError::Profile(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), CostError> {
        self.base.validate()?;
        let mut names = BTreeSet::new();
        for s in &self.shortcuts {
            if !names.insert(&s.name) {
                return Err(CostError::Profile(format!("shortcut {} defined twice", s.name)));
            }
            if s.pattern.is_empty() {
                return Err(CostError::Profile(format!("shortcut {} has an empty pattern", s.name)));
            }
            if let Some(k) = s.pattern.iter().find(|k| !ProxyOp::KINDS.contains(&k.as_str())) {
                return Err(CostError::Profile(format!("shortcut {} uses unknown op kind {k}", s.name)));
            }
            nonneg(&s.name, s.replacement_cost)?;
        }
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> ExpertiseProfile {
        ExpertiseProfile {
            name: self.name.clone(),
            base: self.base.scaled(c),
            shortcuts: self
                .shortcuts
                .iter()
                .map(|s| MetaOp { replacement_cost: s.replacement_cost * c, ..s.clone() })
                .collect(),
        }
    }
}

pub fn default_profile() -> ExpertiseProfile {
    ExpertiseProfile::from_json(DEFAULT_PROFILE).expect("shipped default profile is valid")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct OpCost {
    pub op: ProxyOp,
    pub cost: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shortcut: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CostBreakdown {
    pub total: f64,
    pub per_op: Vec<OpCost>,
}

/// A shortcut covering `ops[start..start + len]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ShortcutMatch {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

/// Greedy matching: left to right, longest pattern first, names breaking ties.
pub fn shortcut_matches(ops: &[ProxyOp], shortcuts: &[MetaOp]) -> Vec<ShortcutMatch> {
    let mut order: Vec<&MetaOp> = shortcuts.iter().collect();
    order.sort_by(|a, b| b.pattern.len().cmp(&a.pattern.len()).then_with(|| a.name.cmp(&b.name)));
    let mut out = Vec::new();
    let mut i = 0;
    while i < ops.len() {
        let hit = order.iter().find(|m| {
            i + m.pattern.len() <= ops.len() && m.pattern.iter().zip(&ops[i..]).all(|(k, op)| k == op.kind())
        });
        match hit {
            Some(m) => {
                out.push(ShortcutMatch { name: m.name.clone(), start: i, len: m.pattern.len() });
                i += m.pattern.len();
            }
            None => i += 1,
        }
    }
    out
}

/// Shortcut tag for each op; ops are never reordered.
pub fn apply_shortcuts(ops: &[ProxyOp], shortcuts: &[MetaOp]) -> Vec<Option<String>> {
    let mut tags = vec![None; ops.len()];
    for m in shortcut_matches(ops, shortcuts) {
        for t in &mut tags[m.start..m.start + m.len] {
            *t = Some(m.name.clone());
        }
    }
    tags
}

/// Prices ops under `profile`. A matched shortcut charges its replacement
/// cost on its first op and nothing on the rest.
pub fn cost_ops(
    ops: &[ProxyOp],
    hint: CardinalityHint,
    profile: &ExpertiseProfile,
) -> Result<CostBreakdown, CostError> {
    let unit = profile.base.op_costs(ops, hint)?;
    let mut per_op: Vec<OpCost> =
        ops.iter().zip(unit).map(|(op, cost)| OpCost { op: op.clone(), cost, shortcut: None }).collect();
    for m in shortcut_matches(ops, &profile.shortcuts) {
        let replacement = profile.shortcuts.iter().find(|s| s.name == m.name).unwrap().replacement_cost;
        for (j, c) in per_op[m.start..m.start + m.len].iter_mut().enumerate() {
            c.cost = if j == 0 { replacement } else { 0.0 };
            c.shortcut = Some(m.name.clone());
        }
    }
    let total = per_op.iter().map(|c| c.cost).sum();
    Ok(CostBreakdown { total, per_op })
}

pub fn cost_plan(plan: &ProxyPlan, profile: &ExpertiseProfile) -> Result<CostBreakdown, CostError> {
    if !plan.verdict.is_answerable() {
        return Err(CostError::Impossible);
    }
    cost_ops(&plan.ops, plan.hint, profile)
}

/// Plan cost, or infinity for impossible plans.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cost {
    Finite(f64),
    Infinite,
}

impl Serialize for Cost {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Cost::Finite(x) => s.serialize_f64(*x),
            Cost::Infinite => s.serialize_str("infinite"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RankEntry {
    pub spec: String,
    pub verdict: Verdict,
    pub cost: Cost,
    pub plan: String,
}

#[derive(Debug, thiserror::Error)]
pub enum RankError {
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Cost(#[from] CostError),
}

/// Specs ordered by predicted effort for `q`; impossible ones last, ties by name.
/// Costs equal to nine significant digits tie.
pub fn rank_visualizations(
    q: &TaskQuery,
    specs: &[VisSpec],
    profile: &ExpertiseProfile,
    opts: &AnalysisOptions,
) -> Result<Vec<RankEntry>, RankError> {
    let mut out = Vec::new();
    for s in specs {
        let plan = analyze(q, s, opts)?;
        let cost = match plan.verdict {
            Verdict::Impossible { .. } => Cost::Infinite,
            _ => Cost::Finite(cost_plan(&plan, profile)?.total),
        };
        out.push(RankEntry { spec: s.name.clone(), verdict: plan.verdict.clone(), cost, plan: plan.summary() });
    }
    out.sort_by(|a, b| {
        let key = |c: &Cost| match c {
            Cost::Finite(x) => (0, format!("{x:.9e}").parse::<f64>().unwrap_or(*x)),
            Cost::Infinite => (1, 0.0),
        };
        let (ka, kb) = (key(&a.cost), key(&b.cost));
        ka.0.cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then_with(|| a.spec.cmp(&b.spec))
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rewrite::Over;
    use crate::table::{AggFn, Expr};
    use proptest::prelude::*;

    fn hint() -> CardinalityHint {
        CardinalityHint { marks: 3, per_selection: 1 }
    }

    fn ca() -> ProxyOp {
        ProxyOp::ComputeAggregate { func: AggFn::Sum, attr: Some("c".into()), group_by: vec![], over: Over::All }
    }

    fn read() -> ProxyOp {
        ProxyOp::ReadValue { attr: "c".into(), keys: None, over: Over::Selected }
    }

    fn filter() -> ProxyOp {
        ProxyOp::FilterMarks { predicate: Expr::col_eq("a", "A") }
    }

    #[test]
    fn default_profile_prices() {
        let p = default_profile();
        assert_eq!(cost_ops(&[filter(), read()], hint(), &p).unwrap().total, 1.5);
        assert_eq!(cost_ops(&[], hint(), &p).unwrap().total, 0.0);
        assert_eq!(cost_ops(&[ProxyOp::SumK { k: 3 }], hint(), &p).unwrap().total, 2.0);
        assert_eq!(cost_ops(&[filter(), read(), ca(), ProxyOp::Ratio], hint(), &p).unwrap().total, 6.5);
    }

    #[test]
    fn unpriced_kind_is_an_error() {
        let mut p = default_profile();
        p.base.unit_costs.remove("ratio");
        assert_eq!(p.validate(), Err(CostError::Unpriced("ratio".into())));
        assert_eq!(cost_ops(&[ProxyOp::Ratio], hint(), &p), Err(CostError::Unpriced("ratio".into())));
    }

    #[test]
    fn profile_rejects_negative_and_duplicates() {
        let text = DEFAULT_PROFILE.replace("\"ratio\": 2", "\"ratio\": -2");
        assert!(ExpertiseProfile::from_json(&text).is_err());
        let mut p = default_profile();
        let m = MetaOp { name: "x".into(), pattern: vec!["ratio".into()], replacement_cost: 1.0 };
        p.shortcuts = vec![m.clone(), m];
        assert!(p.validate().is_err());
    }

    #[test]
    fn slope_shortcut_covers_four_aggregates() {
        let expert = ExpertiseProfile::from_json(include_str!("../../../../profiles/expert.json")).unwrap();
        let ops = vec![ca(), ca(), ca(), ca()];
        let tags = apply_shortcuts(&ops, &expert.shortcuts);
        assert!(tags.iter().all(|t| t.as_deref() == Some("visual-slope-estimate")));
        let b = cost_ops(&ops, hint(), &expert).unwrap();
        assert_eq!(b.total, 2.0);
        assert_eq!(b.per_op.iter().map(|c| c.cost).sum::<f64>(), b.total);
    }

    #[test]
    fn no_match_leaves_plan_alone() {
        let expert = ExpertiseProfile::from_json(include_str!("../../../../profiles/expert.json")).unwrap();
        assert!(apply_shortcuts(&[filter(), read()], &expert.shortcuts).iter().all(Option::is_none));
    }

    #[test]
    fn leftmost_longest_wins() {
        let short =
            MetaOp { name: "short".into(), pattern: vec!["readValue".into(), "ratio".into()], replacement_cost: 0.1 };
        let long = MetaOp {
            name: "long".into(),
            pattern: vec!["filterMarks".into(), "readValue".into(), "ratio".into()],
            replacement_cost: 0.2,
        };
        let ops = vec![filter(), read(), ProxyOp::Ratio, read(), ProxyOp::Ratio];
        let tags = apply_shortcuts(&ops, &[short, long]);
        let names: Vec<_> = tags.iter().map(|t| t.as_deref().unwrap_or("-")).collect();
        assert_eq!(names, ["long", "long", "long", "short", "short"]);
    }

    #[test]
    fn repeated_shortcut_is_charged_per_match() {
        let m = MetaOp {
            name: "pair".into(),
            pattern: vec!["readValue".into(), "readValue".into()],
            replacement_cost: 0.5,
        };
        let mut p = default_profile();
        p.shortcuts = vec![m];
        let b = cost_ops(&[read(), read(), read(), read()], hint(), &p).unwrap();
        assert_eq!(b.total, 1.0);
    }

    #[test]
    fn shipped_shortcuts_never_raise_cost() {
        let expert = ExpertiseProfile::from_json(include_str!("../../../../profiles/expert.json")).unwrap();
        let plain = ExpertiseProfile { shortcuts: vec![], ..expert.clone() };
        for m in &expert.shortcuts {
            let ops: Vec<ProxyOp> = m
                .pattern
                .iter()
                .map(|k| match k.as_str() {
                    "computeAggregate" => ca(),
                    "readValue" => read(),
                    "ratio" => ProxyOp::Ratio,
                    "invertStack" => ProxyOp::InvertStack,
                    other => panic!("unexpected {other}"),
                })
                .collect();
            let with = cost_ops(&ops, CardinalityHint { marks: 1, per_selection: 1 }, &expert).unwrap().total;
            let without = cost_ops(&ops, CardinalityHint { marks: 1, per_selection: 1 }, &plain).unwrap().total;
            assert!(with <= without, "{}", m.name);
        }
    }

    fn any_op() -> impl Strategy<Value = ProxyOp> {
        prop_oneof![
            Just(filter()),
            Just(read()),
            Just(ca()),
            (1usize..5).prop_map(|k| ProxyOp::SumK { k }),
            Just(ProxyOp::Difference),
            Just(ProxyOp::Ratio),
            Just(ProxyOp::InvertStack),
        ]
    }

    proptest! {
        #[test]
        fn totals_are_additive_and_monotone(ops in prop::collection::vec(any_op(), 0..8), extra in any_op(),
                                            kind in 0usize..8, bump in 0.0f64..5.0) {
            let p = default_profile();
            let b = cost_ops(&ops, hint(), &p).unwrap();
            prop_assert_eq!(b.total, b.per_op.iter().map(|c| c.cost).sum::<f64>());
            prop_assert!(b.per_op.iter().all(|c| c.cost >= 0.0));
            let mut longer = ops.clone();
            longer.push(extra);
            prop_assert!(cost_ops(&longer, hint(), &p).unwrap().total >= b.total);
            let mut raised = p.clone();
            *raised.base.unit_costs.get_mut(ProxyOp::KINDS[kind]).unwrap() += bump;
            prop_assert!(cost_ops(&ops, hint(), &raised).unwrap().total >= b.total);
        }
    }
}
