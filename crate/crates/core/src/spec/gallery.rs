use super::{Binding, Channel, Domain, Encoding, Mark, VisSpec};
use crate::table::{AggFn, Aggregate, DataType, Pipeline, Schema, TransformOp};

pub const GALLERY_NAMES: [&str; 4] = ["scatter", "bar", "pie", "propStacked"];

fn schema() -> Schema {
    Schema::of(&[("a", DataType::Text), ("b", DataType::Number)])
}

fn sum_by_a() -> TransformOp {
    TransformOp::GroupAggregate { keys: vec!["a".into()], aggs: vec![Aggregate::new(AggFn::Sum, Some("b"), "c")] }
}

fn percent_stack() -> Pipeline {
    Pipeline::new(vec![
        sum_by_a(),
        TransformOp::Normalize { input: "c".into(), output: "perc".into() },
        TransformOp::Stack { input: "perc".into(), order_by: vec!["a".into()], lower: "d0".into(), upper: "d".into() },
    ])
}

fn unit(attr: &str, range: [f64; 2]) -> Binding {
    Binding::with_scale(attr, Some(Domain::Numeric([0.0, 1.0])), Some(range))
}

pub fn gallery_spec(name: &str) -> Option<VisSpec> {
    let (pipeline, encoding) = match name {
        "scatter" => (
            Pipeline::identity(),
            Encoding::new(Mark::Point, &[(Channel::X, Binding::new("a")), (Channel::Y, Binding::new("b"))]),
        ),
        "bar" => (
            Pipeline::new(vec![sum_by_a()]),
            Encoding::new(Mark::Bar, &[(Channel::X, Binding::new("a")), (Channel::Y, Binding::new("c"))]),
        ),
        "pie" => (
            percent_stack(),
            Encoding::new(
                Mark::Arc,
                &[(Channel::ThetaExtent, unit("perc", [0.0, 360.0])), (Channel::Color, Binding::new("a"))],
            ),
        ),
        "propStacked" => (
            percent_stack(),
            Encoding::new(
                Mark::Bar,
                &[
                    (Channel::Y, unit("d0", [0.0, 400.0])),
                    (Channel::Y2, unit("d", [0.0, 400.0])),
                    (Channel::Color, Binding::new("a")),
                ],
            ),
        ),
        _ => return None,
    };
    Some(VisSpec::new(name, schema(), pipeline, encoding).expect("gallery specs are valid"))
}

/// Point marks showing the row count of each `g` over `(g: text, v: number)`.
pub fn counts_by_g() -> VisSpec {
    let schema = Schema::of(&[("g", DataType::Text), ("v", DataType::Number)]);
    let pipeline = Pipeline::new(vec![TransformOp::GroupAggregate {
        keys: vec!["g".into()],
        aggs: vec![Aggregate::new(AggFn::Count, None, "n")],
    }]);
    let encoding = Encoding::new(Mark::Point, &[(Channel::X, Binding::new("g")), (Channel::Y, Binding::new("n"))]);
    VisSpec::new("countsByG", schema, pipeline, encoding).expect("valid spec")
}

/// The four canonical charts over `(a: text, b: number)`.
pub fn gallery() -> Vec<VisSpec> {
    GALLERY_NAMES.iter().map(|n| gallery_spec(n).unwrap()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::{tables_equal, Table};

    fn d() -> Table {
        Table::new(
            schema(),
            [("A", 1.0), ("A", 2.0), ("B", 3.0), ("C", 2.0)]
                .iter()
                .map(|(a, b)| vec![(*a).into(), (*b).into()])
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn pipelines_relate_as_expected() {
        let g = gallery();
        assert!(g[0].pipeline.is_empty());
        assert_eq!(g[2].pipeline, g[3].pipeline);
        assert_eq!(g[1].pipeline.ops[..], g[2].pipeline.ops[..1]);
        for s in &g {
            assert_eq!(s.schema, schema());
        }
    }

    #[test]
    fn executes_on_fixture() {
        let g = gallery();
        assert!(tables_equal(&g[0].pipeline.execute(&d()).unwrap(), &d(), 0.0));
        let bar = g[1].pipeline.execute(&d()).unwrap();
        let sums: Vec<f64> = bar.column("c").unwrap().filter_map(|v| v.as_f64()).collect();
        assert_eq!(sums, vec![3.0, 3.0, 2.0]);
        let pie = g[2].pipeline.execute(&d()).unwrap();
        let total: f64 = pie.column("perc").unwrap().filter_map(|v| v.as_f64()).sum();
        assert!((total - 1.0).abs() < 1e-9);
        let top = pie.column("d").unwrap().filter_map(|v| v.as_f64()).fold(f64::MIN, f64::max);
        assert!((top - 1.0).abs() < 1e-9);
    }
}
