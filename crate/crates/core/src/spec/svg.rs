use std::fmt::Write;

use super::{Channel, Mark, MarkTable};

const SIZE: f64 = 400.0;
const BAR_WIDTH: f64 = 30.0;
const RADIUS: f64 = 150.0;

fn get(v: &MarkTable, row: usize, c: Channel) -> f64 {
    v.value(row, c).unwrap_or(c.default_value())
}

fn fill(v: &MarkTable, row: usize) -> String {
    format!("hsl({:.1},60%,50%)", get(v, row, Channel::Color).clamp(0.0, 1.0) * 300.0)
}

fn polar(deg: f64) -> (f64, f64) {
    let t = (deg - 90.0).to_radians();
    (SIZE / 2.0 + RADIUS * t.cos(), SIZE / 2.0 + RADIUS * t.sin())
}

fn wedge(start: f64, sweep: f64) -> String {
    let c = SIZE / 2.0;
    if sweep >= 360.0 - 1e-9 {
        let (x0, y0) = polar(start);
        let (x1, y1) = polar(start + 180.0);
        return format!(
            "M {x0:.3} {y0:.3} A {RADIUS} {RADIUS} 0 1 1 {x1:.3} {y1:.3} A {RADIUS} {RADIUS} 0 1 1 {x0:.3} {y0:.3} Z"
        );
    }
    let (x0, y0) = polar(start);
    let (x1, y1) = polar(start + sweep);
    let large = i32::from(sweep > 180.0);
    format!("M {c} {c} L {x0:.3} {y0:.3} A {RADIUS} {RADIUS} 0 {large} 1 {x1:.3} {y1:.3} Z")
}

/// Debug rendering of a mark table: one shape element per mark row.
pub fn emit_svg(v: &MarkTable) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}" data-mark="{}">"#,
        v.mark
    );
    let mut angle = 0.0;
    for i in 0..v.len() {
        let color = fill(v, i);
        let line = match v.mark {
            Mark::Point => format!(
                r#"<circle data-row="{i}" cx="{:.3}" cy="{:.3}" r="{:.3}" fill="{color}"/>"#,
                get(v, i, Channel::X),
                SIZE - get(v, i, Channel::Y),
                get(v, i, Channel::Size) * 2.0
            ),
            Mark::Bar => {
                let (y, y2) = (get(v, i, Channel::Y), get(v, i, Channel::Y2));
                format!(
                    r#"<rect data-row="{i}" x="{:.3}" y="{:.3}" width="{BAR_WIDTH}" height="{:.3}" fill="{color}"/>"#,
                    get(v, i, Channel::X) - BAR_WIDTH / 2.0,
                    SIZE - y.max(y2),
                    (y - y2).abs()
                )
            }
            Mark::Arc => {
                let sweep = get(v, i, Channel::ThetaExtent);
                let d = wedge(angle, sweep);
                let s = format!(
                    r#"<path data-row="{i}" data-start="{angle:.6}" data-sweep="{sweep:.9}" d="{d}" fill="{color}"/>"#
                );
                angle += sweep;
                s
            }
            Mark::Line => {
                let (x, y) = (get(v, i, Channel::X), SIZE - get(v, i, Channel::Y));
                let (px, py) =
                    if i == 0 { (x, y) } else { (get(v, i - 1, Channel::X), SIZE - get(v, i - 1, Channel::Y)) };
                format!(r#"<path data-row="{i}" d="M {px:.3} {py:.3} L {x:.3} {y:.3}" stroke="{color}" fill="none"/>"#)
            }
        };
        out.push_str("  ");
        out.push_str(&line);
        out.push('\n');
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::{encode, gallery_spec};
    use crate::table::Table;

    fn marks(name: &str, rows: &[(&str, f64)]) -> MarkTable {
        let s = gallery_spec(name).unwrap();
        let d =
            Table::new(s.schema.clone(), rows.iter().map(|(a, b)| vec![(*a).into(), (*b).into()]).collect()).unwrap();
        encode(&s.pipeline.execute(&d).unwrap(), &s.encoding).unwrap()
    }

    fn shapes<'a>(doc: &'a roxmltree::Document, tag: &str) -> Vec<roxmltree::Node<'a, 'a>> {
        doc.descendants().filter(|n| n.has_tag_name(tag)).collect()
    }

    #[test]
    fn one_rect_per_bar() {
        let svg = emit_svg(&marks("bar", &[("A", 1.0), ("B", 2.0)]));
        let doc = roxmltree::Document::parse(&svg).unwrap();
        assert_eq!(shapes(&doc, "rect").len(), 2);
    }

    #[test]
    fn empty_has_no_shapes() {
        let svg = emit_svg(&marks("scatter", &[]));
        let doc = roxmltree::Document::parse(&svg).unwrap();
        assert_eq!(doc.root_element().children().filter(|n| n.is_element()).count(), 0);
    }

    #[test]
    fn full_pie_sweeps_360() {
        let svg = emit_svg(&marks("pie", &[("A", 1.0), ("B", 2.0), ("C", 5.0)]));
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let paths = shapes(&doc, "path");
        assert_eq!(paths.len(), 3);
        let total: f64 = paths.iter().map(|p| p.attribute("data-sweep").unwrap().parse::<f64>().unwrap()).sum();
        assert!((total - 360.0).abs() < 1e-6);
        let single = emit_svg(&marks("pie", &[("A", 4.0)]));
        assert!(roxmltree::Document::parse(&single).is_ok());
    }
}
