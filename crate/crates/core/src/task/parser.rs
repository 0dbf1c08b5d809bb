use std::collections::BTreeMap;

use super::template::TaskTemplate;
use super::{CombineOp, ResultSpec, Scalar, TaskError, TaskQuery};
use crate::table::{AggFn, Aggregate, Column, DataType, Expr, Pipeline, Schema, TransformOp};

/// A parsed task file: either a concrete task or a template with holes.
#[derive(Debug, Clone, PartialEq)]
pub enum Document {
    Task(TaskQuery),
    Template(TaskTemplate),
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
    line: usize,
}

impl<'a> Cursor<'a> {
    fn new(src: &'a str, line: usize) -> Self {
        Cursor { src, pos: 0, line }
    }

    fn err(&self, message: impl Into<String>) -> TaskError {
        self.err_at(self.pos, message)
    }

    fn err_at(&self, pos: usize, message: impl Into<String>) -> TaskError {
        TaskError::Syntax { line: self.line, column: self.src[..pos].chars().count() + 1, message: message.into() }
    }

    fn skip_ws(&mut self) {
        let rest = &self.src[self.pos..];
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn at_end(&mut self) -> bool {
        self.skip_ws();
        self.pos == self.src.len()
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.src[self.pos..].chars().next()
    }

    fn peek_ident(&mut self) -> Option<&'a str> {
        self.skip_ws();
        let rest = &self.src[self.pos..];
        let n = rest.find(|c: char| !(c.is_alphanumeric() || c == '_')).unwrap_or(rest.len());
        let word = &rest[..n];
        (!word.is_empty() && !word.starts_with(|c: char| c.is_ascii_digit())).then_some(word)
    }

    fn ident(&mut self, what: &str) -> Result<&'a str, TaskError> {
        match self.peek_ident() {
            Some(w) => {
                self.pos += w.len();
                Ok(w)
            }
            None => Err(self.err(format!("expected {what}"))),
        }
    }

    fn keyword(&mut self, kw: &str) -> bool {
        if self.peek_ident() == Some(kw) {
            self.pos += kw.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<(), TaskError> {
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            Ok(())
        } else {
            Err(self.err(format!("expected `{c}`")))
        }
    }

    fn eat(&mut self, c: char) -> bool {
        self.expect(c).is_ok()
    }

    fn rest(&mut self) -> (usize, &'a str) {
        self.skip_ws();
        let start = self.pos;
        self.pos = self.src.len();
        (start, &self.src[start..])
    }

    fn finish(&mut self) -> Result<(), TaskError> {
        if self.at_end() {
            Ok(())
        } else {
            Err(self.err("unexpected trailing input"))
        }
    }
}

const KEYWORDS: [&str; 9] = ["by", "at", "value", "percent_of", "rows", "combine", "schema", "param", "pairs"];

fn parse_schema(c: &mut Cursor) -> Result<Schema, TaskError> {
    let mut cols = Vec::new();
    loop {
        let name = c.ident("column name")?;
        c.expect(':')?;
        let tpos = c.pos;
        let ty: DataType = c.ident("column type")?.parse().map_err(|e: String| c.err_at(tpos, e))?;
        cols.push(Column::new(name, ty));
        if !c.eat(',') {
            break;
        }
    }
    c.finish()?;
    Schema::new(cols).map_err(|e| c.err(e.to_string()))
}

fn parse_keys(c: &mut Cursor) -> Result<Vec<String>, TaskError> {
    let mut keys = vec![c.ident("grouping column")?.to_string()];
    while c.eat(',') {
        keys.push(c.ident("grouping column")?.to_string());
    }
    Ok(keys)
}

fn parse_at(c: &mut Cursor) -> Result<Option<Expr>, TaskError> {
    if !c.keyword("at") {
        return Ok(None);
    }
    let (start, text) = c.rest();
    if text.is_empty() {
        return Err(c.err("expected a predicate after `at`"));
    }
    Expr::parse(text).map(Some).map_err(|e| c.err_at(start + e.offset.min(text.len()), e.message))
}

fn out_name(base: &str, keys: &[String]) -> String {
    let mut n = base.to_string();
    while keys.contains(&n) {
        n.push('_');
    }
    n
}

fn agg_output(f: AggFn) -> &'static str {
    match f {
        AggFn::Count => "c",
        AggFn::Sum => "s",
        AggFn::Avg => "avg",
        AggFn::Min => "min",
        AggFn::Max => "max",
    }
}

struct Parsed {
    body: Pipeline,
    result: ResultSpec,
}

fn scalar_or_table(column: String, at: Option<Expr>, force_scalar: bool) -> ResultSpec {
    if at.is_some() || force_scalar {
        ResultSpec::Scalar { scalar: Scalar::ValueAt { column, at } }
    } else {
        ResultSpec::FullTable
    }
}

fn parse_task_expr(c: &mut Cursor, named: &BTreeMap<String, TaskQuery>) -> Result<Parsed, TaskError> {
    let start = c.pos;
    let word = c.ident("a task")?;
    match word {
        "combine" => {
            c.expect('(')?;
            let lpos = c.pos;
            let l = c.ident("task name")?;
            c.expect(',')?;
            let opos = c.pos;
            let op = c.ident("combine operator")?;
            let op = CombineOp::from_name(op).ok_or_else(|| {
                c.err_at(opos, format!("unknown combine operator `{op}`; use sum, difference or ratio"))
            })?;
            c.expect(',')?;
            let rpos = c.pos;
            let r = c.ident("task name")?;
            c.expect(')')?;
            c.finish()?;
            let side = |name: &str, pos: usize| -> Result<&TaskQuery, TaskError> {
                named.get(name).ok_or_else(|| c.err_at(pos, format!("unknown task `{name}`")))
            };
            let (lq, rq) = (side(l, lpos)?, side(r, rpos)?);
            let (Some(ls), Some(rs)) = (lq.scalar(), rq.scalar()) else {
                return Err(c.err_at(start, "combine needs two scalar tasks"));
            };
            if lq.body != rq.body || lq.schema != rq.schema {
                return Err(c.err_at(start, "combined tasks must share the same pipeline"));
            }
            Ok(Parsed {
                body: lq.body.clone(),
                result: ResultSpec::Scalar {
                    scalar: Scalar::Combine { op, left: Box::new(ls.clone()), right: Box::new(rs.clone()) },
                },
            })
        }
        "rows" => {
            let at = parse_at(c)?;
            c.finish()?;
            let body = at.map(|p| vec![TransformOp::Filter { predicate: p }]).unwrap_or_default();
            Ok(Parsed { body: Pipeline::new(body), result: ResultSpec::FullTable })
        }
        "percent_of" => {
            let col = c.ident("column")?.to_string();
            if !c.keyword("by") {
                return Err(c.err("expected `by`"));
            }
            let keys = parse_keys(c)?;
            let at = parse_at(c)?;
            c.finish()?;
            let s = out_name("s", &keys);
            let p = out_name("p", &keys);
            let mut ops = vec![
                TransformOp::GroupAggregate {
                    keys: keys.clone(),
                    aggs: vec![Aggregate::new(AggFn::Sum, Some(&col), &s)],
                },
                TransformOp::Normalize { input: s, output: p.clone() },
            ];
            if at.is_none() {
                let mut columns = keys;
                columns.push(p.clone());
                ops.push(TransformOp::Project { columns });
            }
            Ok(Parsed { body: Pipeline::new(ops), result: scalar_or_table(p, at, false) })
        }
        _ => {
            let force_scalar = word == "value";
            let fpos = if force_scalar { c.pos } else { start };
            let fname = if force_scalar { c.ident("aggregate")? } else { word };
            let func = AggFn::from_name(fname).ok_or_else(|| {
                c.err_at(
                    fpos,
                    format!("expected a task (sum, count, avg, min, max, percent_of, rows, combine), found `{fname}`"),
                )
            })?;
            let input = match c.peek_ident() {
                Some(w) if !KEYWORDS.contains(&w) => Some(c.ident("column")?.to_string()),
                _ => None,
            };
            if input.is_none() && func != AggFn::Count {
                return Err(c.err(format!("{func} needs an input column")));
            }
            let keys = if c.keyword("by") { parse_keys(c)? } else { Vec::new() };
            let at = parse_at(c)?;
            c.finish()?;
            let out = out_name(agg_output(func), &keys);
            let body = Pipeline::new(vec![TransformOp::GroupAggregate {
                keys,
                aggs: vec![Aggregate { func, input, output: out.clone() }],
            }]);
            Ok(Parsed { body, result: scalar_or_table(out, at, force_scalar) })
        }
    }
}

/// Strips a whole-line `#` comment; returns `None` for blank lines.
pub(crate) fn significant(line: &str) -> Option<&str> {
    let t = line.trim();
    (!t.is_empty() && !t.starts_with('#')).then_some(t)
}

pub(crate) fn is_template_line(line: &str) -> bool {
    let mut c = Cursor::new(line, 0);
    matches!(c.peek_ident(), Some("param") | Some("pairs"))
}

/// Parses a concrete task. The last task line is the result; earlier lines
/// may name tasks for use in `combine`.
pub fn parse_task(text: &str, default_schema: Option<&Schema>) -> Result<TaskQuery, TaskError> {
    let mut schema = default_schema.cloned();
    let mut named: BTreeMap<String, TaskQuery> = BTreeMap::new();
    let mut last = None;
    for (i, raw) in text.lines().enumerate() {
        let Some(line) = significant(raw) else { continue };
        let lineno = i + 1;
        let mut c = Cursor::new(line, lineno);
        if let Some(hole) = line.find('$') {
            return Err(c.err_at(hole, "unsubstituted template hole"));
        }
        match c.peek_ident() {
            Some("schema") => {
                c.keyword("schema");
                schema = Some(parse_schema(&mut c)?);
                continue;
            }
            Some("param") | Some("pairs") => {
                return Err(c.err("template declarations are only allowed in templates"));
            }
            _ => {}
        }
        let mut label = None;
        if let Some(w) = c.peek_ident() {
            let after = c.pos + w.len();
            let tail = line[after..].trim_start();
            if tail.starts_with('=') && !tail.starts_with("==") && !KEYWORDS.contains(&w) {
                c.pos = after;
                c.expect('=')?;
                label = Some(w.to_string());
            }
        }
        let s = schema.clone().ok_or_else(|| c.err("no schema declared before the task"))?;
        let parsed = parse_task_expr(&mut c, &named)?;
        let q = TaskQuery::new(s, parsed.body, parsed.result)
            .map_err(|source| TaskError::Invalid { line: lineno, source })?;
        if let Some(l) = label {
            named.insert(l, q.clone());
        }
        last = Some(q);
    }
    last.ok_or_else(|| TaskError::Syntax { line: 1, column: 1, message: "no task found".into() })
}

pub fn parse_document(text: &str, default_schema: Option<&Schema>) -> Result<Document, TaskError> {
    if text.lines().filter_map(significant).any(is_template_line) {
        TaskTemplate::parse(text, default_schema).map(Document::Template)
    } else {
        parse_task(text, default_schema).map(Document::Task)
    }
}

pub(crate) fn parse_param_line(line: &str, lineno: usize) -> Result<super::template::ParamLine, TaskError> {
    use super::template::{HoleKind, ParamLine};
    let mut c = Cursor::new(line, lineno);
    if c.keyword("pairs") {
        let a = c.ident("hole name")?.to_string();
        let b = c.ident("hole name")?.to_string();
        c.finish()?;
        return Ok(ParamLine::Pairs(a, b));
    }
    if !c.keyword("param") {
        return Err(c.err("expected `param` or `pairs`"));
    }
    let name = c.ident("hole name")?.to_string();
    c.expect(':')?;
    let kpos = c.pos;
    let kind = match c.ident("hole kind")? {
        "value" => HoleKind::Value,
        "op" => HoleKind::Op,
        "stat" => HoleKind::Stat,
        k => return Err(c.err_at(kpos, format!("unknown hole kind `{k}`; use value, op or stat"))),
    };
    let column = if c.keyword("of") { Some(c.ident("column")?.to_string()) } else { None };
    let domain = if c.keyword("in") {
        c.expect('{')?;
        let mut items = Vec::new();
        loop {
            let (start, rest) = {
                c.skip_ws();
                (c.pos, &c.src[c.pos..])
            };
            let end = item_end(rest).ok_or_else(|| c.err("unterminated domain"))?;
            let raw = rest[..end].trim();
            if raw.is_empty() {
                return Err(c.err_at(start, "empty domain item"));
            }
            let v = match kind {
                HoleKind::Value => match Expr::parse(raw) {
                    Ok(Expr::Literal(v)) => v,
                    Ok(Expr::Unary { op: crate::table::UnaryOp::Neg, expr }) if matches!(*expr, Expr::Literal(_)) => {
                        match *expr {
                            Expr::Literal(v) => crate::table::Value::from(-v.as_f64().unwrap_or(f64::NAN)),
                            _ => unreachable!(),
                        }
                    }
                    _ => return Err(c.err_at(start, format!("domain item `{raw}` is not a literal"))),
                },
                _ => crate::table::Value::text(raw),
            };
            items.push(v);
            c.pos = start + end;
            if c.eat('}') {
                break;
            }
            c.expect(',')?;
        }
        Some(items)
    } else {
        None
    };
    c.finish()?;
    Ok(ParamLine::Param { name, kind, column, domain })
}

/// Byte length of the next comma/brace-delimited item, honoring quotes.
fn item_end(s: &str) -> Option<usize> {
    let mut in_str = false;
    for (i, ch) in s.char_indices() {
        match ch {
            '\'' => in_str = !in_str,
            ',' | '}' if !in_str => return Some(i),
            _ => {}
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::DataType::*;

    fn ab() -> Schema {
        Schema::of(&[("a", Text), ("b", Number)])
    }

    #[test]
    fn percent_of_builds_sum_then_normalize() {
        let q = parse_task("percent_of b by a at a='A'", Some(&ab())).unwrap();
        assert_eq!(
            q.body,
            Pipeline::new(vec![
                TransformOp::GroupAggregate {
                    keys: vec!["a".into()],
                    aggs: vec![Aggregate::new(AggFn::Sum, Some("b"), "s")]
                },
                TransformOp::Normalize { input: "s".into(), output: "p".into() },
            ])
        );
        assert_eq!(
            q.result,
            ResultSpec::Scalar { scalar: Scalar::ValueAt { column: "p".into(), at: Some(Expr::col_eq("a", "A")) } }
        );
    }

    #[test]
    fn count_by_is_full_table() {
        let q = parse_task("count by a", Some(&ab())).unwrap();
        assert_eq!(q.result, ResultSpec::FullTable);
        assert_eq!(q.output_schema().to_string(), "[a: text, c: number]");
    }

    #[test]
    fn schema_line_and_avg() {
        let q = parse_task("# group average\nschema g:text, v:number\navg v by g\n", None).unwrap();
        assert_eq!(q.output_schema().to_string(), "[g: text, avg: number]");
    }

    #[test]
    fn name_collision_gets_suffix() {
        let s = Schema::of(&[("c", Text), ("b", Number)]);
        let q = parse_task("count by c", Some(&s)).unwrap();
        assert_eq!(q.output_schema().to_string(), "[c: text, c_: number]");
    }

    #[test]
    fn errors_have_positions() {
        match parse_task("sum zz by a", Some(&ab())) {
            Err(TaskError::Invalid { line: 1, source }) => assert!(source.to_string().contains("unknown column zz")),
            other => panic!("{other:?}"),
        }
        match parse_task("percent_of b a", Some(&ab())) {
            Err(TaskError::Syntax { line: 1, column: 14, .. }) => {}
            other => panic!("{other:?}"),
        }
        match parse_task("sum b by a at a = ", Some(&ab())) {
            Err(TaskError::Syntax { line: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(parse_task("frobnicate b", Some(&ab())).is_err());
        assert!(parse_task("count by a", None).is_err());
        assert!(parse_task("", Some(&ab())).is_err());
    }

    #[test]
    fn rows_and_value() {
        let q = parse_task("rows at a='A'", Some(&ab())).unwrap();
        assert_eq!(q.body.ops.len(), 1);
        let q = parse_task("value sum b", Some(&ab())).unwrap();
        assert!(q.scalar().is_some());
    }

    #[test]
    fn combine_requires_shared_body() {
        let text = "x = percent_of b by a at a='A'\ny = value count by a at a='B'\ncombine(x, sum, y)";
        assert!(parse_task(text, Some(&ab())).is_err());
        let text = "x = percent_of b by a at a='A'\ny = percent_of b by a at a='B'\ncombine(x, ratio, y)";
        assert!(parse_task(text, Some(&ab())).is_ok());
        assert!(parse_task("combine(x, sum, y)", Some(&ab())).is_err());
    }
}
