use std::collections::BTreeMap;

use serde::Serialize;

use super::parser::{is_template_line, parse_param_line, parse_task, significant};
use super::{CombineOp, TaskError, TaskQuery};
use crate::table::{AggFn, Schema, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum HoleKind {
    /// A literal, substituted in quoted form.
    Value,
    /// A combine operator.
    Op,
    /// An aggregate function name.
    Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum HoleDomain {
    Finite(Vec<Value>),
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Param {
    pub name: String,
    pub kind: HoleKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub column: Option<String>,
    pub domain: HoleDomain,
}

pub(crate) enum ParamLine {
    Param { name: String, kind: HoleKind, column: Option<String>, domain: Option<Vec<Value>> },
    Pairs(String, String),
}

/// Task text with `$name` holes. `pairs g1 g2` keeps only instantiations
/// where `g1` comes strictly before `g2` in their domains.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskTemplate {
    body: String,
    schema: Option<Schema>,
    pub params: Vec<Param>,
    pub pairs: Vec<(String, String)>,
}

fn holes(text: &str) -> Vec<(usize, usize, &str)> {
    let mut out = Vec::new();
    let mut it = text.char_indices().peekable();
    while let Some((i, c)) = it.next() {
        if c != '$' {
            continue;
        }
        let start = i + 1;
        let mut end = start;
        while let Some(&(j, d)) = it.peek() {
            if d.is_alphanumeric() || d == '_' {
                end = j + d.len_utf8();
                it.next();
            } else {
                break;
            }
        }
        out.push((i, end, &text[start..end]));
    }
    out
}

impl TaskTemplate {
    pub fn parse(text: &str, default_schema: Option<&Schema>) -> Result<Self, TaskError> {
        let mut body = Vec::new();
        let mut params: Vec<Param> = Vec::new();
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            match significant(raw) {
                Some(line) if is_template_line(line) => {
                    body.push(String::new());
                    match parse_param_line(line, i + 1)? {
                        ParamLine::Param { name, kind, column, domain } => {
                            if params.iter().any(|p| p.name == name) {
                                return Err(TaskError::Template(format!("hole ${name} declared twice")));
                            }
                            let domain = domain.map(HoleDomain::Finite).unwrap_or(HoleDomain::Unbounded);
                            params.push(Param { name, kind, column, domain });
                        }
                        ParamLine::Pairs(a, b) => pairs.push((a, b)),
                    }
                }
                _ => body.push(raw.to_string()),
            }
        }
        let body = body.join("\n");
        for (_, _, h) in holes(&body) {
            if h.is_empty() {
                return Err(TaskError::Template("`$` must be followed by a hole name".into()));
            }
            if !params.iter().any(|p| p.name == h) {
                return Err(TaskError::Template(format!("hole ${h} is not declared")));
            }
        }
        for p in &params {
            if !holes(&body).iter().any(|(_, _, h)| *h == p.name) {
                return Err(TaskError::Template(format!("hole ${} is declared but never used", p.name)));
            }
        }
        for (a, b) in &pairs {
            for h in [a, b] {
                if !params.iter().any(|p| &p.name == h) {
                    return Err(TaskError::Template(format!("pairs refers to undeclared hole ${h}")));
                }
            }
        }
        Ok(TaskTemplate { body, schema: default_schema.cloned(), params, pairs })
    }

    pub fn with_schema(mut self, schema: &Schema) -> Self {
        self.schema = Some(schema.clone());
        self
    }

    fn check_kind(p: &Param, v: &Value) -> Result<(), TaskError> {
        let ok = match p.kind {
            HoleKind::Value => !v.is_null(),
            HoleKind::Op => v.as_text().and_then(CombineOp::from_name).is_some(),
            HoleKind::Stat => v.as_text().and_then(AggFn::from_name).is_some(),
        };
        if ok {
            Ok(())
        } else {
            Err(TaskError::Template(format!("{} is not a valid {:?} for ${}", v.to_literal(), p.kind, p.name)))
        }
    }

    pub fn instantiate(&self, bindings: &BTreeMap<String, Value>) -> Result<TaskQuery, TaskError> {
        for k in bindings.keys() {
            if !self.params.iter().any(|p| &p.name == k) {
                return Err(TaskError::Template(format!("binding for unknown hole ${k}")));
            }
        }
        let mut subst = BTreeMap::new();
        for p in &self.params {
            let v = bindings
                .get(&p.name)
                .ok_or_else(|| TaskError::Template(format!("missing binding for hole ${}", p.name)))?;
            Self::check_kind(p, v)?;
            if let HoleDomain::Finite(d) = &p.domain {
                if !d.contains(v) {
                    return Err(TaskError::Template(format!(
                        "{} is outside the domain of ${}",
                        v.to_literal(),
                        p.name
                    )));
                }
            }
            let text = match p.kind {
                HoleKind::Value => v.to_literal(),
                _ => v.as_text().unwrap_or_default().to_string(),
            };
            subst.insert(p.name.as_str(), text);
        }
        let mut out = String::new();
        let mut last = 0;
        for (s, e, h) in holes(&self.body) {
            out.push_str(&self.body[last..s]);
            out.push_str(&subst[h]);
            last = e;
        }
        out.push_str(&self.body[last..]);
        parse_task(&out, self.schema.as_ref())
    }

    /// Every instantiation over the resolved hole domains, last hole varying
    /// fastest. Domains not declared inline are looked up by hole name, then
    /// by the hole's column.
    pub fn enumerate(&self, domains: &BTreeMap<String, Vec<Value>>) -> Result<Vec<TaskQuery>, TaskError> {
        let resolved: Vec<Vec<Value>> = self
            .params
            .iter()
            .map(|p| match &p.domain {
                HoleDomain::Finite(d) => Ok(d.clone()),
                HoleDomain::Unbounded => {
                    domains.get(&p.name).or_else(|| p.column.as_ref().and_then(|c| domains.get(c))).cloned().ok_or_else(
                        || TaskError::Template(format!("hole ${} is unbounded and no domain was provided", p.name)),
                    )
                }
            })
            .collect::<Result<_, _>>()?;
        let pos = |name: &str| self.params.iter().position(|p| p.name == name).unwrap();
        let mut out = Vec::new();
        let mut idx = vec![0usize; resolved.len()];
        if resolved.iter().any(Vec::is_empty) {
            return Ok(out);
        }
        loop {
            if self.pairs.iter().all(|(a, b)| idx[pos(a)] < idx[pos(b)]) {
                let bindings = self
                    .params
                    .iter()
                    .zip(&idx)
                    .zip(&resolved)
                    .map(|((p, &i), d)| (p.name.clone(), d[i].clone()))
                    .collect();
                out.push(self.instantiate(&bindings)?);
            }
            let mut k = resolved.len();
            loop {
                if k == 0 {
                    return Ok(out);
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < resolved[k].len() {
                    break;
                }
                idx[k] = 0;
            }
        }
    }
}
