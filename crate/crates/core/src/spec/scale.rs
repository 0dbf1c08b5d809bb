use serde::{Deserialize, Serialize};

use super::{Channel, SpecError};
use crate::table::{DataType, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleKind {
    Linear,
    Band,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Domain {
    Numeric([f64; 2]),
    Values(Vec<Value>),
}

/// Scale as written in a spec; omitted parts are resolved at encode time.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaleSpec {
    #[serde(rename = "type", default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<ScaleKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<Domain>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<[f64; 2]>,
}

impl ScaleSpec {
    pub fn is_default(&self) -> bool {
        *self == ScaleSpec::default()
    }

    fn kind_for(&self, ty: DataType) -> ScaleKind {
        self.kind.unwrap_or(match (&self.domain, ty) {
            (Some(Domain::Values(_)), _) => ScaleKind::Band,
            (_, DataType::Number) => ScaleKind::Linear,
            _ => ScaleKind::Band,
        })
    }

    pub(crate) fn check(&self, channel: Channel, ty: DataType) -> Result<(), SpecError> {
        let err = |message: String| SpecError::Scale { channel, message };
        if let Some(r) = self.range {
            if !r.iter().all(|x| x.is_finite()) {
                return Err(err("range must be finite".into()));
            }
        }
        match (self.kind_for(ty), &self.domain) {
            (ScaleKind::Linear, _) if ty != DataType::Number => {
                Err(err(format!("linear scale needs a number attribute, found {ty}")))
            }
            (ScaleKind::Linear, Some(Domain::Numeric([lo, hi]))) => {
                if lo.is_finite() && hi.is_finite() && lo < hi {
                    Ok(())
                } else {
                    Err(err(format!("numeric domain needs lo < hi, got [{lo}, {hi}]")))
                }
            }
            (ScaleKind::Linear, Some(Domain::Values(_))) => Err(err("linear scale needs a [lo, hi] domain".into())),
            (ScaleKind::Band, Some(d)) => {
                let vals = band_values(d);
                for (i, v) in vals.iter().enumerate() {
                    if v.data_type() != Some(ty) {
                        return Err(err(format!("domain value {} is not {ty}", v.to_literal())));
                    }
                    if vals[..i].contains(v) {
                        return Err(err(format!("duplicate domain value {}", v.to_literal())));
                    }
                }
                Ok(())
            }
            (_, None) => Ok(()),
        }
    }

    /// Fixes the domain, inferring it from `values` when the spec omits it.
    pub(crate) fn resolve<'a>(
        &self,
        channel: Channel,
        ty: DataType,
        values: impl Iterator<Item = &'a Value>,
    ) -> ResolvedScale {
        let range = self.range.unwrap_or(channel.default_range());
        match self.kind_for(ty) {
            ScaleKind::Linear => {
                let domain = match &self.domain {
                    Some(Domain::Numeric(d)) => *d,
                    _ => {
                        let (lo, hi) = values
                            .filter_map(Value::as_f64)
                            .fold((0.0f64, 0.0f64), |(lo, hi), x| (lo.min(x), hi.max(x)));
                        if lo < hi {
                            [lo, hi]
                        } else {
                            [lo, lo + 1.0]
                        }
                    }
                };
                ResolvedScale::Linear { domain, range }
            }
            ScaleKind::Band => {
                let domain = match &self.domain {
                    Some(d) => band_values(d),
                    None => {
                        let mut v: Vec<Value> = values.filter(|v| !v.is_null()).cloned().collect();
                        v.sort_by(|a, b| a.total_cmp(b));
                        v.dedup();
                        v
                    }
                };
                ResolvedScale::Band { domain, range }
            }
        }
    }
}

fn band_values(d: &Domain) -> Vec<Value> {
    match d {
        Domain::Numeric([a, b]) => vec![Value::from(*a), Value::from(*b)],
        Domain::Values(v) => v.clone(),
    }
}

/// A scale with a concrete domain and range.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ResolvedScale {
    Linear { domain: [f64; 2], range: [f64; 2] },
    Band { domain: Vec<Value>, range: [f64; 2] },
}

impl ResolvedScale {
    pub fn range(&self) -> [f64; 2] {
        match self {
            ResolvedScale::Linear { range, .. } | ResolvedScale::Band { range, .. } => *range,
        }
    }

    pub fn with_range(&self, range: [f64; 2]) -> ResolvedScale {
        match self {
            ResolvedScale::Linear { domain, .. } => ResolvedScale::Linear { domain: *domain, range },
            ResolvedScale::Band { domain, .. } => ResolvedScale::Band { domain: domain.clone(), range },
        }
    }

    fn domain_text(&self) -> String {
        match self {
            ResolvedScale::Linear { domain, .. } => format!("[{}, {}]", domain[0], domain[1]),
            ResolvedScale::Band { domain, .. } => {
                let v: Vec<String> = domain.iter().map(Value::to_literal).collect();
                format!("{{{}}}", v.join(", "))
            }
        }
    }

    /// Image of `v`; null maps to `None`. Values outside the domain are an
    /// error, never clamped.
    pub fn apply(&self, attr: &str, v: &Value) -> Result<Option<f64>, SpecError> {
        if v.is_null() {
            return Ok(None);
        }
        let out_of_domain =
            || SpecError::OutOfDomain { attr: attr.to_string(), value: v.to_string(), domain: self.domain_text() };
        match self {
            ResolvedScale::Linear { domain: [lo, hi], range: [r0, r1] } => {
                let x = v.as_f64().ok_or_else(out_of_domain)?;
                let tol = 1e-9 * (hi - lo);
                if x < lo - tol || x > hi + tol {
                    return Err(out_of_domain());
                }
                Ok(Some(r0 + (x - lo) / (hi - lo) * (r1 - r0)))
            }
            ResolvedScale::Band { domain, range: [r0, r1] } => {
                let i = domain.iter().position(|d| d == v).ok_or_else(out_of_domain)?;
                Ok(Some(r0 + (i as f64 + 0.5) / domain.len() as f64 * (r1 - r0)))
            }
        }
    }

    pub fn invert(&self, channel: Channel, y: Option<f64>) -> Result<Value, SpecError> {
        let [r0, r1] = self.range();
        if r0 == r1 {
            return Err(SpecError::NotInvertible { channel, reason: format!("degenerate range [{r0}, {r1}]") });
        }
        let Some(y) = y else { return Ok(Value::Null) };
        match self {
            ResolvedScale::Linear { domain: [lo, hi], .. } => Ok(Value::from(lo + (y - r0) / (r1 - r0) * (hi - lo))),
            ResolvedScale::Band { domain, .. } => {
                let n = domain.len() as f64;
                let i = ((y - r0) / (r1 - r0) * n - 0.5).round();
                if i < 0.0 || i >= n {
                    return Err(SpecError::NotInvertible { channel, reason: format!("{y} is not a band center") });
                }
                Ok(domain[i as usize].clone())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_map_and_inverse() {
        let s = ResolvedScale::Linear { domain: [0.0, 4.0], range: [0.0, 400.0] };
        assert_eq!(s.apply("c", &Value::Number(3.0)).unwrap(), Some(300.0));
        assert_eq!(s.apply("c", &Value::Number(2.0)).unwrap(), Some(200.0));
        assert_eq!(s.invert(Channel::Y, Some(300.0)).unwrap(), Value::Number(3.0));
        assert!(s.apply("c", &Value::Number(5.0)).is_err());
        assert_eq!(s.apply("c", &Value::Null).unwrap(), None);
    }

    #[test]
    fn degenerate_range_is_not_invertible() {
        let s = ResolvedScale::Linear { domain: [0.0, 1.0], range: [100.0, 100.0] };
        assert!(matches!(s.invert(Channel::Y, Some(100.0)), Err(SpecError::NotInvertible { .. })));
    }

    #[test]
    fn band_centers() {
        let s = ResolvedScale::Band { domain: vec!["A".into(), "B".into()], range: [0.0, 400.0] };
        assert_eq!(s.apply("a", &"B".into()).unwrap(), Some(300.0));
        assert_eq!(s.invert(Channel::X, Some(300.0)).unwrap(), Value::text("B"));
        assert!(s.apply("a", &"Z".into()).is_err());
    }

    #[test]
    fn inferred_domain_includes_zero() {
        let vals = [Value::Number(3.0), Value::Number(5.0)];
        let s = ScaleSpec::default().resolve(Channel::Y, DataType::Number, vals.iter());
        assert_eq!(s, ResolvedScale::Linear { domain: [0.0, 5.0], range: [0.0, 400.0] });
        let none: [Value; 0] = [];
        let s = ScaleSpec::default().resolve(Channel::Y, DataType::Number, none.iter());
        assert_eq!(s, ResolvedScale::Linear { domain: [0.0, 1.0], range: [0.0, 400.0] });
    }

    #[test]
    fn domain_validation() {
        let bad = ScaleSpec { kind: None, domain: Some(Domain::Numeric([1.0, 1.0])), range: None };
        assert!(bad.check(Channel::Y, DataType::Number).is_err());
        let dup = ScaleSpec { kind: None, domain: Some(Domain::Values(vec!["A".into(), "A".into()])), range: None };
        assert!(dup.check(Channel::X, DataType::Text).is_err());
    }
}
