use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Column type of a [`Schema`](super::Schema).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataType {
    Number,
    Text,
    Boolean,
}

impl fmt::Display for DataType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataType::Number => "number",
            DataType::Text => "text",
            DataType::Boolean => "boolean",
        })
    }
}

impl std::str::FromStr for DataType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "number" => Ok(DataType::Number),
            "text" => Ok(DataType::Text),
            "boolean" | "bool" => Ok(DataType::Boolean),
            other => Err(format!("unknown type `{other}`")),
        }
    }
}

/// A single cell. Numbers are always finite; the only way to build a
/// `Number` from untrusted input is [`Value::number`].
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Null,
    Bool(bool),
    Number(f64),
    Text(String),
}

impl Value {
    /// Checked constructor rejecting NaN and infinities.
    pub fn number(x: f64) -> Option<Value> {
        x.is_finite().then_some(Value::Number(if x == 0.0 { 0.0 } else { x }))
    }

    pub fn text(s: impl Into<String>) -> Value {
        Value::Text(s.into())
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Number(x) => Some(*x),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn data_type(&self) -> Option<DataType> {
        match self {
            Value::Null => None,
            Value::Bool(_) => Some(DataType::Boolean),
            Value::Number(_) => Some(DataType::Number),
            Value::Text(_) => Some(DataType::Text),
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Value::Null => 0,
            Value::Bool(_) => 1,
            Value::Number(_) => 2,
            Value::Text(_) => 3,
        }
    }

    /// Total order used for canonicalization and sorting:
    /// null < boolean < number < text.
    pub fn total_cmp(&self, other: &Value) -> Ordering {
        match (self, other) {
            (Value::Bool(a), Value::Bool(b)) => a.cmp(b),
            (Value::Number(a), Value::Number(b)) => a.total_cmp(b),
            (Value::Text(a), Value::Text(b)) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }

    /// Literal form understood by the expression parser.
    pub fn to_literal(&self) -> String {
        match self {
            Value::Null => "null".to_string(),
            Value::Bool(b) => b.to_string(),
            Value::Number(x) => format_number(*x),
            Value::Text(s) => format!("'{}'", s.replace('\'', "''")),
        }
    }
}

/// Shortest round-trippable rendering of a finite float.
pub fn format_number(x: f64) -> String {
    if x == x.trunc() && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("null"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Number(x) => f.write_str(&format_number(*x)),
            Value::Text(s) => f.write_str(s),
        }
    }
}

impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Value::number(x).unwrap_or(Value::Null)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Text(s.to_string())
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Value::Null => s.serialize_unit(),
            Value::Bool(b) => s.serialize_bool(*b),
            Value::Number(x) => s.serialize_f64(*x),
            Value::Text(t) => s.serialize_str(t),
        }
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::Null => Ok(Value::Null),
            serde_json::Value::Bool(b) => Ok(Value::Bool(b)),
            serde_json::Value::Number(n) => {
                n.as_f64().and_then(Value::number).ok_or_else(|| D::Error::custom("number is not finite"))
            }
            serde_json::Value::String(s) => Ok(Value::Text(s)),
            other => Err(D::Error::custom(format!("expected a scalar value, got {other}"))),
        }
    }
}

/// Approximate numeric equality: relative tolerance `eps`, or absolute
/// tolerance `eps` when both magnitudes are below one.
pub fn approx_eq(a: f64, b: f64, eps: f64) -> bool {
    if a == b {
        return true;
    }
    let scale = a.abs().max(b.abs());
    let diff = (a - b).abs();
    if scale < 1.0 {
        diff <= eps
    } else {
        diff <= eps * scale
    }
}

pub fn values_approx_eq(a: &Value, b: &Value, eps: f64) -> bool {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => approx_eq(*x, *y, eps),
        _ => a == b,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_numbers() {
        assert!(Value::number(f64::NAN).is_none());
        assert!(Value::number(f64::INFINITY).is_none());
        assert_eq!(Value::number(1.5), Some(Value::Number(1.5)));
    }

    #[test]
    fn ordering_ranks_types() {
        let mut v = vec![Value::text("a"), Value::Number(2.0), Value::Null, Value::Bool(true)];
        v.sort_by(|a, b| a.total_cmp(b));
        assert_eq!(v, vec![Value::Null, Value::Bool(true), Value::Number(2.0), Value::text("a")]);
    }

    #[test]
    fn tolerance_switches_to_absolute_below_one() {
        assert!(approx_eq(1.0, 1.0 + 1e-12, 1e-9));
        assert!(approx_eq(1e-12, 0.0, 1e-9));
        assert!(!approx_eq(1.0, 2.0, 1e-9));
        assert!(approx_eq(1e6, 1e6 + 1e-4, 1e-9));
        assert!(!approx_eq(1e6, 1e6 + 1.0, 1e-9));
    }

    #[test]
    fn literal_quotes_text() {
        assert_eq!(Value::text("it's").to_literal(), "'it''s'");
        assert_eq!(Value::Number(0.25).to_literal(), "0.25");
        assert_eq!(Value::Number(3.0).to_literal(), "3");
    }
}
