//! Chart specifications: a transformation pipeline plus a row-wise visual
//! encoding with linear scales.

mod encode;
mod gallery;
mod scale;
mod svg;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

use crate::table::{DataType, Pipeline, Schema, TableError};

pub use encode::{decode_marks, encode, MarkTable, ResolvedBinding};
pub use gallery::{counts_by_g, gallery, gallery_spec, GALLERY_NAMES};
pub use scale::{Domain, ResolvedScale, ScaleKind, ScaleSpec};
pub use svg::emit_svg;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpecError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("unknown column {column} in prepared schema {schema}")]
    UnknownAttribute { column: String, schema: String },
    #[error("channel {channel} is not allowed for {mark} marks")]
    ChannelNotAllowed { channel: Channel, mark: Mark },
    #[error("invalid scale on {channel}: {message}")]
    Scale { channel: Channel, message: String },
    #[error("value {value} of {attr} is outside scale domain {domain}")]
    OutOfDomain { attr: String, value: String, domain: String },
    #[error("scale on {channel} is not invertible: {reason}")]
    NotInvertible { channel: Channel, reason: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Table(#[from] TableError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mark {
    Point,
    Bar,
    Arc,
    Line,
}

impl Mark {
    pub fn channels(self) -> &'static [Channel] {
        use Channel::*;
        match self {
            Mark::Point => &[X, Y, Color, Size],
            Mark::Bar => &[X, Y, Y2, Color],
            Mark::Arc => &[ThetaExtent, Color],
            Mark::Line => &[X, Y, Color],
        }
    }

    pub fn allows(self, c: Channel) -> bool {
        self.channels().contains(&c)
    }

    pub fn is_polar(self) -> bool {
        self == Mark::Arc
    }

    pub fn name(self) -> &'static str {
        match self {
            Mark::Point => "point",
            Mark::Bar => "bar",
            Mark::Arc => "arc",
            Mark::Line => "line",
        }
    }
}

impl fmt::Display for Mark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Channel {
    X,
    Y,
    Y2,
    Color,
    Size,
    ThetaExtent,
}

impl Channel {
    pub fn name(self) -> &'static str {
        match self {
            Channel::X => "x",
            Channel::Y => "y",
            Channel::Y2 => "y2",
            Channel::Color => "color",
            Channel::Size => "size",
            Channel::ThetaExtent => "thetaExtent",
        }
    }

    pub fn default_range(self) -> [f64; 2] {
        match self {
            Channel::X | Channel::Y | Channel::Y2 => [0.0, 400.0],
            Channel::Color => [0.0, 1.0],
            Channel::Size => [1.0, 10.0],
            Channel::ThetaExtent => [0.0, 360.0],
        }
    }

    /// Value used for a mark when the channel is unbound.
    pub fn default_value(self) -> f64 {
        match self {
            Channel::X => 200.0,
            Channel::Size => 1.0,
            _ => 0.0,
        }
    }

    fn needs_number(self) -> bool {
        matches!(self, Channel::Y2 | Channel::Size | Channel::ThetaExtent)
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Binding {
    pub attr: String,
    #[serde(default, skip_serializing_if = "ScaleSpec::is_default")]
    pub scale: ScaleSpec,
}

impl Binding {
    pub fn new(attr: &str) -> Self {
        Binding { attr: attr.to_string(), scale: ScaleSpec::default() }
    }

    pub fn with_scale(attr: &str, domain: Option<Domain>, range: Option<[f64; 2]>) -> Self {
        Binding { attr: attr.to_string(), scale: ScaleSpec { kind: None, domain, range } }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Encoding {
    pub mark: Mark,
    #[serde(default, deserialize_with = "unique_bindings")]
    pub bindings: BTreeMap<Channel, Binding>,
}

impl Encoding {
    pub fn new(mark: Mark, bindings: &[(Channel, Binding)]) -> Self {
        Encoding { mark, bindings: bindings.iter().cloned().collect() }
    }

    pub fn attr(&self, c: Channel) -> Option<&str> {
        self.bindings.get(&c).map(|b| b.attr.as_str())
    }

    /// Checks mark/channel compatibility and that every binding names a
    /// prepared-table column of a suitable type.
    pub fn check(&self, prepared: &Schema) -> Result<(), SpecError> {
        for (&channel, b) in &self.bindings {
            if !self.mark.allows(channel) {
                return Err(SpecError::ChannelNotAllowed { channel, mark: self.mark });
            }
            let ty = prepared
                .type_of(&b.attr)
                .ok_or_else(|| SpecError::UnknownAttribute { column: b.attr.clone(), schema: prepared.to_string() })?;
            if channel.needs_number() && ty != DataType::Number {
                return Err(SpecError::Scale {
                    channel,
                    message: format!("attribute {} is {ty}, expected number", b.attr),
                });
            }
            b.scale.check(channel, ty)?;
        }
        Ok(())
    }
}

fn unique_bindings<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<Channel, Binding>, D::Error> {
    struct V;
    impl<'de> Visitor<'de> for V {
        type Value = BTreeMap<Channel, Binding>;
        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("a map from channel to binding")
        }
        fn visit_map<A: MapAccess<'de>>(self, mut m: A) -> Result<Self::Value, A::Error> {
            let mut out = BTreeMap::new();
            while let Some((k, v)) = m.next_entry::<Channel, Binding>()? {
                if out.insert(k, v).is_some() {
                    return Err(serde::de::Error::custom(format!("channel {k} bound more than once")));
                }
            }
            Ok(out)
        }
    }
    d.deserialize_map(V)
}

/// A chart: `name`, the input `schema`, the pipeline `f` and the encoding `e`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VisSpec {
    pub name: String,
    pub schema: Schema,
    pub pipeline: Pipeline,
    pub encoding: Encoding,
    #[serde(skip)]
    prepared: Schema,
}

impl VisSpec {
    pub fn new(name: &str, schema: Schema, pipeline: Pipeline, encoding: Encoding) -> Result<Self, SpecError> {
        let prepared = pipeline.output_schema(&schema)?;
        encoding.check(&prepared)?;
        Ok(VisSpec { name: name.to_string(), schema, pipeline, encoding, prepared })
    }

    pub fn prepared_schema(&self) -> &Schema {
        &self.prepared
    }

    /// Same spec with a different encoding, re-checked.
    pub fn with_encoding(&self, encoding: Encoding) -> Result<Self, SpecError> {
        VisSpec::new(&self.name, self.schema.clone(), self.pipeline.clone(), encoding)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    name: String,
    schema: Schema,
    #[serde(default)]
    pipeline: Pipeline,
    encoding: Encoding,
}

impl<'de> Deserialize<'de> for VisSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = RawSpec::deserialize(d)?;
        VisSpec::new(&r.name, r.schema, r.pipeline, r.encoding).map_err(serde::de::Error::custom)
    }
}

/// Parses and schema-checks a JSON spec document.
pub fn parse_spec(text: &str) -> Result<VisSpec, SpecError> {
    let raw: RawSpec = serde_json::from_str(text).map_err(|e| SpecError::Syntax {
        line: e.line(),
        column: e.column(),
        message: strip_position(&e.to_string()),
    })?;
    VisSpec::new(&raw.name, raw.schema, raw.pipeline, raw.encoding)
}

fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}

/// Attributes of the prepared table bound to some channel.
pub fn readable_attributes(spec: &VisSpec) -> BTreeSet<String> {
    spec.encoding.bindings.values().map(|b| b.attr.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const BAR: &str = r#"{
      "name": "bar",
      "schema": [{"name": "a", "type": "text"}, {"name": "b", "type": "number"}],
      "pipeline": [{"op": "groupAggregate", "keys": ["a"], "aggs": [{"fn": "sum", "input": "b", "as": "c"}]}],
      "encoding": {"mark": "bar", "bindings": {"x": {"attr": "a"}, "y": {"attr": "c"}}}
    }"#;

    #[test]
    fn parses_bar_document() {
        let s = parse_spec(BAR).unwrap();
        assert_eq!(s, gallery_spec("bar").unwrap());
        assert_eq!(s.prepared_schema().to_string(), "[a: text, c: number]");
    }

    #[test]
    fn binding_error_names_prepared_schema() {
        let doc = r#"{"name": "pie", "schema": [{"name": "a", "type": "text"}, {"name": "b", "type": "number"}],
          "pipeline": [{"op": "groupAggregate", "keys": ["a"], "aggs": [{"fn": "sum", "input": "b", "as": "c"}]}],
          "encoding": {"mark": "arc", "bindings": {"thetaExtent": {"attr": "perc"}}}}"#;
        let e = parse_spec(doc).unwrap_err();
        assert_eq!(e.to_string(), "unknown column perc in prepared schema [a: text, c: number]");
    }

    #[test]
    fn syntax_errors_carry_position() {
        match parse_spec("{\n  \"name\": 1,,\n}") {
            Err(SpecError::Syntax { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        let unknown_op = BAR.replace("groupAggregate", "pivot");
        assert!(parse_spec(&unknown_op).unwrap_err().to_string().contains("pivot"));
        let unknown_channel = BAR.replace("\"y\"", "\"shape\"");
        assert!(parse_spec(&unknown_channel).is_err());
    }

    #[test]
    fn duplicate_channel_is_rejected() {
        let dup = BAR.replace("\"y\": {\"attr\": \"c\"}", "\"y\": {\"attr\": \"c\"}, \"y\": {\"attr\": \"a\"}");
        assert!(parse_spec(&dup).unwrap_err().to_string().contains("more than once"));
    }

    #[test]
    fn channel_must_suit_mark() {
        let bad = BAR.replace("\"y\"", "\"thetaExtent\"");
        assert!(matches!(parse_spec(&bad), Err(SpecError::ChannelNotAllowed { .. })));
    }

    #[test]
    fn readable_attributes_of_gallery() {
        let pie = gallery_spec("pie").unwrap();
        assert_eq!(readable_attributes(&pie), BTreeSet::from(["a".to_string(), "perc".to_string()]));
        let scatter = gallery_spec("scatter").unwrap();
        assert_eq!(readable_attributes(&scatter), BTreeSet::from(["a".to_string(), "b".to_string()]));
        let bare = scatter.with_encoding(Encoding::new(Mark::Point, &[])).unwrap();
        assert!(readable_attributes(&bare).is_empty());
    }

    #[test]
    fn json_round_trip() {
        for s in gallery() {
            assert_eq!(parse_spec(&s.to_json()).unwrap(), s);
        }
    }
}
