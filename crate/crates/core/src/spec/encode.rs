use serde::Serialize;

use super::scale::ResolvedScale;
use super::{Channel, Encoding, Mark, SpecError};
use crate::table::{Column, DataType, Schema, Table, Value};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedBinding {
    pub channel: Channel,
    pub attr: String,
    #[serde(rename = "type")]
    pub ty: DataType,
    pub scale: ResolvedScale,
}

/// `V = e(P)`: one row per prepared row, one column per channel of the mark,
/// values in range units. `None` marks a null attribute value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarkTable {
    pub mark: Mark,
    pub channels: Vec<Channel>,
    pub bindings: Vec<ResolvedBinding>,
    /// Bound attributes in prepared-schema order.
    pub attributes: Schema,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl MarkTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn channel_index(&self, c: Channel) -> Option<usize> {
        self.channels.iter().position(|&x| x == c)
    }

    pub fn binding(&self, c: Channel) -> Option<&ResolvedBinding> {
        self.bindings.iter().find(|b| b.channel == c)
    }

    pub fn value(&self, row: usize, c: Channel) -> Option<f64> {
        self.rows.get(row)?[self.channel_index(c)?]
    }
}

pub fn encode(prepared: &Table, e: &Encoding) -> Result<MarkTable, SpecError> {
    let schema = prepared.schema();
    e.check(schema)?;
    let channels = e.mark.channels().to_vec();
    let bindings: Vec<ResolvedBinding> = e
        .bindings
        .iter()
        .map(|(&channel, b)| {
            let ty = schema.type_of(&b.attr).expect("checked");
            let scale = b.scale.resolve(channel, ty, prepared.column(&b.attr).expect("checked"));
            ResolvedBinding { channel, attr: b.attr.clone(), ty, scale }
        })
        .collect();
    let attributes = Schema::new(
        schema.columns().iter().filter(|c| bindings.iter().any(|b| b.attr == c.name)).cloned().collect::<Vec<Column>>(),
    )?;
    let slots: Vec<(Option<&ResolvedBinding>, usize)> = channels
        .iter()
        .map(|&c| {
            let b = bindings.iter().find(|b| b.channel == c);
            (b, b.map(|b| schema.index_of(&b.attr).unwrap()).unwrap_or(0))
        })
        .collect();
    let mut rows = Vec::with_capacity(prepared.len());
    for r in prepared.rows() {
        let mut out = Vec::with_capacity(channels.len());
        for (c, (b, i)) in channels.iter().zip(&slots) {
            out.push(match b {
                Some(b) => b.scale.apply(&b.attr, &r[*i])?,
                None => Some(c.default_value()),
            });
        }
        rows.push(out);
    }
    Ok(MarkTable { mark: e.mark, channels, bindings, attributes, rows })
}

/// Inverse of `encode` over the bound attributes. Ranges and domains given in
/// `e` take precedence over the ones resolved at encode time.
pub fn decode_marks(v: &MarkTable, e: &Encoding) -> Result<Table, SpecError> {
    let mut columns = Vec::new();
    let mut decoders = Vec::new();
    for col in v.attributes.columns() {
        let Some((&channel, b)) = e.bindings.iter().find(|(_, b)| b.attr == col.name) else {
            continue;
        };
        let rb = v
            .binding(channel)
            .ok_or_else(|| SpecError::Invalid(format!("mark table has no {channel} channel bound")))?;
        let mut scale = rb.scale.clone();
        if b.scale.domain.is_some() {
            let none: [Value; 0] = [];
            scale = b.scale.resolve(channel, rb.ty, none.iter()).with_range(scale.range());
        }
        if let Some(r) = b.scale.range {
            scale = scale.with_range(r);
        }
        columns.push(col.clone());
        decoders.push((channel, v.channel_index(channel).unwrap(), scale));
    }
    let mut rows = Vec::with_capacity(v.len());
    for r in &v.rows {
        let row = decoders.iter().map(|(c, i, s)| s.invert(*c, r[*i])).collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok(Table::new(Schema::new(columns)?, rows)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::{gallery_spec, Binding, Domain};
    use crate::table::{tables_equal, DataType::*};

    fn bar_p() -> Table {
        Table::new(
            Schema::of(&[("a", Text), ("c", Number)]),
            vec![vec!["A".into(), 3.0.into()], vec!["B".into(), 3.0.into()]],
        )
        .unwrap()
    }

    fn bar_enc() -> Encoding {
        Encoding::new(
            Mark::Bar,
            &[
                (Channel::X, Binding::new("a")),
                (Channel::Y, Binding::with_scale("c", Some(Domain::Numeric([0.0, 4.0])), Some([0.0, 400.0]))),
            ],
        )
    }

    #[test]
    fn bar_heights() {
        let v = encode(&bar_p(), &bar_enc()).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v.value(0, Channel::Y), Some(300.0));
        assert_eq!(v.value(1, Channel::Y), Some(300.0));
        assert!(tables_equal(&decode_marks(&v, &bar_enc()).unwrap(), &bar_p(), 1e-9));
    }

    #[test]
    fn empty_prepared_table() {
        let v = encode(&Table::empty(Schema::of(&[("a", Text), ("c", Number)])), &bar_enc()).unwrap();
        assert!(v.is_empty());
    }

    #[test]
    fn arc_extents_and_inverse() {
        let p = Table::new(
            Schema::of(&[("a", Text), ("perc", Number)]),
            vec![vec!["A".into(), 0.25.into()], vec!["B".into(), 0.75.into()]],
        )
        .unwrap();
        let e = Encoding::new(
            Mark::Arc,
            &[(
                Channel::ThetaExtent,
                Binding::with_scale("perc", Some(Domain::Numeric([0.0, 1.0])), Some([0.0, 360.0])),
            )],
        );
        let v = encode(&p, &e).unwrap();
        assert_eq!(v.value(0, Channel::ThetaExtent), Some(90.0));
        assert_eq!(v.value(1, Channel::ThetaExtent), Some(270.0));
        let back = decode_marks(&v, &e).unwrap();
        assert_eq!(back.column("perc").unwrap().cloned().collect::<Vec<_>>(), vec![0.25.into(), 0.75.into()]);

        let flat = Encoding::new(
            Mark::Arc,
            &[(Channel::ThetaExtent, Binding::with_scale("perc", None, Some([100.0, 100.0])))],
        );
        assert!(matches!(decode_marks(&v, &flat), Err(SpecError::NotInvertible { .. })));
    }

    #[test]
    fn out_of_domain_is_an_error() {
        let p = Table::new(Schema::of(&[("a", Text), ("c", Number)]), vec![vec!["A".into(), 5.0.into()]]).unwrap();
        assert!(matches!(encode(&p, &bar_enc()), Err(SpecError::OutOfDomain { .. })));
    }

    #[test]
    fn unbound_channels_take_defaults() {
        let spec = gallery_spec("propStacked").unwrap();
        let p = spec
            .pipeline
            .execute(
                &Table::new(spec.schema.clone(), vec![vec!["A".into(), 1.0.into()], vec!["B".into(), 3.0.into()]])
                    .unwrap(),
            )
            .unwrap();
        let v = encode(&p, &spec.encoding).unwrap();
        assert_eq!(v.value(0, Channel::X), Some(Channel::X.default_value()));
        assert_eq!(v.value(1, Channel::Y), Some(100.0));
        assert_eq!(v.value(1, Channel::Y2), Some(400.0));
    }
}
