use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::schema::Schema;
use super::value::{values_approx_eq, DataType, Value};
use super::TableError;

/// Ordered, typed, named-column relation. Immutable once built: every
/// operator returns a new table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    schema: Schema,
    rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(schema: Schema, rows: Vec<Vec<Value>>) -> Result<Self, TableError> {
        for (i, row) in rows.iter().enumerate() {
            if row.len() != schema.len() {
                return Err(TableError::RaggedRow { row: i + 1, expected: schema.len(), found: row.len() });
            }
            for (cell, col) in row.iter().zip(schema.columns()) {
                if let Some(t) = cell.data_type() {
                    if t != col.ty {
                        return Err(TableError::CellType {
                            row: i + 1,
                            column: col.name.clone(),
                            cell: cell.to_string(),
                            expected: col.ty,
                        });
                    }
                }
            }
        }
        Ok(Table { schema, rows })
    }

    pub fn empty(schema: Schema) -> Self {
        Table { schema, rows: Vec::new() }
    }

    pub(crate) fn from_parts_unchecked(schema: Schema, rows: Vec<Vec<Value>>) -> Self {
        debug_assert!(rows.iter().all(|r| r.len() == schema.len()));
        Table { schema, rows }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn rows(&self) -> &[Vec<Value>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<impl Iterator<Item = &Value> + '_> {
        let i = self.schema.index_of(name)?;
        Some(self.rows.iter().map(move |r| &r[i]))
    }

    pub fn get(&self, row: usize, name: &str) -> Option<&Value> {
        let i = self.schema.index_of(name)?;
        self.rows.get(row).map(|r| &r[i])
    }

    /// Projection onto `columns`, in the given order. Duplicate rows are kept.
    pub fn project(&self, columns: &[&str]) -> Result<Table, TableError> {
        let idx: Vec<usize> = columns
            .iter()
            .map(|c| {
                self.schema
                    .index_of(c)
                    .ok_or_else(|| TableError::UnknownColumn { column: c.to_string(), schema: self.schema.to_string() })
            })
            .collect::<Result<_, _>>()?;
        let schema = Schema::new(idx.iter().map(|&i| self.schema.columns()[i].clone()).collect())?;
        let rows = self.rows.iter().map(|r| idx.iter().map(|&i| r[i].clone()).collect()).collect();
        Ok(Table { schema, rows })
    }

    /// Same rows under new column names (positional).
    pub fn renamed(&self, names: &[String]) -> Result<Table, TableError> {
        if names.len() != self.schema.len() {
            return Err(TableError::Schema(format!(
                "cannot rename {} columns with {} names",
                self.schema.len(),
                names.len()
            )));
        }
        let cols = self.schema.columns().iter().zip(names).map(|(c, n)| super::Column::new(n.clone(), c.ty)).collect();
        Ok(Table { schema: Schema::new(cols)?, rows: self.rows.clone() })
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let _ = w.write_record(self.schema.names());
        for r in &self.rows {
            let _ = w.write_record(r.iter().map(|v| if v.is_null() { String::new() } else { v.to_string() }));
        }
        String::from_utf8(w.into_inner().unwrap_or_default()).unwrap_or_default()
    }
}

impl<'de> Deserialize<'de> for Table {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            schema: Schema,
            rows: Vec<Vec<Value>>,
        }
        let raw = Raw::deserialize(d)?;
        Table::new(raw.schema, raw.rows).map_err(serde::de::Error::custom)
    }
}

fn cmp_rows(a: &[Value], b: &[Value]) -> Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
}

/// Rows sorted lexicographically by all columns in schema order.
pub fn canonicalize(t: &Table) -> Table {
    let mut rows = t.rows.clone();
    rows.sort_by(|a, b| cmp_rows(a, b));
    Table { schema: t.schema.clone(), rows }
}

/// Multiset equality of rows under numeric tolerance `eps`.
pub fn tables_equal(t1: &Table, t2: &Table, eps: f64) -> bool {
    if t1.schema != t2.schema || t1.len() != t2.len() {
        return false;
    }
    let a = canonicalize(t1);
    let b = canonicalize(t2);
    a.rows.iter().zip(&b.rows).all(|(r1, r2)| r1.iter().zip(r2).all(|(x, y)| values_approx_eq(x, y, eps)))
}

impl fmt::Display for Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cells: Vec<Vec<String>> = self.rows.iter().map(|r| r.iter().map(|v| v.to_string()).collect()).collect();
        let widths: Vec<usize> = self
            .schema
            .columns()
            .iter()
            .enumerate()
            .map(|(i, c)| cells.iter().map(|r| r[i].len()).chain([c.name.len()]).max().unwrap_or(0))
            .collect();
        let header: Vec<String> =
            self.schema.columns().iter().zip(&widths).map(|(c, w)| format!("{:<w$}", c.name, w = *w)).collect();
        writeln!(f, "{}", header.join(" | "))?;
        for r in &cells {
            let line: Vec<String> = r
                .iter()
                .zip(self.schema.columns())
                .zip(&widths)
                .map(
                    |((v, c), w)| {
                        if c.ty == DataType::Number {
                            format!("{v:>w$}", w = *w)
                        } else {
                            format!("{v:<w$}", w = *w)
                        }
                    },
                )
                .collect();
            writeln!(f, "{}", line.join(" | "))?;
        }
        Ok(())
    }
}
