use std::fmt;

use serde::{Deserialize, Serialize};

use super::value::DataType;
use super::TableError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: DataType,
}

impl Column {
    pub fn new(name: impl Into<String>, ty: DataType) -> Self {
        Column { name: name.into(), ty }
    }
}

/// Ordered list of uniquely named, typed columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct Schema {
    columns: Vec<Column>,
}

impl Schema {
    pub fn new(columns: Vec<Column>) -> Result<Self, TableError> {
        for (i, c) in columns.iter().enumerate() {
            if c.name.is_empty() {
                return Err(TableError::Schema(format!("column {i} has an empty name")));
            }
            if columns[..i].iter().any(|p| p.name == c.name) {
                return Err(TableError::Schema(format!("duplicate column name `{}`", c.name)));
            }
        }
        Ok(Schema { columns })
    }

    /// Convenience for literals in tests and fixtures; panics on invalid input.
    pub fn of(cols: &[(&str, DataType)]) -> Self {
        Schema::new(cols.iter().map(|(n, t)| Column::new(*n, *t)).collect()).expect("invalid schema literal")
    }

    pub fn empty() -> Self {
        Schema { columns: Vec::new() }
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index_of(name).is_some()
    }

    pub fn type_of(&self, name: &str) -> Option<DataType> {
        self.columns.iter().find(|c| c.name == name).map(|c| c.ty)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }

    /// Appends a column, rejecting collisions.
    pub fn with(&self, name: &str, ty: DataType) -> Result<Schema, TableError> {
        if self.contains(name) {
            return Err(TableError::Schema(format!(
                "output column `{name}` collides with an existing column in {self}"
            )));
        }
        let mut columns = self.columns.clone();
        columns.push(Column::new(name, ty));
        Schema::new(columns)
    }

    pub fn require(&self, name: &str) -> Result<DataType, TableError> {
        self.type_of(name)
            .ok_or_else(|| TableError::UnknownColumn { column: name.to_string(), schema: self.to_string() })
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, c) in self.columns.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{}: {}", c.name, c.ty)?;
        }
        f.write_str("]")
    }
}

impl<'de> Deserialize<'de> for Schema {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let columns = Vec::<Column>::deserialize(d)?;
        Schema::new(columns).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicates_and_empty_names() {
        assert!(Schema::new(vec![Column::new("a", DataType::Text), Column::new("a", DataType::Number)]).is_err());
        assert!(Schema::new(vec![Column::new("", DataType::Text)]).is_err());
    }

    #[test]
    fn display_lists_columns() {
        let s = Schema::of(&[("a", DataType::Text), ("c", DataType::Number)]);
        assert_eq!(s.to_string(), "[a: text, c: number]");
    }
}
