use std::path::Path;

use super::schema::{Column, Schema};
use super::table::Table;
use super::value::{DataType, Value};
use super::TableError;

fn parse_cell(raw: &str, ty: DataType) -> Option<Value> {
    let s = raw.trim();
    if s.is_empty() {
        return Some(Value::Null);
    }
    match ty {
        DataType::Text => Some(Value::text(raw)),
        DataType::Number => s.parse::<f64>().ok().and_then(Value::number),
        DataType::Boolean => match s.to_ascii_lowercase().as_str() {
            "true" => Some(Value::Bool(true)),
            "false" => Some(Value::Bool(false)),
            _ => None,
        },
    }
}

/// Reads CSV with a header row. Without a schema, a column is numeric when
/// every non-empty cell parses as a finite number and text otherwise.
/// Empty cells become null. Row indices in errors count data rows from 1.
pub fn load_csv(text: &str, schema: Option<&Schema>) -> Result<Table, TableError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(text.as_bytes());
    let header: Vec<String> =
        rdr.headers().map_err(|e| TableError::Csv(e.to_string()))?.iter().map(|h| h.trim().to_string()).collect();
    let mut raw = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| TableError::Csv(e.to_string()))?;
        if rec.len() != header.len() {
            return Err(TableError::RaggedRow { row: i + 1, expected: header.len(), found: rec.len() });
        }
        raw.push(rec.iter().map(str::to_string).collect::<Vec<_>>());
    }

    let schema = match schema {
        Some(s) => {
            let names: Vec<&str> = s.names().collect();
            if names != header {
                return Err(TableError::Schema(format!("header [{}] does not match schema {s}", header.join(", "))));
            }
            s.clone()
        }
        None => {
            let cols = header
                .iter()
                .enumerate()
                .map(|(j, name)| {
                    let numeric = raw.iter().all(|r| parse_cell(&r[j], DataType::Number).is_some());
                    Column::new(name.clone(), if numeric { DataType::Number } else { DataType::Text })
                })
                .collect();
            Schema::new(cols)?
        }
    };

    let mut rows = Vec::with_capacity(raw.len());
    for (i, r) in raw.iter().enumerate() {
        let row = r
            .iter()
            .zip(schema.columns())
            .map(|(cell, col)| {
                parse_cell(cell, col.ty).ok_or_else(|| TableError::CellType {
                    row: i + 1,
                    column: col.name.clone(),
                    cell: cell.clone(),
                    expected: col.ty,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Table::new(schema, rows)
}

pub fn load_csv_path(path: &Path, schema: Option<&Schema>) -> Result<Table, TableError> {
    let text = std::fs::read_to_string(path).map_err(|e| TableError::Csv(format!("{}: {e}", path.display())))?;
    load_csv(&text, schema)
}
