//! Typed in-memory relations and the transformation operators that turn a
//! source table into a prepared table.

mod csv_io;
mod expr;
mod ops;
mod schema;
#[allow(clippy::module_inception)]
mod table;
mod value;

pub use csv_io::{load_csv, load_csv_path};
pub use expr::{BinaryOp, Expr, ParseError, UnaryOp};
pub use ops::{AggFn, Aggregate, Pipeline, SortKey, TransformOp};
pub use schema::{Column, Schema};
pub use table::{canonicalize, tables_equal, Table};
pub use value::{approx_eq, format_number, values_approx_eq, DataType, Value};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TableError {
    #[error("ragged row at index {row}: expected {expected} fields, found {found}")]
    RaggedRow { row: usize, expected: usize, found: usize },
    #[error("type error at (row {row}, col {column}): cannot read `{cell}` as {expected}")]
    CellType { row: usize, column: String, cell: String, expected: DataType },
    #[error("csv: {0}")]
    Csv(String),
    #[error("schema: {0}")]
    Schema(String),
    #[error("unknown column {column} in schema {schema}")]
    UnknownColumn { column: String, schema: String },
    #[error("type error: {0}")]
    Type(String),
    #[error("division by zero in `{expr}`")]
    DivisionByZero { expr: String },
    #[error("non-finite result in `{expr}`")]
    NonFinite { expr: String },
    #[error("zero total: cannot normalize column {column}")]
    ZeroTotal { column: String },
    #[error("invalid operator: {0}")]
    InvalidOp(String),
}

impl TableError {
    /// Errors raised while evaluating data, as opposed to static schema errors.
    pub fn is_evaluation(&self) -> bool {
        matches!(self, TableError::DivisionByZero { .. } | TableError::NonFinite { .. } | TableError::ZeroTotal { .. })
    }
}
