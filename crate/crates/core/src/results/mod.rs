//! Schema-conformant result tables and their exports.

mod export;
mod render;

pub use export::{export, parse_structured, ExportFormat};
pub use render::render;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{RawCell, RawResultSet};
use crate::question::OutputSchema;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ResultsError {
    #[error("query returned {raw} column(s) but the schema requires {schema}")]
    SchemaMismatch { raw: usize, schema: usize },
    #[error("row {0} has no location cell; cannot emit a SARIF result")]
    NoLocationCell(usize),
    #[error("row {row} has {got} cells, expected {expected}")]
    RowArity { row: usize, got: usize, expected: usize },
    #[error("invalid location `{0}`")]
    InvalidLocation(String),
    #[error("malformed structured export at line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("export failed: {0}")]
    Io(String),
}

/// A source position, repo-relative, lines 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Location {
    pub file: String,
    pub line: u32,
    #[serde(default)]
    pub column: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_line: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_column: Option<u32>,
}

impl Location {
    pub fn new(file: impl Into<String>, line: u32, column: u32) -> Self {
        Self {
            file: file.into(),
            line,
            column,
            end_line: None,
            end_column: None,
        }
    }

    pub fn with_end(mut self, end_line: u32, end_column: u32) -> Self {
        self.end_line = Some(end_line);
        self.end_column = Some(end_column);
        self
    }

    pub fn validate(&self) -> Result<(), ResultsError> {
        let bad_end = matches!(self.end_line, Some(end) if end < self.line);
        if self.file.is_empty() || self.line == 0 || bad_end {
            return Err(ResultsError::InvalidLocation(self.to_string()));
        }
        Ok(())
    }
}

/// `path:line:col`, the form most editors and terminals turn into links.
impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.file, self.line, self.column)
    }
}

/// Accepts `path:line` and `path:line:col`.
impl FromStr for Location {
    type Err = ResultsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let invalid = || ResultsError::InvalidLocation(s.to_string());
        let s = s.trim();
        let mut parts = s.rsplitn(3, ':');
        let last = parts.next().ok_or_else(invalid)?;
        let middle = parts.next().ok_or_else(invalid)?;
        let loc = match parts.next() {
            Some(file) if middle.parse::<u32>().is_ok() => Location::new(
                file,
                middle.parse().map_err(|_| invalid())?,
                last.parse().map_err(|_| invalid())?,
            ),
            Some(file) => Location::new(format!("{file}:{middle}"), last.parse().map_err(|_| invalid())?, 0),
            None => Location::new(middle, last.parse().map_err(|_| invalid())?, 0),
        };
        loc.validate()?;
        Ok(loc)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cell {
    Location(Location),
    Text(String),
}

impl Cell {
    pub fn as_location(&self) -> Option<&Location> {
        match self {
            Cell::Location(loc) => Some(loc),
            Cell::Text(_) => None,
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Location(loc) => loc.fmt(f),
            Cell::Text(text) => f.write_str(text),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultTable {
    schema: OutputSchema,
    rows: Vec<Vec<Cell>>,
}

impl ResultTable {
    pub fn new(schema: OutputSchema, rows: Vec<Vec<Cell>>) -> Result<Self, ResultsError> {
        let expected = schema.arity();
        if let Some((row, cells)) = rows.iter().enumerate().find(|(_, r)| r.len() != expected) {
            return Err(ResultsError::RowArity {
                row,
                got: cells.len(),
                expected,
            });
        }
        Ok(Self { schema, rows })
    }

    pub fn empty(schema: OutputSchema) -> Self {
        Self {
            schema,
            rows: Vec::new(),
        }
    }

    pub fn schema(&self) -> &OutputSchema {
        &self.schema
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// First location cell of every row that has one.
    pub fn primary_locations(&self) -> Vec<Location> {
        self.rows
            .iter()
            .filter_map(|row| row.iter().find_map(Cell::as_location).cloned())
            .collect()
    }
}

/// Attached when a result set was wider than the schema and got cut down.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConformanceWarning {
    pub raw_arity: usize,
    pub schema_arity: usize,
}

impl fmt::Display for ConformanceWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "query selected {} columns; kept the first {} to match the schema",
            self.raw_arity, self.schema_arity
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conformed {
    pub table: ResultTable,
    pub warning: Option<ConformanceWarning>,
}

/// Fits an engine result set to the requested schema. Extra columns are
/// dropped from the right; too few columns is an error.
pub fn conform(raw: &RawResultSet, schema: &OutputSchema) -> Result<Conformed, ResultsError> {
    let raw_arity = raw.arity();
    let schema_arity = schema.arity();
    if raw_arity < schema_arity {
        return Err(ResultsError::SchemaMismatch {
            raw: raw_arity,
            schema: schema_arity,
        });
    }
    let rows = raw
        .rows()
        .iter()
        .map(|row| row.iter().take(schema_arity).map(cell_from_raw).collect())
        .collect();
    let warning = (raw_arity > schema_arity).then_some(ConformanceWarning {
        raw_arity,
        schema_arity,
    });
    Ok(Conformed {
        table: ResultTable::new(schema.clone(), rows)?,
        warning,
    })
}

fn cell_from_raw(cell: &RawCell) -> Cell {
    match cell {
        RawCell::Location(loc) => Cell::Location(loc.clone()),
        RawCell::Entity(name) | RawCell::Text(name) => Cell::Text(name.clone()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{ColumnKind, RawColumn};

    fn schema(spec: &str) -> OutputSchema {
        OutputSchema::parse_inline(spec).unwrap()
    }

    fn raw(columns: &[ColumnKind], rows: Vec<Vec<RawCell>>) -> RawResultSet {
        let cols = columns
            .iter()
            .enumerate()
            .map(|(i, kind)| RawColumn {
                name: format!("col{i}"),
                kind: *kind,
            })
            .collect();
        RawResultSet::new(cols, rows).unwrap()
    }

    #[test]
    fn location_parsing() {
        assert_eq!("A.java:3".parse::<Location>().unwrap(), Location::new("A.java", 3, 0));
        assert_eq!(
            "src/A.java:3:7".parse::<Location>().unwrap(),
            Location::new("src/A.java", 3, 7)
        );
        assert!("A.java".parse::<Location>().is_err());
        assert!("A.java:0".parse::<Location>().is_err());
        assert!(":4".parse::<Location>().is_err());
        let loc = Location::new("a", 5, 1).with_end(4, 1);
        assert!(loc.validate().is_err());
    }

    #[test]
    fn conform_same_arity_passes_through() {
        let r = raw(
            &[ColumnKind::Location],
            vec![vec![RawCell::Location(Location::new("A.java", 6, 16))]],
        );
        let out = conform(&r, &schema("loc:the call")).unwrap();
        assert!(out.warning.is_none());
        assert_eq!(
            out.table.rows(),
            &[vec![Cell::Location(Location::new("A.java", 6, 16))]]
        );
    }

    #[test]
    fn conform_truncates_wider_results_with_warning() {
        // Two entity columns, like an assistive query printing both operand types.
        let r = raw(
            &[ColumnKind::Entity, ColumnKind::Entity],
            vec![
                vec![RawCell::Entity("Object[]".into()), RawCell::Entity("int[]".into())],
                vec![RawCell::Entity("Object[]".into()), RawCell::Entity("Object[]".into())],
            ],
        );
        let out = conform(&r, &schema("qualifier_type:type")).unwrap();
        assert_eq!(
            out.warning,
            Some(ConformanceWarning {
                raw_arity: 2,
                schema_arity: 1
            })
        );
        assert_eq!(
            out.table.rows(),
            &[vec![Cell::Text("Object[]".into())], vec![Cell::Text("Object[]".into())]]
        );
    }

    #[test]
    fn conform_rejects_narrower_results() {
        let r = raw(&[ColumnKind::Location], vec![]);
        assert_eq!(
            conform(&r, &schema("a:x;b:y")),
            Err(ResultsError::SchemaMismatch { raw: 1, schema: 2 })
        );
    }
}
