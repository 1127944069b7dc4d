//! Query-engine abstraction.
//!
//! The pipeline only ever sees the results of three calls: compile a query,
//! execute a compiled query over a database, and build a database from
//! generated snippets. [`FakeEngine`] answers them from fixtures for tests;
//! [`CodeqlEngine`] drives the external toolchain.

mod codeql;
mod diagnostics;
mod fake;

pub use codeql::{decode_bqrs_json, CodeqlConfig, CodeqlEngine};
pub use diagnostics::{extract_symbols, parse_diagnostics};
pub use fake::{FakeEngine, FakeFixtureError};

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::question::Language;
use crate::results::Location;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("query engine unavailable: {0}")]
    Unavailable(String),
    #[error("query execution failed: {message}")]
    ExecutionFailure { message: String, stderr: String },
    #[error("snippet database build failed with {} diagnostic(s)", diagnostics.len())]
    SnippetBuild { diagnostics: Vec<Diagnostic> },
    #[error("fake engine has no fixture for {0}")]
    Unscripted(String),
    #[error("invalid database: {0}")]
    InvalidDatabase(String),
    #[error("no snippets given")]
    NoSnippets,
    #[error("I/O error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryStatus {
    Draft,
    Compiled,
    SelfTestPassed,
    Final,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    Answer,
    Assistive,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("illegal status transition {from:?} -> {to:?}")]
pub struct StatusError {
    pub from: QueryStatus,
    pub to: QueryStatus,
}

/// A query source together with where it is in its lifecycle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateQuery {
    source: String,
    status: QueryStatus,
    kind: QueryKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    diagnostics: Vec<Diagnostic>,
}

impl CandidateQuery {
    pub fn draft(source: impl Into<String>, kind: QueryKind) -> Self {
        Self {
            source: source.into(),
            status: QueryStatus::Draft,
            kind,
            diagnostics: Vec::new(),
        }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn status(&self) -> QueryStatus {
        self.status
    }

    pub fn kind(&self) -> QueryKind {
        self.kind
    }

    pub fn diagnostics(&self) -> &[Diagnostic] {
        &self.diagnostics
    }

    pub fn digest(&self) -> String {
        source_digest(&self.source)
    }

    /// Moves the status forward. Diagnostics are cleared once the query leaves draft.
    pub fn advance(&mut self, to: QueryStatus) -> Result<(), StatusError> {
        if to <= self.status {
            return Err(StatusError { from: self.status, to });
        }
        self.status = to;
        self.diagnostics.clear();
        Ok(())
    }

    /// Records diagnostics from a failed compile. Only drafts carry diagnostics.
    pub fn record_failure(&mut self, diagnostics: Vec<Diagnostic>) -> Result<(), StatusError> {
        if self.status != QueryStatus::Draft {
            return Err(StatusError {
                from: self.status,
                to: QueryStatus::Draft,
            });
        }
        self.diagnostics = diagnostics;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Diagnostic {
    pub file: Option<PathBuf>,
    pub line: u32,
    pub column: u32,
    pub severity: Severity,
    pub message: String,
    pub symbols: Vec<String>,
}

impl Diagnostic {
    pub fn new(file: Option<PathBuf>, line: u32, column: u32, severity: Severity, message: impl Into<String>) -> Self {
        let message = message.into();
        let symbols = extract_symbols(&message);
        Self {
            file,
            line,
            column,
            severity,
            message,
            symbols,
        }
    }

    pub fn error(message: impl Into<String>) -> Self {
        Self::new(None, 0, 0, Severity::Error, message)
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let severity = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        match &self.file {
            Some(file) => write!(
                f,
                "{}:{}:{}: {}: {}",
                file.display(),
                self.line,
                self.column,
                severity,
                self.message
            ),
            None => write!(f, "{}: {}", severity, self.message),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DbOrigin {
    Codebase,
    Snippet,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DatabaseHandle {
    pub id: String,
    pub root: PathBuf,
    pub language: Language,
    pub origin: DbOrigin,
}

/// One generated source file destined for a snippet database.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Snippet {
    pub filename: String,
    pub source: String,
}

impl Snippet {
    pub fn new(filename: impl Into<String>, source: impl Into<String>) -> Self {
        Self {
            filename: filename.into(),
            source: source.into(),
        }
    }
}

/// Order-independent digest over a set of snippets.
pub fn snippet_set_digest(snippets: &[Snippet]) -> String {
    let mut sorted: Vec<&Snippet> = snippets.iter().collect();
    sorted.sort_by(|a, b| a.filename.cmp(&b.filename));
    let mut hasher = Sha256::new();
    for s in sorted {
        hasher.update(s.filename.as_bytes());
        hasher.update([0u8]);
        hasher.update(normalize_source(&s.source).as_bytes());
        hasher.update([0u8]);
    }
    hex::encode(hasher.finalize())
}

/// Handle to a successfully compiled query.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CompiledQuery {
    pub digest: String,
    pub source: String,
    pub artifact: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CompileOutcome {
    Compiled(CompiledQuery),
    Failed(Vec<Diagnostic>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Location,
    Entity,
    Text,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RawColumn {
    pub name: String,
    pub kind: ColumnKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RawCell {
    Location(Location),
    Entity(String),
    Text(String),
}

impl fmt::Display for RawCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RawCell::Location(loc) => loc.fmt(f),
            RawCell::Entity(s) | RawCell::Text(s) => f.write_str(s),
        }
    }
}

/// Untyped engine output: declared columns plus rows of the same width.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawResultSetRepr")]
pub struct RawResultSet {
    columns: Vec<RawColumn>,
    rows: Vec<Vec<RawCell>>,
}

#[derive(Deserialize)]
struct RawResultSetRepr {
    columns: Vec<RawColumn>,
    #[serde(default)]
    rows: Vec<Vec<RawCell>>,
}

impl TryFrom<RawResultSetRepr> for RawResultSet {
    type Error = String;

    fn try_from(repr: RawResultSetRepr) -> Result<Self, Self::Error> {
        RawResultSet::new(repr.columns, repr.rows)
    }
}

impl RawResultSet {
    pub fn new(columns: Vec<RawColumn>, rows: Vec<Vec<RawCell>>) -> Result<Self, String> {
        if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != columns.len()) {
            return Err(format!(
                "row {i} has {} cells but {} columns are declared",
                row.len(),
                columns.len()
            ));
        }
        Ok(Self { columns, rows })
    }

    pub fn columns(&self) -> &[RawColumn] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<RawCell>] {
        &self.rows
    }

    pub fn arity(&self) -> usize {
        self.columns.len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Tab-separated rendering, capped at `limit` rows.
    pub fn render_plain(&self, limit: usize) -> String {
        let mut out = self
            .columns
            .iter()
            .map(|c| c.name.as_str())
            .collect::<Vec<_>>()
            .join("\t");
        out.push('\n');
        for row in self.rows.iter().take(limit) {
            let line = row.iter().map(RawCell::to_string).collect::<Vec<_>>().join("\t");
            out.push_str(&line);
            out.push('\n');
        }
        if self.rows.len() > limit {
            out.push_str(&format!("... {} more row(s) omitted\n", self.rows.len() - limit));
        }
        out
    }
}

pub trait Engine: Send + Sync {
    fn name(&self) -> &str;

    /// Compiles a non-empty query source.
    fn compile_source(&self, source: &str) -> Result<CompileOutcome, EngineError>;

    fn execute(&self, artifact: &CompiledQuery, db: &DatabaseHandle) -> Result<RawResultSet, EngineError>;

    fn build_snippet_database(&self, snippets: &[Snippet], language: Language) -> Result<DatabaseHandle, EngineError>;

    /// Opens an existing database for the codebase under analysis.
    fn open_database(&self, root: &Path, language: Language) -> Result<DatabaseHandle, EngineError>;

    fn compile(&self, query: &CandidateQuery) -> Result<CompileOutcome, EngineError> {
        if query.source().trim().is_empty() {
            return Ok(CompileOutcome::Failed(vec![Diagnostic::error("query source is empty")]));
        }
        self.compile_source(query.source())
    }
}

/// Strips trailing whitespace per line and surrounding blank lines.
pub fn normalize_source(source: &str) -> String {
    let lines: Vec<&str> = source.lines().map(str::trim_end).collect();
    let start = lines.iter().position(|l| !l.is_empty()).unwrap_or(lines.len());
    let end = lines.iter().rposition(|l| !l.is_empty()).map_or(start, |i| i + 1);
    lines[start..end].join("\n")
}

pub fn source_digest(source: &str) -> String {
    hex::encode(Sha256::digest(normalize_source(source).as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_moves_forward_only() {
        let mut q = CandidateQuery::draft("select 1", QueryKind::Answer);
        q.record_failure(vec![Diagnostic::error("boom")]).unwrap();
        assert_eq!(q.diagnostics().len(), 1);
        q.advance(QueryStatus::Compiled).unwrap();
        assert!(q.diagnostics().is_empty());
        assert!(q.record_failure(vec![]).is_err());
        assert!(q.advance(QueryStatus::Draft).is_err());
        assert!(q.advance(QueryStatus::Compiled).is_err());
        q.advance(QueryStatus::Final).unwrap();
    }

    #[test]
    fn normalization_ignores_trailing_whitespace() {
        assert_eq!(
            normalize_source("\n\nimport java  \nselect 1\n\n"),
            "import java\nselect 1"
        );
        assert_eq!(source_digest("a\n"), source_digest("a"));
        assert_ne!(source_digest("a"), source_digest(" a"));
        assert_eq!(normalize_source("\n \n"), "");
    }

    #[test]
    fn snippet_digest_is_order_independent() {
        let a = Snippet::new("A.java", "class A {}");
        let b = Snippet::new("B.java", "class B {}");
        assert_eq!(
            snippet_set_digest(&[a.clone(), b.clone()]),
            snippet_set_digest(&[b, a.clone()])
        );
        assert_ne!(
            snippet_set_digest(std::slice::from_ref(&a)),
            snippet_set_digest(&[Snippet::new("C.java", a.source)])
        );
    }

    #[test]
    fn raw_result_set_checks_row_width() {
        let cols = vec![RawColumn {
            name: "x".into(),
            kind: ColumnKind::Text,
        }];
        assert!(RawResultSet::new(cols.clone(), vec![vec![]]).is_err());
        let set = RawResultSet::new(cols, vec![vec![RawCell::Text("a".into())]; 3]).unwrap();
        assert_eq!(set.render_plain(2), "x\na\na\n... 1 more row(s) omitted\n");
    }

    #[test]
    fn empty_source_is_a_diagnostic_not_a_crash() {
        let engine = FakeEngine::default();
        let outcome = engine
            .compile(&CandidateQuery::draft("  \n", QueryKind::Answer))
            .unwrap();
        match outcome {
            CompileOutcome::Failed(diags) => assert_eq!(diags[0].severity, Severity::Error),
            other => panic!("expected failure, got {other:?}"),
        }
    }
}
