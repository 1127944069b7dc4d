//! Litmus tests for candidate queries: generated snippets with an
//! expectation over the query's output on them.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{CompiledQuery, DatabaseHandle, Diagnostic, Engine, EngineError, RawCell, RawResultSet, Snippet};
use crate::llm::{self, GatewayError, Session};
use crate::question::Language;

/// Cases beyond this many are dropped when parsing a generation response.
pub const MAX_SELF_TESTS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    NonEmpty,
    ExactRowCount(u32),
    /// `(filename, line)` pairs that must each appear in some row.
    ContainsLocations(Vec<(String, u32)>),
}

impl fmt::Display for Expectation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expectation::NonEmpty => f.write_str("non-empty output"),
            Expectation::ExactRowCount(n) => write!(f, "exactly {n} row(s)"),
            Expectation::ContainsLocations(locs) => {
                let parts: Vec<String> = locs.iter().map(|(file, line)| format!("{file}:{line}")).collect();
                write!(f, "rows at {}", parts.join(", "))
            }
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SelfTestError {
    #[error("exact_row_count must be at least 1")]
    ZeroRowCount,
    #[error("contains_locations needs at least one location")]
    NoLocations,
    #[error("no self-test cases to evaluate")]
    NoCases,
    #[error("snippet database for case {index} failed to build")]
    SnippetBuild { index: usize, diagnostics: Vec<Diagnostic> },
    #[error("snippet {filename} still fails to build after {rounds} repair round(s)")]
    Unrepairable {
        filename: String,
        rounds: u32,
        diagnostics: Vec<Diagnostic>,
    },
    #[error("case {index}: {source}")]
    Engine { index: usize, source: EngineError },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelfTestCase {
    snippet: Snippet,
    expectation: Expectation,
    #[serde(default)]
    note: String,
}

impl SelfTestCase {
    pub fn new(snippet: Snippet, expectation: Expectation, note: impl Into<String>) -> Result<Self, SelfTestError> {
        match &expectation {
            Expectation::ExactRowCount(0) => return Err(SelfTestError::ZeroRowCount),
            Expectation::ContainsLocations(l) if l.is_empty() => return Err(SelfTestError::NoLocations),
            _ => {}
        }
        Ok(Self {
            snippet,
            expectation,
            note: note.into(),
        })
    }

    pub fn non_empty(snippet: Snippet) -> Self {
        Self {
            snippet,
            expectation: Expectation::NonEmpty,
            note: String::new(),
        }
    }

    pub fn snippet(&self) -> &Snippet {
        &self.snippet
    }

    pub fn expectation(&self) -> &Expectation {
        &self.expectation
    }

    pub fn note(&self) -> &str {
        &self.note
    }

    /// Same expectation and note with a replacement source.
    pub fn with_source(&self, source: impl Into<String>) -> Self {
        Self {
            snippet: Snippet::new(self.snippet.filename.clone(), source),
            ..self.clone()
        }
    }

    pub fn is_satisfied_by(&self, table: &RawResultSet) -> bool {
        match &self.expectation {
            Expectation::NonEmpty => !table.is_empty(),
            Expectation::ExactRowCount(n) => table.len() == *n as usize,
            Expectation::ContainsLocations(wanted) => wanted.iter().all(|(file, line)| {
                table.rows().iter().flatten().any(|cell| match cell {
                    RawCell::Location(loc) => loc.line == *line && same_file(&loc.file, file),
                    _ => false,
                })
            }),
        }
    }
}

fn same_file(reported: &str, wanted: &str) -> bool {
    reported == wanted || reported.ends_with(&format!("/{wanted}"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CaseOutcome {
    pub index: usize,
    pub observed_rows: usize,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SelfTestVerdict {
    pub passed: bool,
    pub per_case: Vec<CaseOutcome>,
    pub tables: Vec<RawResultSet>,
}

impl SelfTestVerdict {
    /// Summary used in prompts and the transcript.
    pub fn describe(&self, cases: &[SelfTestCase]) -> String {
        let mut lines = Vec::new();
        for outcome in &self.per_case {
            let case = &cases[outcome.index];
            lines.push(format!(
                "- test {} ({}): expected {}, got {} row(s): {}",
                outcome.index + 1,
                case.snippet().filename,
                case.expectation(),
                outcome.observed_rows,
                if outcome.satisfied { "pass" } else { "FAIL" }
            ));
        }
        lines.join("\n")
    }
}

/// Snippet databases built during one run, keyed by snippet-set digest.
#[derive(Debug, Default)]
pub struct SnippetDbCache {
    built: HashMap<String, DatabaseHandle>,
    builds: usize,
}

impl SnippetDbCache {
    pub fn get_or_build(
        &mut self,
        engine: &dyn Engine,
        snippets: &[Snippet],
        language: Language,
    ) -> Result<DatabaseHandle, EngineError> {
        let key = crate::engine::snippet_set_digest(snippets);
        if let Some(db) = self.built.get(&key) {
            return Ok(db.clone());
        }
        let db = engine.build_snippet_database(snippets, language)?;
        self.builds += 1;
        self.built.insert(key, db.clone());
        Ok(db)
    }

    /// Number of databases actually built (cache misses).
    pub fn builds(&self) -> usize {
        self.builds
    }
}

/// Runs `artifact` on each case's snippet database and checks expectations.
pub fn evaluate(
    engine: &dyn Engine,
    artifact: &CompiledQuery,
    cases: &[SelfTestCase],
    cache: &mut SnippetDbCache,
    language: Language,
) -> Result<SelfTestVerdict, SelfTestError> {
    if cases.is_empty() {
        return Err(SelfTestError::NoCases);
    }
    let mut per_case = Vec::with_capacity(cases.len());
    let mut tables = Vec::with_capacity(cases.len());
    for (index, case) in cases.iter().enumerate() {
        let db = cache
            .get_or_build(engine, std::slice::from_ref(&case.snippet), language)
            .map_err(|e| match e {
                EngineError::SnippetBuild { diagnostics } => SelfTestError::SnippetBuild { index, diagnostics },
                other => SelfTestError::Engine { index, source: other },
            })?;
        let table = engine
            .execute(artifact, &db)
            .map_err(|source| SelfTestError::Engine { index, source })?;
        per_case.push(CaseOutcome {
            index,
            observed_rows: table.len(),
            satisfied: case.is_satisfied_by(&table),
        });
        tables.push(table);
    }
    Ok(SelfTestVerdict {
        passed: per_case.iter().all(|c| c.satisfied),
        per_case,
        tables,
    })
}

#[derive(Debug, Error)]
pub enum SnippetRepairError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    SelfTest(#[from] SelfTestError),
}

/// Asks the model to fix a snippet that does not build, up to `rounds`
/// times. Returns the repaired case and its database.
pub fn repair_snippet(
    session: &mut Session<'_>,
    engine: &dyn Engine,
    cache: &mut SnippetDbCache,
    case: &SelfTestCase,
    diagnostics: Vec<Diagnostic>,
    rounds: u32,
) -> Result<(SelfTestCase, DatabaseHandle), SnippetRepairError> {
    let language = session.language();
    let mut current = case.clone();
    let mut diagnostics = diagnostics;
    for _ in 0..rounds {
        let source = llm::repair_snippet_source(session, current.snippet(), &diagnostics)?;
        current = current.with_source(source);
        match cache.get_or_build(engine, std::slice::from_ref(current.snippet()), language) {
            Ok(db) => return Ok((current, db)),
            Err(EngineError::SnippetBuild { diagnostics: d }) => diagnostics = d,
            Err(source) => return Err(SelfTestError::Engine { index: 0, source }.into()),
        }
    }
    Err(SelfTestError::Unrepairable {
        filename: case.snippet().filename.clone(),
        rounds,
        diagnostics,
    }
    .into())
}
