//! Fixture-driven engine for tests and offline replays.
//!
//! Every answer is looked up by digest: compile results by query digest,
//! snippet databases by snippet-set digest, results by (query digest,
//! database id). Anything not scripted is an [`EngineError::Unscripted`].

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use super::{
    parse_diagnostics, snippet_set_digest, source_digest, CompileOutcome, CompiledQuery, DatabaseHandle, DbOrigin,
    Diagnostic, Engine, EngineError, RawResultSet, Snippet,
};
use crate::question::Language;

const FIXTURE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FakeFixtureError {
    #[error("cannot read fixture {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed fixture {path}: {message}")]
    Malformed { path: PathBuf, message: String },
}

#[derive(Deserialize)]
struct FixtureFile {
    version: u32,
    #[serde(default)]
    queries: Vec<QueryFixture>,
    #[serde(default)]
    snippet_databases: Vec<SnippetDbFixture>,
    #[serde(default)]
    databases: Vec<DatabaseFixture>,
    #[serde(default)]
    results: Vec<ResultFixture>,
}

#[derive(Deserialize)]
struct QueryFixture {
    name: String,
    #[serde(flatten)]
    text: TextSource,
    /// Compiler output lines; empty means the query compiles.
    #[serde(default)]
    diagnostics: Vec<String>,
}

#[derive(Deserialize)]
struct SnippetDbFixture {
    id: String,
    files: Vec<SnippetFileFixture>,
    #[serde(default)]
    diagnostics: Vec<String>,
}

#[derive(Deserialize)]
struct SnippetFileFixture {
    filename: String,
    #[serde(flatten)]
    text: TextSource,
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case")]
enum TextSource {
    Source(String),
    SourceFile(PathBuf),
}

#[derive(Deserialize)]
struct DatabaseFixture {
    id: String,
    root: PathBuf,
}

#[derive(Deserialize)]
struct ResultFixture {
    query: String,
    database: String,
    #[serde(flatten)]
    result: RawResultSet,
}

#[derive(Debug, Clone)]
enum ScriptedSnippetDb {
    Ok(String),
    Fails(Vec<Diagnostic>),
}

#[derive(Debug, Clone, Default)]
pub struct FakeEngine {
    compiles: HashMap<String, Vec<Diagnostic>>,
    snippet_dbs: HashMap<String, ScriptedSnippetDb>,
    databases: Vec<(String, PathBuf)>,
    results: HashMap<(String, String), RawResultSet>,
    base_dir: PathBuf,
}

impl FakeEngine {
    pub fn load(path: &Path) -> Result<Self, FakeFixtureError> {
        let read = |p: &Path| {
            fs::read_to_string(p).map_err(|source| FakeFixtureError::Io {
                path: p.to_path_buf(),
                source,
            })
        };
        let malformed = |message: String| FakeFixtureError::Malformed {
            path: path.to_path_buf(),
            message,
        };
        let file: FixtureFile = serde_json::from_str(&read(path)?).map_err(|e| malformed(e.to_string()))?;
        if file.version != FIXTURE_VERSION {
            return Err(malformed(format!("unsupported fixture version {}", file.version)));
        }
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let resolve = |text: &TextSource| -> Result<String, FakeFixtureError> {
            match text {
                TextSource::Source(s) => Ok(s.clone()),
                TextSource::SourceFile(p) => read(&base.join(p)),
            }
        };

        let mut engine = FakeEngine {
            base_dir: base.clone(),
            ..Default::default()
        };
        let mut names = HashMap::new();
        for q in &file.queries {
            let source = resolve(&q.text)?;
            let diags = q.diagnostics.iter().flat_map(|d| parse_diagnostics(d)).collect();
            let digest = source_digest(&source);
            if names.insert(q.name.clone(), digest.clone()).is_some() {
                return Err(malformed(format!("duplicate query name `{}`", q.name)));
            }
            engine.compiles.insert(digest, diags);
        }
        for db in &file.snippet_databases {
            let snippets = db
                .files
                .iter()
                .map(|f| Ok(Snippet::new(f.filename.clone(), resolve(&f.text)?)))
                .collect::<Result<Vec<_>, FakeFixtureError>>()?;
            let scripted = if db.diagnostics.is_empty() {
                ScriptedSnippetDb::Ok(db.id.clone())
            } else {
                ScriptedSnippetDb::Fails(db.diagnostics.iter().flat_map(|d| parse_diagnostics(d)).collect())
            };
            engine.snippet_dbs.insert(snippet_set_digest(&snippets), scripted);
        }
        for db in &file.databases {
            engine.databases.push((db.id.clone(), base.join(&db.root)));
        }
        for r in file.results {
            let digest = names
                .get(&r.query)
                .ok_or_else(|| malformed(format!("result refers to unknown query `{}`", r.query)))?;
            engine.results.insert((digest.clone(), r.database), r.result);
        }
        Ok(engine)
    }

    /// Scripts a compile result for `source`; empty `diagnostics` means success.
    pub fn with_query(mut self, source: &str, diagnostics: Vec<Diagnostic>) -> Self {
        self.compiles.insert(source_digest(source), diagnostics);
        self
    }

    pub fn with_snippet_db(mut self, snippets: &[Snippet], id: &str) -> Self {
        self.snippet_dbs
            .insert(snippet_set_digest(snippets), ScriptedSnippetDb::Ok(id.to_string()));
        self
    }

    pub fn with_failing_snippets(mut self, snippets: &[Snippet], diagnostics: Vec<Diagnostic>) -> Self {
        self.snippet_dbs
            .insert(snippet_set_digest(snippets), ScriptedSnippetDb::Fails(diagnostics));
        self
    }

    pub fn with_database(mut self, id: &str, root: impl Into<PathBuf>) -> Self {
        self.databases.push((id.to_string(), root.into()));
        self
    }

    pub fn with_result(mut self, source: &str, database: &str, result: RawResultSet) -> Self {
        self.results
            .insert((source_digest(source), database.to_string()), result);
        self
    }
}

fn same_path(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}

impl Engine for FakeEngine {
    fn name(&self) -> &str {
        "fake"
    }

    fn compile_source(&self, source: &str) -> Result<CompileOutcome, EngineError> {
        let digest = source_digest(source);
        match self.compiles.get(&digest) {
            Some(diags) if diags.is_empty() => Ok(CompileOutcome::Compiled(CompiledQuery {
                digest,
                source: source.to_string(),
                artifact: None,
            })),
            Some(diags) => Ok(CompileOutcome::Failed(diags.clone())),
            None => Err(EngineError::Unscripted(format!("compile of query {}", &digest[..12]))),
        }
    }

    fn execute(&self, artifact: &CompiledQuery, db: &DatabaseHandle) -> Result<RawResultSet, EngineError> {
        self.results
            .get(&(artifact.digest.clone(), db.id.clone()))
            .cloned()
            .ok_or_else(|| {
                EngineError::Unscripted(format!(
                    "execution of query {} on database `{}`",
                    &artifact.digest[..12],
                    db.id
                ))
            })
    }

    fn build_snippet_database(&self, snippets: &[Snippet], language: Language) -> Result<DatabaseHandle, EngineError> {
        if snippets.is_empty() {
            return Err(EngineError::NoSnippets);
        }
        let digest = snippet_set_digest(snippets);
        match self.snippet_dbs.get(&digest) {
            Some(ScriptedSnippetDb::Ok(id)) => Ok(DatabaseHandle {
                id: id.clone(),
                root: self.base_dir.clone(),
                language,
                origin: DbOrigin::Snippet,
            }),
            Some(ScriptedSnippetDb::Fails(diagnostics)) => Err(EngineError::SnippetBuild {
                diagnostics: diagnostics.clone(),
            }),
            None => Err(EngineError::Unscripted(format!(
                "snippet database for {} file(s) ({})",
                snippets.len(),
                &digest[..12]
            ))),
        }
    }

    fn open_database(&self, root: &Path, language: Language) -> Result<DatabaseHandle, EngineError> {
        self.databases
            .iter()
            .find(|(id, path)| same_path(path, root) || Path::new(id) == root)
            .map(|(id, path)| DatabaseHandle {
                id: id.clone(),
                root: path.clone(),
                language,
                origin: DbOrigin::Codebase,
            })
            .ok_or_else(|| EngineError::Unscripted(format!("database at {}", root.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{CandidateQuery, ColumnKind, QueryKind, RawCell, RawColumn};
    use crate::results::Location;

    fn loc_set(lines: &[u32]) -> RawResultSet {
        RawResultSet::new(
            vec![RawColumn {
                name: "loc".into(),
                kind: ColumnKind::Location,
            }],
            lines
                .iter()
                .map(|l| vec![RawCell::Location(Location::new("A.java", *l, 1))])
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn unscripted_pairs_fail_loudly() {
        let engine = FakeEngine::default().with_query("select 1", vec![]);
        let q = CandidateQuery::draft("select 2", QueryKind::Answer);
        assert!(matches!(engine.compile(&q), Err(EngineError::Unscripted(_))));

        let artifact = match engine
            .compile(&CandidateQuery::draft("select 1", QueryKind::Answer))
            .unwrap()
        {
            CompileOutcome::Compiled(a) => a,
            other => panic!("{other:?}"),
        };
        let db = DatabaseHandle {
            id: "nowhere".into(),
            root: PathBuf::new(),
            language: Language::Java,
            origin: DbOrigin::Codebase,
        };
        assert!(matches!(
            engine.execute(&artifact, &db),
            Err(EngineError::Unscripted(_))
        ));
        assert!(matches!(
            engine.build_snippet_database(&[Snippet::new("A.java", "class A {}")], Language::Java),
            Err(EngineError::Unscripted(_))
        ));
        assert_eq!(
            engine.build_snippet_database(&[], Language::Java),
            Err(EngineError::NoSnippets)
        );
    }

    #[test]
    fn execution_is_repeatable() {
        let engine = FakeEngine::default()
            .with_query("select x", vec![])
            .with_database("db1", "/nonexistent/db1")
            .with_result("select x", "db1", loc_set(&[3, 4]));
        let db = engine
            .open_database(Path::new("/nonexistent/db1"), Language::Java)
            .unwrap();
        let CompileOutcome::Compiled(artifact) = engine.compile_source("select x\n").unwrap() else {
            panic!("expected compile");
        };
        let first = engine.execute(&artifact, &db).unwrap();
        assert_eq!(first.len(), 2);
        assert_eq!(first, engine.execute(&artifact, &db).unwrap());
    }

    #[test]
    fn snippet_sets_cover_multiple_files() {
        let files = [
            Snippet::new("A.java", "class A {}"),
            Snippet::new("B.java", "class B { void f() {} }"),
        ];
        let engine = FakeEngine::default().with_snippet_db(&files, "two-files");
        let reversed = [files[1].clone(), files[0].clone()];
        let db = engine.build_snippet_database(&reversed, Language::Java).unwrap();
        assert_eq!(db.id, "two-files");
        assert_eq!(db.origin, DbOrigin::Snippet);
    }

    #[test]
    fn failing_snippets_surface_diagnostics() {
        let bad = [Snippet::new("A.java", "class A {")];
        let engine = FakeEngine::default().with_failing_snippets(
            &bad,
            parse_diagnostics("A.java:1: error: reached end of file while parsing"),
        );
        match engine.build_snippet_database(&bad, Language::Java) {
            Err(EngineError::SnippetBuild { diagnostics }) => assert!(!diagnostics.is_empty()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn loads_fixture_files() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("q.ql"), "import java\nselect 1\n").unwrap();
        fs::write(
            dir.path().join("engine.json"),
            r#"{"version": 1,
                "queries": [{"name": "q", "source_file": "q.ql"},
                            {"name": "bad", "source": "selec", "diagnostics": ["q.ql:1:1: error: unknown Foo"]}],
                "snippet_databases": [{"id": "s1", "files": [{"filename": "A.java", "source": "class A {}"}]}],
                "databases": [{"id": "proj", "root": "proj"}],
                "results": [{"query": "q", "database": "s1", "columns": [{"name": "c", "kind": "text"}],
                             "rows": [[{"text": "hello"}]]}]}"#,
        )
        .unwrap();
        let engine = FakeEngine::load(&dir.path().join("engine.json")).unwrap();
        assert!(matches!(
            engine.compile_source("import java\nselect 1"),
            Ok(CompileOutcome::Compiled(_))
        ));
        match engine.compile_source("selec").unwrap() {
            CompileOutcome::Failed(d) => assert_eq!(d[0].symbols, vec!["Foo"]),
            other => panic!("{other:?}"),
        }
        let db = engine
            .build_snippet_database(&[Snippet::new("A.java", "class A {}\n")], Language::Java)
            .unwrap();
        let CompileOutcome::Compiled(a) = engine.compile_source("import java\nselect 1").unwrap() else {
            unreachable!()
        };
        assert_eq!(engine.execute(&a, &db).unwrap().len(), 1);
        assert!(engine.open_database(Path::new("proj"), Language::Java).is_ok());
    }

    #[test]
    fn rejects_unknown_fixture_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("engine.json");
        fs::write(&path, r#"{"version": 9}"#).unwrap();
        assert!(matches!(
            FakeEngine::load(&path),
            Err(FakeFixtureError::Malformed { .. })
        ));
    }
}
