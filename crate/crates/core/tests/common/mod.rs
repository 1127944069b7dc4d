#![allow(dead_code)]

use std::path::{Path, PathBuf};

use querysmith_core::docs_index::{load_index, ConstructIndex};
use querysmith_core::engine::{
    ColumnKind, DatabaseHandle, Diagnostic, Engine, FakeEngine, RawCell, RawColumn, RawResultSet, Severity, Snippet,
};
use querysmith_core::llm::ScriptStep;
use querysmith_core::orchestrator::{check_stage_order, AnswerReport, Stage};
use querysmith_core::question::{Language, OutputSchema, Question};
use querysmith_core::results::Location;

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn index() -> ConstructIndex {
    load_index(&repo_root().join("data/java-constructs.jsonl")).unwrap()
}

pub const SNIPPET: &str = "class T {\n  void m(int[] a, int[] b) {\n    boolean r = a.equals(b);\n  }\n}\n";
pub const SNIPPET_DB: &str = "snippet-t";
pub const PROJECT_DB: &str = "project";

pub fn question() -> Question {
    Question::new(
        "Find calls to equals on arrays.",
        OutputSchema::parse_inline("location:The call.").unwrap(),
        Language::Java,
    )
    .unwrap()
}

pub fn selftest_reply() -> String {
    format!("```java\n{SNIPPET}```\nEXPECT: non_empty\n")
}

pub fn ql(source: &str) -> String {
    format!("```ql\n{source}```\n")
}

/// A distinct query source per name.
pub fn query(name: &str) -> String {
    format!("import java\n// {name}\nfrom MethodCall c\nselect c.getLocation()\n")
}

pub fn step(stage: Stage, response: impl Into<String>) -> ScriptStep {
    ScriptStep {
        stage: Some(stage),
        response: response.into(),
    }
}

/// Self-test, keywords and one valid construct round.
pub fn preamble() -> Vec<ScriptStep> {
    vec![
        step(Stage::SelftestGen, selftest_reply()),
        step(Stage::KeywordExtract, "method call, equals, array"),
        step(Stage::ConstructPropose, "MethodCall, MethodCall::getQualifier"),
    ]
}

pub fn location_rows(locs: &[(&str, u32, u32)]) -> RawResultSet {
    RawResultSet::new(
        vec![RawColumn {
            name: "col0".into(),
            kind: ColumnKind::Location,
        }],
        locs.iter()
            .map(|(f, l, c)| vec![RawCell::Location(Location::new(*f, *l, *c))])
            .collect(),
    )
    .unwrap()
}

pub fn entity_rows(values: &[(&str, &str)]) -> RawResultSet {
    RawResultSet::new(
        vec![
            RawColumn {
                name: "col0".into(),
                kind: ColumnKind::Entity,
            },
            RawColumn {
                name: "col1".into(),
                kind: ColumnKind::Entity,
            },
        ],
        values
            .iter()
            .map(|(a, b)| vec![RawCell::Entity(a.to_string()), RawCell::Entity(b.to_string())])
            .collect(),
    )
    .unwrap()
}

pub fn error(message: &str) -> Diagnostic {
    Diagnostic::new(Some("q.ql".into()), 3, 7, Severity::Error, message)
}

/// Engine knowing the snippet database and the project database only;
/// tests add queries and results.
pub fn base_engine() -> FakeEngine {
    FakeEngine::default()
        .with_snippet_db(&[Snippet::new("T.java", SNIPPET)], SNIPPET_DB)
        .with_database(PROJECT_DB, "/nonexistent/project")
}

/// A query that compiles and finds `rows` rows on the snippet and two on the project.
pub fn with_working_query(engine: FakeEngine, source: &str, snippet_rows: usize) -> FakeEngine {
    let snippet: Vec<(&str, u32, u32)> = (0..snippet_rows).map(|i| ("T.java", 3 + i as u32, 17)).collect();
    engine
        .with_query(source, vec![])
        .with_result(source, SNIPPET_DB, location_rows(&snippet))
        .with_result(
            source,
            PROJECT_DB,
            location_rows(&[("src/A.java", 10, 5), ("src/B.java", 4, 9)]),
        )
}

pub fn project_db(engine: &dyn Engine) -> DatabaseHandle {
    engine.open_database(Path::new(PROJECT_DB), Language::Java).unwrap()
}

pub fn count(report: &AnswerReport, stage: Stage) -> usize {
    report.transcript.iter().filter(|e| e.stage == stage).count()
}

pub fn assert_order(report: &AnswerReport) {
    if let Err(v) = check_stage_order(&report.transcript) {
        panic!("stage order violated: {v}\n{:#?}", report.transcript);
    }
}
