//! The array-equality walkthrough, driven from the shipped fixtures.

mod common;

use std::fs;
use std::path::PathBuf;

use common::{assert_order, count, index};
use querysmith_core::docs_index::{refine_constructs, validate_constructs};
use querysmith_core::engine::{Engine, FakeEngine, QueryStatus};
use querysmith_core::llm::{Cassette, RecordTransport, ReplayTransport, ScriptedTransport, Session};
use querysmith_core::orchestrator::{answer_question, rerun_query, AnswerReport, Outcome, PipelineBudget, Stage};
use querysmith_core::question::{Language, OutputSchema, Question};

fn fixture(name: &str) -> PathBuf {
    common::repo_root().join("fixtures/array-equals").join(name)
}

fn question() -> Question {
    let goal = fs::read_to_string(fixture("question.txt")).unwrap();
    let schema = OutputSchema::parse_lines(&fs::read_to_string(fixture("schema.txt")).unwrap()).unwrap();
    Question::new(goal, schema, Language::Java).unwrap()
}

fn engine() -> FakeEngine {
    FakeEngine::load(&fixture("engine.json")).unwrap()
}

fn answer(engine: &FakeEngine, transport: &mut dyn querysmith_core::llm::Transport) -> AnswerReport {
    let db = engine.open_database(&fixture("project"), Language::Java).unwrap();
    answer_question(&question(), &db, PipelineBudget::default(), engine, &index(), transport).unwrap()
}

fn shipped_query(name: &str) -> String {
    fs::read_to_string(fixture(&format!("queries/{name}.ql"))).unwrap()
}

#[test]
fn scripted_walkthrough_validates_with_three_rows() {
    let engine = engine();
    let mut script = ScriptedTransport::load(&fixture("script.json")).unwrap();
    let report = answer(&engine, &mut script);
    assert_eq!(script.remaining(), 0);
    assert_order(&report);
    assert_eq!(report.outcome, Outcome::Validated, "{:?}", report.failure);

    let compiles: Vec<_> = report.transcript.iter().filter(|e| e.stage == Stage::Compile).collect();
    assert_eq!(compiles.len(), 4);
    assert_eq!(compiles[0].ok, Some(false), "first draft does not compile");
    let selftests: Vec<_> = report
        .transcript
        .iter()
        .filter(|e| e.stage == Stage::SelftestRun)
        .collect();
    assert_eq!(selftests.len(), 2);
    assert!(selftests[0].digest.ends_with("rows=0"));
    assert!(selftests[1].digest.ends_with("rows=3"));
    assert_eq!(count(&report, Stage::AssistPropose), 1);
    assert_eq!(count(&report, Stage::AssistRun), 1);

    let q = report.final_query.as_ref().unwrap();
    assert_eq!(q.status(), QueryStatus::Final);
    assert_eq!(q.source().trim_end(), shipped_query("final").trim_end());
    assert_eq!(report.table.as_ref().unwrap().rows().len(), 3);
}

#[test]
fn first_construct_round_partitions_as_expected() {
    let proposed: Vec<String> = [
        "MethodCall",
        "MethodCall::getReceiver",
        "MethodCall::getArgument",
        "ArrayType",
        "ArrayType::getElementType",
    ]
    .map(String::from)
    .to_vec();
    let v = validate_constructs(&index(), &proposed);
    assert_eq!(v.valid, ["MethodCall", "MethodCall::getArgument"]);
    assert_eq!(
        v.invalid,
        ["MethodCall::getReceiver", "ArrayType", "ArrayType::getElementType"]
    );
}

#[test]
fn construct_refinement_converges_in_two_rounds() {
    let mut cassette = ReplayTransport::load(&fixture("cassette.jsonl")).unwrap();
    // Replay the first two exchanges so the session reaches the construct proposals.
    let tape = Cassette::load(&fixture("cassette.jsonl")).unwrap();
    assert_eq!(tape.records[2].stage, Stage::ConstructPropose);
    assert_eq!(tape.records[3].stage, Stage::ConstructPropose);

    let q = question();
    let mut session = Session::new(Session::id_for(&q), Language::Java, &mut cassette);
    querysmith_core::llm::generate_selftests(&mut session, &q).unwrap();
    let keywords = querysmith_core::llm::extract_keywords(&mut session, &q).unwrap();
    let refinement = refine_constructs(&mut session, &index(), &keywords, 3).unwrap();
    assert_eq!(refinement.rounds.len(), 2);
    assert_eq!(refinement.rounds[0].invalid.len(), 3);
    assert!(refinement.rounds[1].invalid.is_empty());
    assert_eq!(refinement.docs.len(), refinement.rounds[1].valid.len());
}

#[test]
fn cassette_replay_matches_the_scripted_run() {
    let engine = engine();
    let mut recorder = RecordTransport::new(ScriptedTransport::load(&fixture("script.json")).unwrap());
    let recorded = answer(&engine, &mut recorder);
    let fresh = recorder.into_cassette();

    let shipped = Cassette::load(&fixture("cassette.jsonl")).unwrap();
    assert_eq!(fresh, shipped, "shipped cassette is stale; re-record it");

    let mut replay = ReplayTransport::new(shipped);
    let replayed = answer(&engine, &mut replay);
    assert_eq!(replay.remaining(), 0);
    assert_eq!(recorded, replayed);
}

#[test]
fn prompt_bytes_equal_the_cassette_payload() {
    let engine = engine();
    let tape = Cassette::load(&fixture("cassette.jsonl")).unwrap();
    let independent: u64 = tape
        .records
        .iter()
        .flat_map(|r| r.sent.iter())
        .map(|m| m.content.len() as u64)
        .sum();
    let mut replay = ReplayTransport::new(tape);
    let report = answer(&engine, &mut replay);
    assert_eq!(report.prompt_bytes_total, independent);
    assert_eq!(report.llm_calls, 8);
}

#[test]
fn final_query_reproduces_the_reported_table() {
    let engine = engine();
    let mut replay = ReplayTransport::load(&fixture("cassette.jsonl")).unwrap();
    let report = answer(&engine, &mut replay);
    let db = engine.open_database(&fixture("project"), Language::Java).unwrap();
    let again = rerun_query(&engine, report.final_query.unwrap().source(), &question(), &db).unwrap();
    assert_eq!(Some(again), report.table);
}
