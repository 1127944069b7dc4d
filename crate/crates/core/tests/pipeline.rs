mod common;

use std::cell::RefCell;

use common::*;
use querysmith_core::engine::Snippet;
use querysmith_core::engine::{extract_symbols, CandidateQuery, Engine, QueryKind, QueryStatus};
use querysmith_core::llm::{FnTransport, LlmRequest, ScriptedTransport, Session, Transport, TransportError};
use querysmith_core::orchestrator::{
    answer_question, rerun_query, run_compile_repair, run_test_assist_loop, Failure, Outcome, Pipeline, PipelineBudget,
    Stage,
};
use querysmith_core::selftest::{SelfTestCase, SnippetDbCache};

fn run(
    engine: &dyn Engine,
    steps: Vec<querysmith_core::llm::ScriptStep>,
    budget: PipelineBudget,
) -> querysmith_core::orchestrator::AnswerReport {
    let index = index();
    let db = project_db(engine);
    let mut transport = ScriptedTransport::new(steps);
    let report = answer_question(&question(), &db, budget, engine, &index, &mut transport).unwrap();
    assert_order(&report);
    report
}

#[test]
fn first_try_query_needs_one_compile_and_one_selftest() {
    let good = query("good");
    let engine = with_working_query(base_engine(), &good, 1);
    let mut steps = preamble();
    steps.push(step(Stage::QueryGen, ql(&good)));
    let report = run(&engine, steps, PipelineBudget::default());

    assert_eq!(report.outcome, Outcome::Validated);
    assert_eq!(report.exit_code(), 0);
    assert_eq!(count(&report, Stage::Compile), 1);
    assert_eq!(count(&report, Stage::SelftestRun), 1);
    assert_eq!(count(&report, Stage::Repair), 0);
    assert_eq!(count(&report, Stage::AssistPropose), 0);
    assert_eq!(report.llm_calls, 4);
    let q = report.final_query.as_ref().unwrap();
    assert_eq!(q.status(), QueryStatus::Final);
    assert_eq!(q.source(), good);
    assert_eq!(report.table.as_ref().unwrap().rows().len(), 2);
}

#[test]
fn never_compiling_query_fails_after_the_repair_budget() {
    let budget = PipelineBudget::default();
    let rounds = budget.compile_repair_rounds as usize;
    let mut engine = base_engine();
    let mut steps = preamble();
    steps.push(step(Stage::QueryGen, ql(&query("bad0"))));
    engine = engine.with_query(&query("bad0"), vec![error("could not resolve type ArrayType")]);
    for i in 1..=rounds {
        let src = query(&format!("bad{i}"));
        engine = engine.with_query(&src, vec![error("could not resolve type ArrayType")]);
        steps.push(step(Stage::Repair, ql(&src)));
    }
    let report = run(&engine, steps, budget);

    assert_eq!(report.outcome, Outcome::Failed);
    assert_eq!(report.exit_code(), 1);
    assert_eq!(report.failure, Some(Failure::NeverCompiled));
    assert_eq!(count(&report, Stage::Repair), rounds);
    assert_eq!(count(&report, Stage::Compile), rounds + 1);
    assert!(report.final_query.is_none() && report.table.is_none());
}

#[test]
fn repair_lookups_cover_exactly_the_symbols_in_the_diagnostics() {
    let messages = [
        "could not resolve type ArrayType",
        "could not resolve predicate MethodCall::getReceiver",
    ];
    let draft = query("two-symbols");
    let fixed = query("fixed");
    let engine = base_engine()
        .with_query(&draft, messages.iter().map(|m| error(m)).collect())
        .with_query(&fixed, vec![]);
    let index = index();

    let seen = RefCell::new(Vec::new());
    let mut transport = FnTransport(|req: &LlmRequest<'_>| -> Result<String, TransportError> {
        seen.borrow_mut().push(req.sent.last().unwrap().content.clone());
        Ok(ql(&fixed))
    });
    let mut session = Session::new("s-test", querysmith_core::Language::Java, &mut transport);
    let outcome = run_compile_repair(
        &mut session,
        &engine,
        &index,
        CandidateQuery::draft(draft, QueryKind::Answer),
        5,
    )
    .unwrap();
    assert!(outcome.artifact.is_some());
    assert_eq!(outcome.query.status(), QueryStatus::Compiled);

    // Oracle: the symbols the diagnostics parser extracts from each message.
    let mut expected: Vec<String> = Vec::new();
    for m in messages {
        for s in extract_symbols(m) {
            if !expected.contains(&s) {
                expected.push(s);
            }
        }
    }
    assert_eq!(expected.len(), 2);
    assert_eq!(outcome.lookups, vec![expected]);
    let prompt = &seen.borrow()[0];
    assert!(prompt.contains("class Array:"), "docs for ArrayType resolve to Array");
    assert!(prompt.contains("class MethodCall:"));
}

#[test]
fn compiling_draft_needs_no_repair_prompt() {
    let good = query("good");
    let engine = base_engine().with_query(&good, vec![]);
    let mut transport =
        FnTransport(|_: &LlmRequest<'_>| -> Result<String, TransportError> { panic!("no prompt expected") });
    let mut session = Session::new("s-test", querysmith_core::Language::Java, &mut transport);
    let outcome = run_compile_repair(
        &mut session,
        &engine,
        &index(),
        CandidateQuery::draft(good, QueryKind::Answer),
        3,
    )
    .unwrap();
    assert_eq!(outcome.query.status(), QueryStatus::Compiled);
    assert!(outcome.lookups.is_empty());
    assert_eq!(session.calls(), 0);
    assert_eq!(session.transcript().count(Stage::Compile), 1);
}

#[test]
fn passing_query_leaves_the_assist_loop_untouched() {
    let good = query("good");
    let engine = with_working_query(base_engine(), &good, 1);
    let index = index();
    let pipeline = Pipeline {
        engine: &engine,
        index: &index,
        budget: PipelineBudget::default(),
    };
    let mut transport =
        FnTransport(|_: &LlmRequest<'_>| -> Result<String, TransportError> { panic!("no prompt expected") });
    let mut session = Session::new("s-test", querysmith_core::Language::Java, &mut transport);
    let mut candidate = CandidateQuery::draft(good.clone(), QueryKind::Answer);
    candidate.advance(QueryStatus::Compiled).unwrap();
    let artifact = match engine.compile(&candidate).unwrap() {
        querysmith_core::engine::CompileOutcome::Compiled(a) => a,
        other => panic!("{other:?}"),
    };
    let tests = vec![SelfTestCase::non_empty(Snippet::new("T.java", SNIPPET))];
    let out = run_test_assist_loop(
        &mut session,
        &pipeline,
        &question(),
        candidate,
        artifact,
        &tests,
        &mut SnippetDbCache::default(),
    )
    .unwrap();
    assert_eq!(out.assist_rounds_used, 0);
    assert!(out.verdict.passed);
    assert_eq!(out.query.source(), good);
    assert_eq!(out.query.status(), QueryStatus::SelfTestPassed);
}

#[test]
fn two_failed_assist_rounds_give_a_best_effort_answer() {
    let budget = PipelineBudget {
        assist_rounds: 2,
        ..PipelineBudget::default()
    };
    let empty = query("empty");
    let assistive = "import java\nfrom MethodCall c\nselect c.getQualifier().getType(), c.getArgument(0).getType()\n";
    let mut engine = with_working_query(base_engine(), &empty, 0)
        .with_query(assistive, vec![])
        .with_result(assistive, SNIPPET_DB, entity_rows(&[("int[]", "int[]")]));
    let mut steps = preamble();
    steps.push(step(Stage::QueryGen, ql(&empty)));
    for round in 1..=2 {
        let revised = query(&format!("still-empty-{round}"));
        engine = with_working_query(engine, &revised, 0);
        steps.push(step(Stage::AssistPropose, ql(assistive)));
        steps.push(step(Stage::QueryGen, ql(&revised)));
    }
    let report = run(&engine, steps, budget);

    assert_eq!(report.outcome, Outcome::BudgetExhaustedBestEffort);
    assert_eq!(report.exit_code(), 2);
    assert_eq!(count(&report, Stage::AssistPropose), 2);
    assert_eq!(count(&report, Stage::AssistRun), 2);
    assert_eq!(count(&report, Stage::SelftestRun), 3);
    let q = report.final_query.as_ref().unwrap();
    assert_eq!(q.status(), QueryStatus::Compiled);
    assert_eq!(q.source(), query("still-empty-2"));
    assert!(report.warnings.iter().any(|w| w.starts_with("BEST EFFORT")));
    assert!(report.table.is_some());
}

#[test]
fn uncompilable_assistive_query_consumes_its_round() {
    let budget = PipelineBudget {
        assist_rounds: 1,
        compile_repair_rounds: 1,
        ..PipelineBudget::default()
    };
    let empty = query("empty");
    let broken = query("broken-assist");
    let engine = with_working_query(base_engine(), &empty, 0).with_query(&broken, vec![error("syntax error")]);
    let mut steps = preamble();
    steps.push(step(Stage::QueryGen, ql(&empty)));
    steps.push(step(Stage::AssistPropose, ql(&broken)));
    steps.push(step(Stage::Repair, ql(&broken)));
    let report = run(&engine, steps, budget);
    assert_eq!(report.outcome, Outcome::BudgetExhaustedBestEffort);
    assert_eq!(count(&report, Stage::AssistRun), 0);
    assert!(report
        .warnings
        .iter()
        .any(|w| w.contains("assistive query did not compile")));
}

#[test]
fn unparseable_selftests_fail_the_run_after_one_reprompt() {
    let engine = base_engine();
    let steps = vec![
        step(Stage::SelftestGen, "I cannot help with that."),
        step(Stage::SelftestGen, "Still no code."),
    ];
    let report = run(&engine, steps, PipelineBudget::default());
    assert_eq!(report.outcome, Outcome::Failed);
    assert!(matches!(
        report.failure,
        Some(Failure::MalformedOutput {
            stage: Stage::SelftestGen,
            ..
        })
    ));
    assert_eq!(report.llm_calls, 2);
}

#[test]
fn garbage_keywords_only_cost_the_documentation() {
    let good = query("good");
    let engine = with_working_query(base_engine(), &good, 1);
    let steps = vec![
        step(Stage::SelftestGen, selftest_reply()),
        step(
            Stage::KeywordExtract,
            "well, this is a rather long sentence and not a keyword list at all",
        ),
        step(
            Stage::KeywordExtract,
            "still a much too long sentence that is not a keyword",
        ),
        step(Stage::QueryGen, ql(&good)),
    ];
    let report = run(&engine, steps, PipelineBudget::default());
    assert_eq!(report.outcome, Outcome::Validated);
    assert!(report.warnings.iter().any(|w| w.contains("keyword extraction skipped")));
    assert_eq!(count(&report, Stage::ConstructPropose), 0);
}

#[test]
fn unavailable_engine_fails_with_a_partial_transcript() {
    struct Down;
    impl Engine for Down {
        fn name(&self) -> &str {
            "down"
        }
        fn compile_source(
            &self,
            _: &str,
        ) -> Result<querysmith_core::engine::CompileOutcome, querysmith_core::engine::EngineError> {
            Err(querysmith_core::engine::EngineError::Unavailable("no toolchain".into()))
        }
        fn execute(
            &self,
            _: &querysmith_core::engine::CompiledQuery,
            _: &querysmith_core::engine::DatabaseHandle,
        ) -> Result<querysmith_core::engine::RawResultSet, querysmith_core::engine::EngineError> {
            Err(querysmith_core::engine::EngineError::Unavailable("no toolchain".into()))
        }
        fn build_snippet_database(
            &self,
            _: &[Snippet],
            _: querysmith_core::Language,
        ) -> Result<querysmith_core::engine::DatabaseHandle, querysmith_core::engine::EngineError> {
            Err(querysmith_core::engine::EngineError::Unavailable("no toolchain".into()))
        }
        fn open_database(
            &self,
            root: &std::path::Path,
            language: querysmith_core::Language,
        ) -> Result<querysmith_core::engine::DatabaseHandle, querysmith_core::engine::EngineError> {
            Ok(querysmith_core::engine::DatabaseHandle {
                id: "x".into(),
                root: root.to_path_buf(),
                language,
                origin: querysmith_core::engine::DbOrigin::Codebase,
            })
        }
    }
    let db = Down
        .open_database(std::path::Path::new("x"), querysmith_core::Language::Java)
        .unwrap();
    let mut transport = ScriptedTransport::new(preamble());
    let report = answer_question(
        &question(),
        &db,
        PipelineBudget::default(),
        &Down,
        &index(),
        &mut transport,
    )
    .unwrap();
    assert_eq!(report.outcome, Outcome::Failed);
    assert!(matches!(report.failure, Some(Failure::EngineUnavailable(_))));
    assert_eq!(count(&report, Stage::SelftestGen), 1);
}

#[test]
fn transport_failure_is_a_session_failure() {
    let engine = base_engine();
    let mut transport = FnTransport(|_: &LlmRequest<'_>| -> Result<String, TransportError> {
        Err(TransportError::Http {
            attempts: 3,
            message: "503".into(),
        })
    });
    let db = project_db(&engine);
    let report = answer_question(
        &question(),
        &db,
        PipelineBudget::default(),
        &engine,
        &index(),
        &mut transport,
    )
    .unwrap();
    assert_eq!(report.outcome, Outcome::Failed);
    assert!(matches!(report.failure, Some(Failure::SessionFailure(_))));
    assert_eq!(report.prompt_bytes_total, 0);
}

#[test]
fn one_session_id_for_every_call() {
    let good = query("good");
    let engine = with_working_query(base_engine(), &good, 1);
    let mut script = ScriptedTransport::new({
        let mut s = preamble();
        s.push(step(Stage::QueryGen, ql(&good)));
        s
    });
    let ids = RefCell::new(Vec::new());
    let mut transport = FnTransport(|req: &LlmRequest<'_>| {
        ids.borrow_mut().push(req.session_id.to_string());
        script.send(req)
    });
    let db = project_db(&engine);
    let report = answer_question(
        &question(),
        &db,
        PipelineBudget::default(),
        &engine,
        &index(),
        &mut transport,
    )
    .unwrap();
    let ids = ids.into_inner();
    assert_eq!(ids.len(), 4);
    assert!(ids.iter().all(|id| *id == report.session_id));
}

#[test]
fn validated_answers_are_reproduced_by_rerunning_the_query() {
    let good = query("good");
    let engine = with_working_query(base_engine(), &good, 1);
    let mut steps = preamble();
    steps.push(step(Stage::QueryGen, ql(&good)));
    let report = run(&engine, steps, PipelineBudget::default());
    let db = project_db(&engine);
    let table = rerun_query(&engine, report.final_query.as_ref().unwrap().source(), &question(), &db).unwrap();
    assert_eq!(Some(table), report.table);
}

#[test]
fn zero_budgets_are_rejected_up_front() {
    let engine = base_engine();
    let db = project_db(&engine);
    let budget = PipelineBudget {
        doc_refinement_rounds: 0,
        ..PipelineBudget::default()
    };
    let mut transport = ScriptedTransport::new(vec![]);
    assert!(answer_question(&question(), &db, budget, &engine, &index(), &mut transport).is_err());
}
