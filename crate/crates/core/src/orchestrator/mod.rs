//! The pipeline: self-tests and documentation first, then generate,
//! compile and repair, test and debug with assistive queries, and finally
//! run the validated query over the codebase.

mod transcript;

pub use transcript::{
    check_stage_order, export_transcript, parse_transcript, OrderViolation, PipelineEvent, Stage, Transcript,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::docs_index::{docs_for_diagnostics, refine_constructs, ConstructIndex};
use crate::engine::{
    CandidateQuery, CompileOutcome, CompiledQuery, DatabaseHandle, DbOrigin, Engine, EngineError, QueryKind,
    QueryStatus, RawResultSet,
};
use crate::llm::{self, GatewayError, Session, Transport};
use crate::question::Question;
use crate::results::{conform, ResultTable};
use crate::selftest::{
    self, SelfTestCase, SelfTestError, SelfTestVerdict, SnippetDbCache, SnippetRepairError, MAX_SELF_TESTS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineBudget {
    pub doc_refinement_rounds: u32,
    pub compile_repair_rounds: u32,
    pub assist_rounds: u32,
    pub snippet_repair_rounds: u32,
}

impl Default for PipelineBudget {
    fn default() -> Self {
        Self {
            doc_refinement_rounds: 3,
            compile_repair_rounds: 5,
            assist_rounds: 3,
            snippet_repair_rounds: 2,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PipelineError {
    #[error("budget `{0}` must be at least 1")]
    ZeroBudget(&'static str),
    #[error("database {db} is for {db_language}, the question is about {language}")]
    LanguageMismatch {
        db: String,
        db_language: String,
        language: String,
    },
}

impl PipelineBudget {
    pub fn validate(&self) -> Result<(), PipelineError> {
        for (name, value) in [
            ("doc_refinement_rounds", self.doc_refinement_rounds),
            ("compile_repair_rounds", self.compile_repair_rounds),
            ("assist_rounds", self.assist_rounds),
            ("snippet_repair_rounds", self.snippet_repair_rounds),
        ] {
            if value == 0 {
                return Err(PipelineError::ZeroBudget(name));
            }
        }
        Ok(())
    }

    /// Upper bound on model calls in one run. Every prompt may be followed
    /// by one reprompt, hence the factor 2:
    /// self-test generation, keywords and the first query (3); snippet
    /// repairs for up to [`MAX_SELF_TESTS`] cases; construct rounds;
    /// answer repairs; and per assist round a proposal, its repairs, the
    /// feedback prompt and the revision's repairs.
    pub fn max_llm_calls(&self) -> u64 {
        let (d, c, a, s) = (
            self.doc_refinement_rounds as u64,
            self.compile_repair_rounds as u64,
            self.assist_rounds as u64,
            self.snippet_repair_rounds as u64,
        );
        2 * (3 + MAX_SELF_TESTS as u64 * s + d + c + a * (2 + 2 * c))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Validated,
    BudgetExhaustedBestEffort,
    Failed,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Validated => 0,
            Outcome::BudgetExhaustedBestEffort => 2,
            Outcome::Failed => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Validated => "validated",
            Outcome::BudgetExhaustedBestEffort => "budget_exhausted_best_effort",
            Outcome::Failed => "failed",
        }
    }
}

/// Why a run ended without a usable answer.
#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum Failure {
    #[error("query engine unavailable: {0}")]
    EngineUnavailable(String),
    #[error("LLM session failed: {0}")]
    SessionFailure(String),
    #[error("unusable model output at {stage}: {reason}")]
    MalformedOutput { stage: Stage, reason: String },
    #[error("no self-test snippet could be built")]
    NoCompilableSelfTest,
    #[error("no compiling query within the repair budget")]
    NeverCompiled,
    #[error("engine error: {0}")]
    Engine(String),
    #[error("result does not fit the schema: {0}")]
    Schema(String),
}

impl From<GatewayError> for Failure {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::Malformed { stage, reason } => Failure::MalformedOutput { stage, reason },
            GatewayError::Transport(t) => Failure::SessionFailure(t.to_string()),
            GatewayError::Template(t) => Failure::SessionFailure(t.to_string()),
        }
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Unavailable(m) => Failure::EngineUnavailable(m),
            other => Failure::Engine(other.to_string()),
        }
    }
}

impl From<SelfTestError> for Failure {
    fn from(e: SelfTestError) -> Self {
        match e {
            SelfTestError::Engine { source, .. } => source.into(),
            other => Failure::Engine(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnswerReport {
    pub session_id: String,
    pub outcome: Outcome,
    /// The reported query: validated, or the last compiled one on best effort.
    pub final_query: Option<CandidateQuery>,
    pub table: Option<ResultTable>,
    pub transcript: Vec<PipelineEvent>,
    pub prompt_bytes_total: u64,
    pub llm_calls: u64,
    pub warnings: Vec<String>,
    pub failure: Option<Failure>,
}

impl AnswerReport {
    pub fn exit_code(&self) -> i32 {
        self.outcome.exit_code()
    }
}

/// A compile-repair result. `artifact` is set iff the query compiled.
#[derive(Debug, Clone, PartialEq)]
pub struct RepairOutcome {
    pub query: CandidateQuery,
    pub artifact: Option<CompiledQuery>,
    /// Symbols whose documentation was looked up, per repair prompt.
    pub lookups: Vec<Vec<String>>,
}

/// Result of the test-and-assist loop.
#[derive(Debug, Clone, PartialEq)]
pub struct AssistOutcome {
    pub query: CandidateQuery,
    pub artifact: CompiledQuery,
    pub verdict: SelfTestVerdict,
    pub assist_rounds_used: u32,
    pub warnings: Vec<String>,
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    SelfTest(#[from] SelfTestError),
}

impl From<StageError> for Failure {
    fn from(e: StageError) -> Self {
        match e {
            StageError::Gateway(g) => g.into(),
            StageError::Engine(g) => g.into(),
            StageError::SelfTest(g) => g.into(),
        }
    }
}

/// Shared, read-only parts of a run.
#[derive(Clone, Copy)]
pub struct Pipeline<'a> {
    pub engine: &'a dyn Engine,
    pub index: &'a ConstructIndex,
    pub budget: PipelineBudget,
}

/// Runs compile → docs lookup → repair until the query compiles or
/// `rounds` repair prompts have been spent. A model reply that cannot be
/// parsed ends the loop early with the query still in draft.
pub fn run_compile_repair(
    session: &mut Session<'_>,
    engine: &dyn Engine,
    index: &ConstructIndex,
    candidate: CandidateQuery,
    rounds: u32,
) -> Result<RepairOutcome, StageError> {
    let mut query = candidate;
    let mut lookups = Vec::new();
    let mut repairs = 0;
    loop {
        let outcome = engine.compile(&query)?;
        let diags = match outcome {
            CompileOutcome::Compiled(artifact) => {
                session
                    .transcript_mut()
                    .record(Stage::Compile, query.digest(), Some(true));
                query.advance(QueryStatus::Compiled).expect("drafts advance");
                return Ok(RepairOutcome {
                    query,
                    artifact: Some(artifact),
                    lookups,
                });
            }
            CompileOutcome::Failed(diags) => diags,
        };
        session
            .transcript_mut()
            .record(Stage::Compile, query.digest(), Some(false));
        query
            .record_failure(diags.clone())
            .expect("only drafts fail to compile");
        if repairs == rounds {
            break;
        }
        repairs += 1;
        let docs = docs_for_diagnostics(index, &diags);
        lookups.push(
            diags
                .iter()
                .flat_map(|d| d.symbols.iter().cloned())
                .fold(Vec::new(), |mut acc, s| {
                    if !acc.contains(&s) {
                        acc.push(s);
                    }
                    acc
                }),
        );
        match llm::repair_query(session, &query, &diags, &docs) {
            Ok(revised) => query = revised,
            Err(GatewayError::Malformed { .. }) => break,
            Err(e) => return Err(e.into()),
        }
    }
    Ok(RepairOutcome {
        query,
        artifact: None,
        lookups,
    })
}

/// Self-tests `candidate`; while the verdict fails and rounds remain, asks
/// for an assistive query, runs it on the snippet databases, feeds its
/// output back and compiles and tests the revision.
pub fn run_test_assist_loop(
    session: &mut Session<'_>,
    pipeline: &Pipeline<'_>,
    question: &Question,
    candidate: CandidateQuery,
    artifact: CompiledQuery,
    tests: &[SelfTestCase],
    cache: &mut SnippetDbCache,
) -> Result<AssistOutcome, StageError> {
    let language = question.language();
    let rounds = pipeline.budget.assist_rounds;
    let mini_budget = pipeline.budget.compile_repair_rounds;
    let mut warnings = Vec::new();
    let mut query = candidate;
    let mut artifact = artifact;
    let mut verdict = run_selftests(session, pipeline.engine, &query, &artifact, tests, cache, language)?;
    let mut used = 0;
    while !verdict.passed && used < rounds {
        used += 1;
        let assistive = match llm::propose_assistive_query(session, &query, &verdict, tests) {
            Ok(a) => a,
            Err(GatewayError::Malformed { reason, .. }) => {
                warnings.push(format!("assist round {used}: no usable assistive query ({reason})"));
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let compiled = run_compile_repair(session, pipeline.engine, pipeline.index, assistive, mini_budget)?;
        let Some(assist_artifact) = compiled.artifact else {
            warnings.push(format!("assist round {used}: assistive query did not compile"));
            continue;
        };
        let table = match run_on_snippets(pipeline.engine, &assist_artifact, tests, cache, language) {
            Ok(t) => {
                session
                    .transcript_mut()
                    .record(Stage::AssistRun, format!("{} rows", t.len()), Some(true));
                t
            }
            Err(e) => {
                session
                    .transcript_mut()
                    .record(Stage::AssistRun, compiled.query.digest(), Some(false));
                if let SelfTestError::Engine {
                    source: EngineError::Unavailable(_),
                    ..
                } = e
                {
                    return Err(e.into());
                }
                warnings.push(format!("assist round {used}: assistive query failed to run: {e}"));
                continue;
            }
        };
        let revised = match llm::feed_assistive_results(session, question, &compiled.query, &table) {
            Ok(r) => r,
            Err(GatewayError::Malformed { reason, .. }) => {
                warnings.push(format!("assist round {used}: no usable revision ({reason})"));
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let repaired = run_compile_repair(session, pipeline.engine, pipeline.index, revised, mini_budget)?;
        let Some(revised_artifact) = repaired.artifact else {
            warnings.push(format!("assist round {used}: revised query did not compile"));
            continue;
        };
        query = repaired.query;
        artifact = revised_artifact;
        verdict = run_selftests(session, pipeline.engine, &query, &artifact, tests, cache, language)?;
    }
    if verdict.passed {
        query
            .advance(QueryStatus::SelfTestPassed)
            .expect("compiled queries advance");
    }
    Ok(AssistOutcome {
        query,
        artifact,
        verdict,
        assist_rounds_used: used,
        warnings,
    })
}

fn run_selftests(
    session: &mut Session<'_>,
    engine: &dyn Engine,
    query: &CandidateQuery,
    artifact: &CompiledQuery,
    tests: &[SelfTestCase],
    cache: &mut SnippetDbCache,
    language: crate::question::Language,
) -> Result<SelfTestVerdict, SelfTestError> {
    let verdict = selftest::evaluate(engine, artifact, tests, cache, language)?;
    let rows: Vec<String> = verdict.per_case.iter().map(|c| c.observed_rows.to_string()).collect();
    session.transcript_mut().record(
        Stage::SelftestRun,
        format!("{} rows={}", query.digest(), rows.join(",")),
        Some(verdict.passed),
    );
    Ok(verdict)
}

/// Runs a query on every case's snippet database and concatenates rows.
fn run_on_snippets(
    engine: &dyn Engine,
    artifact: &CompiledQuery,
    tests: &[SelfTestCase],
    cache: &mut SnippetDbCache,
    language: crate::question::Language,
) -> Result<RawResultSet, SelfTestError> {
    let mut combined: Option<RawResultSet> = None;
    for (index, case) in tests.iter().enumerate() {
        let db = cache
            .get_or_build(engine, std::slice::from_ref(case.snippet()), language)
            .map_err(|source| SelfTestError::Engine { index, source })?;
        let table = engine
            .execute(artifact, &db)
            .map_err(|source| SelfTestError::Engine { index, source })?;
        combined = Some(match combined {
            None => table,
            Some(acc) if acc.columns() == table.columns() => {
                let mut rows = acc.rows().to_vec();
                rows.extend(table.rows().iter().cloned());
                RawResultSet::new(acc.columns().to_vec(), rows).expect("same columns")
            }
            Some(acc) => acc,
        });
    }
    Ok(combined.expect("tests are non-empty"))
}

struct Run<'p, 's, 't> {
    pipeline: &'p Pipeline<'p>,
    session: &'s mut Session<'t>,
    warnings: Vec<String>,
}

struct Answer {
    outcome: Outcome,
    query: CandidateQuery,
    table: ResultTable,
}

impl Run<'_, '_, '_> {
    fn execute(&mut self, question: &Question, db: &DatabaseHandle) -> Result<Answer, Failure> {
        let budget = self.pipeline.budget;
        let engine = self.pipeline.engine;
        let language = question.language();

        let generated = llm::generate_selftests(self.session, question)?;
        let mut cache = SnippetDbCache::default();
        let mut tests = Vec::new();
        for case in generated {
            match cache.get_or_build(engine, std::slice::from_ref(case.snippet()), language) {
                Ok(_) => tests.push(case),
                Err(EngineError::SnippetBuild { diagnostics }) => {
                    match selftest::repair_snippet(
                        self.session,
                        engine,
                        &mut cache,
                        &case,
                        diagnostics,
                        budget.snippet_repair_rounds,
                    ) {
                        Ok((repaired, _)) => tests.push(repaired),
                        Err(SnippetRepairError::SelfTest(SelfTestError::Unrepairable { filename, .. })) => {
                            self.warnings
                                .push(format!("dropped self-test {filename}: it does not build"));
                        }
                        Err(SnippetRepairError::Gateway(GatewayError::Malformed { reason, .. })) => {
                            self.warnings
                                .push(format!("dropped self-test {}: {reason}", case.snippet().filename));
                        }
                        Err(SnippetRepairError::Gateway(e)) => return Err(e.into()),
                        Err(SnippetRepairError::SelfTest(e)) => return Err(e.into()),
                    }
                }
                Err(e) => return Err(e.into()),
            }
        }
        if tests.is_empty() {
            return Err(Failure::NoCompilableSelfTest);
        }

        let docs = match llm::extract_keywords(self.session, question) {
            Ok(keywords) => {
                match refine_constructs(
                    self.session,
                    self.pipeline.index,
                    &keywords,
                    budget.doc_refinement_rounds,
                ) {
                    Ok(refinement) => refinement.docs,
                    Err(GatewayError::Malformed { reason, .. }) => {
                        self.warnings.push(format!("construct lookup skipped: {reason}"));
                        Vec::new()
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            Err(GatewayError::Malformed { reason, .. }) => {
                self.warnings.push(format!("keyword extraction skipped: {reason}"));
                Vec::new()
            }
            Err(e) => return Err(e.into()),
        };

        let draft = llm::generate_query(self.session, question, &docs, &tests)?;
        let compiled = run_compile_repair(
            self.session,
            engine,
            self.pipeline.index,
            draft,
            budget.compile_repair_rounds,
        )?;
        let Some(artifact) = compiled.artifact else {
            return Err(Failure::NeverCompiled);
        };
        let assisted = run_test_assist_loop(
            self.session,
            self.pipeline,
            question,
            compiled.query,
            artifact,
            &tests,
            &mut cache,
        )?;
        self.warnings.extend(assisted.warnings);

        let mut query = assisted.query;
        let raw = match engine.execute(&assisted.artifact, db) {
            Ok(raw) => {
                self.session.transcript_mut().record(
                    Stage::FinalRun,
                    format!("{} rows={}", query.digest(), raw.len()),
                    Some(true),
                );
                raw
            }
            Err(e) => {
                self.session
                    .transcript_mut()
                    .record(Stage::FinalRun, query.digest(), Some(false));
                return Err(e.into());
            }
        };
        let conformed = conform(&raw, question.schema()).map_err(|e| Failure::Schema(e.to_string()))?;
        if let Some(w) = conformed.warning {
            self.warnings.push(w.to_string());
        }
        let outcome = if assisted.verdict.passed {
            query.advance(QueryStatus::Final).expect("validated queries advance");
            Outcome::Validated
        } else {
            self.warnings.push(format!(
                "BEST EFFORT: the query still fails its self-tests after {} assist round(s); results may be incomplete or wrong",
                assisted.assist_rounds_used
            ));
            Outcome::BudgetExhaustedBestEffort
        };
        Ok(Answer {
            outcome,
            query,
            table: conformed.table,
        })
    }
}

impl Pipeline<'_> {
    /// Answers `question` over `db` with one model session. Runtime
    /// failures end in an `Outcome::Failed` report carrying the partial
    /// transcript; only invalid inputs are errors.
    pub fn answer(
        &self,
        question: &Question,
        db: &DatabaseHandle,
        transport: &mut dyn Transport,
    ) -> Result<AnswerReport, PipelineError> {
        self.budget.validate()?;
        if db.language != question.language() {
            return Err(PipelineError::LanguageMismatch {
                db: db.id.clone(),
                db_language: db.language.as_str().into(),
                language: question.language().as_str().into(),
            });
        }
        if db.origin != DbOrigin::Codebase {
            tracing::warn!(db = %db.id, "answering over a snippet database");
        }
        let mut session = Session::new(Session::id_for(question), question.language(), transport);
        let mut run = Run {
            pipeline: self,
            session: &mut session,
            warnings: Vec::new(),
        };
        let result = run.execute(question, db);
        let warnings = run.warnings;
        let (outcome, final_query, table, failure) = match result {
            Ok(a) => (a.outcome, Some(a.query), Some(a.table), None),
            Err(f) => (Outcome::Failed, None, None, Some(f)),
        };
        Ok(AnswerReport {
            session_id: session.id().to_string(),
            outcome,
            final_query,
            table,
            prompt_bytes_total: session.bytes_sent(),
            llm_calls: session.calls(),
            warnings,
            failure,
            transcript: session.into_transcript().into_events(),
        })
    }
}

pub fn answer_question(
    question: &Question,
    db: &DatabaseHandle,
    budget: PipelineBudget,
    engine: &dyn Engine,
    index: &ConstructIndex,
    transport: &mut dyn Transport,
) -> Result<AnswerReport, PipelineError> {
    Pipeline { engine, index, budget }.answer(question, db, transport)
}

/// Compiles, runs and conforms `source` directly, as done for cached
/// queries and for re-checking a reported answer.
pub fn rerun_query(
    engine: &dyn Engine,
    source: &str,
    question: &Question,
    db: &DatabaseHandle,
) -> Result<ResultTable, Failure> {
    let query = CandidateQuery::draft(source, QueryKind::Answer);
    let artifact = match engine.compile(&query)? {
        CompileOutcome::Compiled(a) => a,
        CompileOutcome::Failed(diags) => {
            let first = diags.first().map(|d| d.to_string()).unwrap_or_default();
            return Err(Failure::Engine(format!("query no longer compiles: {first}")));
        }
    };
    let raw = engine.execute(&artifact, db)?;
    conform(&raw, question.schema())
        .map(|c| c.table)
        .map_err(|e| Failure::Schema(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_defaults_and_validation() {
        let b = PipelineBudget::default();
        assert_eq!(
            (
                b.doc_refinement_rounds,
                b.compile_repair_rounds,
                b.assist_rounds,
                b.snippet_repair_rounds
            ),
            (3, 5, 3, 2)
        );
        b.validate().unwrap();
        let zero = PipelineBudget { assist_rounds: 0, ..b };
        assert_eq!(zero.validate(), Err(PipelineError::ZeroBudget("assist_rounds")));
        assert_eq!(b.max_llm_calls(), 2 * (3 + 10 + 3 + 5 + 3 * 12));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(Outcome::Validated.exit_code(), 0);
        assert_eq!(Outcome::BudgetExhaustedBestEffort.exit_code(), 2);
        assert_eq!(Outcome::Failed.exit_code(), 1);
    }
}
