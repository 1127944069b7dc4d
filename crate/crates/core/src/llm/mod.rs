//! Prompting the model for each pipeline stage, over a pluggable transport
//! (live HTTP, scripted, recording, or cassette replay).

mod cassette;
mod live;
pub mod parse;
pub mod prompts;
mod session;
mod transport;

pub use cassette::{Cassette, CassetteRecord, RecordTransport, ReplayTransport, CASSETTE_VERSION};
pub use live::LiveTransport;
pub use prompts::{PromptTemplate, TemplateError};
pub use session::Session;
pub use transport::{
    request_digest, CountingTransport, FnTransport, LlmRequest, Message, Role, ScriptStep, ScriptedTransport,
    Transport, TransportError,
};

use thiserror::Error;

use crate::docs_index::ConstructDoc;
use crate::engine::{CandidateQuery, Diagnostic, QueryKind, RawResultSet, Snippet};
use crate::orchestrator::Stage;
use crate::question::Question;
use crate::selftest::{SelfTestCase, SelfTestVerdict};

/// Rows of assistive-query output included in the feedback prompt.
pub const ASSIST_FEEDBACK_ROWS: usize = 50;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GatewayError {
    #[error("unusable model output at {stage}: {reason}")]
    Malformed { stage: Stage, reason: String },
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// Sends `prompt` and parses the reply; an unparseable reply gets exactly
/// one reprompt before the stage gives up.
fn ask_parsed<T>(
    session: &mut Session<'_>,
    stage: Stage,
    prompt: &str,
    parse: impl Fn(&str) -> Result<T, String>,
) -> Result<T, GatewayError> {
    let reply = session.ask(stage, prompt)?;
    let reason = match parse(&reply) {
        Ok(v) => return Ok(v),
        Err(reason) => reason,
    };
    let retry = prompts::REPROMPT.render(&[("reason", &reason)])?;
    let reply = session.ask(stage, &retry)?;
    parse(&reply).map_err(|reason| GatewayError::Malformed { stage, reason })
}

fn schema_lines(q: &Question) -> String {
    q.schema()
        .columns()
        .iter()
        .enumerate()
        .map(|(i, c)| format!("{}. {}: {}", i + 1, c.name, c.description))
        .collect::<Vec<_>>()
        .join("\n")
}

fn docs_text(docs: &[ConstructDoc]) -> String {
    if docs.is_empty() {
        return "(none)".into();
    }
    docs.iter().map(|d| format!("- {d}")).collect::<Vec<_>>().join("\n")
}

fn diagnostics_text(diags: &[Diagnostic]) -> String {
    if diags.is_empty() {
        return "(no diagnostics reported)".into();
    }
    diags.iter().map(|d| format!("- {d}")).collect::<Vec<_>>().join("\n")
}

fn tests_text(tests: &[SelfTestCase], lang: &str) -> String {
    tests
        .iter()
        .map(|t| {
            format!(
                "{}:\n```{lang}\n{}\n```",
                t.snippet().filename,
                t.snippet().source.trim_end()
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub fn generate_selftests(session: &mut Session<'_>, q: &Question) -> Result<Vec<SelfTestCase>, GatewayError> {
    let lang = q.language();
    let prompt = prompts::SELFTEST_GEN.render(&[
        ("language", lang.as_str()),
        ("goal", q.goal()),
        ("schema", &schema_lines(q)),
    ])?;
    ask_parsed(session, Stage::SelftestGen, &prompt, |r| {
        parse::parse_selftests(r, lang)
    })
}

/// A corrected source for a snippet that failed to build.
pub fn repair_snippet_source(
    session: &mut Session<'_>,
    snippet: &Snippet,
    diags: &[Diagnostic],
) -> Result<String, GatewayError> {
    let prompt = prompts::SNIPPET_REPAIR.render(&[
        ("filename", &snippet.filename),
        ("diagnostics", &diagnostics_text(diags)),
        ("language", session.language().as_str()),
        ("source", snippet.source.trim_end()),
    ])?;
    ask_parsed(session, Stage::SelftestGen, &prompt, parse::parse_program)
}

pub fn extract_keywords(session: &mut Session<'_>, q: &Question) -> Result<Vec<String>, GatewayError> {
    let prompt = prompts::KEYWORD_EXTRACT.render(&[("goal", q.goal())])?;
    ask_parsed(session, Stage::KeywordExtract, &prompt, parse::parse_keywords)
}

/// Asks for library constructs; `feedback` lists names from the previous
/// round that do not exist.
pub fn propose_constructs(
    session: &mut Session<'_>,
    keywords: &[String],
    feedback: &[String],
) -> Result<Vec<String>, GatewayError> {
    let keywords = keywords.join(", ");
    let language = session.language().as_str();
    let prompt = if feedback.is_empty() {
        prompts::CONSTRUCT_PROPOSE.render(&[("keywords", &keywords), ("language", language)])?
    } else {
        prompts::CONSTRUCT_RETRY.render(&[
            ("language", language),
            ("invalid", &feedback.join(", ")),
            ("keywords", &keywords),
        ])?
    };
    ask_parsed(session, Stage::ConstructPropose, &prompt, parse::parse_constructs)
}

pub fn generate_query(
    session: &mut Session<'_>,
    q: &Question,
    docs: &[ConstructDoc],
    tests: &[SelfTestCase],
) -> Result<CandidateQuery, GatewayError> {
    let prompt = prompts::QUERY_GEN.render(&[
        ("goal", q.goal()),
        ("schema", &schema_lines(q)),
        ("tests", &tests_text(tests, q.language().as_str())),
        ("docs", &docs_text(docs)),
    ])?;
    let source = ask_parsed(session, Stage::QueryGen, &prompt, parse::parse_query)?;
    Ok(CandidateQuery::draft(source, QueryKind::Answer))
}

pub fn repair_query(
    session: &mut Session<'_>,
    c: &CandidateQuery,
    diags: &[Diagnostic],
    docs: &[ConstructDoc],
) -> Result<CandidateQuery, GatewayError> {
    let prompt = prompts::REPAIR.render(&[
        ("query", c.source().trim_end()),
        ("diagnostics", &diagnostics_text(diags)),
        ("docs", &docs_text(docs)),
    ])?;
    let source = ask_parsed(session, Stage::Repair, &prompt, parse::parse_query)?;
    Ok(CandidateQuery::draft(source, c.kind()))
}

pub fn propose_assistive_query(
    session: &mut Session<'_>,
    c: &CandidateQuery,
    verdict: &SelfTestVerdict,
    tests: &[SelfTestCase],
) -> Result<CandidateQuery, GatewayError> {
    let prompt =
        prompts::ASSIST_PROPOSE.render(&[("query", c.source().trim_end()), ("verdict", &verdict.describe(tests))])?;
    let source = ask_parsed(session, Stage::AssistPropose, &prompt, parse::parse_query)?;
    Ok(CandidateQuery::draft(source, QueryKind::Assistive))
}

/// Feeds the assistive query's output (first [`ASSIST_FEEDBACK_ROWS`]
/// rows) back and asks for a revised answer query.
pub fn feed_assistive_results(
    session: &mut Session<'_>,
    q: &Question,
    assistive: &CandidateQuery,
    table: &RawResultSet,
) -> Result<CandidateQuery, GatewayError> {
    let results = if table.is_empty() {
        "(no rows)".to_string()
    } else {
        table.render_plain(ASSIST_FEEDBACK_ROWS)
    };
    let prompt = prompts::ASSIST_FEEDBACK.render(&[
        ("assistive_query", assistive.source().trim_end()),
        ("results", &results),
        ("goal", q.goal()),
        ("schema", &schema_lines(q)),
    ])?;
    let source = ask_parsed(session, Stage::QueryGen, &prompt, parse::parse_query)?;
    Ok(CandidateQuery::draft(source, QueryKind::Answer))
}
