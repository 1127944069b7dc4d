//! `replay record` and `replay verify`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use querysmith_core::llm::Cassette;
use querysmith_core::orchestrator::{AnswerReport, Failure};
use querysmith_core::question::Question;

use crate::config::{Config, TransportMode};
use crate::runtime::{ensure_fresh, Runtime};

pub struct RecordOutput {
    pub report: AnswerReport,
    pub cassette: Cassette,
}

/// Runs the pipeline against the live model (or `script`) and writes every
/// exchange to `cassette`, which must not exist yet.
pub fn record(
    config: Config,
    db: &Path,
    question: &Question,
    cassette: &Path,
    script: Option<&Path>,
) -> Result<RecordOutput> {
    ensure_fresh(cassette)?;
    let mut config = config;
    config.transport.mode = TransportMode::Record;
    config.transport.cassette = Some(cassette.to_path_buf());
    let runtime = Runtime::new(config)?;
    let db = runtime.open_db(db, question)?;
    let wire = runtime.wire(TransportMode::Record, script)?;
    let synthesis = runtime.synthesize(question, &db, wire)?;
    let recorded = synthesis.recorded.expect("record mode yields a cassette");
    recorded.save_new(cassette)?;
    Ok(RecordOutput {
        report: synthesis.report,
        cassette: recorded,
    })
}

pub struct VerifyOutput {
    pub report: AnswerReport,
    pub records: usize,
    pub request_bytes: u64,
}

/// Replays `cassette` (or the configured one) and fails unless every
/// request matches and every record is consumed.
pub fn verify(config: Config, db: &Path, question: &Question, cassette: Option<PathBuf>) -> Result<VerifyOutput> {
    let mut config = config;
    config.transport.mode = TransportMode::Replay;
    if let Some(c) = cassette {
        config.transport.cassette = Some(c);
    }
    let Some(path) = config.transport.cassette.clone() else {
        bail!("no cassette given and transport.cassette is not configured");
    };
    let tape = Cassette::load(&path)?;
    let runtime = Runtime::new(config)?;
    let db = runtime.open_db(db, question)?;
    let wire = runtime.wire(TransportMode::Replay, None)?;
    let synthesis = runtime.synthesize(question, &db, wire)?;
    let report = synthesis.report;
    if let Some(Failure::SessionFailure(reason)) = &report.failure {
        bail!("cassette {} does not replay: {reason}", path.display());
    }
    if let Some(n) = synthesis.unused_records.filter(|&n| n > 0) {
        bail!("cassette {} has {n} unused record(s)", path.display());
    }
    Ok(VerifyOutput {
        report,
        records: tape.records.len(),
        request_bytes: tape.request_bytes(),
    })
}
