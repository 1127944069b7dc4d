use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use querysmith_core::orchestrator::{export_transcript, rerun_query, Outcome, PipelineEvent};
use querysmith_core::question::Question;
use querysmith_core::results::{export, ExportFormat, ResultTable};
use serde::Serialize;

use crate::cache::QueryCache;
use crate::config::{Config, TransportMode};
use crate::runtime::Runtime;

#[derive(Debug, Clone)]
pub struct AskOptions {
    pub config: Config,
    pub db: PathBuf,
    pub question: Question,
    /// Overrides `transport.mode` from the config.
    pub mode: Option<TransportMode>,
    pub no_cache: bool,
    pub export: Option<PathBuf>,
    /// Overrides `cache.dir` from the config.
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Synthesized,
    Cache,
}

#[derive(Debug, Clone, Serialize)]
pub struct AskOutput {
    pub provenance: Provenance,
    pub outcome: Outcome,
    pub query: Option<String>,
    pub table: Option<ResultTable>,
    pub transcript: Vec<PipelineEvent>,
    pub transport_calls: usize,
    pub prompt_bytes_total: u64,
    pub session_id: Option<String>,
    pub warnings: Vec<String>,
    pub failure: Option<String>,
}

impl AskOutput {
    pub fn exit_code(&self) -> i32 {
        self.outcome.exit_code()
    }
}

pub fn ask(opts: &AskOptions) -> Result<AskOutput> {
    let runtime = Runtime::new(opts.config.clone())?;
    let db = runtime.open_db(&opts.db, &opts.question)?;
    let cache = QueryCache::new(opts.cache_dir.clone().unwrap_or_else(|| opts.config.cache_dir()));
    let mut warnings = Vec::new();

    if !opts.no_cache {
        if let Some(entry) = cache.get(&opts.question)? {
            match rerun_query(runtime.engine.as_ref(), &entry.source, &opts.question, &db) {
                Ok(table) => {
                    let output = AskOutput {
                        provenance: Provenance::Cache,
                        outcome: Outcome::Validated,
                        query: Some(entry.source),
                        table: Some(table),
                        transcript: Vec::new(),
                        transport_calls: 0,
                        prompt_bytes_total: 0,
                        session_id: Some(entry.session_id),
                        warnings,
                        failure: None,
                    };
                    write_exports(&output, opts.export.as_deref())?;
                    return Ok(output);
                }
                Err(e) => warnings.push(format!(
                    "cached query {} is unusable ({e}); synthesizing",
                    &entry.key[..12]
                )),
            }
        }
    }

    let mode = opts.mode.unwrap_or(opts.config.transport.mode);
    if mode == TransportMode::Record {
        if let Some(path) = &opts.config.transport.cassette {
            crate::runtime::ensure_fresh(path)?;
        }
    }
    let wire = runtime.wire(mode, None)?;
    let synthesis = runtime.synthesize(&opts.question, &db, wire)?;
    if let Some(cassette) = &synthesis.recorded {
        let path = opts.config.transport.cassette.as_ref().expect("validated");
        cassette.save_new(path)?;
    }
    if let Some(n) = synthesis.unused_records.filter(|&n| n > 0) {
        warnings.push(format!("{n} cassette record(s) were not used"));
    }
    let report = synthesis.report;
    if report.outcome == Outcome::Validated {
        if let Some(q) = &report.final_query {
            cache.put(&opts.question, q.source(), &report.session_id)?;
        }
    }
    warnings.extend(report.warnings);
    let output = AskOutput {
        provenance: Provenance::Synthesized,
        outcome: report.outcome,
        query: report.final_query.map(|q| q.source().to_string()),
        table: report.table,
        transcript: report.transcript,
        transport_calls: synthesis.transport_calls,
        prompt_bytes_total: report.prompt_bytes_total,
        session_id: Some(report.session_id),
        warnings,
        failure: report.failure.map(|f| f.to_string()),
    };
    write_exports(&output, opts.export.as_deref())?;
    Ok(output)
}

/// Writes `result.{csv,jsonl,sarif}`, `transcript.jsonl` and `query.ql`.
fn write_exports(output: &AskOutput, dir: Option<&Path>) -> Result<()> {
    let Some(dir) = dir else {
        return Ok(());
    };
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let write = |name: &str, bytes: &[u8]| {
        let path = dir.join(name);
        fs::write(&path, bytes).with_context(|| format!("cannot write {}", path.display()))
    };
    if let Some(table) = &output.table {
        for format in ExportFormat::ALL {
            match export(table, format) {
                Ok(bytes) => write(&format!("result.{}", format.extension()), &bytes)?,
                Err(e) => tracing::warn!("skipping {} export: {e}", format.extension()),
            }
        }
    }
    write("transcript.jsonl", export_transcript(&output.transcript).as_bytes())?;
    if let Some(q) = &output.query {
        write("query.ql", q.as_bytes())?;
    }
    Ok(())
}
