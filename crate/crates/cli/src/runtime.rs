//! Builds engines, indexes and transports from a [`Config`] and runs the
//! pipeline with them.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use querysmith_core::docs_index::{load_index, ConstructIndex};
use querysmith_core::engine::{CodeqlConfig, CodeqlEngine, DatabaseHandle, Engine, FakeEngine};
use querysmith_core::llm::{
    Cassette, CountingTransport, LiveTransport, RecordTransport, ReplayTransport, ScriptedTransport, Transport,
};
use querysmith_core::orchestrator::{answer_question, AnswerReport};
use querysmith_core::question::Question;

use crate::config::{Adapter, Config, TransportMode};

pub struct Runtime {
    pub config: Config,
    pub engine: Box<dyn Engine>,
    index: Option<ConstructIndex>,
}

/// Where the model's answers come from.
pub enum Wire {
    Live(LiveTransport),
    Replay(ReplayTransport),
    /// Live or scripted answers, recorded to a new cassette.
    Record(RecordTransport<Box<dyn Transport>>),
}

impl Transport for Wire {
    fn send(
        &mut self,
        request: &querysmith_core::llm::LlmRequest<'_>,
    ) -> Result<String, querysmith_core::llm::TransportError> {
        match self {
            Wire::Live(t) => t.send(request),
            Wire::Replay(t) => t.send(request),
            Wire::Record(t) => t.send(request),
        }
    }
}

/// Outcome of one synthesis run plus transport bookkeeping.
pub struct Synthesis {
    pub report: AnswerReport,
    /// Calls that reached the transport.
    pub transport_calls: usize,
    /// Replay records left unused, if replaying.
    pub unused_records: Option<usize>,
    pub recorded: Option<Cassette>,
}

impl Runtime {
    pub fn new(config: Config) -> Result<Self> {
        config.validate()?;
        let engine: Box<dyn Engine> = match config.engine.adapter {
            Adapter::Fake => {
                let path = config.engine.fixtures.as_ref().expect("validated");
                Box::new(FakeEngine::load(path)?)
            }
            Adapter::Codeql => {
                let mut cq = CodeqlConfig::default();
                if let Some(t) = &config.engine.toolchain {
                    cq.executable = t.clone();
                }
                if let Some(t) = config.engine_timeout() {
                    cq.timeout = t;
                }
                cq.additional_packs = config.engine.additional_packs.clone();
                Box::new(CodeqlEngine::detect(cq)?)
            }
        };
        let index = match &config.docs.index {
            Some(p) => Some(load_index(p).with_context(|| format!("loading {}", p.display()))?),
            None => None,
        };
        Ok(Self { config, engine, index })
    }

    pub fn index(&self) -> Result<&ConstructIndex> {
        self.index
            .as_ref()
            .ok_or_else(|| anyhow!("docs.index is not configured"))
    }

    pub fn open_db(&self, db: &Path, question: &Question) -> Result<DatabaseHandle> {
        self.engine
            .open_database(db, question.language())
            .with_context(|| format!("cannot open database {}", db.display()))
    }

    /// The transport for `mode`. `script` replaces the live model when
    /// recording.
    pub fn wire(&self, mode: TransportMode, script: Option<&Path>) -> Result<Wire> {
        let live = || {
            LiveTransport::from_env(
                &self.config.llm.endpoint,
                &self.config.llm.model,
                &self.config.llm.credential_env,
            )
        };
        Ok(match mode {
            TransportMode::Live => Wire::Live(live()?),
            TransportMode::Replay => {
                let path = self
                    .config
                    .transport
                    .cassette
                    .as_ref()
                    .ok_or_else(|| anyhow!("replay mode requires transport.cassette"))?;
                Wire::Replay(ReplayTransport::load(path)?)
            }
            TransportMode::Record => {
                let inner: Box<dyn Transport> = match script {
                    Some(s) => Box::new(ScriptedTransport::load(s)?),
                    None => Box::new(live()?),
                };
                Wire::Record(RecordTransport::new(inner))
            }
        })
    }

    pub fn synthesize(&self, question: &Question, db: &DatabaseHandle, wire: Wire) -> Result<Synthesis> {
        let mut counting = CountingTransport::new(wire);
        let report = answer_question(
            question,
            db,
            self.config.budget,
            self.engine.as_ref(),
            self.index()?,
            &mut counting,
        )?;
        let transport_calls = counting.calls();
        let (unused_records, recorded) = match counting.into_inner() {
            Wire::Replay(r) => (Some(r.remaining()), None),
            Wire::Record(r) => (None, Some(r.into_cassette())),
            Wire::Live(_) => (None, None),
        };
        Ok(Synthesis {
            report,
            transport_calls,
            unused_records,
            recorded,
        })
    }
}

/// Reads `@path` arguments from files, other values verbatim.
pub fn read_arg(value: &str) -> Result<String> {
    match value.strip_prefix('@') {
        Some(path) => std::fs::read_to_string(path).with_context(|| format!("cannot read {path}")),
        None => Ok(value.to_string()),
    }
}

/// `--schema` accepts `name:desc;name:desc` or `@file` with one column per line.
pub fn parse_schema_arg(value: &str) -> Result<querysmith_core::OutputSchema> {
    let schema = match value.strip_prefix('@') {
        Some(_) => querysmith_core::OutputSchema::parse_lines(&read_arg(value)?),
        None => querysmith_core::OutputSchema::parse_inline(value),
    };
    schema.map_err(|e| anyhow!("invalid --schema: {e}"))
}

pub fn ensure_fresh(path: &Path) -> Result<()> {
    if path.exists() {
        bail!("{} already exists; refusing to overwrite a cassette", path.display());
    }
    Ok(())
}
