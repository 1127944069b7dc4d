//! Command-line front end: `ask`, `bench`, `cache` and `replay`.

pub mod ask;
pub mod bench;
pub mod cache;
pub mod config;
pub mod replay;
pub mod runtime;

use std::io::Write;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};
use querysmith_core::evalbench::MatchKey;
use querysmith_core::orchestrator::AnswerReport;
use querysmith_core::question::{Language, Question};
use querysmith_core::results::{render, ResultTable};

use crate::ask::{AskOptions, Provenance};
use crate::bench::BenchOptions;
use crate::cache::QueryCache;
use crate::config::{Config, TransportMode};
use crate::runtime::{parse_schema_arg, read_arg};

/// Exit status for invalid command lines and arguments.
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(
    name = "querysmith",
    version,
    about = "Answer questions about a codebase with synthesized CodeQL queries"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct QuestionArgs {
    /// Configuration file (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Database to analyze: a CodeQL database directory, or a database id for the fake engine.
    #[arg(long)]
    pub db: PathBuf,
    /// The question, or `@file` to read it from a file.
    #[arg(long)]
    pub question: String,
    /// Output columns as `name:description;name:description`, or `@file` with one column per line.
    #[arg(long)]
    pub schema: String,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize (or reuse) a query for a question and run it.
    Ask {
        #[command(flatten)]
        question: QuestionArgs,
        /// Transport mode, overriding the config: live, record or replay.
        #[arg(long)]
        mode: Option<TransportMode>,
        /// Always synthesize, ignoring cached queries.
        #[arg(long)]
        no_cache: bool,
        /// Directory for result.csv, result.jsonl, result.sarif, transcript.jsonl and query.ql.
        #[arg(long)]
        export: Option<PathBuf>,
        /// Query cache directory, overriding the config.
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
    /// Score benchmark cases against their reference locations.
    Bench {
        /// Directory with one subdirectory per case.
        #[arg(long)]
        cases: PathBuf,
        /// Location matching key: file_line or file_line_col.
        #[arg(long, default_value = "file_line")]
        key: MatchKey,
        /// Directory for metrics.json and scatter.csv.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Cases evaluated in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Configuration used to replay cases that ship a cassette.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Inspect or clear the query cache.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
        /// Configuration naming the cache directory.
        #[arg(long, global = true)]
        config: Option<PathBuf>,
        /// Cache directory, overriding the config.
        #[arg(long, global = true)]
        cache_dir: Option<PathBuf>,
    },
    /// Record or verify LLM cassettes.
    Replay {
        #[command(subcommand)]
        action: ReplayAction,
    },
}

#[derive(Debug, Subcommand)]
pub enum CacheAction {
    List,
    Clear,
    /// Print the cached query whose key starts with ID.
    Show {
        id: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum ReplayAction {
    /// Run the pipeline and record every model exchange to a new cassette.
    Record {
        #[command(flatten)]
        question: QuestionArgs,
        /// Cassette to create.
        #[arg(long)]
        cassette: PathBuf,
        /// Scripted responses to use instead of the live model.
        #[arg(long)]
        script: Option<PathBuf>,
    },
    /// Replay a cassette; fails unless every request matches and every record is used.
    Verify {
        #[command(flatten)]
        question: QuestionArgs,
        /// Cassette to check; defaults to transport.cassette from the config.
        #[arg(long)]
        cassette: Option<PathBuf>,
    },
}

/// A bad argument value (as opposed to a failure while running).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

impl QuestionArgs {
    /// Config and question; malformed values are [`UsageError`]s.
    fn load(&self) -> Result<(Config, Question)> {
        let parsed = (|| -> Result<(Config, Question)> {
            let config = Config::load(&self.config)?;
            let goal = read_arg(&self.question)?;
            let schema = parse_schema_arg(&self.schema)?;
            let question = Question::new(goal, schema, Language::Java)?;
            Ok((config, question))
        })();
        parsed.map_err(|e| UsageError(format!("{e:#}")).into())
    }
}

/// Exit status for an error returned by [`run`].
pub fn error_exit_code(e: &anyhow::Error) -> i32 {
    if e.is::<UsageError>() {
        EXIT_USAGE
    } else {
        1
    }
}

fn print_table(out: &mut dyn Write, table: Option<&ResultTable>) -> Result<()> {
    if let Some(table) = table {
        out.write_all(render(table).as_bytes())?;
    }
    Ok(())
}

fn print_report_summary(out: &mut dyn Write, err: &mut dyn Write, report: &AnswerReport) -> Result<()> {
    print_table(out, report.table.as_ref())?;
    writeln!(out, "outcome: {}", report.outcome.as_str())?;
    writeln!(
        out,
        "llm calls: {}, prompt bytes: {}",
        report.llm_calls, report.prompt_bytes_total
    )?;
    for w in &report.warnings {
        writeln!(err, "warning: {w}")?;
    }
    if let Some(f) = &report.failure {
        writeln!(err, "error: {f}")?;
    }
    Ok(())
}

/// Runs a parsed command, writing results to `out` and diagnostics to
/// `err`; returns the process exit status.
pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match cli.command {
        Command::Ask {
            question,
            mode,
            no_cache,
            export,
            cache_dir,
        } => {
            let db = question.db.clone();
            let (config, question) = question.load()?;
            let output = ask::ask(&AskOptions {
                config,
                db,
                question,
                mode,
                no_cache,
                export,
                cache_dir,
            })?;
            print_table(out, output.table.as_ref())?;
            let source = match output.provenance {
                Provenance::Cache => "cache",
                Provenance::Synthesized => "synthesized",
            };
            writeln!(out, "outcome: {} ({source})", output.outcome.as_str())?;
            writeln!(
                out,
                "llm calls: {}, prompt bytes: {}",
                output.transport_calls, output.prompt_bytes_total
            )?;
            for w in &output.warnings {
                writeln!(err, "warning: {w}")?;
            }
            if let Some(f) = &output.failure {
                writeln!(err, "error: {f}")?;
            }
            Ok(output.exit_code())
        }
        Command::Bench {
            cases,
            key,
            out: out_dir,
            jobs,
            config,
        } => {
            let config = match config {
                Some(p) => Some(Config::load(&p).map_err(|e| UsageError(format!("{e:#}")))?),
                None => None,
            };
            let output = bench::bench(&BenchOptions {
                cases,
                key,
                out: out_dir,
                jobs,
                config,
            })?;
            write!(out, "{}", output.metrics)?;
            Ok(0)
        }
        Command::Cache {
            action,
            config,
            cache_dir,
        } => {
            let dir = match (cache_dir, config) {
                (Some(d), _) => d,
                (None, Some(c)) => Config::load(&c).map_err(|e| UsageError(format!("{e:#}")))?.cache_dir(),
                (None, None) => Config::default().cache_dir(),
            };
            let cache = QueryCache::new(dir);
            match action {
                CacheAction::List => {
                    for e in cache.list()? {
                        writeln!(out, "{}  {}", &e.key[..12], e.goal.lines().next().unwrap_or(""))?;
                    }
                }
                CacheAction::Clear => {
                    let n = cache.clear()?;
                    writeln!(out, "removed {n} entr{}", if n == 1 { "y" } else { "ies" })?;
                }
                CacheAction::Show { id } => {
                    let e = cache.show(&id)?;
                    writeln!(out, "key: {}", e.key)?;
                    writeln!(out, "goal: {}", e.goal)?;
                    writeln!(out, "schema: {}", e.schema)?;
                    writeln!(out, "language: {}", e.language)?;
                    writeln!(out, "session: {}", e.session_id)?;
                    writeln!(out)?;
                    out.write_all(e.source.as_bytes())?;
                }
            }
            Ok(0)
        }
        Command::Replay { action } => match action {
            ReplayAction::Record {
                question,
                cassette,
                script,
            } => {
                let db = question.db.clone();
                let (config, question) = question.load()?;
                let rec = replay::record(config, &db, &question, &cassette, script.as_deref())?;
                print_report_summary(out, err, &rec.report)?;
                writeln!(
                    out,
                    "recorded {} exchange(s) to {}",
                    rec.cassette.records.len(),
                    cassette.display()
                )?;
                Ok(rec.report.exit_code())
            }
            ReplayAction::Verify { question, cassette } => {
                let db = question.db.clone();
                let (config, question) = question.load()?;
                let v = replay::verify(config, &db, &question, cassette)?;
                print_report_summary(out, err, &v.report)?;
                writeln!(
                    out,
                    "cassette ok: {} record(s), {} request bytes",
                    v.records, v.request_bytes
                )?;
                Ok(v.report.exit_code())
            }
        },
    }
}
