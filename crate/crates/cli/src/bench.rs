use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use querysmith_core::evalbench::{load_cases, metrics, scatter_csv, scatter_export, BenchmarkCase, MatchKey, Metrics};
use rayon::prelude::*;

use crate::config::{Config, TransportMode};
use crate::runtime::Runtime;

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub cases: PathBuf,
    pub key: MatchKey,
    pub out: Option<PathBuf>,
    pub jobs: usize,
    /// Needed only for cases that are answered by replaying a cassette.
    pub config: Option<Config>,
}

#[derive(Debug, Clone)]
pub struct BenchOutput {
    pub cases: Vec<BenchmarkCase>,
    pub metrics: Metrics,
    pub scatter_csv: String,
}

/// Fills in `found` for cases without a `found.locations` file by
/// replaying the case's `cassette.jsonl` through the pipeline.
fn answer_case(root: &Path, case: &mut BenchmarkCase, config: Option<&Config>) -> Result<Option<u64>> {
    let dir = root.join(&case.id);
    if dir.join("found.locations").exists() {
        return Ok(None);
    }
    let cassette = dir.join("cassette.jsonl");
    if !cassette.exists() {
        return Err(anyhow!(
            "case {} has neither found.locations nor cassette.jsonl",
            case.id
        ));
    }
    let mut config = config
        .cloned()
        .ok_or_else(|| anyhow!("case {} needs --config to replay its cassette", case.id))?;
    config.transport.mode = TransportMode::Replay;
    config.transport.cassette = Some(cassette);
    let runtime = Runtime::new(config)?;
    let db = runtime.open_db(Path::new(&case.db), &case.question)?;
    let wire = runtime.wire(TransportMode::Replay, None)?;
    let report = runtime.synthesize(&case.question, &db, wire)?.report;
    case.found = report.table.map(|t| t.primary_locations()).unwrap_or_default();
    Ok(Some(report.prompt_bytes_total))
}

pub fn bench(opts: &BenchOptions) -> Result<BenchOutput> {
    let mut cases = load_cases(&opts.cases)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .context("cannot start worker pool")?;
    let prompt_bytes: Vec<Option<u64>> = pool.install(|| {
        cases
            .par_iter_mut()
            .map(|case| answer_case(&opts.cases, case, opts.config.as_ref()))
            .collect::<Result<Vec<_>>>()
    })?;
    let prompt_bytes: Vec<u64> = prompt_bytes.into_iter().flatten().collect();
    let metrics = metrics(&cases, opts.key, &prompt_bytes);
    let scatter_csv = scatter_csv(&scatter_export(&cases, opts.key));
    if let Some(out) = &opts.out {
        fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
        fs::write(out.join("metrics.json"), serde_json::to_string_pretty(&metrics)? + "\n")?;
        fs::write(out.join("scatter.csv"), &scatter_csv)?;
    }
    Ok(BenchOutput {
        cases,
        metrics,
        scatter_csv,
    })
}
