use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    SelftestGen,
    KeywordExtract,
    ConstructPropose,
    ConstructValidate,
    QueryGen,
    Compile,
    Repair,
    SelftestRun,
    AssistPropose,
    AssistRun,
    FinalRun,
}

impl Stage {
    pub const ALL: [Stage; 11] = [
        Stage::SelftestGen,
        Stage::KeywordExtract,
        Stage::ConstructPropose,
        Stage::ConstructValidate,
        Stage::QueryGen,
        Stage::Compile,
        Stage::Repair,
        Stage::SelftestRun,
        Stage::AssistPropose,
        Stage::AssistRun,
        Stage::FinalRun,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::SelftestGen => "selftest_gen",
            Stage::KeywordExtract => "keyword_extract",
            Stage::ConstructPropose => "construct_propose",
            Stage::ConstructValidate => "construct_validate",
            Stage::QueryGen => "query_gen",
            Stage::Compile => "compile",
            Stage::Repair => "repair",
            Stage::SelftestRun => "selftest_run",
            Stage::AssistPropose => "assist_propose",
            Stage::AssistRun => "assist_run",
            Stage::FinalRun => "final_run",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

/// One step of a pipeline run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineEvent {
    pub stage: Stage,
    pub ts: u64,
    pub digest: String,
    /// Success flag for steps that can fail (compile, self-test, runs).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ok: Option<bool>,
}

/// Append-only event log with a monotonic tick.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Transcript {
    events: Vec<PipelineEvent>,
}

impl Transcript {
    pub fn record(&mut self, stage: Stage, digest: impl Into<String>, ok: Option<bool>) {
        let ts = self.events.len() as u64 + 1;
        self.events.push(PipelineEvent {
            stage,
            ts,
            digest: digest.into(),
            ok,
        });
    }

    pub fn events(&self) -> &[PipelineEvent] {
        &self.events
    }

    pub fn count(&self, stage: Stage) -> usize {
        self.events.iter().filter(|e| e.stage == stage).count()
    }

    pub fn into_events(self) -> Vec<PipelineEvent> {
        self.events
    }
}

/// One JSON record per line: `{"stage":..,"ts":..,"digest":..}`.
pub fn export_transcript(events: &[PipelineEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("events serialize"));
        out.push('\n');
    }
    out
}

pub fn parse_transcript(text: &str) -> Result<Vec<PipelineEvent>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("event {ts} ({stage}): {reason}")]
pub struct OrderViolation {
    pub ts: u64,
    pub stage: Stage,
    pub reason: String,
}

/// Checks that a transcript follows the pipeline graph: preprocessing comes
/// first, every compile has something new to compile, repairs follow failed
/// compiles, self-tests and runs use a compiled query, and assistive steps
/// only happen after a failing self-test.
pub fn check_stage_order(events: &[PipelineEvent]) -> Result<(), OrderViolation> {
    let mut seen_selftest_gen = false;
    let mut pending_source = false;
    let mut last_compile_ok: Option<bool> = None;
    let mut any_compile_ok = false;
    let mut failing_selftest = false;
    let mut assist_proposed = false;
    let mut last_propose = false;
    let mut finished = false;
    let mut prev_ts = 0;

    for e in events {
        let fail = |reason: &str| {
            Err(OrderViolation {
                ts: e.ts,
                stage: e.stage,
                reason: reason.to_string(),
            })
        };
        if e.ts <= prev_ts {
            return fail("timestamps must increase");
        }
        prev_ts = e.ts;
        if finished {
            return fail("no events may follow final_run");
        }
        if !seen_selftest_gen && e.stage != Stage::SelftestGen {
            return fail("pipeline must start with self-test generation");
        }
        match e.stage {
            Stage::SelftestGen => seen_selftest_gen = true,
            Stage::KeywordExtract | Stage::ConstructPropose => {}
            Stage::ConstructValidate => {
                if !last_propose {
                    return fail("construct_validate must follow construct_propose");
                }
            }
            Stage::QueryGen | Stage::AssistPropose | Stage::Repair => {
                if e.stage == Stage::Repair && last_compile_ok != Some(false) {
                    return fail("repair must follow a failed compile");
                }
                if e.stage == Stage::AssistPropose {
                    if !failing_selftest {
                        return fail("assist_propose requires a failing selftest_run");
                    }
                    assist_proposed = true;
                }
                pending_source = true;
            }
            Stage::Compile => {
                if !pending_source {
                    return fail("compile must follow query generation or repair");
                }
                pending_source = false;
                last_compile_ok = Some(e.ok.unwrap_or(false));
                any_compile_ok |= e.ok == Some(true);
            }
            Stage::SelftestRun => {
                if last_compile_ok != Some(true) {
                    return fail("selftest_run requires a compiled query");
                }
                if e.ok == Some(false) {
                    failing_selftest = true;
                }
            }
            Stage::AssistRun => {
                if !failing_selftest || !assist_proposed {
                    return fail("assist_run requires a failing selftest_run and an assistive query");
                }
                if last_compile_ok != Some(true) {
                    return fail("assist_run requires a compiled assistive query");
                }
            }
            Stage::FinalRun => {
                if !any_compile_ok {
                    return fail("final_run requires a compiled query");
                }
                finished = true;
            }
        }
        last_propose = e.stage == Stage::ConstructPropose;
    }
    Ok(())
}
