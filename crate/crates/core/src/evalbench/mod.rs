//! Benchmark harness: compares found locations against a reference
//! analyzer's findings and aggregates precision and recall.
//!
//! Ratios with a zero denominator are undefined. Macro averages skip such
//! cases and report how many were skipped; micro averages pool the counts.

mod cases;

pub use cases::{load_case, load_cases, parse_locations, parse_task, CaseLoadError};

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::question::Question;
use crate::results::Location;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchKey {
    #[default]
    FileLine,
    FileLineCol,
}

impl FromStr for MatchKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "file_line" => Ok(MatchKey::FileLine),
            "file_line_col" => Ok(MatchKey::FileLineCol),
            _ => Err(format!(
                "unknown matching key `{s}` (expected file_line or file_line_col)"
            )),
        }
    }
}

impl fmt::Display for MatchKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatchKey::FileLine => "file_line",
            MatchKey::FileLineCol => "file_line_col",
        })
    }
}

type Key = (String, u32, u32);

impl MatchKey {
    fn project(self, loc: &Location) -> Key {
        let col = match self {
            MatchKey::FileLine => 0,
            MatchKey::FileLineCol => loc.column,
        };
        (loc.file.clone(), loc.line, col)
    }

    fn set(self, locs: &[Location]) -> BTreeSet<Key> {
        locs.iter().map(|l| self.project(l)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkCase {
    pub id: String,
    pub question: Question,
    pub db: String,
    pub reference: Vec<Location>,
    pub found: Vec<Location>,
}

/// Per-case counts under a key, after deduplication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CaseCounts {
    pub reference: usize,
    pub found: usize,
    pub overlap: usize,
}

impl CaseCounts {
    pub fn precision(&self) -> Option<f64> {
        ratio(self.overlap, self.found)
    }

    pub fn recall(&self) -> Option<f64> {
        ratio(self.overlap, self.reference)
    }

    /// Found locations absent from the reference.
    pub fn new_warnings(&self) -> usize {
        self.found - self.overlap
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Reference locations matched by some found location.
pub fn overlap(found: &[Location], reference: &[Location], key: MatchKey) -> usize {
    key.set(reference).intersection(&key.set(found)).count()
}

pub fn case_counts(case: &BenchmarkCase, key: MatchKey) -> CaseCounts {
    let reference = key.set(&case.reference);
    let found = key.set(&case.found);
    CaseCounts {
        reference: reference.len(),
        found: found.len(),
        overlap: reference.intersection(&found).count(),
    }
}

pub fn case_precision(case: &BenchmarkCase, key: MatchKey) -> Option<f64> {
    case_counts(case, key).precision()
}

pub fn case_recall(case: &BenchmarkCase, key: MatchKey) -> Option<f64> {
    case_counts(case, key).recall()
}

/// `(reported, new)` for one case.
pub fn new_warning_fraction(case: &BenchmarkCase, key: MatchKey) -> (usize, usize) {
    let c = case_counts(case, key);
    (c.found, c.new_warnings())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MacroMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    /// Cases left out of the precision mean because nothing was found.
    pub excluded_precision: usize,
    /// Cases left out of the recall mean because the reference is empty.
    pub excluded_recall: usize,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> (Option<f64>, usize) {
    let (mut sum, mut n, mut excluded) = (0.0, 0usize, 0usize);
    for v in values {
        match v {
            Some(x) => {
                sum += x;
                n += 1;
            }
            None => excluded += 1,
        }
    }
    ((n > 0).then(|| sum / n as f64), excluded)
}

pub fn macro_metrics(cases: &[BenchmarkCase], key: MatchKey) -> MacroMetrics {
    let counts: Vec<CaseCounts> = cases.iter().map(|c| case_counts(c, key)).collect();
    let (precision, excluded_precision) = mean_defined(counts.iter().map(CaseCounts::precision));
    let (recall, excluded_recall) = mean_defined(counts.iter().map(CaseCounts::recall));
    MacroMetrics {
        precision,
        recall,
        excluded_precision,
        excluded_recall,
    }
}

/// Pooled `(precision, recall)`.
pub fn micro_metrics(cases: &[BenchmarkCase], key: MatchKey) -> (Option<f64>, Option<f64>) {
    let (mut overlap, mut found, mut reference) = (0, 0, 0);
    for c in cases {
        let counts = case_counts(c, key);
        overlap += counts.overlap;
        found += counts.found;
        reference += counts.reference;
    }
    (ratio(overlap, found), ratio(overlap, reference))
}

/// Lower median: for an even count, the smaller of the two middle values.
pub fn prompt_size_stats(totals: &[u64]) -> Option<u64> {
    if totals.is_empty() {
        return None;
    }
    let mut sorted = totals.to_vec();
    sorted.sort_unstable();
    Some(sorted[(sorted.len() - 1) / 2])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub key: MatchKey,
    pub cases: usize,
    pub macro_precision: Option<f64>,
    pub macro_recall: Option<f64>,
    pub macro_excluded_precision: usize,
    pub macro_excluded_recall: usize,
    pub micro_precision: Option<f64>,
    pub micro_recall: Option<f64>,
    pub prompt_size_median: Option<u64>,
}

pub fn metrics(cases: &[BenchmarkCase], key: MatchKey, prompt_bytes: &[u64]) -> Metrics {
    let m = macro_metrics(cases, key);
    let (micro_precision, micro_recall) = micro_metrics(cases, key);
    Metrics {
        key,
        cases: cases.len(),
        macro_precision: m.precision,
        macro_recall: m.recall,
        macro_excluded_precision: m.excluded_precision,
        macro_excluded_recall: m.excluded_recall,
        micro_precision,
        micro_recall,
        prompt_size_median: prompt_size_stats(prompt_bytes),
    }
}

fn fmt_ratio(r: Option<f64>) -> String {
    r.map_or_else(|| "undefined".to_string(), |r| format!("{r:.2}"))
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "cases: {} (key {})", self.cases, self.key)?;
        writeln!(
            f,
            "macro precision: {} ({} removed due to division by 0)",
            fmt_ratio(self.macro_precision),
            self.macro_excluded_precision
        )?;
        writeln!(
            f,
            "macro recall: {} ({} removed due to division by 0)",
            fmt_ratio(self.macro_recall),
            self.macro_excluded_recall
        )?;
        writeln!(f, "micro precision: {}", fmt_ratio(self.micro_precision))?;
        writeln!(f, "micro recall: {}", fmt_ratio(self.micro_recall))?;
        match self.prompt_size_median {
            Some(b) => writeln!(f, "median prompt size: {b} bytes"),
            None => writeln!(f, "median prompt size: n/a"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScatterRow {
    pub case_id: String,
    pub reference: usize,
    pub overlap: usize,
    pub found: usize,
    pub new: usize,
}

/// One row per case with both plots' coordinates: reference vs overlap,
/// and found vs new.
pub fn scatter_export(cases: &[BenchmarkCase], key: MatchKey) -> Vec<ScatterRow> {
    cases
        .iter()
        .map(|c| {
            let counts = case_counts(c, key);
            ScatterRow {
                case_id: c.id.clone(),
                reference: counts.reference,
                overlap: counts.overlap,
                found: counts.found,
                new: counts.new_warnings(),
            }
        })
        .collect()
}

pub fn scatter_csv(rows: &[ScatterRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["case_id", "reference", "overlap", "found", "new"])
        .expect("in-memory write");
    for r in rows {
        w.write_record([
            r.case_id.clone(),
            r.reference.to_string(),
            r.overlap.to_string(),
            r.found.to_string(),
            r.new.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}
