//! On-disk cache of validated queries, one JSON file per question.
//!
//! Keys hash the normalized goal, the schema digest and the language.
//! Entries are written to a temporary file and renamed into place, so
//! concurrent runs never observe a partial entry.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use anyhow::{bail, Context, Result};
use querysmith_core::question::Question;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub goal: String,
    pub schema: String,
    pub language: String,
    pub source: String,
    /// Session that synthesized the query.
    pub session_id: String,
}

#[derive(Debug, Clone)]
pub struct QueryCache {
    dir: PathBuf,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

pub fn cache_key(question: &Question) -> String {
    let mut hasher = Sha256::new();
    hasher.update(question.normalized_goal().as_bytes());
    hasher.update(b"\n");
    hasher.update(question.schema().digest().as_bytes());
    hasher.update(b"\n");
    hasher.update(question.language().as_str().as_bytes());
    hex::encode(hasher.finalize())
}

impl QueryCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, question: &Question) -> Result<Option<CacheEntry>> {
        let path = self.path_for(&cache_key(question));
        if !path.exists() {
            return Ok(None);
        }
        read_entry(&path).map(Some)
    }

    /// Stores a query that compiled and passed its self-tests.
    pub fn put(&self, question: &Question, source: &str, session_id: &str) -> Result<CacheEntry> {
        fs::create_dir_all(&self.dir).with_context(|| format!("cannot create cache dir {}", self.dir.display()))?;
        let key = cache_key(question);
        let entry = CacheEntry {
            key: key.clone(),
            goal: question.goal().to_string(),
            schema: question.schema().to_inline(),
            language: question.language().as_str().to_string(),
            source: source.to_string(),
            session_id: session_id.to_string(),
        };
        let tmp = self.dir.join(format!(
            ".{key}.{}.{}.tmp",
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        fs::write(&tmp, serde_json::to_vec_pretty(&entry)?)
            .with_context(|| format!("cannot write {}", tmp.display()))?;
        fs::rename(&tmp, self.path_for(&key)).context("cannot move cache entry into place")?;
        Ok(entry)
    }

    /// All entries, sorted by key.
    pub fn list(&self) -> Result<Vec<CacheEntry>> {
        if !self.dir.exists() {
            return Ok(Vec::new());
        }
        let mut paths: Vec<PathBuf> = fs::read_dir(&self.dir)?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        paths.sort();
        paths.iter().map(|p| read_entry(p)).collect()
    }

    /// The entry whose key starts with `prefix`; ambiguity is an error.
    pub fn show(&self, prefix: &str) -> Result<CacheEntry> {
        let matches: Vec<CacheEntry> = self.list()?.into_iter().filter(|e| e.key.starts_with(prefix)).collect();
        match matches.len() {
            0 => bail!("no cache entry matches `{prefix}`"),
            1 => Ok(matches.into_iter().next().unwrap()),
            n => bail!("`{prefix}` matches {n} entries; give a longer prefix"),
        }
    }

    /// Removes all entries and returns how many there were.
    pub fn clear(&self) -> Result<usize> {
        let entries = self.list()?;
        for e in &entries {
            fs::remove_file(self.path_for(&e.key))?;
        }
        Ok(entries.len())
    }
}

fn read_entry(path: &Path) -> Result<CacheEntry> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("corrupt cache entry {}", path.display()))
}
