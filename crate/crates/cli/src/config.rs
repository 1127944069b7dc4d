//! TOML configuration. Relative paths are resolved against the directory
//! of the config file.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use querysmith_core::orchestrator::PipelineBudget;
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TransportMode {
    Live,
    Record,
    #[default]
    Replay,
}

impl FromStr for TransportMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(Self::Live),
            "record" => Ok(Self::Record),
            "replay" => Ok(Self::Replay),
            _ => Err(format!("unknown mode `{s}` (expected live, record or replay)")),
        }
    }
}

impl fmt::Display for TransportMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Live => "live",
            Self::Record => "record",
            Self::Replay => "replay",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Adapter {
    #[default]
    Codeql,
    Fake,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmConfig {
    #[serde(default = "default_endpoint")]
    pub endpoint: String,
    #[serde(default = "default_model")]
    pub model: String,
    /// Name of the environment variable holding the API key.
    #[serde(default = "default_credential_env")]
    pub credential_env: String,
}

fn default_endpoint() -> String {
    "https://api.openai.com/v1/chat/completions".into()
}

fn default_model() -> String {
    "gpt-4o".into()
}

fn default_credential_env() -> String {
    "OPENAI_API_KEY".into()
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            endpoint: default_endpoint(),
            model: default_model(),
            credential_env: default_credential_env(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    #[serde(default)]
    pub adapter: Adapter,
    /// Fixture file for the fake adapter.
    pub fixtures: Option<PathBuf>,
    /// CodeQL executable; defaults to `codeql` on the PATH.
    pub toolchain: Option<PathBuf>,
    #[serde(default)]
    pub additional_packs: Vec<PathBuf>,
    pub timeout_secs: Option<u64>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DocsConfig {
    pub index: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TransportConfig {
    #[serde(default)]
    pub mode: TransportMode,
    pub cassette: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct CacheConfig {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub llm: LlmConfig,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default)]
    pub docs: DocsConfig,
    #[serde(default)]
    pub budget: PipelineBudget,
    #[serde(default)]
    pub transport: TransportConfig,
    #[serde(default)]
    pub cache: CacheConfig,
}

pub const DEFAULT_CACHE_DIR: &str = ".querysmith/cache";

impl Config {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut config: Config = toml::from_str(text).context("invalid configuration")?;
        config.resolve(base);
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).with_context(|| format!("in {}", path.display()))
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.engine.fixtures);
        fix(&mut self.docs.index);
        fix(&mut self.transport.cassette);
        fix(&mut self.cache.dir);
        // A bare executable name is looked up on the PATH instead.
        if let Some(t) = &self.engine.toolchain {
            if t.components().count() > 1 && t.is_relative() {
                self.engine.toolchain = Some(base.join(t));
            }
        }
        for p in &mut self.engine.additional_packs {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// Checks the invariants that do not depend on the environment.
    pub fn validate(&self) -> Result<()> {
        self.budget.validate()?;
        if matches!(self.transport.mode, TransportMode::Replay | TransportMode::Record)
            && self.transport.cassette.is_none()
        {
            bail!("transport mode {} requires transport.cassette", self.transport.mode);
        }
        if self.engine.adapter == Adapter::Fake && self.engine.fixtures.is_none() {
            bail!("the fake engine adapter requires engine.fixtures");
        }
        Ok(())
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache
            .dir
            .clone()
            .unwrap_or_else(|| PathBuf::from(DEFAULT_CACHE_DIR))
    }

    pub fn engine_timeout(&self) -> Option<Duration> {
        self.engine.timeout_secs.map(Duration::from_secs)
    }
}
