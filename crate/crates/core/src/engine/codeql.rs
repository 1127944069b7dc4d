//! Adapter for the external CodeQL toolchain, invoked as subprocesses.
//!
//! Commands used:
//! - `codeql version` to probe availability
//! - `codeql pack install` + `codeql query compile` for compilation
//! - `codeql database create --language=java` for snippet databases
//! - `codeql query run` + `codeql bqrs decode --format=json --entities=url,string` for execution

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use serde_json::Value;
use tracing::debug;

use super::{
    parse_diagnostics, source_digest, ColumnKind, CompileOutcome, CompiledQuery, DatabaseHandle, DbOrigin, Diagnostic,
    Engine, EngineError, RawCell, RawColumn, RawResultSet, Snippet,
};
use crate::question::Language;
use crate::results::Location;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(300);

#[derive(Debug, Clone)]
pub struct CodeqlConfig {
    pub executable: PathBuf,
    pub timeout: Duration,
    /// Extra pack search locations, e.g. the `qlpacks` directory of a bundle.
    pub additional_packs: Vec<PathBuf>,
    /// Java compiler used to validate snippets; `None` skips that check.
    pub javac: Option<PathBuf>,
}

impl Default for CodeqlConfig {
    fn default() -> Self {
        Self {
            executable: PathBuf::from("codeql"),
            timeout: DEFAULT_TIMEOUT,
            additional_packs: Vec::new(),
            javac: which("javac"),
        }
    }
}

pub struct CodeqlEngine {
    config: CodeqlConfig,
    scratch: tempfile::TempDir,
    counter: AtomicU64,
}

struct ProcessOutput {
    success: bool,
    stdout: String,
    stderr: String,
}

impl CodeqlEngine {
    /// Fails with [`EngineError::Unavailable`] when the executable cannot be run.
    pub fn detect(config: CodeqlConfig) -> Result<Self, EngineError> {
        let scratch = tempfile::Builder::new()
            .prefix("querysmith-codeql-")
            .tempdir()
            .map_err(|e| EngineError::Io(e.to_string()))?;
        let engine = Self {
            config,
            scratch,
            counter: AtomicU64::new(0),
        };
        let out = engine.run(engine.codeql().arg("version"), None)?;
        if !out.success {
            return Err(EngineError::Unavailable(out.stderr));
        }
        debug!(version = out.stdout.lines().next().unwrap_or(""), "codeql detected");
        Ok(engine)
    }

    fn codeql(&self) -> Command {
        Command::new(&self.config.executable)
    }

    fn fresh_dir(&self, prefix: &str) -> Result<PathBuf, EngineError> {
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        let dir = self.scratch.path().join(format!("{prefix}-{n}"));
        fs::create_dir_all(&dir).map_err(|e| EngineError::Io(e.to_string()))?;
        Ok(dir)
    }

    fn run(&self, cmd: &mut Command, cwd: Option<&Path>) -> Result<ProcessOutput, EngineError> {
        if let Some(dir) = cwd {
            cmd.current_dir(dir);
        }
        debug!(?cmd, "spawning");
        let mut child = cmd
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| EngineError::Unavailable(format!("{}: {e}", self.config.executable.display())))?;
        let mut stdout = child.stdout.take().expect("piped stdout");
        let mut stderr = child.stderr.take().expect("piped stderr");
        let out_reader = thread::spawn(move || {
            let mut s = String::new();
            let _ = stdout.read_to_string(&mut s);
            s
        });
        let err_reader = thread::spawn(move || {
            let mut s = String::new();
            let _ = stderr.read_to_string(&mut s);
            s
        });
        let deadline = Instant::now() + self.config.timeout;
        let status = loop {
            match child.try_wait().map_err(|e| EngineError::Io(e.to_string()))? {
                Some(status) => break status,
                None if Instant::now() >= deadline => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(EngineError::ExecutionFailure {
                        message: format!("timed out after {:?}", self.config.timeout),
                        stderr: err_reader.join().unwrap_or_default(),
                    });
                }
                None => thread::sleep(Duration::from_millis(20)),
            }
        };
        Ok(ProcessOutput {
            success: status.success(),
            stdout: out_reader.join().unwrap_or_default(),
            stderr: err_reader.join().unwrap_or_default(),
        })
    }

    fn write_pack(&self, source: &str) -> Result<PathBuf, EngineError> {
        let dir = self.fresh_dir("query")?;
        let io = |e: std::io::Error| EngineError::Io(e.to_string());
        fs::write(
            dir.join("qlpack.yml"),
            "name: querysmith/scratch\nversion: 0.0.1\ndependencies:\n  codeql/java-all: \"*\"\n",
        )
        .map_err(io)?;
        let query = dir.join("query.ql");
        fs::write(&query, source).map_err(io)?;
        Ok(query)
    }

    fn additional_packs_arg(&self) -> Option<String> {
        if self.config.additional_packs.is_empty() {
            return None;
        }
        let joined = std::env::join_paths(&self.config.additional_packs).ok()?;
        Some(format!("--additional-packs={}", joined.to_string_lossy()))
    }

    /// Creates a database over an existing source tree.
    pub fn create_database(&self, source_root: &Path, language: Language) -> Result<DatabaseHandle, EngineError> {
        let db_dir = self.fresh_dir("db")?.join("db");
        let mut cmd = self.codeql();
        cmd.arg("database")
            .arg("create")
            .arg(&db_dir)
            .arg(format!("--language={}", language.as_str()))
            .arg(format!("--source-root={}", source_root.display()))
            .arg("--overwrite");
        match &self.config.javac {
            Some(javac) => {
                let files = collect_sources(source_root, language)?;
                let out_dir = db_dir.with_file_name("classes");
                let mut command = format!("{} -d {}", javac.display(), out_dir.display());
                for f in files {
                    command.push(' ');
                    command.push_str(&f.display().to_string());
                }
                cmd.arg(format!("--command={command}"));
            }
            None => {
                cmd.arg("--build-mode=none");
            }
        }
        let out = self.run(&mut cmd, Some(source_root))?;
        if !out.success {
            return Err(EngineError::SnippetBuild {
                diagnostics: parse_diagnostics(&format!("{}\n{}", out.stdout, out.stderr)),
            });
        }
        Ok(DatabaseHandle {
            id: db_dir.display().to_string(),
            root: db_dir,
            language,
            origin: DbOrigin::Codebase,
        })
    }
}

impl Engine for CodeqlEngine {
    fn name(&self) -> &str {
        "codeql"
    }

    fn compile_source(&self, source: &str) -> Result<CompileOutcome, EngineError> {
        let query = self.write_pack(source)?;
        let pack_dir = query.parent().expect("query lives in a pack").to_path_buf();
        let mut install = self.codeql();
        install.args(["pack", "install"]);
        // Install failures show up again, with better messages, at compile time.
        let _ = self.run(&mut install, Some(&pack_dir));

        let mut cmd = self.codeql();
        cmd.args(["query", "compile", "--threads=0"]);
        if let Some(arg) = self.additional_packs_arg() {
            cmd.arg(arg);
        }
        cmd.arg(&query);
        let out = self.run(&mut cmd, Some(&pack_dir))?;
        if out.success {
            return Ok(CompileOutcome::Compiled(CompiledQuery {
                digest: source_digest(source),
                source: source.to_string(),
                artifact: Some(query),
            }));
        }
        let mut diags: Vec<Diagnostic> = parse_diagnostics(&format!("{}\n{}", out.stdout, out.stderr));
        if diags.is_empty() {
            diags.push(Diagnostic::error("query compilation failed without diagnostics"));
        }
        Ok(CompileOutcome::Failed(diags))
    }

    fn execute(&self, artifact: &CompiledQuery, db: &DatabaseHandle) -> Result<RawResultSet, EngineError> {
        let query = match &artifact.artifact {
            Some(path) => path.clone(),
            None => self.write_pack(&artifact.source)?,
        };
        let out_dir = self.fresh_dir("run")?;
        let bqrs = out_dir.join("results.bqrs");
        let mut run = self.codeql();
        run.args(["query", "run"])
            .arg(format!("--database={}", db.root.display()))
            .arg(format!("--output={}", bqrs.display()));
        if let Some(arg) = self.additional_packs_arg() {
            run.arg(arg);
        }
        run.arg(&query);
        let out = self.run(&mut run, None)?;
        if !out.success {
            return Err(EngineError::ExecutionFailure {
                message: "codeql query run failed".into(),
                stderr: out.stderr,
            });
        }
        let mut decode = self.codeql();
        decode
            .args([
                "bqrs",
                "decode",
                "--format=json",
                "--entities=url,string",
                "--result-set=#select",
            ])
            .arg(&bqrs);
        let out = self.run(&mut decode, None)?;
        if !out.success {
            return Err(EngineError::ExecutionFailure {
                message: "codeql bqrs decode failed".into(),
                stderr: out.stderr,
            });
        }
        let prefix = source_location_prefix(&db.root);
        decode_bqrs_json(&out.stdout, prefix.as_deref())
    }

    fn build_snippet_database(&self, snippets: &[Snippet], language: Language) -> Result<DatabaseHandle, EngineError> {
        if snippets.is_empty() {
            return Err(EngineError::NoSnippets);
        }
        let src = self.fresh_dir("snippets")?;
        let io = |e: std::io::Error| EngineError::Io(e.to_string());
        let mut paths = Vec::new();
        for s in snippets {
            let path = src.join(&s.filename);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(io)?;
            }
            fs::write(&path, &s.source).map_err(io)?;
            paths.push(s.filename.clone());
        }
        if let Some(javac) = &self.config.javac {
            let classes = self.fresh_dir("classes")?;
            let mut cmd = Command::new(javac);
            cmd.arg("-d").arg(&classes).args(&paths);
            let out = self.run(&mut cmd, Some(&src))?;
            if !out.success {
                return Err(EngineError::SnippetBuild {
                    diagnostics: parse_diagnostics(&out.stderr),
                });
            }
        }
        let mut handle = self.create_database(&src, language)?;
        handle.origin = DbOrigin::Snippet;
        Ok(handle)
    }

    fn open_database(&self, root: &Path, language: Language) -> Result<DatabaseHandle, EngineError> {
        if !root.join("codeql-database.yml").is_file() {
            return Err(EngineError::InvalidDatabase(format!(
                "{} has no codeql-database.yml",
                root.display()
            )));
        }
        Ok(DatabaseHandle {
            id: root.display().to_string(),
            root: root.to_path_buf(),
            language,
            origin: DbOrigin::Codebase,
        })
    }
}

fn collect_sources(root: &Path, language: Language) -> Result<Vec<PathBuf>, EngineError> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let entries = fs::read_dir(&dir).map_err(|e| EngineError::Io(e.to_string()))?;
        for entry in entries {
            let path = entry.map_err(|e| EngineError::Io(e.to_string()))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == language.source_extension()) {
                out.push(path.strip_prefix(root).unwrap_or(&path).to_path_buf());
            }
        }
    }
    out.sort();
    Ok(out)
}

fn source_location_prefix(db_root: &Path) -> Option<String> {
    let text = fs::read_to_string(db_root.join("codeql-database.yml")).ok()?;
    text.lines().find_map(|line| {
        let value = line.trim().strip_prefix("sourceLocationPrefix:")?;
        Some(value.trim().trim_matches('"').trim_matches('\'').to_string())
    })
}

fn which(program: &str) -> Option<PathBuf> {
    let path = std::env::var_os("PATH")?;
    std::env::split_paths(&path)
        .map(|dir| dir.join(program))
        .find(|candidate| candidate.is_file())
}

/// Decodes `codeql bqrs decode --format=json --entities=url,string` output.
///
/// Entity cells carrying a URL with a real file and line become locations,
/// with paths made relative to `source_prefix`; other entities keep their
/// label; literal values become text.
pub fn decode_bqrs_json(json: &str, source_prefix: Option<&str>) -> Result<RawResultSet, EngineError> {
    let bad = |m: &str| EngineError::ExecutionFailure {
        message: format!("cannot decode query results: {m}"),
        stderr: String::new(),
    };
    let value: Value = serde_json::from_str(json).map_err(|e| bad(&e.to_string()))?;
    let select = value.get("#select").ok_or_else(|| bad("missing #select result set"))?;
    let columns = select
        .get("columns")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("missing columns"))?;
    let tuples = select
        .get("tuples")
        .and_then(Value::as_array)
        .cloned()
        .unwrap_or_default();

    let rows: Vec<Vec<RawCell>> = tuples
        .iter()
        .map(|t| {
            t.as_array()
                .ok_or_else(|| bad("tuple is not an array"))
                .map(|cells| cells.iter().map(|c| decode_cell(c, source_prefix)).collect())
        })
        .collect::<Result<_, _>>()?;

    let raw_columns = columns
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let name = c
                .get("name")
                .and_then(Value::as_str)
                .map_or_else(|| format!("col{i}"), str::to_string);
            let entity = c.get("kind").and_then(Value::as_str) == Some("Entity");
            let all_locations = !rows.is_empty() && rows.iter().all(|r| matches!(r.get(i), Some(RawCell::Location(_))));
            let kind = match (entity, all_locations) {
                (true, true) => ColumnKind::Location,
                (true, false) => ColumnKind::Entity,
                (false, _) => ColumnKind::Text,
            };
            RawColumn { name, kind }
        })
        .collect();
    RawResultSet::new(raw_columns, rows).map_err(|e| bad(&e))
}

fn decode_cell(cell: &Value, source_prefix: Option<&str>) -> RawCell {
    match cell {
        Value::Object(obj) => {
            let label = obj.get("label").and_then(Value::as_str).unwrap_or_default().to_string();
            match obj.get("url").and_then(|u| url_location(u, source_prefix)) {
                Some(loc) => RawCell::Location(loc),
                None => RawCell::Entity(label),
            }
        }
        Value::String(s) => RawCell::Text(s.clone()),
        other => RawCell::Text(other.to_string()),
    }
}

fn url_location(url: &Value, source_prefix: Option<&str>) -> Option<Location> {
    let uri = url.get("uri")?.as_str()?;
    let path = uri.strip_prefix("file://").unwrap_or(uri);
    let line = u32::try_from(url.get("startLine")?.as_u64()?).ok()?;
    if path.is_empty() || line == 0 {
        return None;
    }
    let rel = match source_prefix {
        Some(prefix) if !prefix.is_empty() => path
            .strip_prefix(prefix)
            .map(|p| p.trim_start_matches('/'))
            .unwrap_or(path),
        _ => path,
    };
    let num = |key: &str| url.get(key).and_then(Value::as_u64).and_then(|v| u32::try_from(v).ok());
    let mut loc = Location::new(rel, line, num("startColumn").unwrap_or(0));
    if let (Some(el), Some(ec)) = (num("endLine"), num("endColumn")) {
        loc = loc.with_end(el, ec);
    }
    Some(loc)
}
