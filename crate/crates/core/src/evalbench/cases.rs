//! On-disk benchmark cases: one directory per case holding `task.txt`
//! (the goal, a `---` line, then one `name: description` line per output
//! column), `reference.locations`, `db` (the database id), and optionally
//! `found.locations`.

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::BenchmarkCase;
use crate::question::{Language, OutputSchema, Question};
use crate::results::Location;

#[derive(Debug, Error)]
pub enum CaseLoadError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

fn read(path: &Path) -> Result<String, CaseLoadError> {
    fs::read_to_string(path).map_err(|e| CaseLoadError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn format_error(path: &Path, message: impl Into<String>) -> CaseLoadError {
    CaseLoadError::Format {
        path: path.display().to_string(),
        message: message.into(),
    }
}

pub fn parse_task(text: &str) -> Result<Question, String> {
    let mut goal = Vec::new();
    let mut schema = None;
    let mut lines = text.lines();
    for line in lines.by_ref() {
        if line.trim() == "---" {
            schema = Some(lines.by_ref().collect::<Vec<_>>().join("\n"));
            break;
        }
        goal.push(line);
    }
    let schema = schema.ok_or("missing `---` line between the question and the schema")?;
    let schema = OutputSchema::parse_lines(&schema).map_err(|e| e.to_string())?;
    Question::new(goal.join("\n"), schema, Language::Java).map_err(|e| e.to_string())
}

/// `path:line[:col]` per line; blank lines and `#` comments are skipped.
pub fn parse_locations(text: &str) -> Result<Vec<Location>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| l.trim().parse().map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}

pub fn load_case(dir: &Path) -> Result<BenchmarkCase, CaseLoadError> {
    let task_path = dir.join("task.txt");
    let question = parse_task(&read(&task_path)?).map_err(|m| format_error(&task_path, m))?;
    let ref_path = dir.join("reference.locations");
    let reference = parse_locations(&read(&ref_path)?).map_err(|m| format_error(&ref_path, m))?;
    let db_path = dir.join("db");
    let db = read(&db_path)?.trim().to_string();
    if db.is_empty() {
        return Err(format_error(&db_path, "empty database id"));
    }
    let found_path = dir.join("found.locations");
    let found = if found_path.exists() {
        parse_locations(&read(&found_path)?).map_err(|m| format_error(&found_path, m))?
    } else {
        Vec::new()
    };
    let id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    Ok(BenchmarkCase {
        id,
        question,
        db,
        reference,
        found,
    })
}

/// Every subdirectory containing a `task.txt`, sorted by name.
pub fn load_cases(root: &Path) -> Result<Vec<BenchmarkCase>, CaseLoadError> {
    let entries = fs::read_dir(root).map_err(|e| CaseLoadError::Io {
        path: root.display().to_string(),
        message: e.to_string(),
    })?;
    let mut dirs: Vec<_> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.join("task.txt").is_file())
        .collect();
    dirs.sort();
    dirs.iter().map(|d| load_case(d)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_files() {
        let q = parse_task("Find calls\nto equals.\n---\nlocation: The call\n").unwrap();
        assert_eq!(q.goal(), "Find calls\nto equals.");
        assert_eq!(q.schema().arity(), 1);
        assert!(parse_task("no separator").is_err());
        assert!(parse_task("goal\n---\n").is_err());
    }

    #[test]
    fn location_files() {
        let locs = parse_locations("# comment\nsrc/A.java:3\n\nsrc/B.java:4:7\n").unwrap();
        assert_eq!(
            locs,
            vec![Location::new("src/A.java", 3, 0), Location::new("src/B.java", 4, 7)]
        );
        assert!(parse_locations("nonsense").is_err());
    }

    #[test]
    fn loads_case_directories() {
        let root = tempfile::tempdir().unwrap();
        let dir = root.path().join("case-1");
        fs::create_dir(&dir).unwrap();
        fs::write(dir.join("task.txt"), "Find it\n---\nlocation: where\n").unwrap();
        fs::write(dir.join("reference.locations"), "A.java:1\n").unwrap();
        fs::write(dir.join("db"), "project\n").unwrap();
        fs::create_dir(root.path().join("not-a-case")).unwrap();
        let cases = load_cases(root.path()).unwrap();
        assert_eq!(cases.len(), 1);
        assert_eq!(cases[0].id, "case-1");
        assert_eq!(cases[0].db, "project");
        assert!(cases[0].found.is_empty());
    }
}
