use std::path::PathBuf;
use std::sync::OnceLock;

use regex::Regex;

use super::{Diagnostic, Severity};

fn canonical_shape() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"^(?P<file>[^:\s][^:]*):(?P<line>\d+):(?:(?P<col>\d+):)?\s*(?P<sev>error|warning)\s*:\s*(?P<msg>.*)$",
        )
        .unwrap()
    })
}

// CodeQL's own format: `ERROR: message (path/to/q.ql:6,15-24)`.
fn codeql_shape() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"^(?P<sev>ERROR|WARNING):\s*(?P<msg>.*?)\s*\((?P<file>[^()]+):(?P<line>\d+),(?P<col>\d+)(?:-\d+)?\)$",
        )
        .unwrap()
    })
}

fn noise() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(\s*\^\s*|\d+ (errors?|warnings?))$").unwrap())
}

fn identifier() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[A-Za-z_][A-Za-z0-9_]*(?:::[A-Za-z_][A-Za-z0-9_]*)?").unwrap())
}

fn severity(s: &str) -> Severity {
    if s.eq_ignore_ascii_case("warning") {
        Severity::Warning
    } else {
        Severity::Error
    }
}

/// Parses compiler output into diagnostics. Lines in neither the
/// `file:line:col: severity: message` shape nor CodeQL's native shape become
/// file-less errors at line 0.
pub fn parse_diagnostics(output: &str) -> Vec<Diagnostic> {
    output
        .lines()
        .map(str::trim_end)
        .filter(|l| !l.trim().is_empty() && !noise().is_match(l))
        .map(|line| {
            let caps = canonical_shape()
                .captures(line)
                .or_else(|| codeql_shape().captures(line.trim()));
            match caps {
                Some(c) => Diagnostic::new(
                    Some(PathBuf::from(c["file"].trim())),
                    c["line"].parse().unwrap_or(0),
                    c.name("col").and_then(|m| m.as_str().parse().ok()).unwrap_or(0),
                    severity(&c["sev"]),
                    c["msg"].trim(),
                ),
                None => Diagnostic::error(line.trim()),
            }
        })
        .collect()
}

/// Identifier-shaped tokens that look like library constructs: `ClassName`,
/// `Class::predicate`, or camelCase predicate names. Order of first
/// appearance, deduplicated.
pub fn extract_symbols(message: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for (idx, m) in identifier().find_iter(message).enumerate() {
        let token = m.as_str();
        // A sentence-case opening word ("Could not ...") is prose, not a class.
        if idx == 0 && is_sentence_case(token) {
            continue;
        }
        if looks_like_construct(token) && !out.iter().any(|s| s == token) {
            out.push(token.to_string());
        }
    }
    out
}

fn looks_like_construct(token: &str) -> bool {
    let head = token.split("::").next().unwrap_or(token);
    let first = head.chars().next().unwrap_or('_');
    if first.is_ascii_uppercase() {
        let all_caps = head.len() > 1 && head.chars().all(|c| !c.is_ascii_lowercase());
        return !all_caps;
    }
    first.is_ascii_lowercase() && head.chars().any(|c| c.is_ascii_uppercase())
}

fn is_sentence_case(token: &str) -> bool {
    let mut chars = token.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_uppercase())
        && chars.all(|c| c.is_ascii_lowercase())
        && token.len() > 1
}
