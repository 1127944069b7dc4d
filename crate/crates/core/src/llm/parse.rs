//! Extraction of structured answers from free-form model replies.
//!
//! Parsers return `Err(reason)` with a short explanation that is sent back
//! to the model in the reprompt.

use std::collections::HashSet;
use std::sync::OnceLock;

use regex::Regex;

use crate::docs_index::is_qualified_name;
use crate::engine::Snippet;
use crate::question::Language;
use crate::selftest::{Expectation, SelfTestCase, MAX_SELF_TESTS};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeBlock {
    /// Info string after the opening fence, lowercased.
    pub lang: String,
    pub body: String,
    /// Text between this block and the next one.
    pub trailer: String,
}

/// Fenced code blocks in order of appearance. An unterminated block runs
/// to the end of the text.
pub fn code_blocks(text: &str) -> Vec<CodeBlock> {
    let mut blocks: Vec<CodeBlock> = Vec::new();
    let mut current: Option<(String, Vec<&str>)> = None;
    let mut trailer: Vec<&str> = Vec::new();
    for line in text.lines() {
        let trimmed = line.trim_start();
        match current.take() {
            Some((lang, body)) if trimmed.starts_with("```") => {
                flush_trailer(&mut blocks, &mut trailer);
                blocks.push(CodeBlock {
                    lang,
                    body: body.join("\n"),
                    trailer: String::new(),
                });
            }
            Some((lang, mut body)) => {
                body.push(line);
                current = Some((lang, body));
            }
            None if trimmed.starts_with("```") => {
                flush_trailer(&mut blocks, &mut trailer);
                let lang = trimmed.trim_start_matches('`').trim().to_ascii_lowercase();
                current = Some((lang, Vec::new()));
            }
            None => trailer.push(line),
        }
    }
    if let Some((lang, body)) = current {
        flush_trailer(&mut blocks, &mut trailer);
        blocks.push(CodeBlock {
            lang,
            body: body.join("\n"),
            trailer: String::new(),
        });
    }
    flush_trailer(&mut blocks, &mut trailer);
    blocks
}

fn flush_trailer(blocks: &mut [CodeBlock], trailer: &mut Vec<&str>) {
    if let Some(last) = blocks.last_mut() {
        if !trailer.is_empty() {
            if !last.trailer.is_empty() {
                last.trailer.push('\n');
            }
            last.trailer.push_str(&trailer.join("\n"));
        }
    }
    trailer.clear();
}

/// The query in a reply: the first `ql`/`codeql` block, else the first
/// block of any kind.
pub fn parse_query(text: &str) -> Result<String, String> {
    let blocks = code_blocks(text);
    let block = blocks
        .iter()
        .find(|b| b.lang == "ql" || b.lang == "codeql")
        .or_else(|| blocks.first())
        .ok_or("the reply contains no fenced code block")?;
    let body = block.body.trim();
    if body.is_empty() {
        return Err("the code block is empty".into());
    }
    Ok(format!("{body}\n"))
}

/// A single program, for snippet repair.
pub fn parse_program(text: &str) -> Result<String, String> {
    let block = code_blocks(text)
        .into_iter()
        .find(|b| !b.body.trim().is_empty())
        .ok_or("the reply contains no non-empty fenced code block")?;
    Ok(format!("{}\n", block.body.trim_end()))
}

fn class_name() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?m)^\s*(?:public\s+)?(?:(?:final|abstract)\s+)*(?:class|interface|enum|record)\s+([A-Za-z_][A-Za-z0-9_]*)")
            .unwrap()
    })
}

/// Test programs from the code blocks of a reply, with the `EXPECT:` and
/// `NOTE:` lines that follow each block. Unusable metadata falls back to
/// the non-empty expectation. At most [`MAX_SELF_TESTS`] cases are kept.
pub fn parse_selftests(text: &str, language: Language) -> Result<Vec<SelfTestCase>, String> {
    let mut cases = Vec::new();
    let mut used = HashSet::new();
    for block in code_blocks(text) {
        if block.body.trim().is_empty() || block.lang == "ql" || block.lang == "codeql" {
            continue;
        }
        let stem = class_name()
            .captures(&block.body)
            .map(|c| c[1].to_string())
            .unwrap_or_else(|| format!("Test{}", cases.len() + 1));
        let mut filename = format!("{stem}.{}", language.source_extension());
        let mut n = 2;
        while !used.insert(filename.clone()) {
            filename = format!("{stem}_{n}.{}", language.source_extension());
            n += 1;
        }
        let mut expectation = Expectation::NonEmpty;
        let mut note = Vec::new();
        for line in block.trailer.lines().map(str::trim) {
            if let Some(spec) = strip_label(line, "EXPECT:") {
                if let Some(e) = parse_expectation(spec, &filename) {
                    expectation = e;
                }
            } else if let Some(n) = strip_label(line, "NOTE:") {
                note.push(n.to_string());
            }
        }
        let snippet = Snippet::new(filename, format!("{}\n", block.body.trim_end()));
        let case = SelfTestCase::new(snippet.clone(), expectation, note.join(" "))
            .unwrap_or_else(|_| SelfTestCase::non_empty(snippet));
        cases.push(case);
        if cases.len() == MAX_SELF_TESTS {
            break;
        }
    }
    if cases.is_empty() {
        return Err("the reply contains no test program in a fenced code block".into());
    }
    Ok(cases)
}

fn strip_label<'a>(line: &'a str, label: &str) -> Option<&'a str> {
    let line = line.trim_start_matches(['*', '-', '_', ' ']);
    line.get(..label.len())
        .filter(|p| p.eq_ignore_ascii_case(label))
        .map(|_| line[label.len()..].trim().trim_end_matches(['*', '_']).trim())
}

fn parse_expectation(spec: &str, filename: &str) -> Option<Expectation> {
    let spec = spec.trim().to_ascii_lowercase();
    if spec == "non_empty" || spec == "non-empty" {
        return Some(Expectation::NonEmpty);
    }
    if let Some(n) = spec.strip_prefix("rows=") {
        return n
            .trim()
            .parse()
            .ok()
            .filter(|&n| n >= 1)
            .map(Expectation::ExactRowCount);
    }
    if let Some(lines) = spec.strip_prefix("lines=") {
        let parsed: Option<Vec<(String, u32)>> = lines
            .split(',')
            .map(|l| {
                l.trim()
                    .parse()
                    .ok()
                    .filter(|&l| l >= 1)
                    .map(|l| (filename.to_string(), l))
            })
            .collect();
        return parsed.filter(|l| !l.is_empty()).map(Expectation::ContainsLocations);
    }
    None
}

fn list_items(text: &str) -> Vec<String> {
    text.split([',', '\n', ';'])
        .map(|item| {
            let item = item.trim().trim_start_matches(['-', '*', '•']).trim_start();
            // Numbered list markers such as `1.` or `2)`.
            let item = match item.split_once(['.', ')']) {
                Some((n, rest)) if !n.is_empty() && n.chars().all(|c| c.is_ascii_digit()) => rest,
                _ => item,
            };
            item.trim().trim_matches(['`', '"', '\'', '.', ' ']).to_string()
        })
        .filter(|s| !s.is_empty())
        .collect()
}

fn body_or_block(text: &str) -> String {
    match code_blocks(text).into_iter().next() {
        Some(b) => b.body,
        None => text.to_string(),
    }
}

/// Comma-separated keywords, deduplicated in order.
pub fn parse_keywords(text: &str) -> Result<Vec<String>, String> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for item in list_items(&body_or_block(text)) {
        if item.split_whitespace().count() > 3 || item.len() > 40 {
            return Err(format!(
                "`{}` is not a keyword; reply with a comma-separated list only",
                shorten(&item)
            ));
        }
        if seen.insert(item.to_lowercase()) {
            out.push(item);
        }
    }
    if out.is_empty() {
        return Err("the reply contains no keywords".into());
    }
    Ok(out)
}

/// Comma-separated `Class` / `Class::predicate` names; `none` is the
/// empty list.
pub fn parse_constructs(text: &str) -> Result<Vec<String>, String> {
    let body = body_or_block(text);
    if body.trim().trim_end_matches('.').eq_ignore_ascii_case("none") {
        return Ok(Vec::new());
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for item in list_items(&body) {
        let name = item.trim_end_matches("()");
        if !is_qualified_name(name) {
            return Err(format!(
                "`{}` is not of the form ClassName or ClassName::predicateName",
                shorten(name)
            ));
        }
        if seen.insert(name.to_string()) {
            out.push(name.to_string());
        }
    }
    if out.is_empty() {
        return Err("the reply contains no construct names".into());
    }
    Ok(out)
}

fn shorten(s: &str) -> String {
    if s.chars().count() > 40 {
        format!("{}...", s.chars().take(40).collect::<String>())
    } else {
        s.to_string()
    }
}
