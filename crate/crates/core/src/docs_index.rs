//! Catalog of documented standard-library constructs of the query language.
//!
//! Used three ways: to check that constructs proposed by the model exist, to
//! iteratively refine such proposals, and to pick documentation for compiler
//! diagnostics.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::Diagnostic;
use crate::llm::{self, GatewayError, Session};
use crate::orchestrator::Stage;

pub const INDEX_VERSION: u32 = 1;

/// Keyword-map hits kept per unresolved diagnostic symbol.
pub const MAX_KEYWORD_HITS: usize = 3;

const STOPWORDS: &[&str] = &[
    "the", "and", "for", "get", "gets", "has", "holds", "this", "that", "with", "from", "are", "any", "all", "its",
    "not", "into", "which", "where", "whose", "such", "some", "one", "more", "than", "was", "can", "may", "result",
    "results",
];

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("cannot read index {path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate construct `{name}`")]
    DuplicateConstruct { line: usize, name: String },
    #[error("line {line}: unsupported index version {version}")]
    UnsupportedVersion { line: usize, version: u32 },
    #[error("predicate `{name}` has no existing parent class")]
    OrphanPredicate { name: String },
    #[error("class `{class}` lists member `{member}` which is not one of its predicates")]
    DanglingMember { class: String, member: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstructKind {
    Class,
    Predicate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstructDoc {
    pub qualified_name: String,
    pub kind: ConstructKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    pub doc: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub members: Vec<String>,
}

impl ConstructDoc {
    pub fn first_sentence(&self) -> &str {
        let text = self.doc.trim();
        let end = text
            .find(". ")
            .map(|i| i + 1)
            .or_else(|| text.find('\n'))
            .unwrap_or(text.len());
        &text[..end]
    }
}

/// Rendering used inside prompts.
impl fmt::Display for ConstructDoc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            ConstructKind::Class => "class",
            ConstructKind::Predicate => "predicate",
        };
        write!(f, "{kind} {}: {}", self.qualified_name, self.doc.trim())?;
        if !self.members.is_empty() {
            write!(f, "\n  members: {}", self.members.join(", "))?;
        }
        Ok(())
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum IndexLine {
    Header { version: u32 },
    Entry(ConstructDoc),
}

#[derive(Debug, Clone, Default)]
pub struct ConstructIndex {
    entries: Vec<ConstructDoc>,
    by_name: HashMap<String, usize>,
    keywords: BTreeMap<String, BTreeSet<usize>>,
}

/// Order-preserving split of proposed names into known and unknown.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Validation {
    pub valid: Vec<String>,
    pub invalid: Vec<String>,
}

pub fn load_index(path: &Path) -> Result<ConstructIndex, IndexError> {
    let text = fs::read_to_string(path).map_err(|e| IndexError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    ConstructIndex::parse(&text)
}

impl ConstructIndex {
    /// Parses line-delimited JSON records. An optional `{"version": N}` line
    /// declares the format version.
    pub fn parse(text: &str) -> Result<Self, IndexError> {
        let mut entries = Vec::new();
        let mut by_name = HashMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let parsed: IndexLine = serde_json::from_str(raw).map_err(|e| IndexError::Parse {
                line,
                message: e.to_string(),
            })?;
            let entry = match parsed {
                IndexLine::Header { version } if version == INDEX_VERSION => continue,
                IndexLine::Header { version } => return Err(IndexError::UnsupportedVersion { line, version }),
                IndexLine::Entry(entry) => entry,
            };
            check_entry_shape(&entry, line)?;
            if by_name.insert(entry.qualified_name.clone(), entries.len()).is_some() {
                return Err(IndexError::DuplicateConstruct {
                    line,
                    name: entry.qualified_name,
                });
            }
            entries.push(entry);
        }
        let mut index = Self {
            entries,
            by_name,
            keywords: BTreeMap::new(),
        };
        index.wire_members()?;
        index.rebuild_keywords();
        Ok(index)
    }

    fn wire_members(&mut self) -> Result<(), IndexError> {
        let mut children: HashMap<String, Vec<String>> = HashMap::new();
        for entry in &self.entries {
            if entry.kind == ConstructKind::Predicate {
                let parent = entry.parent.clone().unwrap_or_default();
                match self.by_name.get(&parent).map(|&i| self.entries[i].kind) {
                    Some(ConstructKind::Class) => {
                        children.entry(parent).or_default().push(entry.qualified_name.clone())
                    }
                    _ => {
                        return Err(IndexError::OrphanPredicate {
                            name: entry.qualified_name.clone(),
                        })
                    }
                }
            }
        }
        for entry in &mut self.entries {
            if entry.kind != ConstructKind::Class {
                continue;
            }
            let own = children.remove(&entry.qualified_name).unwrap_or_default();
            if let Some(member) = entry.members.iter().find(|m| !own.contains(m)) {
                return Err(IndexError::DanglingMember {
                    class: entry.qualified_name.clone(),
                    member: member.clone(),
                });
            }
            for m in own {
                if !entry.members.contains(&m) {
                    entry.members.push(m);
                }
            }
        }
        Ok(())
    }

    /// Recomputes the token map from the entries.
    pub fn rebuild_keywords(&mut self) {
        self.keywords.clear();
        for (i, entry) in self.entries.iter().enumerate() {
            let text = format!("{} {}", entry.qualified_name, entry.first_sentence());
            for token in tokenize(&text) {
                self.keywords.entry(token).or_default().insert(i);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ConstructDoc] {
        &self.entries
    }

    pub fn get(&self, qualified_name: &str) -> Option<&ConstructDoc> {
        self.by_name.get(qualified_name).map(|&i| &self.entries[i])
    }

    pub fn contains(&self, qualified_name: &str) -> bool {
        self.by_name.contains_key(qualified_name)
    }

    pub fn keyword_hits(&self, token: &str) -> impl Iterator<Item = &ConstructDoc> {
        self.keywords
            .get(&token.to_lowercase())
            .into_iter()
            .flatten()
            .map(|&i| &self.entries[i])
    }

    fn position(&self, qualified_name: &str) -> Option<usize> {
        self.by_name.get(qualified_name).copied()
    }

    /// Entries sharing the most tokens with `symbol`; classes before
    /// predicates on ties, then index order.
    fn best_keyword_matches(&self, symbol: &str) -> Vec<usize> {
        let mut scores: BTreeMap<usize, usize> = BTreeMap::new();
        for token in tokenize(symbol) {
            for &i in self.keywords.get(&token).into_iter().flatten() {
                *scores.entry(i).or_default() += 1;
            }
        }
        let mut ranked: Vec<(usize, usize)> = scores.into_iter().collect();
        ranked.sort_by_key(|&(i, score)| {
            (
                std::cmp::Reverse(score),
                self.entries[i].kind != ConstructKind::Class,
                i,
            )
        });
        ranked.into_iter().take(MAX_KEYWORD_HITS).map(|(i, _)| i).collect()
    }

    fn resolve_symbol(&self, symbol: &str) -> Vec<usize> {
        if let Some(i) = self.position(symbol) {
            return vec![i];
        }
        if let Some((class, _)) = symbol.split_once("::") {
            if let Some(i) = self.position(class) {
                return vec![i];
            }
        }
        self.best_keyword_matches(symbol)
    }
}

fn check_entry_shape(entry: &ConstructDoc, line: usize) -> Result<(), IndexError> {
    let bad = |message: String| IndexError::Parse { line, message };
    if !is_qualified_name(&entry.qualified_name) {
        return Err(bad(format!(
            "`{}` is not a qualified construct name",
            entry.qualified_name
        )));
    }
    match (entry.kind, &entry.parent, entry.qualified_name.split_once("::")) {
        (ConstructKind::Class, None, None) => Ok(()),
        (ConstructKind::Predicate, Some(parent), Some((owner, _))) if owner == parent => {
            if entry.members.is_empty() {
                Ok(())
            } else {
                Err(bad(format!("predicate `{}` cannot have members", entry.qualified_name)))
            }
        }
        (ConstructKind::Predicate, _, _) => Err(bad(format!(
            "predicate `{}` must be named `Parent::name` with a matching parent",
            entry.qualified_name
        ))),
        (ConstructKind::Class, _, _) => Err(bad(format!(
            "class `{}` cannot have a parent or a `::` name",
            entry.qualified_name
        ))),
    }
}

/// `Class` or `Class::predicate`.
pub fn is_qualified_name(name: &str) -> bool {
    let ident = |s: &str| {
        let mut chars = s.chars();
        matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
            && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
    };
    let (class, member) = match name.split_once("::") {
        Some((c, m)) => (c, Some(m)),
        None => (name, None),
    };
    class.starts_with(|c: char| c.is_ascii_uppercase()) && ident(class) && member.is_none_or(ident)
}

/// Lowercase word tokens; camelCase and `::` are split, short words and
/// stopwords dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split(|c: char| !c.is_ascii_alphanumeric()) {
        for part in split_camel(word) {
            let lower = part.to_ascii_lowercase();
            if lower.len() >= 3 && !STOPWORDS.contains(&lower.as_str()) && !out.contains(&lower) {
                out.push(lower);
            }
        }
    }
    out
}

fn split_camel(word: &str) -> Vec<&str> {
    let bytes = word.as_bytes();
    let mut parts = Vec::new();
    let mut start = 0;
    for i in 1..bytes.len() {
        let (prev, cur) = (bytes[i - 1], bytes[i]);
        let next_lower = bytes.get(i + 1).is_some_and(u8::is_ascii_lowercase);
        let boundary = (prev.is_ascii_lowercase() || prev.is_ascii_digit()) && cur.is_ascii_uppercase()
            || prev.is_ascii_uppercase() && cur.is_ascii_uppercase() && next_lower;
        if boundary {
            parts.push(&word[start..i]);
            start = i;
        }
    }
    if start < word.len() {
        parts.push(&word[start..]);
    }
    parts
}

pub fn validate_constructs(index: &ConstructIndex, names: &[String]) -> Validation {
    let (valid, invalid) = names.iter().cloned().partition(|n| index.contains(n));
    Validation { valid, invalid }
}

/// Proposal rounds recorded by [`refine_constructs`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Refinement {
    pub docs: Vec<ConstructDoc>,
    pub rounds: Vec<Validation>,
}

/// Asks the model for constructs matching `keywords`, feeding back the
/// names that do not exist, until a round is fully valid or `rounds` are
/// used up. Returns docs for the valid names of the last round.
pub fn refine_constructs(
    session: &mut Session<'_>,
    index: &ConstructIndex,
    keywords: &[String],
    rounds: u32,
) -> Result<Refinement, GatewayError> {
    let mut refinement = Refinement::default();
    let mut feedback: Vec<String> = Vec::new();
    for _ in 0..rounds.max(1) {
        let proposed = llm::propose_constructs(session, keywords, &feedback)?;
        let validation = validate_constructs(index, &proposed);
        let digest = if validation.invalid.is_empty() {
            format!("{} proposed, all valid", proposed.len())
        } else {
            format!(
                "{} proposed, {} invalid: {}",
                proposed.len(),
                validation.invalid.len(),
                validation.invalid.join(", ")
            )
        };
        session
            .transcript_mut()
            .record(Stage::ConstructValidate, digest, Some(validation.invalid.is_empty()));
        let done = validation.invalid.is_empty();
        feedback = validation.invalid.clone();
        refinement.docs = validation.valid.iter().filter_map(|n| index.get(n).cloned()).collect();
        refinement.rounds.push(validation);
        if done {
            break;
        }
    }
    Ok(refinement)
}

/// Documentation for the symbols named in `diagnostics`: exact construct,
/// else the parent class of `Class::predicate`, else the best keyword-map
/// matches. Deduplicated and returned in index order.
pub fn docs_for_diagnostics(index: &ConstructIndex, diagnostics: &[Diagnostic]) -> Vec<ConstructDoc> {
    let hits: BTreeSet<usize> = diagnostics
        .iter()
        .flat_map(|d| d.symbols.iter())
        .flat_map(|s| index.resolve_symbol(s))
        .collect();
    hits.into_iter().map(|i| index.entries[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MINI: &str = r#"{"version": 1}
{"qualified_name": "MethodCall", "kind": "class", "doc": "A method call expression."}
{"qualified_name": "MethodCall::getMethod", "kind": "predicate", "parent": "MethodCall", "doc": "Gets the method invoked by this call."}
{"qualified_name": "MethodCall::getArgument", "kind": "predicate", "parent": "MethodCall", "doc": "Gets the argument at the given index."}
{"qualified_name": "MethodCall::getQualifier", "kind": "predicate", "parent": "MethodCall", "doc": "Gets the qualifying expression of this call."}
{"qualified_name": "Array", "kind": "class", "doc": "An array type. Arrays have an element type."}
{"qualified_name": "Array::getElementType", "kind": "predicate", "parent": "Array", "doc": "Gets the type of the array elements."}
{"qualified_name": "Expr", "kind": "class", "doc": "A common super-class for all expressions."}
"#;

    fn mini() -> ConstructIndex {
        ConstructIndex::parse(MINI).unwrap()
    }

    fn names(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn loads_and_wires_members() {
        let idx = ConstructIndex::parse(&MINI.lines().take(5).collect::<Vec<_>>().join("\n")).unwrap();
        assert_eq!(idx.len(), 4);
        assert_eq!(
            idx.get("MethodCall").unwrap().members,
            names(&[
                "MethodCall::getMethod",
                "MethodCall::getArgument",
                "MethodCall::getQualifier"
            ])
        );
        assert!(idx.get("MethodCall::getMethod").unwrap().members.is_empty());
    }

    #[test]
    fn empty_index_is_valid() {
        assert!(ConstructIndex::parse("").unwrap().is_empty());
        assert!(ConstructIndex::parse("{\"version\": 1}\n\n").unwrap().is_empty());
    }

    #[test]
    fn rejects_duplicates_and_bad_lines() {
        let dup = format!("{MINI}{{\"qualified_name\": \"MethodCall\", \"kind\": \"class\", \"doc\": \"again\"}}\n");
        assert!(matches!(
            ConstructIndex::parse(&dup),
            Err(IndexError::DuplicateConstruct { line: 9, ref name }) if name == "MethodCall"
        ));
        assert!(matches!(
            ConstructIndex::parse("{\"version\": 1}\nnot json"),
            Err(IndexError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            ConstructIndex::parse("{\"version\": 7}"),
            Err(IndexError::UnsupportedVersion { line: 1, version: 7 })
        ));
        assert!(matches!(
            ConstructIndex::parse(r#"{"qualified_name": "Foo::bar", "kind": "predicate", "parent": "Foo", "doc": ""}"#),
            Err(IndexError::OrphanPredicate { .. })
        ));
        assert!(matches!(
            ConstructIndex::parse(r#"{"qualified_name": "Foo", "kind": "class", "doc": "", "members": ["Foo::x"]}"#),
            Err(IndexError::DanglingMember { .. })
        ));
        assert!(matches!(
            ConstructIndex::parse(r#"{"qualified_name": "Foo::x", "kind": "predicate", "parent": "Bar", "doc": ""}"#),
            Err(IndexError::Parse { .. })
        ));
    }

    #[test]
    fn validation_partitions_in_order() {
        let idx = mini();
        let v = validate_constructs(
            &idx,
            &names(&[
                "MethodCall",
                "MethodCall::getReceiver",
                "ArrayType",
                "ArrayType::getElementType",
                "MethodCall::getArgument",
            ]),
        );
        assert_eq!(v.valid, names(&["MethodCall", "MethodCall::getArgument"]));
        assert_eq!(
            v.invalid,
            names(&["MethodCall::getReceiver", "ArrayType", "ArrayType::getElementType"])
        );
        assert_eq!(validate_constructs(&idx, &[]), Validation::default());
        let all = names(&["Array", "Expr"]);
        assert_eq!(validate_constructs(&idx, &all).valid, all);
    }

    #[test]
    fn tokenizer_splits_camel_case() {
        assert_eq!(tokenize("ArrayType"), names(&["array", "type"]));
        assert_eq!(
            tokenize("MethodCall::getArgument"),
            names(&["method", "call", "argument"])
        );
        assert_eq!(tokenize("HTTPRequest an IO"), names(&["http", "request"]));
    }

    fn diag(msg: &str) -> Diagnostic {
        Diagnostic::error(msg)
    }

    #[test]
    fn diagnostics_resolve_exact_parent_and_keyword() {
        let idx = mini();
        let docs = docs_for_diagnostics(&idx, &[diag("could not resolve type ArrayType")]);
        let found: Vec<&str> = docs.iter().map(|d| d.qualified_name.as_str()).collect();
        assert!(found.contains(&"Array"), "{found:?}");

        let docs = docs_for_diagnostics(&idx, &[diag("predicate MethodCall::getReceiver not found")]);
        assert_eq!(docs.len(), 1);
        assert_eq!(docs[0].qualified_name, "MethodCall");

        let docs = docs_for_diagnostics(&idx, &[diag("wrong use of Expr")]);
        assert_eq!(docs[0].qualified_name, "Expr");

        assert!(docs_for_diagnostics(&idx, &[diag("syntax error: unexpected ;")]).is_empty());
        assert!(docs_for_diagnostics(&idx, &[]).is_empty());
    }

    proptest! {
        #[test]
        fn validation_is_a_partition(picks in proptest::collection::vec(0usize..10, 0..12)) {
            let pool = ["MethodCall", "Array", "ArrayType", "Expr", "Nope", "MethodCall::getMethod",
                        "MethodCall::getReceiver", "Array::getElementType", "Expr::x", "Foo"];
            let input: Vec<String> = picks.iter().map(|&i| pool[i].to_string()).collect();
            let idx = mini();
            let v = validate_constructs(&idx, &input);
            let mut merged = v.valid.clone();
            merged.extend(v.invalid.clone());
            let mut a = merged.clone(); a.sort();
            let mut b = input.clone(); b.sort();
            prop_assert_eq!(a, b);
            prop_assert!(v.valid.iter().all(|n| idx.contains(n)));
            prop_assert!(v.invalid.iter().all(|n| !idx.contains(n)));
        }

        #[test]
        fn diagnostic_docs_ignore_order_and_repetition(
            msgs in proptest::collection::vec(prop_oneof![
                Just("type ArrayType not found"), Just("no member getReceiver on MethodCall"),
                Just("MethodCall::getFoo missing"), Just("bad Expr here"), Just("oops"),
                Just("unknown ElementType")], 0..6),
            seed in any::<u64>())
        {
            let idx = mini();
            let diags: Vec<Diagnostic> = msgs.iter().map(|m| diag(m)).collect();
            let once = docs_for_diagnostics(&idx, &diags);
            let mut shuffled = diags.clone();
            let len = shuffled.len().max(1);
            shuffled.rotate_left((seed as usize) % len);
            shuffled.reverse();
            prop_assert_eq!(&docs_for_diagnostics(&idx, &shuffled), &once);
            let mut doubled = diags.clone();
            doubled.extend(diags.iter().cloned());
            prop_assert_eq!(&docs_for_diagnostics(&idx, &doubled), &once);
            prop_assert!(once.iter().all(|d| idx.contains(&d.qualified_name)));
        }
    }
}
