//! The user's question: a goal in natural language plus the shape of the
//! table they want back.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QuestionError {
    #[error("question goal is empty")]
    EmptyGoal,
    #[error("output schema has no columns")]
    EmptySchema,
    #[error("duplicate column name `{0}`")]
    DuplicateColumn(String),
    #[error("invalid column name `{0}`: expected an identifier")]
    InvalidColumnName(String),
    #[error("malformed schema entry `{0}`: expected `name:description`")]
    MalformedEntry(String),
    #[error("unsupported analyzed language `{0}`")]
    UnsupportedLanguage(String),
}

/// Language of the codebase being analyzed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    #[default]
    Java,
}

impl Language {
    pub fn as_str(self) -> &'static str {
        match self {
            Language::Java => "java",
        }
    }

    pub fn source_extension(self) -> &'static str {
        match self {
            Language::Java => "java",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Language {
    type Err = QuestionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "java" => Ok(Language::Java),
            other => Err(QuestionError::UnsupportedLanguage(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub description: String,
}

/// Ordered, non-empty list of uniquely named output columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Column>", into = "Vec<Column>")]
pub struct OutputSchema {
    columns: Vec<Column>,
}

impl OutputSchema {
    pub fn new(columns: Vec<Column>) -> Result<Self, QuestionError> {
        if columns.is_empty() {
            return Err(QuestionError::EmptySchema);
        }
        let mut seen = std::collections::HashSet::new();
        for col in &columns {
            if !is_identifier(&col.name) {
                return Err(QuestionError::InvalidColumnName(col.name.clone()));
            }
            if !seen.insert(col.name.as_str()) {
                return Err(QuestionError::DuplicateColumn(col.name.clone()));
            }
        }
        Ok(Self { columns })
    }

    /// Parses the inline CLI encoding `name:description;name:description`.
    pub fn parse_inline(text: &str) -> Result<Self, QuestionError> {
        let mut columns = Vec::new();
        for entry in text.split(';') {
            let entry = entry.trim();
            if entry.is_empty() {
                continue;
            }
            columns.push(parse_column(entry)?);
        }
        Self::new(columns)
    }

    /// Parses one `name: description` entry per non-empty line.
    pub fn parse_lines(text: &str) -> Result<Self, QuestionError> {
        let columns = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(parse_column)
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(columns)
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn arity(&self) -> usize {
        self.columns.len()
    }

    /// Stable hex digest of the column names and descriptions.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for col in &self.columns {
            hasher.update(col.name.as_bytes());
            hasher.update([0u8]);
            hasher.update(col.description.trim().as_bytes());
            hasher.update([0xffu8]);
        }
        hex::encode(hasher.finalize())
    }

    /// Inline encoding accepted by [`OutputSchema::parse_inline`].
    pub fn to_inline(&self) -> String {
        self.columns
            .iter()
            .map(|c| format!("{}:{}", c.name, c.description))
            .collect::<Vec<_>>()
            .join(";")
    }
}

impl TryFrom<Vec<Column>> for OutputSchema {
    type Error = QuestionError;

    fn try_from(columns: Vec<Column>) -> Result<Self, Self::Error> {
        Self::new(columns)
    }
}

impl From<OutputSchema> for Vec<Column> {
    fn from(schema: OutputSchema) -> Self {
        schema.columns
    }
}

fn parse_column(entry: &str) -> Result<Column, QuestionError> {
    let (name, description) = entry
        .split_once(':')
        .ok_or_else(|| QuestionError::MalformedEntry(entry.to_string()))?;
    Ok(Column {
        name: name.trim().to_string(),
        description: description.trim().to_string(),
    })
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    goal: String,
    schema: OutputSchema,
    #[serde(default)]
    language: Language,
}

impl Question {
    pub fn new(goal: impl Into<String>, schema: OutputSchema, language: Language) -> Result<Self, QuestionError> {
        let goal = goal.into();
        if goal.trim().is_empty() {
            return Err(QuestionError::EmptyGoal);
        }
        Ok(Self {
            goal: goal.trim().to_string(),
            schema,
            language,
        })
    }

    pub fn goal(&self) -> &str {
        &self.goal
    }

    pub fn schema(&self) -> &OutputSchema {
        &self.schema
    }

    pub fn language(&self) -> Language {
        self.language
    }

    /// Goal text lowercased with whitespace runs collapsed.
    pub fn normalized_goal(&self) -> String {
        self.goal
            .split_whitespace()
            .map(str::to_lowercase)
            .collect::<Vec<_>>()
            .join(" ")
    }
}
