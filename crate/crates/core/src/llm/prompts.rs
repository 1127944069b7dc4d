use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::orchestrator::Stage;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template `{template}` has no value for placeholder `{name}`")]
    Missing { template: &'static str, name: String },
    #[error("template `{template}` has no placeholder `{name}`")]
    Unknown { template: &'static str, name: String },
}

/// A prompt with `{{name}}` placeholders.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: &'static str,
    pub stage: Stage,
    pub text: &'static str,
}

fn placeholder() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{\{([a-z_]+)\}\}").unwrap())
}

impl PromptTemplate {
    pub fn placeholders(&self) -> BTreeSet<&'static str> {
        placeholder()
            .captures_iter(self.text)
            .map(|c| c.get(1).unwrap().as_str())
            .collect()
    }

    /// Fills every placeholder. Missing values and values without a
    /// placeholder are both errors.
    pub fn render(&self, vars: &[(&str, &str)]) -> Result<String, TemplateError> {
        let wanted = self.placeholders();
        if let Some((name, _)) = vars.iter().find(|(n, _)| !wanted.contains(n)) {
            return Err(TemplateError::Unknown {
                template: self.name,
                name: name.to_string(),
            });
        }
        if let Some(name) = wanted.iter().find(|w| !vars.iter().any(|(n, _)| n == *w)) {
            return Err(TemplateError::Missing {
                template: self.name,
                name: name.to_string(),
            });
        }
        // Single pass so substituted values are never re-scanned.
        let rendered = placeholder().replace_all(self.text, |caps: &regex::Captures<'_>| {
            let key = &caps[1];
            vars.iter()
                .find(|(n, _)| *n == key)
                .map(|(_, v)| v.to_string())
                .unwrap_or_default()
        });
        Ok(rendered.trim_end().to_string())
    }
}

macro_rules! template {
    ($ident:ident, $name:literal, $stage:expr) => {
        pub const $ident: PromptTemplate = PromptTemplate {
            name: $name,
            stage: $stage,
            text: include_str!(concat!("../../prompts/", $name, ".txt")),
        };
    };
}

template!(SYSTEM, "system", Stage::SelftestGen);
template!(SELFTEST_GEN, "selftest_gen", Stage::SelftestGen);
template!(SNIPPET_REPAIR, "snippet_repair", Stage::SelftestGen);
template!(KEYWORD_EXTRACT, "keyword_extract", Stage::KeywordExtract);
template!(CONSTRUCT_PROPOSE, "construct_propose", Stage::ConstructPropose);
template!(CONSTRUCT_RETRY, "construct_retry", Stage::ConstructPropose);
template!(QUERY_GEN, "query_gen", Stage::QueryGen);
template!(REPAIR, "repair", Stage::Repair);
template!(ASSIST_PROPOSE, "assist_propose", Stage::AssistPropose);
template!(ASSIST_FEEDBACK, "assist_feedback", Stage::QueryGen);
template!(REPROMPT, "reprompt", Stage::SelftestGen);

pub const ALL: [PromptTemplate; 11] = [
    SYSTEM,
    SELFTEST_GEN,
    SNIPPET_REPAIR,
    KEYWORD_EXTRACT,
    CONSTRUCT_PROPOSE,
    CONSTRUCT_RETRY,
    QUERY_GEN,
    REPAIR,
    ASSIST_PROPOSE,
    ASSIST_FEEDBACK,
    REPROMPT,
];
