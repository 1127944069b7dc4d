use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::orchestrator::Stage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }
}

/// One model call. `history` is the whole conversation including `sent`,
/// the messages that are new in this call.
#[derive(Debug, Clone, Copy)]
pub struct LlmRequest<'a> {
    pub session_id: &'a str,
    pub stage: Stage,
    pub history: &'a [Message],
    pub sent: &'a [Message],
}

impl LlmRequest<'_> {
    /// Stable hash over the stage and the new messages.
    pub fn digest(&self) -> String {
        request_digest(self.stage, self.sent)
    }
}

pub fn request_digest(stage: Stage, sent: &[Message]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(stage.as_str().as_bytes());
    hasher.update(b"\n");
    for m in sent {
        let role = match m.role {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        };
        hasher.update(role.as_bytes());
        hasher.update(b"\n");
        hasher.update(m.content.as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("cassette mismatch at request {index}: expected {expected_stage} {expected}, got {actual_stage} {actual}")]
    CassetteMismatch {
        index: usize,
        expected_stage: String,
        expected: String,
        actual_stage: String,
        actual: String,
    },
    #[error("cassette exhausted after {0} request(s)")]
    CassetteExhausted(usize),
    #[error("script step {index} expects stage {expected}, got {actual}")]
    ScriptMismatch {
        index: usize,
        expected: Stage,
        actual: Stage,
    },
    #[error("script exhausted after {0} response(s)")]
    ScriptExhausted(usize),
    #[error("LLM request failed after {attempts} attempt(s): {message}")]
    Http { attempts: u32, message: String },
    #[error("missing credential: environment variable {0} is not set")]
    MissingCredential(String),
    #[error("cassette I/O: {0}")]
    Io(String),
}

pub trait Transport {
    fn send(&mut self, request: &LlmRequest<'_>) -> Result<String, TransportError>;
}

impl<T: Transport + ?Sized> Transport for &mut T {
    fn send(&mut self, request: &LlmRequest<'_>) -> Result<String, TransportError> {
        (**self).send(request)
    }
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn send(&mut self, request: &LlmRequest<'_>) -> Result<String, TransportError> {
        (**self).send(request)
    }
}

/// Adapts a closure into a transport.
pub struct FnTransport<F>(pub F);

impl<F> Transport for FnTransport<F>
where
    F: FnMut(&LlmRequest<'_>) -> Result<String, TransportError>,
{
    fn send(&mut self, request: &LlmRequest<'_>) -> Result<String, TransportError> {
        (self.0)(request)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptStep {
    /// When set, the step only answers a request of this stage.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<Stage>,
    pub response: String,
}

#[derive(Deserialize)]
struct ScriptFile {
    steps: Vec<ScriptStepRepr>,
}

#[derive(Deserialize)]
struct ScriptStepRepr {
    #[serde(default)]
    stage: Option<Stage>,
    #[serde(default)]
    response: Option<String>,
    #[serde(default)]
    response_file: Option<PathBuf>,
}

/// Canned responses handed out in order, standing in for a live model.
#[derive(Debug, Clone, Default)]
pub struct ScriptedTransport {
    steps: VecDeque<ScriptStep>,
    served: usize,
}

impl ScriptedTransport {
    pub fn new(steps: impl IntoIterator<Item = ScriptStep>) -> Self {
        Self {
            steps: steps.into_iter().collect(),
            served: 0,
        }
    }

    /// Loads `{"steps": [{"stage": .., "response" | "response_file": ..}]}`;
    /// response files are relative to the script.
    pub fn load(path: &Path) -> Result<Self, TransportError> {
        let io = |e: String| TransportError::Io(format!("{}: {e}", path.display()));
        let text = fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
        let file: ScriptFile = serde_json::from_str(&text).map_err(|e| io(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let steps = file
            .steps
            .into_iter()
            .map(|s| {
                let response = match (s.response, s.response_file) {
                    (Some(r), None) => r,
                    (None, Some(f)) => {
                        fs::read_to_string(base.join(&f)).map_err(|e| io(format!("{}: {e}", f.display())))?
                    }
                    _ => return Err(io("each step needs exactly one of response / response_file".into())),
                };
                Ok(ScriptStep {
                    stage: s.stage,
                    response,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(steps))
    }

    pub fn remaining(&self) -> usize {
        self.steps.len()
    }
}

impl Transport for ScriptedTransport {
    fn send(&mut self, request: &LlmRequest<'_>) -> Result<String, TransportError> {
        let step = self
            .steps
            .pop_front()
            .ok_or(TransportError::ScriptExhausted(self.served))?;
        if let Some(expected) = step.stage {
            if expected != request.stage {
                return Err(TransportError::ScriptMismatch {
                    index: self.served,
                    expected,
                    actual: request.stage,
                });
            }
        }
        self.served += 1;
        Ok(step.response)
    }
}

/// Counts calls passed through to an inner transport.
pub struct CountingTransport<T> {
    inner: T,
    calls: usize,
}

impl<T: Transport> CountingTransport<T> {
    pub fn new(inner: T) -> Self {
        Self { inner, calls: 0 }
    }

    pub fn calls(&self) -> usize {
        self.calls
    }

    pub fn into_inner(self) -> T {
        self.inner
    }
}

impl<T: Transport> Transport for CountingTransport<T> {
    fn send(&mut self, request: &LlmRequest<'_>) -> Result<String, TransportError> {
        self.calls += 1;
        self.inner.send(request)
    }
}
