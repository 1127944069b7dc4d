use sha2::{Digest, Sha256};

use super::prompts::SYSTEM;
use super::transport::{LlmRequest, Message, Role, Transport, TransportError};
use crate::orchestrator::{Stage, Transcript};
use crate::question::{Language, Question};

/// One conversation with the model, shared by every stage of a run.
///
/// The system prompt goes out with the first request. Each successful call
/// is recorded in the transcript under its stage with the request digest.
pub struct Session<'t> {
    id: String,
    language: Language,
    messages: Vec<Message>,
    bytes_sent: u64,
    calls: u64,
    transport: &'t mut dyn Transport,
    transcript: Transcript,
}

impl<'t> Session<'t> {
    pub fn new(id: impl Into<String>, language: Language, transport: &'t mut dyn Transport) -> Self {
        Self {
            id: id.into(),
            language,
            messages: Vec::new(),
            bytes_sent: 0,
            calls: 0,
            transport,
            transcript: Transcript::default(),
        }
    }

    /// Deterministic id so that replayed runs are byte-identical.
    pub fn id_for(question: &Question) -> String {
        let mut hasher = Sha256::new();
        hasher.update(question.goal().as_bytes());
        hasher.update(b"\n");
        hasher.update(question.schema().to_inline().as_bytes());
        let hex = hex::encode(hasher.finalize());
        format!("s-{}", &hex[..16])
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn language(&self) -> Language {
        self.language
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    /// Bytes of system and user content successfully sent so far.
    pub fn bytes_sent(&self) -> u64 {
        self.bytes_sent
    }

    /// Transport calls attempted, including failed ones.
    pub fn calls(&self) -> u64 {
        self.calls
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn transcript_mut(&mut self) -> &mut Transcript {
        &mut self.transcript
    }

    pub fn into_transcript(self) -> Transcript {
        self.transcript
    }

    /// Sends `prompt` as the next user message and returns the reply.
    pub fn ask(&mut self, stage: Stage, prompt: &str) -> Result<String, TransportError> {
        let mut sent = Vec::with_capacity(2);
        if self.messages.is_empty() {
            let system = SYSTEM
                .render(&[("language", self.language.as_str())])
                .expect("system template renders");
            sent.push(Message::new(Role::System, system));
        }
        sent.push(Message::new(Role::User, prompt));
        let mut history = self.messages.clone();
        history.extend(sent.iter().cloned());

        self.calls += 1;
        let request = LlmRequest {
            session_id: &self.id,
            stage,
            history: &history,
            sent: &sent,
        };
        let digest = request.digest();
        let reply = self.transport.send(&request)?;

        self.bytes_sent += sent.iter().map(|m| m.content.len() as u64).sum::<u64>();
        self.messages.extend(sent);
        self.messages.push(Message::new(Role::Assistant, reply.clone()));
        self.transcript.record(stage, digest, None);
        Ok(reply)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::FnTransport;
    use crate::question::OutputSchema;

    #[test]
    fn first_call_carries_system_prompt_and_bytes_add_up() {
        let mut seen = Vec::new();
        let mut t = FnTransport(|r: &LlmRequest<'_>| {
            seen.push((r.sent.len(), r.history.len(), r.session_id.to_string()));
            Ok("ok".to_string())
        });
        let mut s = Session::new("s-1", Language::Java, &mut t);
        s.ask(Stage::SelftestGen, "abc").unwrap();
        let after_first = s.bytes_sent();
        s.ask(Stage::KeywordExtract, "de").unwrap();
        assert_eq!(s.bytes_sent(), after_first + 2);
        assert!(after_first > 3);
        assert_eq!(s.messages().len(), 5);
        assert_eq!(s.calls(), 2);
        assert_eq!(s.transcript().events().len(), 2);
        drop(s);
        assert_eq!(seen, vec![(2, 2, "s-1".into()), (1, 4, "s-1".into())]);
    }

    #[test]
    fn failed_calls_send_no_bytes() {
        let mut t = FnTransport(|_: &LlmRequest<'_>| {
            Err(TransportError::Http {
                attempts: 1,
                message: "down".into(),
            })
        });
        let mut s = Session::new("s", Language::Java, &mut t);
        assert!(s.ask(Stage::SelftestGen, "x").is_err());
        assert_eq!(s.bytes_sent(), 0);
        assert_eq!(s.calls(), 1);
        assert!(s.messages().is_empty());
        assert!(s.transcript().events().is_empty());
    }

    #[test]
    fn ids_are_stable() {
        let schema = OutputSchema::parse_inline("location:where").unwrap();
        let q = Question::new("find things", schema, Language::Java).unwrap();
        assert_eq!(Session::id_for(&q), Session::id_for(&q.clone()));
        assert_eq!(Session::id_for(&q).len(), 18);
    }
}
