//! Line-delimited recordings of model exchanges.
//!
//! The first line is `{"cassette_version":1}`; every following line is one
//! exchange with the messages that were new in that request, so that the
//! prompt volume of a run can be recomputed from the file alone.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::transport::{LlmRequest, Message, Transport, TransportError};
use crate::orchestrator::Stage;

pub const CASSETTE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteRecord {
    pub seq: usize,
    pub stage: Stage,
    pub digest: String,
    pub sent: Vec<Message>,
    pub response: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    cassette_version: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Cassette {
    pub records: Vec<CassetteRecord>,
}

impl Cassette {
    pub fn parse(text: &str) -> Result<Self, TransportError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let bad = |line: usize, msg: String| TransportError::Io(format!("cassette line {}: {msg}", line + 1));
        match lines.next() {
            None => return Err(TransportError::Io("cassette is empty".into())),
            Some((i, l)) => {
                let header: Header = serde_json::from_str(l).map_err(|e| bad(i, e.to_string()))?;
                if header.cassette_version != CASSETTE_VERSION {
                    return Err(bad(i, format!("unsupported version {}", header.cassette_version)));
                }
            }
        }
        let records = lines
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| bad(i, e.to_string())))
            .collect::<Result<Vec<CassetteRecord>, _>>()?;
        for (n, r) in records.iter().enumerate() {
            if r.seq != n {
                return Err(TransportError::Io(format!("cassette record {n} has seq {}", r.seq)));
            }
        }
        Ok(Self { records })
    }

    pub fn load(path: &Path) -> Result<Self, TransportError> {
        let text = fs::read_to_string(path).map_err(|e| TransportError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&Header {
            cassette_version: CASSETTE_VERSION,
        })
        .expect("header serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    /// Writes a new cassette; an existing file is never overwritten.
    pub fn save_new(&self, path: &Path) -> Result<(), TransportError> {
        let io = |e: std::io::Error| TransportError::Io(format!("{}: {e}", path.display()));
        let mut file = OpenOptions::new().write(true).create_new(true).open(path).map_err(io)?;
        file.write_all(self.to_jsonl().as_bytes()).map_err(io)?;
        file.sync_all().map_err(io)
    }

    /// Sum of the byte lengths of all recorded request messages.
    pub fn request_bytes(&self) -> u64 {
        self.records
            .iter()
            .flat_map(|r| &r.sent)
            .map(|m| m.content.len() as u64)
            .sum()
    }
}

/// Serves a cassette in order and rejects any request that differs from
/// the recorded one.
#[derive(Debug, Clone)]
pub struct ReplayTransport {
    cassette: Cassette,
    next: usize,
}

impl ReplayTransport {
    pub fn new(cassette: Cassette) -> Self {
        Self { cassette, next: 0 }
    }

    pub fn load(path: &Path) -> Result<Self, TransportError> {
        Cassette::load(path).map(Self::new)
    }

    pub fn served(&self) -> usize {
        self.next
    }

    pub fn remaining(&self) -> usize {
        self.cassette.records.len() - self.next
    }
}

impl Transport for ReplayTransport {
    fn send(&mut self, request: &LlmRequest<'_>) -> Result<String, TransportError> {
        let record = self
            .cassette
            .records
            .get(self.next)
            .ok_or(TransportError::CassetteExhausted(self.next))?;
        let digest = request.digest();
        if record.digest != digest || record.stage != request.stage {
            return Err(TransportError::CassetteMismatch {
                index: self.next,
                expected_stage: record.stage.to_string(),
                expected: record.digest.clone(),
                actual_stage: request.stage.to_string(),
                actual: digest,
            });
        }
        self.next += 1;
        Ok(record.response.clone())
    }
}

/// Passes requests to an inner transport and records every exchange.
pub struct RecordTransport<T> {
    inner: T,
    cassette: Cassette,
}

impl<T: Transport> RecordTransport<T> {
    pub fn new(inner: T) -> Self {
        Self {
            inner,
            cassette: Cassette::default(),
        }
    }

    pub fn cassette(&self) -> &Cassette {
        &self.cassette
    }

    pub fn into_cassette(self) -> Cassette {
        self.cassette
    }
}

impl<T: Transport> Transport for RecordTransport<T> {
    fn send(&mut self, request: &LlmRequest<'_>) -> Result<String, TransportError> {
        let response = self.inner.send(request)?;
        self.cassette.records.push(CassetteRecord {
            seq: self.cassette.records.len(),
            stage: request.stage,
            digest: request.digest(),
            sent: request.sent.to_vec(),
            response: response.clone(),
        });
        Ok(response)
    }
}
