//! Transcript capture and replay.
//!
//! A replay file is line-delimited JSON, one [`ReplayRecord`] per line:
//!
//! ```text
//! {"request_hash":"<hex sha256>","request":{...PromptRequest...},"response":{...CompletionResponse...}}
//! ```
//!
//! API keys are never part of a request, so transcripts are safe to commit.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{CompletionProvider, CompletionResponse, ProviderError, PromptRequest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub request_hash: String,
    pub request: PromptRequest,
    pub response: CompletionResponse,
}

/// Forwards to `inner` and appends each successful exchange to `sink`.
pub struct RecordingProvider<P> {
    inner: P,
    sink: Mutex<Box<dyn Write + Send>>,
}

impl<P: CompletionProvider> RecordingProvider<P> {
    pub fn new(inner: P, sink: Box<dyn Write + Send>) -> Self {
        Self {
            inner,
            sink: Mutex::new(sink),
        }
    }

    pub fn into_inner(self) -> P {
        self.inner
    }
}

impl<P: CompletionProvider> CompletionProvider for RecordingProvider<P> {
    fn context_budget(&self) -> usize {
        self.inner.context_budget()
    }

    fn send(&self, request: &PromptRequest) -> Result<CompletionResponse, ProviderError> {
        let response = self.inner.send(request)?;
        let record = ReplayRecord {
            request_hash: request.hash(),
            request: request.clone(),
            response: response.clone(),
        };
        let line = serde_json::to_string(&record).expect("record serializes");
        let mut sink = self.sink.lock().unwrap();
        if let Err(e) = writeln!(sink, "{line}").and_then(|_| sink.flush()) {
            log::warn!("failed to write transcript record: {e}");
        }
        Ok(response)
    }
}

/// Answers from a recorded transcript, keyed by request hash.
#[derive(Debug, Default)]
pub struct ReplayProvider {
    records: HashMap<String, CompletionResponse>,
    budget: usize,
}

impl ReplayProvider {
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self, ProviderError> {
        let mut records = HashMap::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| ProviderError::InvalidRequest(format!("transcript: {e}")))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ReplayRecord = serde_json::from_str(&line).map_err(|e| {
                ProviderError::InvalidRequest(format!("transcript line {}: {e}", n + 1))
            })?;
            records.insert(rec.request_hash, rec.response);
        }
        Ok(Self {
            records,
            budget: super::DEFAULT_CONTEXT_BUDGET,
        })
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budget = budget;
        self
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl CompletionProvider for ReplayProvider {
    fn context_budget(&self) -> usize {
        self.budget
    }

    fn send(&self, request: &PromptRequest) -> Result<CompletionResponse, ProviderError> {
        let hash = request.hash();
        self.records
            .get(&hash)
            .cloned()
            .ok_or(ProviderError::ReplayMiss(hash))
    }
}
