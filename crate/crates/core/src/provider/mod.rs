//! Completion-model abstraction.
//!
//! Every model interaction goes through [`complete`], which performs the
//! context-budget pre-flight and maps finish reasons onto errors before the
//! caller sees any text. Concrete providers are the HTTP chat-completion
//! client, the fixture-backed [`MockOracle`], a transcript [`ReplayProvider`]
//! and the canned [`ScriptedProvider`] used for fault injection.

mod http;
mod mock;
pub mod parse;
mod replay;

use std::collections::{BTreeMap, VecDeque};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use http::{HttpProvider, ProviderConfig};
pub use mock::{CorruptionMode, MockOracle, MockOracleConfig};
pub use parse::ParseError;
pub use replay::{RecordingProvider, ReplayProvider, ReplayRecord};

pub const DEFAULT_CONTEXT_BUDGET: usize = 32_768;

/// Fraction of the context budget usable by prompt plus reserved output.
pub const CONTEXT_SAFETY_FACTOR: f64 = 0.9;

/// Upper-bound token estimate: one token per started group of four characters.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

/// Whether a prompt of `prompt_tokens` plus `max_output_tokens` fits within
/// the budget after the safety margin.
pub fn fits_budget(prompt_tokens: usize, max_output_tokens: usize, budget: usize) -> bool {
    let usable = (budget as f64 * CONTEXT_SAFETY_FACTOR).floor() as usize;
    prompt_tokens + max_output_tokens <= usable
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotPair {
    pub input: String,
    pub output: String,
}

/// Structured description of what a prompt asks for. Network providers only
/// see the rendered text; the mock oracle answers from these fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum TaskInput {
    Classify {
        labels: Vec<String>,
        categories: Vec<String>,
        zero_shot: bool,
    },
    LevelMembership {
        root: String,
        parent: String,
        level: u32,
        anchors: Vec<String>,
        candidates: Vec<String>,
    },
    Placement {
        root: String,
        parent: String,
        level: u32,
        subtrees: Vec<String>,
        candidates: Vec<String>,
    },
    Generate {
        root: String,
        existing: Vec<(String, String)>,
        candidates: Vec<String>,
        correction: bool,
    },
    Review {
        roots: Vec<String>,
        edges: Vec<(String, String)>,
    },
    Evaluate {
        root: String,
        edges: Vec<(String, String)>,
    },
    Freeform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub system_instruction: String,
    pub few_shot_examples: Vec<FewShotPair>,
    pub payload: String,
    pub task: TaskInput,
    pub max_output_tokens: usize,
    pub temperature: f32,
}

impl PromptRequest {
    pub fn new(system_instruction: impl Into<String>, payload: impl Into<String>, task: TaskInput) -> Self {
        Self {
            system_instruction: system_instruction.into(),
            few_shot_examples: Vec::new(),
            payload: payload.into(),
            task,
            max_output_tokens: 4096,
            temperature: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.system_instruction.trim().is_empty() {
            return Err(ProviderError::InvalidRequest("empty system instruction".into()));
        }
        if self.max_output_tokens == 0 {
            return Err(ProviderError::InvalidRequest("max_output_tokens must be positive".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ProviderError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        Ok(())
    }

    /// Everything the model reads, in message order.
    pub fn rendered_text(&self) -> String {
        let mut out = String::with_capacity(self.payload.len() + self.system_instruction.len());
        out.push_str(&self.system_instruction);
        for ex in &self.few_shot_examples {
            out.push('\n');
            out.push_str(&ex.input);
            out.push('\n');
            out.push_str(&ex.output);
        }
        out.push('\n');
        out.push_str(&self.payload);
        out
    }

    pub fn estimated_tokens(&self) -> usize {
        estimate_tokens(&self.rendered_text())
    }

    /// Hex SHA-256 over the canonical JSON form of the request.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("request serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Copy of the request with a parse diagnostic appended, for a repair retry.
    pub fn with_repair_note(&self, problem: &str) -> Self {
        let mut next = self.clone();
        next.payload.push_str(
            "\n\nYour previous answer could not be used: ",
        );
        next.payload.push_str(problem);
        next.payload
            .push_str("\nAnswer again with a single JSON dictionary and nothing else.");
        next
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Complete,
    Truncated,
    ProviderError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub raw_text: Option<String>,
    pub finish_reason: FinishReason,
    #[serde(default)]
    pub provider_metadata: BTreeMap<String, String>,
}

impl CompletionResponse {
    pub fn complete(text: impl Into<String>) -> Self {
        Self {
            raw_text: Some(text.into()),
            finish_reason: FinishReason::Complete,
            provider_metadata: BTreeMap::new(),
        }
    }

    pub fn text(&self) -> &str {
        self.raw_text.as_deref().unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProviderError {
    #[error("prompt needs ~{estimated} tokens plus {reserved} reserved output, budget is {budget}")]
    ContextOverflow {
        estimated: usize,
        reserved: usize,
        budget: usize,
    },
    #[error("provider unavailable after {attempts} attempt(s): {reason}")]
    ProviderUnavailable { attempts: u32, reason: String },
    #[error("completion truncated")]
    Truncated { partial: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("environment variable {0} holding the API key is not set")]
    MissingApiKey(String),
    #[error("no recorded response for request {0}")]
    ReplayMiss(String),
}

pub trait CompletionProvider: Send + Sync {
    fn context_budget(&self) -> usize {
        DEFAULT_CONTEXT_BUDGET
    }

    /// Performs the call. Callers go through [`complete`] instead.
    fn send(&self, request: &PromptRequest) -> Result<CompletionResponse, ProviderError>;
}

impl<P: CompletionProvider + ?Sized> CompletionProvider for &P {
    fn context_budget(&self) -> usize {
        (**self).context_budget()
    }

    fn send(&self, request: &PromptRequest) -> Result<CompletionResponse, ProviderError> {
        (**self).send(request)
    }
}

impl<P: CompletionProvider + ?Sized> CompletionProvider for Box<P> {
    fn context_budget(&self) -> usize {
        (**self).context_budget()
    }

    fn send(&self, request: &PromptRequest) -> Result<CompletionResponse, ProviderError> {
        (**self).send(request)
    }
}

impl<P: CompletionProvider + ?Sized> CompletionProvider for std::sync::Arc<P> {
    fn context_budget(&self) -> usize {
        (**self).context_budget()
    }

    fn send(&self, request: &PromptRequest) -> Result<CompletionResponse, ProviderError> {
        (**self).send(request)
    }
}

/// Validates and budget-checks `request`, calls the provider, and surfaces
/// non-complete finish reasons as errors.
pub fn complete<P: CompletionProvider + ?Sized>(
    provider: &P,
    request: &PromptRequest,
) -> Result<CompletionResponse, ProviderError> {
    request.validate()?;
    let estimated = request.estimated_tokens();
    let budget = provider.context_budget();
    if !fits_budget(estimated, request.max_output_tokens, budget) {
        return Err(ProviderError::ContextOverflow {
            estimated,
            reserved: request.max_output_tokens,
            budget,
        });
    }
    let response = provider.send(request)?;
    match response.finish_reason {
        FinishReason::Complete => Ok(response),
        FinishReason::Truncated => Err(ProviderError::Truncated {
            partial: response.raw_text.unwrap_or_default(),
        }),
        FinishReason::ProviderError => Err(ProviderError::ProviderUnavailable {
            attempts: 1,
            reason: response
                .provider_metadata
                .get("error")
                .cloned()
                .unwrap_or_else(|| "provider reported an error".into()),
        }),
    }
}

/// Returns queued responses in order, then repeats the fallback (if any).
/// Records every request it receives.
#[derive(Debug, Default)]
pub struct ScriptedProvider {
    queue: Mutex<VecDeque<Result<CompletionResponse, ProviderError>>>,
    fallback: Option<Result<CompletionResponse, ProviderError>>,
    seen: Mutex<Vec<PromptRequest>>,
    budget: Option<usize>,
}

impl ScriptedProvider {
    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            queue: Mutex::new(
                responses
                    .into_iter()
                    .map(|s| Ok(CompletionResponse::complete(s)))
                    .collect(),
            ),
            ..Self::default()
        }
    }

    pub fn failing(reason: &str) -> Self {
        Self {
            fallback: Some(Err(ProviderError::ProviderUnavailable {
                attempts: 1,
                reason: reason.into(),
            })),
            ..Self::default()
        }
    }

    pub fn push(&self, response: Result<CompletionResponse, ProviderError>) {
        self.queue.lock().unwrap().push_back(response);
    }

    pub fn with_fallback(mut self, text: impl Into<String>) -> Self {
        self.fallback = Some(Ok(CompletionResponse::complete(text)));
        self
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budget = Some(budget);
        self
    }

    pub fn requests(&self) -> Vec<PromptRequest> {
        self.seen.lock().unwrap().clone()
    }

    pub fn call_count(&self) -> usize {
        self.seen.lock().unwrap().len()
    }
}

impl CompletionProvider for ScriptedProvider {
    fn context_budget(&self) -> usize {
        self.budget.unwrap_or(DEFAULT_CONTEXT_BUDGET)
    }

    fn send(&self, request: &PromptRequest) -> Result<CompletionResponse, ProviderError> {
        self.seen.lock().unwrap().push(request.clone());
        if let Some(next) = self.queue.lock().unwrap().pop_front() {
            return next;
        }
        self.fallback.clone().unwrap_or_else(|| {
            Err(ProviderError::ProviderUnavailable {
                attempts: 1,
                reason: "script exhausted".into(),
            })
        })
    }
}
