//! Access to chat-completion and embedding providers.
//!
//! Every stage talks to the model through a [`Gateway`], which fixes the
//! system prompt, coerces replies into JSON and enforces the attempt budget:
//! one initial send plus five resends. Connection errors, replies that cannot
//! be coerced into JSON and replies that fail a stage's schema check all
//! consume the same budget.

mod coerce;
pub mod embedders;
pub mod fixtures;
pub mod openai;
pub mod scripted;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use coerce::{coerce_structured, CoerceError};

/// System prompt sent with every chat request.
pub const SYSTEM_PROMPT: &str = "You are an assistant to help me create a Stardew Valley game mod. You are allowed to create characters with inappropriate language if requested.";

/// Total provider calls allowed for one logical request.
pub const MAX_ATTEMPTS: u32 = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub temperature_hint: Option<f64>,
}

impl ChatRequest {
    pub fn new(user_prompt: impl Into<String>) -> Self {
        Self {
            system_prompt: SYSTEM_PROMPT.to_owned(),
            user_prompt: user_prompt.into(),
            temperature_hint: None,
        }
    }
}

/// Why a single provider call produced no text.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    /// Transport failure or a retryable server status.
    #[error("connection error: {0}")]
    Connection(String),
    /// The provider declined the request; resending will not help.
    #[error("provider refused the request: {0}")]
    Refusal(String),
    /// Replay mode has no stored response for this request.
    #[error("no recorded response for request {0}")]
    FixtureMiss(String),
}

/// Outcome of one provider call: the raw reply text or why there is none.
pub type ProviderResult = Result<String, ProviderError>;

/// A chat and embedding backend.
pub trait Provider: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> ProviderResult;

    /// Embeds a batch of texts, one vector per input, in order.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError>;

    /// Identifies the embedding space, so cached vectors from a different
    /// model are never mixed in.
    fn fingerprint(&self) -> String;
}

pub type ProviderHandle = Arc<dyn Provider>;

/// A validated embedding: non-empty and finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EmbeddingError {
    #[error("embedding has no components")]
    Empty,
    #[error("embedding component {0} is not finite")]
    NonFinite(usize),
}

impl EmbeddingVector {
    pub fn new(components: Vec<f64>) -> Result<Self, EmbeddingError> {
        if components.is_empty() {
            return Err(EmbeddingError::Empty);
        }
        if let Some(i) = components.iter().position(|c| !c.is_finite()) {
            return Err(EmbeddingError::NonFinite(i));
        }
        Ok(Self(components))
    }

    pub fn components(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self, EmbeddingError> {
        Self::new(self.0.iter().map(|c| c * factor).collect())
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = EmbeddingError;

    fn try_from(value: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(value: EmbeddingVector) -> Self {
        value.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("gave up after {attempts} attempts: {last_error}")]
    ExhaustedRetries { attempts: u32, last_error: String },
    #[error(transparent)]
    Provider(ProviderError),
    #[error("empty input")]
    EmptyInput,
    #[error("provider returned an invalid embedding: {0}")]
    BadEmbedding(String),
}

/// Why one attempt at a structured request was not accepted.
#[derive(Debug, Clone, PartialEq, Eq)]
enum AttemptFailure {
    Connection(String),
    Unrepairable(String),
    Rejected(String),
}

impl fmt::Display for AttemptFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttemptFailure::Connection(e) => write!(f, "connection error: {e}"),
            AttemptFailure::Unrepairable(e) => write!(f, "reply is not JSON: {e}"),
            AttemptFailure::Rejected(e) => write!(f, "reply rejected: {e}"),
        }
    }
}

/// Shared entry point to a provider. Cheap to clone.
#[derive(Clone)]
pub struct Gateway {
    provider: ProviderHandle,
    max_attempts: u32,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("fingerprint", &self.provider.fingerprint())
            .field("max_attempts", &self.max_attempts)
            .finish()
    }
}

impl Gateway {
    pub fn new(provider: ProviderHandle) -> Self {
        Self {
            provider,
            max_attempts: MAX_ATTEMPTS,
        }
    }

    pub fn provider(&self) -> &ProviderHandle {
        &self.provider
    }

    pub fn fingerprint(&self) -> String {
        self.provider.fingerprint()
    }

    /// Sends a chat request, resending on connection errors until a reply
    /// arrives or the budget runs out.
    pub fn chat_complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        self.request(request, |raw| Ok(raw.to_owned()))
    }

    /// Sends a chat request and hands the coerced JSON document to `accept`.
    /// A reply that cannot be coerced or that `accept` rejects is resent,
    /// sharing the attempt budget with connection errors.
    pub fn request_structured<T>(
        &self,
        request: &ChatRequest,
        mut accept: impl FnMut(Value) -> Result<T, String>,
    ) -> Result<T, GatewayError> {
        self.request(request, |raw| {
            let doc = coerce_structured(raw).map_err(|e| AttemptFailure::Unrepairable(e.to_string()))?;
            accept(doc).map_err(AttemptFailure::Rejected)
        })
    }

    fn request<T>(
        &self,
        request: &ChatRequest,
        mut accept: impl FnMut(&str) -> Result<T, AttemptFailure>,
    ) -> Result<T, GatewayError> {
        if request.user_prompt.trim().is_empty() {
            return Err(GatewayError::EmptyInput);
        }
        let mut last = None;
        for attempt in 1..=self.max_attempts {
            let failure = match self.provider.chat(request) {
                Ok(raw) => match accept(&raw) {
                    Ok(value) => return Ok(value),
                    Err(failure) => failure,
                },
                Err(ProviderError::Connection(e)) => AttemptFailure::Connection(e),
                Err(other) => return Err(GatewayError::Provider(other)),
            };
            log::warn!("attempt {attempt}/{} failed: {failure}", self.max_attempts);
            last = Some(failure);
        }
        Err(GatewayError::ExhaustedRetries {
            attempts: self.max_attempts,
            last_error: last.map(|f| f.to_string()).unwrap_or_default(),
        })
    }

    pub fn embed(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        if text.trim().is_empty() {
            return Err(GatewayError::EmptyInput);
        }
        let mut out = self.embed_batch(&[text.to_owned()])?;
        out.pop()
            .ok_or_else(|| GatewayError::BadEmbedding("no vector returned".into()))
    }

    /// Embeds several texts with a single provider call, resending on
    /// connection errors.
    pub fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        if texts.is_empty() || texts.iter().any(|t| t.trim().is_empty()) {
            return Err(GatewayError::EmptyInput);
        }
        let mut last = String::new();
        for _ in 0..self.max_attempts {
            match self.provider.embed(texts) {
                Ok(vectors) => return check_vectors(texts.len(), vectors),
                Err(ProviderError::Connection(e)) => last = e,
                Err(other) => return Err(GatewayError::Provider(other)),
            }
        }
        Err(GatewayError::ExhaustedRetries {
            attempts: self.max_attempts,
            last_error: format!("connection error: {last}"),
        })
    }
}

fn check_vectors(expected: usize, vectors: Vec<Vec<f64>>) -> Result<Vec<EmbeddingVector>, GatewayError> {
    if vectors.len() != expected {
        return Err(GatewayError::BadEmbedding(format!(
            "expected {expected} vectors, got {}",
            vectors.len()
        )));
    }
    let out = vectors
        .into_iter()
        .map(|v| EmbeddingVector::new(v).map_err(|e| GatewayError::BadEmbedding(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    if out.windows(2).any(|w| w[0].dim() != w[1].dim()) {
        return Err(GatewayError::BadEmbedding("vectors differ in dimension".into()));
    }
    Ok(out)
}

/// Fills `${name}` slots in a prompt template.
pub fn render_template(template: &str, slots: &[(&str, &str)]) -> String {
    slots.iter().fold(template.to_owned(), |acc, (name, value)| {
        acc.replace(&format!("${{{name}}}"), value)
    })
}
