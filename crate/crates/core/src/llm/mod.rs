//! Provider-agnostic chat and embedding access with a content-addressed
//! response cache.

mod cache;
mod client;
pub mod http;
pub mod prompts;
pub mod stub;

use serde::{Deserialize, Serialize};
use std::time::Duration;

pub use cache::{CacheKey, ResponseCache};
pub use client::{LlmClient, RetryPolicy};
pub use prompts::{render_prompt, PromptBundle, PromptCatalog, PromptError, TemplateId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub bundle: PromptBundle,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Distinguishes repeated independent samples of the same prompt.
    pub sample_index: u32,
}

impl ChatRequest {
    pub fn new(bundle: PromptBundle, temperature: f64, sample_index: u32) -> Self {
        Self {
            bundle,
            temperature,
            max_tokens: 256,
            sample_index,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub provider: String,
    pub cached: bool,
}

/// What a provider returns for one completion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    /// The provider stopped at the length limit.
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub model_id: String,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProviderError {
    /// Worth retrying: timeouts, 5xx, rate limiting.
    #[error("transient provider failure: {message}")]
    Transient {
        message: String,
        retry_after: Option<Duration>,
    },
    #[error("provider rejected credentials: {0}")]
    Auth(String),
    #[error("provider error: {0}")]
    Fatal(String),
}

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: ProviderError },
    #[error(transparent)]
    Provider(ProviderError),
    #[error("response for `{template}` was truncated at the length limit")]
    Truncated { template: TemplateId },
    #[error("empty {0}")]
    EmptyInput(&'static str),
    #[error("embedding has dimension {got}, provider declares {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("embedding contains non-finite values")]
    NonFinite,
    #[error("response cache: {0}")]
    Cache(#[from] std::io::Error),
}

impl LlmError {
    pub fn is_auth(&self) -> bool {
        matches!(self, LlmError::Provider(ProviderError::Auth(_)))
    }
}

/// A chat-completion and embedding backend.
pub trait Provider: Send + Sync {
    fn name(&self) -> &str;
    fn model_id(&self) -> &str;
    fn embedding_model_id(&self) -> &str;
    fn embedding_dim(&self) -> usize;
    fn complete(&self, request: &ChatRequest) -> Result<Completion, ProviderError>;
    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError>;
}
