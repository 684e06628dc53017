//! Kernels realized by a language model, and a deterministic stand-in.
//!
//! Every backend result goes through [`decode_and_validate`] before it is
//! returned, so a backend can only hand back well-typed states with
//! well-formed explanation and provenance.

mod decode;
mod http;
mod mock;
mod prompt;
mod retry;

use std::time::Duration;

use async_trait::async_trait;

use crate::error::{Result, TransductionError};
use crate::provenance::Transduced;
use crate::schema::{RecordType, State};
use crate::transduction::TransductionConfig;

pub use decode::{decode_and_validate, strip_code_fence};
pub use http::{HttpBackend, HttpTransport};
pub use mock::{FieldExpr, MockBackend, MockRule, MockRuleDecl, MockRules, Producer, RuleMatch};
pub use prompt::{build_prompt, envelope_schema, PromptBundle};
pub use retry::{call_with_retry, ChatMessage, ChatRequest, Role, Transport};

/// The input of one kernel call.
#[derive(Debug, Clone, Copy)]
pub enum KernelInput<'a> {
    One(&'a State),
    Many(&'a [State]),
}

impl KernelInput<'_> {
    pub fn states(&self) -> &[State] {
        match self {
            KernelInput::One(s) => std::slice::from_ref(*s),
            KernelInput::Many(xs) => xs,
        }
    }

    pub fn is_collection(&self) -> bool {
        matches!(self, KernelInput::Many(_))
    }
}

/// Everything a backend needs to realize `target << source` on one input.
#[derive(Debug, Clone, Copy)]
pub struct KernelRequest<'a> {
    pub source: &'a RecordType,
    pub target: &'a RecordType,
    pub config: &'a TransductionConfig,
    pub input: KernelInput<'a>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelOutput {
    pub result: Transduced,
    pub retries: u32,
}

#[async_trait]
pub trait Backend: Send + Sync {
    async fn complete(&self, request: &KernelRequest<'_>) -> Result<KernelOutput>;
}

/// Connection settings for an OpenAI-compatible chat-completions endpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendConfig {
    /// Full URL of the chat-completions route.
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub timeout: Duration,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub max_retries: u32,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4.1".into(),
            temperature: 0.0,
            timeout: Duration::from_secs(60),
            api_key_env: "OPENAI_API_KEY".into(),
            max_retries: 2,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<()> {
        if self.timeout.is_zero() {
            return Err(TransductionError::Config("timeout must be > 0".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(TransductionError::Config("temperature must be >= 0".into()));
        }
        if self.endpoint.is_empty() {
            return Err(TransductionError::Config("endpoint is empty".into()));
        }
        Ok(())
    }

    /// Function-level settings take precedence over the backend defaults.
    pub fn refined_by(&self, config: &TransductionConfig) -> BackendConfig {
        BackendConfig {
            model: config.model.clone().unwrap_or_else(|| self.model.clone()),
            temperature: config.temperature.unwrap_or(self.temperature),
            max_retries: config.max_retries.unwrap_or(self.max_retries),
            ..self.clone()
        }
    }
}
