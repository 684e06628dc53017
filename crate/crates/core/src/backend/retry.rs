use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use super::{decode_and_validate, BackendConfig, PromptBundle};
use crate::error::{Result, TransductionError};
use crate::provenance::Transduced;
use crate::schema::RecordType;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        ChatMessage {
            role,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<ChatMessage>,
    pub schema_name: String,
    pub response_schema: Json,
}

/// Sends one chat request and returns the assistant's text.
#[async_trait]
pub trait Transport: Send + Sync {
    async fn send(&self, request: &ChatRequest) -> Result<String>;
}

pub(crate) const RETRY_PREFIX: &str = "Your previous output was invalid:";

/// Sends the bundle and decodes the reply, retrying up to `cfg.max_retries`
/// times. After an invalid reply the conversation is extended with that reply
/// and the validation error, so the model can correct itself.
///
/// Returns the decoded result and the number of retries used. When every
/// attempt fails, the last attempt's error is returned.
pub async fn call_with_retry(
    bundle: &PromptBundle,
    cfg: &BackendConfig,
    transport: &dyn Transport,
    source: &RecordType,
    target: &RecordType,
) -> Result<(Transduced, u32)> {
    let mut request = ChatRequest {
        model: cfg.model.clone(),
        temperature: cfg.temperature,
        messages: vec![
            ChatMessage::new(Role::System, bundle.system.clone()),
            ChatMessage::new(Role::User, bundle.user.clone()),
        ],
        schema_name: format!("{}Envelope", sanitize(target.name())),
        response_schema: bundle.response_schema.clone(),
    };
    let mut last = None;
    for attempt in 0..=cfg.max_retries {
        let reply = match tokio::time::timeout(cfg.timeout, transport.send(&request)).await {
            Err(_) => Err(TransductionError::Timeout(cfg.timeout)),
            Ok(reply) => reply,
        };
        match reply {
            Ok(text) => match decode_and_validate(&text, source, target) {
                Ok(result) => return Ok((result, attempt)),
                Err(e) => {
                    log::debug!("attempt {attempt}: invalid reply: {e}");
                    request.messages.push(ChatMessage::new(Role::Assistant, text));
                    request.messages.push(ChatMessage::new(Role::User, format!("{RETRY_PREFIX} {e}")));
                    last = Some(e);
                }
            },
            Err(e) => {
                log::debug!("attempt {attempt}: {e}");
                last = Some(e);
            }
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Schema names on the wire are restricted to `[A-Za-z0-9_-]`.
fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}
