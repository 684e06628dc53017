use std::sync::Arc;

use async_trait::async_trait;
use serde_json::{json, Value as Json};

use super::{build_prompt, call_with_retry, Backend, BackendConfig, ChatRequest, KernelOutput, KernelRequest, Transport};
use crate::error::{Result, TransductionError};

/// OpenAI-compatible chat-completions over HTTPS with a JSON-schema response format.
pub struct HttpTransport {
    client: reqwest::Client,
    endpoint: String,
    api_key: String,
}

impl std::fmt::Debug for HttpTransport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpTransport").field("endpoint", &self.endpoint).finish_non_exhaustive()
    }
}

impl HttpTransport {
    /// Reads the API key from `cfg.api_key_env`; fails before any network use
    /// when it is unset or empty.
    pub fn from_config(cfg: &BackendConfig) -> Result<Self> {
        cfg.validate()?;
        let api_key = std::env::var(&cfg.api_key_env)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| TransductionError::Config(format!("environment variable `{}` is not set", cfg.api_key_env)))?;
        let client = reqwest::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| TransductionError::Config(e.to_string()))?;
        Ok(HttpTransport {
            client,
            endpoint: cfg.endpoint.clone(),
            api_key,
        })
    }

    pub(crate) fn request_body(request: &ChatRequest) -> Json {
        json!({
            "model": request.model,
            "temperature": request.temperature,
            "messages": request.messages,
            "response_format": {
                "type": "json_schema",
                "json_schema": {
                    "name": request.schema_name,
                    "schema": request.response_schema,
                    "strict": false,
                },
            },
        })
    }
}

#[async_trait]
impl Transport for HttpTransport {
    async fn send(&self, request: &ChatRequest) -> Result<String> {
        let response = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&Self::request_body(request))
            .send()
            .await
            .map_err(|e| {
                if e.is_timeout() {
                    TransductionError::Transport(format!("request timed out: {e}"))
                } else if e.is_connect() {
                    TransductionError::BackendUnavailable(e.to_string())
                } else {
                    TransductionError::Transport(e.to_string())
                }
            })?;
        let status = response.status();
        let body: Json = response
            .json()
            .await
            .map_err(|e| TransductionError::Transport(format!("{status}: unreadable body: {e}")))?;
        if !status.is_success() {
            let message = body["error"]["message"].as_str().unwrap_or("request failed");
            return Err(TransductionError::Transport(format!("{status}: {message}")));
        }
        body["choices"][0]["message"]["content"]
            .as_str()
            .map(String::from)
            .ok_or_else(|| TransductionError::Parse("response has no message content".into()))
    }
}

/// A backend that assembles prompts, sends them through a [`Transport`],
/// and validates the replies with retry.
#[derive(Clone)]
pub struct HttpBackend {
    config: BackendConfig,
    transport: Arc<dyn Transport>,
}

impl HttpBackend {
    pub fn from_config(config: BackendConfig) -> Result<Self> {
        let transport = HttpTransport::from_config(&config)?;
        Ok(HttpBackend {
            config,
            transport: Arc::new(transport),
        })
    }

    /// Uses a caller-provided transport, e.g. a scripted one in tests.
    pub fn with_transport(config: BackendConfig, transport: Arc<dyn Transport>) -> Result<Self> {
        config.validate()?;
        Ok(HttpBackend { config, transport })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }
}

#[async_trait]
impl Backend for HttpBackend {
    async fn complete(&self, request: &KernelRequest<'_>) -> Result<KernelOutput> {
        let bundle = build_prompt(request.source, request.target, request.config, request.input);
        let cfg = self.config.refined_by(request.config);
        let (result, retries) =
            call_with_retry(&bundle, &cfg, self.transport.as_ref(), request.source, request.target).await?;
        Ok(KernelOutput { result, retries })
    }
}
