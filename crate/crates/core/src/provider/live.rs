use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Completion, CompletionRequest, LlmProvider, Usage};
use crate::error::{Error, Result};

pub const ENV_ENDPOINT: &str = "CURATE_ENDPOINT";
pub const ENV_MODEL: &str = "CURATE_MODEL";
pub const ENV_KEY_VAR: &str = "CURATE_API_KEY_VAR";
pub const ENV_TIMEOUT: &str = "CURATE_TIMEOUT_SECS";
pub const DEFAULT_KEY_VAR: &str = "CURATE_API_KEY";

/// Where and how to reach a chat-completion endpoint. The API key itself is
/// never stored here, only the name of the environment variable holding it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub retry_backoff_ms: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            endpoint: String::new(),
            model: String::new(),
            api_key_env: DEFAULT_KEY_VAR.into(),
            timeout_secs: 60,
            retry_backoff_ms: 2000,
        }
    }
}

impl ProviderConfig {
    /// Overlays any `CURATE_*` variables present in the environment.
    pub fn with_env(mut self) -> Self {
        if let Ok(v) = std::env::var(ENV_ENDPOINT) {
            self.endpoint = v;
        }
        if let Ok(v) = std::env::var(ENV_MODEL) {
            self.model = v;
        }
        if let Ok(v) = std::env::var(ENV_KEY_VAR) {
            self.api_key_env = v;
        }
        if let Some(v) = std::env::var(ENV_TIMEOUT).ok().and_then(|v| v.parse().ok()) {
            self.timeout_secs = v;
        }
        self
    }

    pub fn is_configured(&self) -> bool {
        !self.endpoint.is_empty() && !self.model.is_empty()
    }
}

pub struct LiveProvider {
    config: ProviderConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl std::fmt::Debug for LiveProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LiveProvider").field("config", &self.config).finish_non_exhaustive()
    }
}

enum Attempt {
    Done(Completion),
    Retry(Error),
    Fail(Error),
}

impl LiveProvider {
    pub fn new(config: ProviderConfig) -> Result<Self> {
        if !config.is_configured() {
            return Err(Error::InvalidRequest(format!(
                "live provider needs an endpoint and a model (set {ENV_ENDPOINT} and {ENV_MODEL})"
            )));
        }
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(LiveProvider { config, api_key, agent })
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    fn body(&self, request: &CompletionRequest) -> Value {
        json!({
            "model": self.config.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "top_p": request.top_p,
            "max_tokens": request.max_tokens,
        })
    }

    fn attempt(&self, request: &CompletionRequest) -> Attempt {
        let started = Instant::now();
        let mut call = self.agent.post(&self.config.endpoint).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = match call.send_json(self.body(request)) {
            Ok(r) => r,
            Err(e @ (ureq::Error::Timeout(_)
            | ureq::Error::Io(_)
            | ureq::Error::ConnectionFailed
            | ureq::Error::HostNotFound
            | ureq::Error::BodyStalled)) => return Attempt::Retry(Error::ProviderTimeout(e.to_string())),
            Err(e) => return Attempt::Fail(Error::ProviderHttp { status: 0, body: e.to_string() }),
        };
        let status = response.status().as_u16();
        let text = match response.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(Error::ProviderTimeout(e.to_string())),
        };
        if status >= 500 {
            return Attempt::Retry(Error::ProviderHttp { status, body: excerpt(&text) });
        }
        if status >= 400 {
            return Attempt::Fail(Error::ProviderHttp { status, body: excerpt(&text) });
        }
        match extract_content(&text) {
            Some(content) => Attempt::Done(Completion {
                usage: Usage { prompt_chars: request.prompt_chars(), response_chars: content.chars().count() },
                text: content,
                model: self.config.model.clone(),
                latency_ms: started.elapsed().as_millis() as u64,
            }),
            None => Attempt::Fail(Error::ProviderHttp { status, body: excerpt(&text) }),
        }
    }
}

/// Reads `choices[0].message.content`.
fn extract_content(body: &str) -> Option<String> {
    let v: Value = serde_json::from_str(body).ok()?;
    v.pointer("/choices/0/message/content")?.as_str().map(str::to_owned)
}

fn excerpt(body: &str) -> String {
    body.chars().take(200).collect()
}

impl LlmProvider for LiveProvider {
    /// One retry after a backoff on 5xx responses and transport failures.
    fn complete(&self, request: &CompletionRequest) -> Result<Completion> {
        request.validate()?;
        match self.attempt(request) {
            Attempt::Done(c) => Ok(c),
            Attempt::Fail(e) => Err(e),
            Attempt::Retry(e) => {
                log::warn!("provider call `{}` failed ({e}); retrying once", request.tag);
                std::thread::sleep(Duration::from_millis(self.config.retry_backoff_ms));
                match self.attempt(request) {
                    Attempt::Done(c) => Ok(c),
                    Attempt::Fail(e) | Attempt::Retry(e) => Err(e),
                }
            }
        }
    }

    fn model(&self) -> &str {
        &self.config.model
    }
}
