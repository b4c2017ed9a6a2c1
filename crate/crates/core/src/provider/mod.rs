//! Chat-completion boundary. The engine only sees [`LlmProvider`]; the
//! live client speaks the common `messages`/`choices` HTTP shape and the
//! mock replays a script (or a deterministic responder function).

mod live;
mod mock;
pub mod parse;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use live::{LiveProvider, ProviderConfig, DEFAULT_KEY_VAR, ENV_ENDPOINT, ENV_KEY_VAR, ENV_MODEL, ENV_TIMEOUT};
pub use mock::{MockProvider, ProviderScript, ScriptStep};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::Assistant, content: content.into() }
    }
}

/// Sampling parameters. Defaults are temperature 1, 2048 max tokens, top-p 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RequestParams {
    pub temperature: f32,
    pub max_tokens: u32,
    pub top_p: f32,
}

impl Default for RequestParams {
    fn default() -> Self {
        RequestParams { temperature: 1.0, max_tokens: 2048, top_p: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f32,
    pub max_tokens: u32,
    pub top_p: f32,
    /// Purpose label, e.g. `detect_subtask`.
    pub tag: String,
}

impl CompletionRequest {
    pub fn new(tag: impl Into<String>, messages: Vec<ChatMessage>, params: RequestParams) -> Self {
        CompletionRequest {
            messages,
            temperature: params.temperature,
            max_tokens: params.max_tokens,
            top_p: params.top_p,
            tag: tag.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.messages.is_empty() {
            return Err(Error::InvalidRequest("no messages".into()));
        }
        if self.messages.iter().any(|m| m.role != Role::Assistant && m.content.is_empty()) {
            return Err(Error::InvalidRequest("system and user messages must not be empty".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(Error::InvalidRequest(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        if self.max_tokens == 0 {
            return Err(Error::InvalidRequest("max_tokens must be at least 1".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::InvalidRequest(format!("top_p {} outside (0, 1]", self.top_p)));
        }
        Ok(())
    }

    pub fn last_user_message(&self) -> Option<&str> {
        self.messages.iter().rev().find(|m| m.role == Role::User).map(|m| m.content.as_str())
    }

    pub fn prompt_chars(&self) -> usize {
        self.messages.iter().map(|m| m.content.chars().count()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_chars: usize,
    pub response_chars: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub usage: Usage,
    pub model: String,
    pub latency_ms: u64,
}

pub trait LlmProvider: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion>;

    /// Model identifier recorded with every call.
    fn model(&self) -> &str;
}
