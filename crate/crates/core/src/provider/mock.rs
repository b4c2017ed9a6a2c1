use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{Completion, CompletionRequest, LlmProvider, Usage};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptStep {
    /// Substring the request's last user message must contain.
    #[serde(rename = "match", default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<String>,
    pub response: String,
}

impl ScriptStep {
    pub fn new(expect: Option<&str>, response: impl Into<String>) -> Self {
        ScriptStep { expect: expect.map(str::to_owned), response: response.into() }
    }
}

/// Ordered canned responses. On disk it is a JSON array of
/// `{"match": ..., "response": ...}` records.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProviderScript {
    pub steps: Vec<ScriptStep>,
    pub cursor: usize,
}

impl ProviderScript {
    pub fn new(steps: Vec<ScriptStep>) -> Self {
        ProviderScript { steps, cursor: 0 }
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let steps: Vec<ScriptStep> =
            serde_json::from_str(json).map_err(|e| Error::InvalidRequest(format!("bad provider script: {e}")))?;
        Ok(ProviderScript::new(steps))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.steps).expect("script serializes")
    }
}

type Responder = dyn Fn(&CompletionRequest) -> Result<String> + Send + Sync;

enum Source {
    Script(Mutex<ProviderScript>),
    Responder(Box<Responder>),
}

/// Deterministic offline provider. Every request it receives is captured so
/// tests can inspect outgoing prompts.
#[derive(Clone)]
pub struct MockProvider {
    source: Arc<Source>,
    captured: Arc<Mutex<Vec<CompletionRequest>>>,
}

impl std::fmt::Debug for MockProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockProvider").field("captured", &self.captured.lock().unwrap().len()).finish()
    }
}

impl MockProvider {
    pub fn scripted(script: ProviderScript) -> Self {
        MockProvider { source: Arc::new(Source::Script(Mutex::new(script))), captured: Default::default() }
    }

    /// Answers each request by calling `f`. Used for randomized tests and
    /// oracle runs where a linear script is impractical.
    pub fn from_fn(f: impl Fn(&CompletionRequest) -> Result<String> + Send + Sync + 'static) -> Self {
        MockProvider { source: Arc::new(Source::Responder(Box::new(f))), captured: Default::default() }
    }

    pub fn captured(&self) -> Vec<CompletionRequest> {
        self.captured.lock().unwrap().clone()
    }

    pub fn clear_captured(&self) {
        self.captured.lock().unwrap().clear();
    }

    /// Steps left in the script; `None` for responder mocks.
    pub fn remaining(&self) -> Option<usize> {
        match &*self.source {
            Source::Script(s) => {
                let s = s.lock().unwrap();
                Some(s.steps.len() - s.cursor)
            }
            Source::Responder(_) => None,
        }
    }
}

impl LlmProvider for MockProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion> {
        request.validate()?;
        self.captured.lock().unwrap().push(request.clone());
        let text = match &*self.source {
            Source::Script(script) => {
                let mut script = script.lock().unwrap();
                let step = script.steps.get(script.cursor).cloned().ok_or(Error::ScriptExhausted)?;
                if let Some(expect) = &step.expect {
                    if !request.last_user_message().unwrap_or_default().contains(expect.as_str()) {
                        return Err(Error::ScriptMismatch(expect.clone()));
                    }
                }
                script.cursor += 1;
                step.response
            }
            Source::Responder(f) => f(request)?,
        };
        Ok(Completion {
            usage: Usage { prompt_chars: request.prompt_chars(), response_chars: text.chars().count() },
            text,
            model: "mock".into(),
            latency_ms: 0,
        })
    }

    fn model(&self) -> &str {
        "mock"
    }
}
