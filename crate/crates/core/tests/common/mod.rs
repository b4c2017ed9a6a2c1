//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use curate_core::{
    AblationMode, EngineConfig, Error, FixedClock, MockProvider, PromptLibrary, ServiceConfig, ServiceState,
};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

/// Replies keyed by request tag. Each tag holds a queue; its last reply
/// repeats forever. Unknown tags are a script mismatch.
pub fn routed(replies: &[(&str, &[&str])]) -> MockProvider {
    let table: HashMap<String, Mutex<Vec<String>>> = replies
        .iter()
        .map(|(tag, rs)| (tag.to_string(), Mutex::new(rs.iter().rev().map(|s| s.to_string()).collect())))
        .collect();
    MockProvider::from_fn(move |req| {
        let queue = table.get(&req.tag).ok_or_else(|| Error::ScriptMismatch(req.tag.clone()))?;
        let mut q = queue.lock().unwrap();
        Ok(if q.len() > 1 { q.pop().unwrap() } else { q[0].clone() })
    })
}

pub const QUESTIONS: &str = "1. What are your potential target schools? Feel free to upload your CV. [file]\n\
                             2. Do you already know who could write your recommendation letters?";
pub const SUBTASKS: &str = "1. Identify Potential PhD Programs — find programs — 3 weeks\n\
                            2. Get Recommendation Letters — ask professors — 1 month\n\
                            3. Write Statement of Purpose — describe research interests — 2 weeks";
pub const ENTITIES: &str = "1. Prof. Blake White — write to Prof. Blake White\n\
                            2. Prof. Julian Deng — write to Prof. Julian Deng\n\
                            3. Dr. Alice Feng — write to Dr. Alice Feng";

/// A provider that answers every engine request plausibly and can be
/// switched into an outage.
pub struct Switchable {
    pub mock: MockProvider,
    pub down: Arc<AtomicBool>,
}

impl Switchable {
    pub fn set_down(&self, down: bool) {
        self.down.store(down, Ordering::SeqCst);
    }
}

/// `detect` and `fork` are the verdicts for detection and fork decisions.
pub fn switchable(detect: &'static str, fork: &'static str) -> Switchable {
    let down = Arc::new(AtomicBool::new(false));
    let flag = down.clone();
    let mock = MockProvider::from_fn(move |req| {
        if flag.load(Ordering::SeqCst) {
            return Err(Error::ProviderTimeout("connection refused".into()));
        }
        let user = req.last_user_message().unwrap_or_default();
        Ok(match req.tag.as_str() {
            "elicit_global" => QUESTIONS.into(),
            "generate_subtasks" => SUBTASKS.into(),
            "detect_subtask" => format!("Reasoning.\nAnswer: {detect}"),
            "fork_decision" => format!("Reasoning.\nAnswer: {fork}"),
            "fork_entities" => ENTITIES.into(),
            "select_context_draft" | "select_context_fork" => first_key_line(user),
            "elicit_draft_iteration" => "1. Which projects did you do together?\n2. When are your deadlines?".into(),
            "generate_draft" | "detect_draft" => "Draft text.".into(),
            "iterate_draft" => "Iterated draft text.".into(),
            other => return Err(Error::ScriptMismatch(other.into())),
        })
    });
    Switchable { mock, down }
}

/// Picks the first key of the context history embedded in a selection prompt.
fn first_key_line(prompt: &str) -> String {
    let history = prompt.split("context history from the user: ").nth(1).unwrap_or_default();
    match history.lines().next().and_then(|l| l.strip_prefix("- ")) {
        Some(first) => format!("{}: relevant", first.split(". Please select").next().unwrap_or(first)),
        None => "NONE".into(),
    }
}

pub fn service(dir: &std::path::Path, mode: AblationMode, mock: &MockProvider) -> ServiceState {
    ServiceState::new(
        ServiceConfig::new(dir, EngineConfig::with_mode(mode)),
        Arc::new(mock.clone()),
        Arc::new(PromptLibrary::builtin()),
        Arc::new(FixedClock::default()),
    )
}

/// One request through the router. `body` of `None` sends no body.
pub async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(match body {
            Some(v) => Body::from(v.to_string()),
            None => Body::empty(),
        })
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let json = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::Null) };
    (status, json)
}

/// Sends raw bytes, for malformed-body checks.
pub async fn call_raw(app: &Router, method: &str, uri: &str, body: &str) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).body(Body::from(body.to_owned())).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}
