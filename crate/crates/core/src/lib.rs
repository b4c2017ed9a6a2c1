//! Planning engine that grows a goal into a task tree and curates the
//! personal context used to draft answers for each task.
//!
//! The pieces, bottom-up:
//!
//! - [`task_graph`]: the hierarchical plan (goal root, subtasks, forks).
//! - [`context_store`]: global and local key-value context.
//! - [`prompts`]: prompt templates and the six subtask-detection strategies.
//! - [`provider`]: chat-completion boundary (live HTTP and scripted mock) and
//!   the parsers for structured model output.
//! - [`engine`]: elicitation, selection, reuse, detection, forking and drafting
//!   under an [`AblationMode`].
//! - [`session`]: event-sourced persistence and replay.
//! - [`service`]: HTTP/JSON API over the engine.
//! - [`eval`]: the subtask-detection accuracy harness.
//! - [`walkthrough`]: the bundled end-to-end PhD-application scenario.

pub mod clock;
pub mod context_store;
pub mod engine;
pub mod error;
pub mod eval;
pub mod prompts;
pub mod provider;
pub mod service;
pub mod session;
pub mod task_graph;
pub mod walkthrough;

pub use clock::{Clock, FixedClock, SystemClock};
pub use context_store::{ContextEntry, ContextStore, KeySummary, Provenance, Scope};
pub use engine::{
    AblationMode, Answer, AnswerResponse, DetectOutcome, DraftCandidate, DraftLineage, ElicitationQuestion, Engine, EngineConfig,
    ForkVerdict, SelectionCandidate, SelectionPurpose, Verdict,
};
pub use error::{Error, Result};
pub use prompts::{DetectionStrategy, Polarity, PromptLibrary, PromptTemplate, RenderedPrompt, TemplateId};
pub use provider::{
    ChatMessage, Completion, CompletionRequest, LiveProvider, LlmProvider, MockProvider, ProviderConfig,
    ProviderScript, RequestParams, Role, ScriptStep,
};
pub use session::{EventBody, Session, SessionEvent, SCHEMA_VERSION};
pub use task_graph::{Decomposition, NodeId, NodeStatus, SubtaskKind, SubtaskSpec, TaskNode, TaskTree};
pub use service::{router, serve, ApiError, ServiceConfig, ServiceState};
