use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // task tree
    #[error("goal title must not be empty")]
    EmptyGoal,
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("node `{0}` is already decomposed")]
    AlreadyDecomposed(String),
    #[error("subtask list is empty")]
    EmptySubtaskList,
    #[error("node `{node}` is at level {level}; the tree depth limit is {max}")]
    DepthLimit { node: String, level: u32, max: u32 },
    #[error("{count} subtasks exceed the fanout limit of {max}")]
    FanoutLimit { count: usize, max: usize },
    #[error("invalid task tree: {0}")]
    InvalidTree(String),

    // context
    #[error("invalid context entry: {0}")]
    InvalidEntry(String),
    #[error("unknown context key `{0}`")]
    UnknownKey(String),
    #[error("local context is empty")]
    NoLocalContext,

    // prompts
    #[error("missing binding for placeholder `{0}`")]
    MissingBinding(String),
    #[error("binding `{0}` is not a placeholder of this template")]
    UnknownBinding(String),
    #[error("placeholder `{0}` left unreplaced")]
    UnreplacedPlaceholder(String),
    #[error("malformed template {name}: {reason}")]
    TemplateFormat { name: String, reason: String },
    #[error("strategy input mismatch: {0}")]
    StrategyInputMismatch(String),

    // provider
    #[error("provider returned HTTP {status}: {body}")]
    ProviderHttp { status: u16, body: String },
    #[error("provider unreachable or timed out: {0}")]
    ProviderTimeout(String),
    #[error("mock script exhausted")]
    ScriptExhausted,
    #[error("mock script expected request containing `{0}`")]
    ScriptMismatch(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),

    // parsing model output
    #[error("no subtasks could be parsed from the response")]
    UnparseableSubtasks,
    #[error("no Yes/No verdict in response: {0}")]
    UnparseableVerdict(String),
    #[error("response selected no valid context keys")]
    NoValidKeys,
    #[error("no entities found to fork over")]
    NoEntitiesFound,

    // engine
    #[error("{feature} is disabled in {mode} mode")]
    FeatureDisabled { feature: &'static str, mode: &'static str },
    #[error("unknown question `{0}`")]
    UnknownQuestion(String),
    #[error("pipeline order violated: {0}")]
    PipelineOrder(String),

    // session
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("session schema version {found} is not supported (expected {expected})")]
    SchemaMismatch { found: u64, expected: u32 },
    #[error("corrupt session: {0}")]
    CorruptSession(String),
    #[error("session is locked by another writer: {}", .0.display())]
    SessionLocked(PathBuf),

    // eval
    #[error("malformed suite at line {line}: {reason}")]
    MalformedSuite { line: usize, reason: String },
}

impl Error {
    /// Stable snake_case name, used as the API error code.
    pub fn code(&self) -> &'static str {
        match self {
            Error::EmptyGoal => "empty_goal",
            Error::UnknownNode(_) => "unknown_node",
            Error::AlreadyDecomposed(_) => "already_decomposed",
            Error::EmptySubtaskList => "empty_subtask_list",
            Error::DepthLimit { .. } => "depth_limit",
            Error::FanoutLimit { .. } => "fanout_limit",
            Error::InvalidTree(_) => "invalid_tree",
            Error::InvalidEntry(_) => "invalid_entry",
            Error::UnknownKey(_) => "unknown_key",
            Error::NoLocalContext => "no_local_context",
            Error::MissingBinding(_) => "missing_binding",
            Error::UnknownBinding(_) => "unknown_binding",
            Error::UnreplacedPlaceholder(_) => "unreplaced_placeholder",
            Error::TemplateFormat { .. } => "template_format",
            Error::StrategyInputMismatch(_) => "strategy_input_mismatch",
            Error::ProviderHttp { .. } => "provider_http",
            Error::ProviderTimeout(_) => "provider_timeout",
            Error::ScriptExhausted => "script_exhausted",
            Error::ScriptMismatch(_) => "script_mismatch",
            Error::InvalidRequest(_) => "invalid_request",
            Error::UnparseableSubtasks => "unparseable_subtasks",
            Error::UnparseableVerdict(_) => "unparseable_verdict",
            Error::NoValidKeys => "no_valid_keys",
            Error::NoEntitiesFound => "no_entities_found",
            Error::FeatureDisabled { .. } => "feature_disabled",
            Error::UnknownQuestion(_) => "unknown_question",
            Error::PipelineOrder(_) => "pipeline_order",
            Error::Io(_) => "io_error",
            Error::SchemaMismatch { .. } => "schema_mismatch",
            Error::CorruptSession(_) => "corrupt_session",
            Error::SessionLocked(_) => "session_locked",
            Error::MalformedSuite { .. } => "malformed_suite",
        }
    }

    pub fn is_provider_failure(&self) -> bool {
        matches!(
            self,
            Error::ProviderHttp { .. } | Error::ProviderTimeout(_) | Error::ScriptExhausted | Error::ScriptMismatch(_)
        )
    }
}
