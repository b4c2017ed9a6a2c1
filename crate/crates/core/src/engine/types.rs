use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::task_graph::NodeId;

/// Which context-curation mechanisms are active.
///
/// Reuse of saved drafts is always on. `SelectionAndReuse` adds per-task
/// context selection; `FullCuration` adds elicitation on top of that.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    ReuseOnly,
    SelectionAndReuse,
    FullCuration,
}

impl AblationMode {
    pub const ALL: [AblationMode; 3] =
        [AblationMode::ReuseOnly, AblationMode::SelectionAndReuse, AblationMode::FullCuration];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationMode::ReuseOnly => "reuse_only",
            AblationMode::SelectionAndReuse => "selection_and_reuse",
            AblationMode::FullCuration => "full_curation",
        }
    }

    pub fn elicitation_enabled(self) -> bool {
        self == AblationMode::FullCuration
    }

    pub fn selection_enabled(self) -> bool {
        self != AblationMode::ReuseOnly
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AblationMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode `{s}` (expected reuse_only, selection_and_reuse or full_curation)"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElicitationQuestion {
    pub id: String,
    pub question: String,
    pub expects_file: bool,
    /// `"skipped"` when the user declined to answer.
    pub answer: Option<String>,
    pub answered: bool,
    /// Task the question was asked for; `None` for goal-level questions.
    pub node: Option<NodeId>,
}

pub const SKIPPED_ANSWER: &str = "skipped";

/// A user's response to one elicitation question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub question_id: String,
    #[serde(flatten)]
    pub response: AnswerResponse,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AnswerResponse {
    File { file_name: String, file_content: String },
    Text { text: String },
    Skip { skip: bool },
}

impl Answer {
    pub fn text(question_id: impl Into<String>, text: impl Into<String>) -> Self {
        Answer { question_id: question_id.into(), response: AnswerResponse::Text { text: text.into() } }
    }

    pub fn file(question_id: impl Into<String>, name: impl Into<String>, content: impl Into<String>) -> Self {
        Answer {
            question_id: question_id.into(),
            response: AnswerResponse::File { file_name: name.into(), file_content: content.into() },
        }
    }

    pub fn skip(question_id: impl Into<String>) -> Self {
        Answer { question_id: question_id.into(), response: AnswerResponse::Skip { skip: true } }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DraftLineage {
    Initial,
    Regenerated,
    RegeneratedWithContext,
    Iterated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DraftCandidate {
    pub node: NodeId,
    pub content: String,
    pub context_keys_used: Vec<String>,
    pub revision: u32,
    pub lineage: DraftLineage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPurpose {
    Drafting,
    Forking,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionCandidate {
    pub key: String,
    pub reason: String,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub needs_decomposition: bool,
    pub reasoning: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForkVerdict {
    pub should_fork: bool,
    pub reasoning: String,
}

/// Detection followed, when decomposition is needed, by the fork check.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectOutcome {
    pub needs_decomposition: bool,
    pub should_fork: bool,
    pub reasoning: String,
    pub fork_reasoning: Option<String>,
}
