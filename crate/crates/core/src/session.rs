//! Planning session state and its append-only event log.
//!
//! Every mutation goes through [`Session::record`], which applies an
//! [`EventBody`] to the materialized state and appends it to the log. The log
//! is the authoritative record: [`Session::replay`] rebuilds an identical
//! session from it, and [`Session::load`] refuses files whose state and log
//! disagree.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::context_store::{ContextEntry, ContextStore, Provenance, Scope};
use crate::engine::{AblationMode, DraftCandidate, ElicitationQuestion, SelectionCandidate, SelectionPurpose};
use crate::error::{Error, Result};
use crate::prompts::DetectionStrategy;
use crate::provider::{ChatMessage, Usage};
use crate::task_graph::{NodeId, SubtaskKind, SubtaskSpec, TaskTree};

pub const SCHEMA_VERSION: u32 = 1;

/// Key of the global entry holding the goal statement.
pub const GOAL_KEY: &str = "Goal";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderCallRecord {
    pub tag: String,
    pub model: String,
    pub latency_ms: u64,
    pub messages: Vec<ChatMessage>,
    pub response: Option<String>,
    pub error: Option<String>,
    pub usage: Option<Usage>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventBody {
    GoalSet {
        session_id: String,
        goal: String,
        description: String,
        mode: AblationMode,
    },
    QuestionsGenerated {
        node: Option<NodeId>,
        questions: Vec<ElicitationQuestion>,
    },
    /// An answered or skipped question, or (with no question) a context
    /// entry the user added directly.
    AnswerCommitted {
        question_id: Option<String>,
        answer: Option<String>,
        entry: Option<ContextEntry>,
    },
    SubtasksAttached {
        parent: NodeId,
        kind: SubtaskKind,
        children: Vec<NodeId>,
        subtasks: Vec<SubtaskSpec>,
    },
    Detection {
        node: NodeId,
        strategy: DetectionStrategy,
        needs_decomposition: bool,
        reasoning: String,
    },
    ForkDecision {
        node: NodeId,
        should_fork: bool,
        reasoning: String,
    },
    ContextSelected {
        node: NodeId,
        purpose: SelectionPurpose,
        candidates: Vec<SelectionCandidate>,
    },
    DraftGenerated {
        candidate: DraftCandidate,
    },
    DraftSaved {
        node: NodeId,
        key: String,
        revision: u32,
        content: String,
    },
    ProviderCall(ProviderCallRecord),
    Warning {
        message: String,
    },
}

impl EventBody {
    pub fn kind(&self) -> &'static str {
        match self {
            EventBody::GoalSet { .. } => "goal_set",
            EventBody::QuestionsGenerated { .. } => "questions_generated",
            EventBody::AnswerCommitted { .. } => "answer_committed",
            EventBody::SubtasksAttached { .. } => "subtasks_attached",
            EventBody::Detection { .. } => "detection",
            EventBody::ForkDecision { .. } => "fork_decision",
            EventBody::ContextSelected { .. } => "context_selected",
            EventBody::DraftGenerated { .. } => "draft_generated",
            EventBody::DraftSaved { .. } => "draft_saved",
            EventBody::ProviderCall(_) => "provider_call",
            EventBody::Warning { .. } => "warning",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub seq: u64,
    #[serde(flatten)]
    pub body: EventBody,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub goal: String,
    pub mode: AblationMode,
    pub tree: TaskTree,
    pub context: ContextStore,
    pub drafts: IndexMap<NodeId, Vec<DraftCandidate>>,
    pub pending_questions: Vec<ElicitationQuestion>,
    pub events: Vec<SessionEvent>,
    pub schema_version: u32,
}

impl Session {
    /// Opens a session whose first event sets the goal.
    pub fn start(id: &str, goal: &str, description: &str, mode: AblationMode, at: DateTime<Utc>) -> Result<Self> {
        let body = EventBody::GoalSet {
            session_id: id.to_owned(),
            goal: goal.to_owned(),
            description: description.to_owned(),
            mode,
        };
        let mut session = Self::from_goal(&body, at)?;
        session.events.push(SessionEvent { seq: 1, body, at });
        Ok(session)
    }

    fn from_goal(body: &EventBody, at: DateTime<Utc>) -> Result<Self> {
        let EventBody::GoalSet { session_id, goal, description, mode } = body else {
            return Err(Error::CorruptSession("first event must be goal_set".into()));
        };
        let tree = TaskTree::create(goal, description, at)?;
        let mut context = ContextStore::new();
        context.put(ContextEntry {
            key: GOAL_KEY.into(),
            value: goal.clone(),
            scope: Scope::Global,
            provenance: Provenance::GoalStatement,
            source_node: None,
            created_at: at,
        })?;
        Ok(Session {
            id: session_id.clone(),
            goal: goal.clone(),
            mode: *mode,
            tree,
            context,
            drafts: IndexMap::new(),
            pending_questions: Vec::new(),
            events: Vec::new(),
            schema_version: SCHEMA_VERSION,
        })
    }

    /// Applies `body` and appends it to the log. On error nothing changes.
    pub fn record(&mut self, body: EventBody, at: DateTime<Utc>) -> Result<&SessionEvent> {
        self.apply(&body, at)?;
        let seq = self.events.len() as u64 + 1;
        self.events.push(SessionEvent { seq, body, at });
        Ok(self.events.last().expect("just pushed"))
    }

    /// Validates before mutating so a failed apply leaves state untouched.
    fn apply(&mut self, body: &EventBody, at: DateTime<Utc>) -> Result<()> {
        match body {
            EventBody::GoalSet { .. } => Err(Error::CorruptSession("goal_set may only open a session".into())),
            EventBody::QuestionsGenerated { node, questions } => {
                if let Some(n) = node {
                    self.tree.get(n)?;
                }
                for q in questions {
                    if self.pending_questions.iter().any(|p| p.id == q.id) {
                        return Err(Error::CorruptSession(format!("duplicate question id `{}`", q.id)));
                    }
                }
                self.pending_questions.extend(questions.iter().cloned());
                Ok(())
            }
            EventBody::AnswerCommitted { question_id, answer, entry } => {
                let idx = match question_id {
                    Some(id) => Some(
                        self.pending_questions
                            .iter()
                            .position(|q| &q.id == id)
                            .ok_or_else(|| Error::UnknownQuestion(id.clone()))?,
                    ),
                    None => None,
                };
                if let Some(e) = entry {
                    e.validate()?;
                    if let Some(n) = &e.source_node {
                        self.tree.get(n)?;
                    }
                    self.context.put(e.clone())?;
                }
                if let Some(i) = idx {
                    let q = &mut self.pending_questions[i];
                    q.answered = true;
                    q.answer = answer.clone();
                }
                Ok(())
            }
            EventBody::SubtasksAttached { parent, kind, children, subtasks } => {
                self.tree.check_attach(parent, subtasks.len())?;
                let first = self.tree.len();
                let expected: Vec<NodeId> = (first..first + subtasks.len()).map(|i| NodeId::new(format!("n{i}"))).collect();
                if &expected != children {
                    return Err(Error::CorruptSession(format!("child ids {children:?} do not match {expected:?}")));
                }
                self.tree.attach_subtasks(parent, subtasks, *kind)?;
                Ok(())
            }
            EventBody::Detection { node, .. } => self.tree.mark_exploring(node),
            EventBody::ForkDecision { node, .. } | EventBody::ContextSelected { node, .. } => {
                self.tree.get(node).map(|_| ())
            }
            EventBody::DraftGenerated { candidate } => {
                self.tree.get(&candidate.node)?;
                let expected = self.drafts.get(&candidate.node).map_or(0, Vec::len) as u32 + 1;
                if candidate.revision != expected {
                    return Err(Error::CorruptSession(format!(
                        "draft revision {} for `{}`, expected {expected}",
                        candidate.revision, candidate.node
                    )));
                }
                for key in &candidate.context_keys_used {
                    if self.context.get(Scope::Local, key).is_none() {
                        return Err(Error::UnknownKey(key.clone()));
                    }
                }
                self.tree.mark_exploring(&candidate.node)?;
                self.drafts.entry(candidate.node.clone()).or_default().push(candidate.clone());
                Ok(())
            }
            EventBody::DraftSaved { node, key, content, .. } => {
                self.tree.get(node)?;
                self.context.put(ContextEntry {
                    key: key.clone(),
                    value: content.clone(),
                    scope: Scope::Local,
                    provenance: Provenance::SavedDraft,
                    source_node: Some(node.clone()),
                    created_at: at,
                })?;
                self.tree.set_draft_ref(node, key)
            }
            EventBody::ProviderCall(_) | EventBody::Warning { .. } => Ok(()),
        }
    }

    /// Rebuilds a session purely from its event log.
    pub fn replay(events: &[SessionEvent]) -> Result<Self> {
        let first = events.first().ok_or_else(|| Error::CorruptSession("empty event log".into()))?;
        check_sequence(events)?;
        let mut session = Self::from_goal(&first.body, first.at)?;
        session.events.push(first.clone());
        for event in &events[1..] {
            session
                .apply(&event.body, event.at)
                .map_err(|e| Error::CorruptSession(format!("event {} ({}): {e}", event.seq, event.body.kind())))?;
            session.events.push(event.clone());
        }
        Ok(session)
    }

    /// Structural checks across tree, context and log.
    pub fn validate(&self) -> Result<()> {
        check_sequence(&self.events)?;
        self.tree.validate().map_err(|e| Error::CorruptSession(e.to_string()))?;
        for node in self.tree.nodes.values() {
            if let Some(key) = &node.draft_ref {
                if self.context.get(Scope::Local, key).is_none() {
                    return Err(Error::CorruptSession(format!("draft_ref `{key}` of `{}` has no local entry", node.id)));
                }
            }
        }
        for entry in self.context.entries() {
            entry.validate().map_err(|e| Error::CorruptSession(e.to_string()))?;
            if let Some(n) = &entry.source_node {
                if !self.tree.nodes.contains_key(n) {
                    return Err(Error::CorruptSession(format!("entry `{}` names missing node `{n}`", entry.key)));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("session serializes");
        s.push('\n');
        s
    }

    /// Writes the session as one JSON document, replacing `path` atomically.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        {
            let mut f = File::create(&tmp)?;
            f.write_all(self.to_json().as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::CorruptSession(format!("not valid JSON: {e}")))?;
        let version = value
            .get("schema_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::CorruptSession("missing schema_version".into()))?;
        if version != u64::from(SCHEMA_VERSION) {
            return Err(Error::SchemaMismatch { found: version, expected: SCHEMA_VERSION });
        }
        let session: Session = serde_json::from_value(value).map_err(|e| Error::CorruptSession(e.to_string()))?;
        session.validate()?;
        if Session::replay(&session.events)? != session {
            return Err(Error::CorruptSession("materialized state disagrees with the event log".into()));
        }
        Ok(session)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn last_detection(&self, node: &NodeId) -> Option<(DetectionStrategy, bool)> {
        self.events.iter().rev().find_map(|e| match &e.body {
            EventBody::Detection { node: n, strategy, needs_decomposition, .. } if n == node => {
                Some((*strategy, *needs_decomposition))
            }
            _ => None,
        })
    }

    pub fn last_fork_decision(&self, node: &NodeId) -> Option<bool> {
        self.events.iter().rev().find_map(|e| match &e.body {
            EventBody::ForkDecision { node: n, should_fork, .. } if n == node => Some(*should_fork),
            _ => None,
        })
    }

    pub fn latest_draft(&self, node: &NodeId) -> Option<&DraftCandidate> {
        self.drafts.get(node).and_then(|d| d.last())
    }

    pub fn draft(&self, node: &NodeId, revision: u32) -> Option<&DraftCandidate> {
        self.drafts.get(node).and_then(|d| d.iter().find(|c| c.revision == revision))
    }

    pub fn question(&self, id: &str) -> Option<&ElicitationQuestion> {
        self.pending_questions.iter().find(|q| q.id == id)
    }

    pub fn file_name(&self) -> String {
        format!("{}.json", self.id)
    }
}

fn check_sequence(events: &[SessionEvent]) -> Result<()> {
    match events.first() {
        Some(SessionEvent { body: EventBody::GoalSet { .. }, .. }) => {}
        Some(_) => return Err(Error::CorruptSession("first event must be goal_set".into())),
        None => return Err(Error::CorruptSession("empty event log".into())),
    }
    for (i, e) in events.iter().enumerate() {
        if e.seq != i as u64 + 1 {
            return Err(Error::CorruptSession(format!("event seq {} at position {} (gap or reorder)", e.seq, i + 1)));
        }
        if i > 0 && matches!(e.body, EventBody::GoalSet { .. }) {
            return Err(Error::CorruptSession(format!("second goal_set at seq {}", e.seq)));
        }
    }
    Ok(())
}

/// Advisory single-writer lock: a `<file>.lock` sibling created exclusively
/// and removed on drop.
#[derive(Debug)]
pub struct SessionLock {
    path: PathBuf,
}

impl SessionLock {
    pub fn acquire(session_path: &Path) -> Result<Self> {
        let mut lock = session_path.as_os_str().to_owned();
        lock.push(".lock");
        let path = PathBuf::from(lock);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(SessionLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::SessionLocked(path)),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for SessionLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
