//! Key-value context in two scopes. Global context holds what was elicited
//! right after the goal was set; local context holds saved drafts and
//! anything the user adds while working on tasks.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task_graph::NodeId;

/// Largest accepted value, in bytes.
pub const MAX_VALUE_BYTES: usize = 64 * 1024;

/// Rendering of a scope (or selection) with no entries.
pub const EMPTY_CONTEXT: &str = "(no context)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Global,
    Local,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    GoalStatement,
    ElicitedAnswer,
    UploadedDocument,
    SavedDraft,
    UserAdded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextEntry {
    pub key: String,
    pub value: String,
    pub scope: Scope,
    pub provenance: Provenance,
    pub source_node: Option<NodeId>,
    pub created_at: DateTime<Utc>,
}

impl ContextEntry {
    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: &str| Err(Error::InvalidEntry(msg.to_owned()));
        if self.key.trim().is_empty() {
            return invalid("key must not be empty");
        }
        if self.key.contains('\n') {
            return invalid("key must be a single line");
        }
        if self.value.len() > MAX_VALUE_BYTES {
            return Err(Error::InvalidEntry(format!(
                "value is {} bytes; the limit is {MAX_VALUE_BYTES}",
                self.value.len()
            )));
        }
        match self.provenance {
            Provenance::SavedDraft if self.scope != Scope::Local || self.source_node.is_none() => {
                invalid("saved drafts must be local and name their source node")
            }
            Provenance::GoalStatement | Provenance::ElicitedAnswer | Provenance::UploadedDocument
                if self.scope != Scope::Global =>
            {
                invalid("goal statements, elicited answers and uploads are global")
            }
            _ => Ok(()),
        }
    }
}

/// What a checklist or drop-down needs to know about an entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeySummary {
    pub key: String,
    pub provenance: Provenance,
    pub source_node: Option<NodeId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PutOutcome {
    Inserted,
    /// The key already existed in the scope; carries the old provenance.
    Replaced(Provenance),
}

/// Insertion-ordered entries. Serialized as a plain array.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContextStore {
    entries: Vec<ContextEntry>,
}

impl ContextStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores `entry`. An existing entry with the same scope and key is
    /// replaced in place, keeping its original position.
    pub fn put(&mut self, entry: ContextEntry) -> Result<PutOutcome> {
        entry.validate()?;
        match self.position(entry.scope, &entry.key) {
            Some(i) => {
                let old = std::mem::replace(&mut self.entries[i], entry);
                Ok(PutOutcome::Replaced(old.provenance))
            }
            None => {
                self.entries.push(entry);
                Ok(PutOutcome::Inserted)
            }
        }
    }

    fn position(&self, scope: Scope, key: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.scope == scope && e.key == key)
    }

    pub fn get(&self, scope: Scope, key: &str) -> Option<&ContextEntry> {
        self.position(scope, key).map(|i| &self.entries[i])
    }

    pub fn entries(&self) -> &[ContextEntry] {
        &self.entries
    }

    pub fn scope(&self, scope: Scope) -> impl Iterator<Item = &ContextEntry> {
        self.entries.iter().filter(move |e| e.scope == scope)
    }

    pub fn keys(&self, scope: Scope) -> Vec<String> {
        self.scope(scope).map(|e| e.key.clone()).collect()
    }

    pub fn is_scope_empty(&self, scope: Scope) -> bool {
        self.scope(scope).next().is_none()
    }

    pub fn render_scope(&self, scope: Scope) -> String {
        render_lines(self.scope(scope))
    }

    /// Renders the named local entries in the order given.
    pub fn render_selected<S: AsRef<str>>(&self, keys: &[S]) -> Result<String> {
        let entries = keys
            .iter()
            .map(|k| self.get(Scope::Local, k.as_ref()).ok_or_else(|| Error::UnknownKey(k.as_ref().to_owned())))
            .collect::<Result<Vec<_>>>()?;
        Ok(render_lines(entries))
    }

    pub fn list_keys(&self, scope: Scope) -> Vec<KeySummary> {
        self.scope(scope)
            .map(|e| KeySummary { key: e.key.clone(), provenance: e.provenance, source_node: e.source_node.clone() })
            .collect()
    }
}

fn render_lines<'a>(entries: impl IntoIterator<Item = &'a ContextEntry>) -> String {
    let lines: Vec<String> = entries.into_iter().map(|e| format!("{}: {}", e.key, e.value)).collect();
    if lines.is_empty() {
        EMPTY_CONTEXT.to_owned()
    } else {
        lines.join("\n")
    }
}
