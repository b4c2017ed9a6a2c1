//! Hierarchical task tree: the goal is the root and every decomposition
//! attaches an ordered list of children to exactly one node.

use std::fmt;

use chrono::{DateTime, Utc};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Deepest level a node may be created at (root = 0).
pub const MAX_DEPTH: u32 = 6;
/// Most children a single decomposition may attach.
pub const MAX_FANOUT: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        NodeId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_owned())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    Unexplored,
    Exploring,
    Completed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decomposition {
    None,
    Standard,
    Fork,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubtaskKind {
    Standard,
    Fork,
}

impl From<SubtaskKind> for Decomposition {
    fn from(kind: SubtaskKind) -> Self {
        match kind {
            SubtaskKind::Standard => Decomposition::Standard,
            SubtaskKind::Fork => Decomposition::Fork,
        }
    }
}

/// Title, description and duration of a subtask before it gets an id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtaskSpec {
    pub title: String,
    pub description: String,
    pub estimated_duration: String,
}

impl SubtaskSpec {
    pub fn new(title: impl Into<String>, description: impl Into<String>, estimated_duration: impl Into<String>) -> Self {
        SubtaskSpec {
            title: title.into(),
            description: description.into(),
            estimated_duration: estimated_duration.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskNode {
    pub id: NodeId,
    pub title: String,
    pub description: String,
    pub estimated_duration: String,
    pub status: NodeStatus,
    pub decomposition: Decomposition,
    pub draft_ref: Option<String>,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub level: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskTree {
    pub root: NodeId,
    pub nodes: IndexMap<NodeId, TaskNode>,
    pub created_at: DateTime<Utc>,
}

impl TaskTree {
    pub fn create(goal_title: &str, goal_description: &str, created_at: DateTime<Utc>) -> Result<Self> {
        if goal_title.trim().is_empty() {
            return Err(Error::EmptyGoal);
        }
        let root = NodeId::new("n0");
        let node = TaskNode {
            id: root.clone(),
            title: goal_title.to_owned(),
            description: goal_description.to_owned(),
            estimated_duration: String::new(),
            status: NodeStatus::Exploring,
            decomposition: Decomposition::None,
            draft_ref: None,
            parent: None,
            children: Vec::new(),
            level: 0,
        };
        let mut nodes = IndexMap::new();
        nodes.insert(root.clone(), node);
        Ok(TaskTree { root, nodes, created_at })
    }

    pub fn root(&self) -> &TaskNode {
        &self.nodes[&self.root]
    }

    pub fn get(&self, id: &NodeId) -> Result<&TaskNode> {
        self.nodes.get(id).ok_or_else(|| Error::UnknownNode(id.to_string()))
    }

    fn get_mut(&mut self, id: &NodeId) -> Result<&mut TaskNode> {
        self.nodes.get_mut(id).ok_or_else(|| Error::UnknownNode(id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Id the next created node will receive.
    pub fn next_id(&self) -> NodeId {
        NodeId(format!("n{}", self.nodes.len()))
    }

    /// Checks every precondition of [`attach_subtasks`](Self::attach_subtasks)
    /// without mutating.
    pub fn check_attach(&self, parent: &NodeId, count: usize) -> Result<()> {
        let node = self.get(parent)?;
        if !node.children.is_empty() || node.decomposition != Decomposition::None {
            return Err(Error::AlreadyDecomposed(parent.to_string()));
        }
        if count == 0 {
            return Err(Error::EmptySubtaskList);
        }
        if node.level + 1 > MAX_DEPTH {
            return Err(Error::DepthLimit { node: parent.to_string(), level: node.level, max: MAX_DEPTH });
        }
        if count > MAX_FANOUT {
            return Err(Error::FanoutLimit { count, max: MAX_FANOUT });
        }
        Ok(())
    }

    /// Attaches `subtasks` as the children of `parent`, in order. A node is
    /// decomposed at most once.
    pub fn attach_subtasks(&mut self, parent: &NodeId, subtasks: &[SubtaskSpec], kind: SubtaskKind) -> Result<Vec<NodeId>> {
        self.check_attach(parent, subtasks.len())?;
        let level = self.nodes[parent].level + 1;
        let mut ids = Vec::with_capacity(subtasks.len());
        for spec in subtasks {
            let id = self.next_id();
            self.nodes.insert(
                id.clone(),
                TaskNode {
                    id: id.clone(),
                    title: spec.title.clone(),
                    description: spec.description.clone(),
                    estimated_duration: spec.estimated_duration.clone(),
                    status: NodeStatus::Unexplored,
                    decomposition: Decomposition::None,
                    draft_ref: None,
                    parent: Some(parent.clone()),
                    children: Vec::new(),
                    level,
                },
            );
            ids.push(id);
        }
        let node = self.get_mut(parent)?;
        node.children = ids.clone();
        node.decomposition = kind.into();
        Ok(ids)
    }

    /// Records the saved draft for `node` and marks it completed. Ancestors
    /// whose children are now all completed are completed as well.
    pub fn set_draft_ref(&mut self, node: &NodeId, draft_key: &str) -> Result<()> {
        let n = self.get_mut(node)?;
        n.draft_ref = Some(draft_key.to_owned());
        n.status = NodeStatus::Completed;
        let mut cursor = n.parent.clone();
        while let Some(id) = cursor {
            let done = self.nodes[&id]
                .children
                .iter()
                .all(|c| self.nodes[c].status == NodeStatus::Completed);
            if !done {
                break;
            }
            let parent = self.get_mut(&id)?;
            parent.status = NodeStatus::Completed;
            cursor = parent.parent.clone();
        }
        Ok(())
    }

    /// Moves a node between `unexplored` and `exploring`. Completed is sticky.
    pub fn mark_exploring(&mut self, node: &NodeId) -> Result<()> {
        let n = self.get_mut(node)?;
        if n.status == NodeStatus::Unexplored {
            n.status = NodeStatus::Exploring;
        }
        Ok(())
    }

    pub fn mark_unexplored(&mut self, node: &NodeId) -> Result<()> {
        let n = self.get_mut(node)?;
        if n.status == NodeStatus::Exploring {
            n.status = NodeStatus::Unexplored;
        }
        Ok(())
    }

    /// Depth-first pre-order walk starting at the root.
    pub fn dfs(&self) -> Vec<&TaskNode> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![&self.root];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            out.push(node);
            stack.extend(node.children.iter().rev());
        }
        out
    }

    /// Indented outline, two spaces per level, one `title: description` line
    /// per node.
    pub fn outline(&self) -> String {
        let mut out = String::new();
        for node in self.dfs() {
            for _ in 0..node.level {
                out.push_str("  ");
            }
            out.push_str(&node.title);
            if !node.description.is_empty() {
                out.push_str(": ");
                out.push_str(&node.description);
            }
            out.push('\n');
        }
        out
    }

    /// Ids from the root down to `node`, inclusive.
    pub fn node_path(&self, node: &NodeId) -> Result<Vec<NodeId>> {
        let mut path = vec![self.get(node)?.id.clone()];
        let mut cursor = self.nodes[node].parent.clone();
        while let Some(id) = cursor {
            if path.len() > self.nodes.len() {
                return Err(Error::InvalidTree(format!("cycle through `{id}`")));
            }
            cursor = self.get(&id)?.parent.clone();
            path.push(id);
        }
        path.reverse();
        Ok(path)
    }

    /// Full structural sweep over every node invariant.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidTree(msg));
        let roots: Vec<_> = self.nodes.values().filter(|n| n.parent.is_none()).collect();
        if roots.len() != 1 || roots[0].id != self.root || roots[0].level != 0 {
            return bad("tree must have exactly one level-0 root".into());
        }
        for (id, node) in &self.nodes {
            if &node.id != id {
                return bad(format!("node keyed `{id}` carries id `{}`", node.id));
            }
            if (node.decomposition == Decomposition::None) != node.children.is_empty() {
                return bad(format!("`{id}` decomposition disagrees with its children"));
            }
            for child in &node.children {
                let Some(c) = self.nodes.get(child) else {
                    return bad(format!("`{id}` references missing child `{child}`"));
                };
                if c.parent.as_ref() != Some(id) || c.level != node.level + 1 {
                    return bad(format!("child `{child}` is inconsistent with parent `{id}`"));
                }
            }
            if let Some(parent) = &node.parent {
                match self.nodes.get(parent) {
                    Some(p) if p.children.contains(id) => {}
                    _ => return bad(format!("`{id}` is not listed by its parent")),
                }
            }
            if node.status == NodeStatus::Completed
                && node.draft_ref.is_none()
                && (node.children.is_empty()
                    || node.children.iter().any(|c| self.nodes[c].status != NodeStatus::Completed))
            {
                return bad(format!("`{id}` is completed without a draft or completed children"));
            }
            if node.level > MAX_DEPTH {
                return bad(format!("`{id}` exceeds the depth limit"));
            }
        }
        for id in self.nodes.keys() {
            let path = self.node_path(id)?;
            if path.len() as u32 != self.nodes[id].level + 1 || path[0] != self.root {
                return bad(format!("path to `{id}` does not match its level"));
            }
        }
        Ok(())
    }
}
