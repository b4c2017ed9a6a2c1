//! Fixtures for the criterion benches: synthetic trees, stores and model
//! replies of a chosen size.

use curate_core::{
    Clock, ContextEntry, ContextStore, FixedClock, NodeId, Provenance, Scope, SubtaskKind, SubtaskSpec, TaskTree,
};

/// A complete tree where every node down to `depth` has `fanout` children.
pub fn full_tree(depth: u32, fanout: usize) -> TaskTree {
    let mut tree = TaskTree::create("Apply for a PhD in NLP", "", FixedClock::default().now()).expect("non-empty goal");
    let mut frontier = vec![tree.root.clone()];
    for _ in 0..depth {
        let mut next = Vec::new();
        for parent in &frontier {
            let specs: Vec<SubtaskSpec> =
                (0..fanout).map(|i| SubtaskSpec::new(format!("{parent} step {i}"), "do the work", "1 week")).collect();
            next.extend(tree.attach_subtasks(parent, &specs, SubtaskKind::Standard).expect("within limits"));
        }
        frontier = next;
    }
    tree
}

/// `n` local entries plus a goal statement.
pub fn store(n: usize) -> ContextStore {
    let at = FixedClock::default().now();
    let mut store = ContextStore::new();
    let entry = |key: String, value: String, scope, provenance| ContextEntry {
        key,
        value,
        scope,
        provenance,
        source_node: None,
        created_at: at,
    };
    store
        .put(entry("Goal".into(), "Apply for a PhD in NLP".into(), Scope::Global, Provenance::GoalStatement))
        .expect("valid entry");
    for i in 0..n {
        store
            .put(entry(format!("note {i}"), "x".repeat(200), Scope::Local, Provenance::UserAdded))
            .expect("valid entry");
    }
    store
}

/// A numbered subtask reply with `n` items.
pub fn subtask_reply(n: usize) -> String {
    (1..=n).map(|i| format!("{i}. Task {i} — description of task {i} — {i} days")).collect::<Vec<_>>().join("\n")
}

/// A verdict reply with a paragraph of reasoning before the answer line.
pub fn verdict_reply() -> String {
    format!("{}\nAnswer: Yes", "The task has several independent parts. ".repeat(20))
}

pub fn some_leaf(tree: &TaskTree) -> NodeId {
    tree.nodes.values().rev().find(|n| n.children.is_empty()).map(|n| n.id.clone()).expect("a leaf")
}
