use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use super::*;
use crate::clock::FixedClock;
use crate::provider::{MockProvider, Role};
use crate::task_graph::{Decomposition, NodeStatus};

/// Responder that answers by request tag; a tag may hold a queue of replies
/// (the last one repeats).
fn routed(replies: &[(&str, &[&str])]) -> MockProvider {
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

fn engine(mode: AblationMode, mock: &MockProvider) -> Engine {
    Engine::start(
        "t",
        "Apply for a PhD in NLP",
        "",
        EngineConfig::with_mode(mode),
        Arc::new(mock.clone()),
        Arc::new(PromptLibrary::builtin()),
        Arc::new(FixedClock::default()),
    )
    .unwrap()
}

const SUBTASKS: &str = "1. Identify Potential PhD Programs — find programs — 2 weeks\n\
                        2. Get Recommendation Letters — ask professors — 1 month";

fn root(e: &Engine) -> NodeId {
    e.session().tree.root.clone()
}

#[test]
fn elicitation_gated_by_mode() {
    let mock = routed(&[("elicit_global", &["1. Which schools? [file]"])]);
    for mode in [AblationMode::ReuseOnly, AblationMode::SelectionAndReuse] {
        let mut e = engine(mode, &mock);
        assert!(matches!(e.elicit_global_context(), Err(Error::FeatureDisabled { .. })));
    }
    assert!(mock.captured().is_empty());
    let mut e = engine(AblationMode::FullCuration, &mock);
    let qs = e.elicit_global_context().unwrap();
    assert_eq!(qs.len(), 1);
    assert!(qs[0].expects_file);
    assert_eq!(qs[0].id, "q1");
}

#[test]
fn committed_answers_land_in_global_scope() {
    let mock = routed(&[(
        "elicit_global",
        &["1. What are your potential target schools? Please upload your CV. [file]\n2. Who could write your recommendation letters?"],
    )]);
    let mut e = engine(AblationMode::FullCuration, &mock);
    e.elicit_global_context().unwrap();
    let keys = e.commit_elicited(&[Answer::file("q1", "cv.txt", "John Doe, MSc"), Answer::skip("q2")]).unwrap();
    assert_eq!(keys, ["What are your potential target schools? Please upload your CV."]);
    let entry = e.session().context.get(Scope::Global, &keys[0]).unwrap();
    assert_eq!(entry.provenance, Provenance::UploadedDocument);
    assert_eq!(entry.value, "John Doe, MSc");
    let q2 = e.session().question("q2").unwrap();
    assert!(q2.answered);
    assert_eq!(q2.answer.as_deref(), Some(SKIPPED_ANSWER));
    // resubmission overwrites
    e.commit_elicited(&[Answer::file("q1", "cv.txt", "John Doe, PhD")]).unwrap();
    assert_eq!(e.session().context.keys(Scope::Global).len(), 2);
    assert!(matches!(e.commit_elicited(&[Answer::text("q9", "x")]), Err(Error::UnknownQuestion(_))));
}

#[test]
fn long_questions_truncate_to_eighty_chars() {
    let long = "x".repeat(100);
    let mock = routed(&[("elicit_global", &[&format!("1. {long}")])]);
    let mut e = engine(AblationMode::FullCuration, &mock);
    e.elicit_global_context().unwrap();
    let keys = e.commit_elicited(&[Answer::text("q1", "y")]).unwrap();
    assert_eq!(keys[0].chars().count(), MAX_QUESTION_KEY_CHARS);
}

#[test]
fn subtasks_use_tree_outline_and_attach() {
    let mock = routed(&[("generate_subtasks", &[SUBTASKS])]);
    let mut e = engine(AblationMode::ReuseOnly, &mock);
    let r = root(&e);
    let ids = e.generate_subtasks(&r).unwrap();
    assert_eq!(ids, [NodeId::new("n1"), NodeId::new("n2")]);
    let user = mock.captured()[0].last_user_message().unwrap().to_owned();
    assert!(user.contains("Apply for a PhD in NLP"));
    assert!(user.contains("Here is the current task tree:\nApply for a PhD in NLP\n"));
    assert!(matches!(e.generate_subtasks(&r), Err(Error::AlreadyDecomposed(_))));
    assert_eq!(mock.captured().len(), 1, "no provider call once decomposed");
    // second level sees the first
    e.generate_subtasks(&ids[0]).unwrap();
    let user = mock.captured()[1].last_user_message().unwrap().to_owned();
    assert!(user.contains("  Get Recommendation Letters: ask professors"));
}

#[test]
fn subtask_parse_retries_once() {
    let mock = routed(&[("generate_subtasks", &["Sure!", SUBTASKS])]);
    let mut e = engine(AblationMode::ReuseOnly, &mock);
    let r = root(&e);
    assert_eq!(e.generate_subtasks(&r).unwrap().len(), 2);
    let mock = routed(&[("generate_subtasks", &["Sure!"])]);
    let mut e = engine(AblationMode::ReuseOnly, &mock);
    let before = e.session().clone();
    assert!(matches!(e.generate_subtasks(&r), Err(Error::UnparseableSubtasks)));
    assert_eq!(mock.captured().len(), 2);
    assert_eq!(e.session(), &before);
}

#[test]
fn fanout_is_truncated_with_warning() {
    let many: String = (1..=15).map(|i| format!("{i}. Task {i} — d — 1 day\n")).collect();
    let mock = routed(&[("generate_subtasks", &[&many])]);
    let mut e = engine(AblationMode::ReuseOnly, &mock);
    let r = root(&e);
    assert_eq!(e.generate_subtasks(&r).unwrap().len(), MAX_FANOUT);
    assert!(e.session().events.iter().any(|ev| matches!(ev.body, EventBody::Warning { .. })));
}

#[test]
fn detection_polarity_and_reask() {
    let mock = routed(&[("detect_subtask", &["Answer: No"]), ("detect_draft", &["A draft."])]);
    let mut e = engine(AblationMode::ReuseOnly, &mock);
    let r = root(&e);
    assert!(!e.detect_actionability(&r, Some(DetectionStrategy::ZeroShot)).unwrap().needs_decomposition);
    // "No" to "is it specific and actionable" means decompose
    assert!(e.detect_actionability(&r, Some(DetectionStrategy::FewShotCotTreeDraft)).unwrap().needs_decomposition);
    let reqs = mock.captured();
    assert_eq!(reqs[1].tag, "detect_draft");
    assert!(reqs[2].last_user_message().unwrap().contains("The GPT response to the task is: A draft."));
    assert!(reqs[2].last_user_message().unwrap().contains("The current node level of the task is 0."));

    let mock = routed(&[("detect_subtask", &["hmm", "Because.\nAnswer: Yes"])]);
    let mut e = engine(AblationMode::ReuseOnly, &mock);
    let v = e.detect_actionability(&r, None).unwrap();
    assert!(v.needs_decomposition);
    assert_eq!(v.reasoning, "Because.");
    let retry = &mock.captured()[1];
    assert_eq!(retry.messages.len(), 4);
    assert_eq!(retry.messages[2].role, Role::Assistant);
    assert_eq!(retry.last_user_message(), Some(REASK_INSTRUCTION));

    let mock = routed(&[("detect_subtask", &["hmm"])]);
    let mut e = engine(AblationMode::ReuseOnly, &mock);
    assert!(matches!(e.detect_actionability(&r, None), Err(Error::UnparseableVerdict(_))));
    assert_eq!(e.session().events.len(), 1);
}

#[test]
fn fork_pipeline_order_and_guard() {
    let mock = routed(&[("detect_subtask", &["Answer: Yes"]), ("fork_decision", &["Answer: Yes"])]);
    let mut e = engine(AblationMode::SelectionAndReuse, &mock);
    let r = root(&e);
    assert!(matches!(e.detect_fork(&r), Err(Error::PipelineOrder(_))));
    e.detect_actionability(&r, None).unwrap();
    let calls = mock.captured().len();
    let v = e.detect_fork(&r).unwrap();
    assert!(!v.should_fork, "empty local context never forks");
    assert_eq!(mock.captured().len(), calls);
    e.add_context("University List", "MIT, CMU").unwrap();
    assert!(e.detect_fork(&r).unwrap().should_fork);
    assert!(mock.captured().last().unwrap().last_user_message().unwrap().contains("University List: MIT, CMU"));
}

#[test]
fn fork_task_creates_one_child_per_entity() {
    let mock = routed(&[
        ("detect_subtask", &["Answer: Yes"]),
        ("fork_decision", &["Answer: Yes"]),
        ("fork_entities", &["1. MIT — look up faculty\n2. CMU — look up faculty"]),
    ]);
    let mut e = engine(AblationMode::SelectionAndReuse, &mock);
    let r = root(&e);
    e.add_context("University List", "MIT, CMU").unwrap();
    assert!(matches!(e.fork_task(&r, &["University List"]), Err(Error::PipelineOrder(_))));
    e.detect_actionability(&r, None).unwrap();
    e.detect_fork(&r).unwrap();
    assert!(matches!(e.fork_task::<&str>(&r, &[]), Err(Error::InvalidRequest(_))));
    assert!(matches!(e.fork_task(&r, &["nope"]), Err(Error::UnknownKey(_))));
    let ids = e.fork_task(&r, &["University List"]).unwrap();
    assert_eq!(ids.len(), 2);
    let tree = &e.session().tree;
    assert_eq!(tree.root().decomposition, Decomposition::Fork);
    assert_eq!(tree.get(&ids[0]).unwrap().title, "Apply for a PhD in NLP: MIT");
}

#[test]
fn fork_without_entities_fails_cleanly() {
    let mock = routed(&[
        ("detect_subtask", &["Answer: Yes"]),
        ("fork_decision", &["Answer: Yes"]),
        ("fork_entities", &["NONE"]),
    ]);
    let mut e = engine(AblationMode::SelectionAndReuse, &mock);
    let r = root(&e);
    e.add_context("Notes", "nothing enumerable").unwrap();
    e.detect_actionability(&r, None).unwrap();
    e.detect_fork(&r).unwrap();
    let before = e.session().clone();
    assert!(matches!(e.fork_task(&r, &["Notes"]), Err(Error::NoEntitiesFound)));
    assert_eq!(e.session(), &before);
}

#[test]
fn selection_modes_and_errors() {
    let mock = routed(&[("select_context_draft", &["CV: useful\nBogus: nope"]), ("select_context_fork", &["Bogus: x"])]);
    let mut e = engine(AblationMode::ReuseOnly, &mock);
    let r = root(&e);
    assert!(matches!(e.select_context(&r, SelectionPurpose::Drafting), Err(Error::FeatureDisabled { .. })));

    let mut e = engine(AblationMode::SelectionAndReuse, &mock);
    assert!(matches!(e.select_context(&r, SelectionPurpose::Forking), Err(Error::NoLocalContext)));
    assert!(e.select_context(&r, SelectionPurpose::Drafting).unwrap().is_empty());
    e.add_context("CV", "John").unwrap();
    let c = e.select_context(&r, SelectionPurpose::Drafting).unwrap();
    assert_eq!(c, [SelectionCandidate { key: "CV".into(), reason: "useful".into(), accepted: true }]);
    assert!(mock.captured().last().unwrap().last_user_message().unwrap().contains("- CV"));
    assert!(matches!(e.select_context(&r, SelectionPurpose::Forking), Err(Error::NoValidKeys)));
}

#[test]
fn draft_context_follows_mode() {
    let mock = routed(&[("generate_draft", &["draft"])]);
    let mut e = engine(AblationMode::ReuseOnly, &mock);
    let r = root(&e);
    e.add_context("A", "alpha").unwrap();
    e.add_context("B", "beta").unwrap();
    let d = e.generate_draft::<&str>(&r, &[]).unwrap();
    assert_eq!(d.context_keys_used, ["A", "B"]);
    let user = mock.captured()[0].last_user_message().unwrap().to_owned();
    assert!(user.contains("Goal: Apply for a PhD in NLP\nA: alpha\nB: beta"));

    let mock = routed(&[("generate_draft", &["draft"])]);
    let mut e = engine(AblationMode::SelectionAndReuse, &mock);
    e.add_context("A", "alpha").unwrap();
    e.add_context("B", "beta").unwrap();
    let d = e.generate_draft(&r, &["B"]).unwrap();
    assert_eq!((d.revision, d.lineage), (1, DraftLineage::Initial));
    let user = mock.captured()[0].last_user_message().unwrap().to_owned();
    assert!(user.contains("B: beta") && !user.contains("A: alpha"));
    assert!(matches!(e.generate_draft(&r, &["Z"]), Err(Error::UnknownKey(_))));
}

#[test]
fn revisions_and_lineage() {
    let mock = routed(&[("generate_draft", &["d1", "d2"]), ("iterate_draft", &["d3", "d4", "d5"])]);
    let mut e = engine(AblationMode::SelectionAndReuse, &mock);
    let r = root(&e);
    assert!(matches!(e.iterate_draft(&r, "x"), Err(Error::InvalidRequest(_))));
    e.generate_draft::<&str>(&r, &[]).unwrap();
    assert_eq!(e.regenerate_draft(&r, None).unwrap().lineage, DraftLineage::Regenerated);
    for expected in 3..=5 {
        let d = e.iterate_draft(&r, "I want schools in the Midwest of the US.").unwrap();
        assert_eq!((d.revision, d.lineage), (expected, DraftLineage::Iterated));
    }
    let last = mock.captured().pop().unwrap();
    assert_eq!(last.last_user_message(), Some("I want schools in the Midwest of the US."));
    assert_eq!(last.messages[2], ChatMessage::assistant("d4"));
    assert!(matches!(e.iterate_draft(&r, "  "), Err(Error::InvalidRequest(_))));
}

#[test]
fn save_marks_complete_and_is_reused() {
    let mock = routed(&[
        ("generate_subtasks", &[SUBTASKS]),
        ("generate_draft", &["Michigan, Wisconsin"]),
        ("select_context_draft", &["Identify Potential PhD Programs — draft: the list"]),
    ]);
    let mut e = engine(AblationMode::SelectionAndReuse, &mock);
    let r = root(&e);
    let ids = e.generate_subtasks(&r).unwrap();
    e.generate_draft::<&str>(&ids[0], &[]).unwrap();
    let key = e.save_draft(&ids[0], None).unwrap();
    assert_eq!(key, "Identify Potential PhD Programs — draft");
    let tree = &e.session().tree;
    assert_eq!(tree.get(&ids[0]).unwrap().status, NodeStatus::Completed);
    assert_ne!(tree.root().status, NodeStatus::Completed);
    assert!(e.session().context.keys(Scope::Local).contains(&key));
    let picked = e.select_context(&ids[1], SelectionPurpose::Drafting).unwrap();
    assert_eq!(picked[0].key, key);
    // re-save overwrites without a warning
    e.save_draft(&ids[0], Some(1)).unwrap();
    assert!(!e.session().events.iter().any(|ev| matches!(ev.body, EventBody::Warning { .. })));
    assert_eq!(e.session().context.keys(Scope::Local).len(), 1);
    assert!(matches!(e.save_draft(&ids[0], Some(7)), Err(Error::InvalidRequest(_))));
    assert!(matches!(e.save_draft(&NodeId::new("n99"), None), Err(Error::UnknownNode(_))));
}

#[test]
fn saving_over_user_entry_warns() {
    let mock = routed(&[("generate_draft", &["x"])]);
    let mut e = engine(AblationMode::ReuseOnly, &mock);
    let r = root(&e);
    e.add_context("Apply for a PhD in NLP — draft", "mine").unwrap();
    e.generate_draft::<&str>(&r, &[]).unwrap();
    e.save_draft(&r, None).unwrap();
    assert!(e.session().events.iter().any(|ev| matches!(ev.body, EventBody::Warning { .. })));
}

#[test]
fn draft_elicitation_round() {
    let mock = routed(&[
        ("generate_draft", &["Dear Prof. White", "Dear Prof. White, about our ACL paper"]),
        ("elicit_draft_iteration", &["1. Which projects did you do together?\n2. Any papers?"]),
    ]);
    let mut e = engine(AblationMode::SelectionAndReuse, &mock);
    let r = root(&e);
    e.generate_draft::<&str>(&r, &[]).unwrap();
    assert!(matches!(e.elicit_draft_context(&r), Err(Error::FeatureDisabled { .. })));

    let mut e = engine(AblationMode::FullCuration, &mock);
    e.generate_draft::<&str>(&r, &[]).unwrap();
    let qs = e.elicit_draft_context(&r).unwrap();
    assert_eq!(qs[0].node.as_ref(), Some(&r));
    let d = e.regenerate_with_context(&r, &[Answer::text(&qs[0].id, "ACL paper"), Answer::skip(&qs[1].id)]).unwrap();
    assert_eq!(d.lineage, DraftLineage::RegeneratedWithContext);
    assert_eq!(d.context_keys_used, ["Which projects did you do together?"]);
    let entry = e.session().context.get(Scope::Local, "Which projects did you do together?").unwrap();
    assert_eq!(entry.provenance, Provenance::UserAdded);
    assert!(mock.captured().last().unwrap().last_user_message().unwrap().contains("Which projects did you do together?: ACL paper"));

    let qs = e.elicit_draft_context(&r).unwrap();
    let d = e.regenerate_with_context(&r, &[Answer::skip(&qs[0].id)]).unwrap();
    assert_eq!(d.lineage, DraftLineage::Regenerated);
}

#[test]
fn provider_failure_rolls_back() {
    let mock = MockProvider::from_fn(|_| Err(Error::ProviderTimeout("down".into())));
    let mut e = engine(AblationMode::FullCuration, &mock);
    let before = e.session().clone();
    let r = root(&e);
    assert!(e.elicit_global_context().unwrap_err().is_provider_failure());
    assert!(e.generate_subtasks(&r).unwrap_err().is_provider_failure());
    assert!(e.generate_draft::<&str>(&r, &[]).unwrap_err().is_provider_failure());
    assert_eq!(e.session(), &before);
}

#[test]
fn every_call_is_logged_and_replayable() {
    let mock = routed(&[("generate_subtasks", &[SUBTASKS]), ("generate_draft", &["d"]), ("detect_subtask", &["Answer: No"])]);
    let mut e = engine(AblationMode::ReuseOnly, &mock);
    let r = root(&e);
    let ids = e.generate_subtasks(&r).unwrap();
    e.detect_actionability(&ids[1], None).unwrap();
    e.generate_draft::<&str>(&ids[1], &[]).unwrap();
    e.save_draft(&ids[1], None).unwrap();
    let calls: Vec<&str> = e
        .session()
        .events
        .iter()
        .filter_map(|ev| match &ev.body {
            EventBody::ProviderCall(c) => Some(c.tag.as_str()),
            _ => None,
        })
        .collect();
    assert_eq!(calls, ["generate_subtasks", "detect_subtask", "generate_draft"]);
    assert_eq!(&Session::replay(&e.session().events).unwrap(), e.session());
}

#[test]
fn template_overrides_apply() {
    let mock = routed(&[("generate_subtasks", &[SUBTASKS])]);
    let mut config = EngineConfig::with_mode(AblationMode::ReuseOnly);
    config.overrides.insert(TemplateId::GenerateSubtasks, RequestParams { temperature: 0.2, max_tokens: 512, top_p: 0.9 });
    let mut e = Engine::start(
        "t",
        "Goal",
        "",
        config,
        Arc::new(mock.clone()),
        Arc::new(PromptLibrary::builtin()),
        Arc::new(FixedClock::default()),
    )
    .unwrap();
    let r = root(&e);
    e.generate_subtasks(&r).unwrap();
    let req = &mock.captured()[0];
    assert_eq!((req.temperature, req.max_tokens, req.top_p), (0.2, 512, 0.9));
}
