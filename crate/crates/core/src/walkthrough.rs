//! End-to-end PhD-application scenario driven by a scripted provider.
//!
//! [`run`] performs a fixed sequence of engine operations: goal elicitation
//! with a CV upload, decomposition of the goal and of "Identify Potential
//! PhD Programs", a Midwest-constrained university list, forks over
//! universities and over recommenders, and a recommendation email refined
//! with elicited details. The script supplies every model reply.

use std::sync::Arc;

use crate::clock::FixedClock;
use crate::engine::{AblationMode, Answer, Engine, EngineConfig, SelectionPurpose};
use crate::error::{Error, Result};
use crate::prompts::PromptLibrary;
use crate::provider::{MockProvider, ProviderScript};
use crate::session::Session;
use crate::task_graph::{Decomposition, NodeId};

pub const SESSION_ID: &str = "walkthrough";
pub const GOAL: &str = "Apply for a PhD in NLP";
pub const BUNDLED_SCRIPT: &str = include_str!("../fixtures/walkthrough_script.json");

pub const CV_FILE: &str = "john_cv.txt";
pub const CV_TEXT: &str = "John Doe. MSc in Computer Science, University of Michigan, 2023. \
Research interests: natural language processing, dialogue systems. \
Publication: workshop paper on dialogue evaluation at ACL 2023, with Prof. Blake White. \
Research assistant in Prof. Julian Deng's lab, 2022-2023. \
Teaching assistant for Dr. Alice Feng's Introduction to Machine Learning.";
pub const MIDWEST: &str = "I want schools in the Midwest of the US.";
pub const RECOMMENDERS: [&str; 3] = ["Prof. Blake White", "Prof. Julian Deng", "Dr. Alice Feng"];

pub fn bundled_script() -> ProviderScript {
    ProviderScript::from_json(BUNDLED_SCRIPT).expect("bundled walkthrough script is valid")
}

fn node(engine: &Engine, title: &str) -> Result<NodeId> {
    engine
        .session()
        .tree
        .nodes
        .values()
        .find(|n| n.title == title)
        .map(|n| n.id.clone())
        .ok_or_else(|| Error::UnknownNode(title.to_owned()))
}

fn accepted(candidates: Vec<crate::engine::SelectionCandidate>) -> Vec<String> {
    candidates.into_iter().filter(|c| c.accepted).map(|c| c.key).collect()
}

/// Plays the scenario against `script` and returns the finished session.
/// Fails if any step errors, if the script is not fully consumed, or if the
/// result breaks a structural invariant.
pub fn run(script: ProviderScript) -> Result<Session> {
    let mock = MockProvider::scripted(script);
    let mut e = Engine::start(
        SESSION_ID,
        GOAL,
        "",
        EngineConfig::with_mode(AblationMode::FullCuration),
        Arc::new(mock.clone()),
        Arc::new(PromptLibrary::builtin()),
        Arc::new(FixedClock::default()),
    )?;

    // Goal-level elicitation: upload the CV, skip the letters question.
    let questions = e.elicit_global_context()?;
    let [schools, letters] = questions.as_slice() else {
        return Err(Error::InvalidRequest(format!("expected 2 elicitation questions, got {}", questions.len())));
    };
    e.commit_elicited(&[Answer::file(&schools.id, CV_FILE, CV_TEXT), Answer::skip(&letters.id)])?;

    let root = e.session().tree.root.clone();
    e.generate_subtasks(&root)?;

    // Identify Potential PhD Programs: decompose normally.
    let programs = node(&e, "Identify Potential PhD Programs")?;
    e.detect_actionability(&programs, None)?;
    e.detect_fork(&programs)?;
    e.generate_subtasks(&programs)?;

    let research = node(&e, "Research Universities and Programs")?;
    e.detect_actionability(&research, None)?;
    let keys = accepted(e.select_context(&research, SelectionPurpose::Drafting)?);
    e.generate_draft(&research, &keys)?;
    e.iterate_draft(&research, MIDWEST)?;
    e.save_draft(&research, None)?;

    let faculty = node(&e, "Identify Faculty Members")?;
    e.detect_actionability(&faculty, None)?;
    e.detect_fork(&faculty)?;
    let keys = accepted(e.select_context(&faculty, SelectionPurpose::Forking)?);
    e.fork_task(&faculty, &keys)?;

    // Recommendation letters: list recommenders, then fork per person.
    let letters_node = node(&e, "Get Recommendation Letters")?;
    e.detect_actionability(&letters_node, None)?;
    e.detect_fork(&letters_node)?;
    e.generate_subtasks(&letters_node)?;

    let compile = node(&e, "Compile a List of Recommenders")?;
    e.detect_actionability(&compile, None)?;
    let keys = accepted(e.select_context(&compile, SelectionPurpose::Drafting)?);
    e.generate_draft(&compile, &keys)?;
    e.save_draft(&compile, None)?;

    let reach = node(&e, "Reach Out to Potential Recommenders")?;
    e.detect_actionability(&reach, None)?;
    e.detect_fork(&reach)?;
    let keys = accepted(e.select_context(&reach, SelectionPurpose::Forking)?);
    e.fork_task(&reach, &keys)?;

    // Email to the first recommender, improved with elicited details.
    let email = node(&e, &format!("Reach Out to Potential Recommenders: {}", RECOMMENDERS[0]))?;
    e.detect_actionability(&email, None)?;
    let keys = accepted(e.select_context(&email, SelectionPurpose::Drafting)?);
    e.generate_draft(&email, &keys)?;
    let questions = e.elicit_draft_context(&email)?;
    let [projects, deadlines] = questions.as_slice() else {
        return Err(Error::InvalidRequest(format!("expected 2 clarifying questions, got {}", questions.len())));
    };
    e.regenerate_with_context(
        &email,
        &[Answer::text(&projects.id, "Our ACL 2023 workshop paper on dialogue evaluation"), Answer::skip(&deadlines.id)],
    )?;
    e.save_draft(&email, None)?;

    if let Some(left) = mock.remaining().filter(|n| *n > 0) {
        return Err(Error::InvalidRequest(format!("walkthrough script has {left} unused steps")));
    }
    let session = e.into_session();
    check(&session)?;
    Ok(session)
}

/// Structural checks on a finished walkthrough session.
pub fn check(session: &Session) -> Result<()> {
    session.validate()?;
    if Session::replay(&session.events)? != *session {
        return Err(Error::CorruptSession("replay differs from the walkthrough session".into()));
    }
    let tree = &session.tree;
    let reach = tree
        .nodes
        .values()
        .find(|n| n.title == "Reach Out to Potential Recommenders")
        .ok_or_else(|| Error::InvalidTree("recommender task missing".into()))?;
    if reach.decomposition != Decomposition::Fork || reach.children.len() != RECOMMENDERS.len() {
        return Err(Error::InvalidTree("recommender task is not forked into three children".into()));
    }
    Ok(())
}
