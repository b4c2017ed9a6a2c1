//! Orchestration of elicitation, selection, reuse, detection, forking and
//! drafting over one session.
//!
//! Every public operation is a transaction: the session is snapshotted
//! first and restored if the operation fails, so errors never leave partial
//! state behind. All provider traffic is appended to the event log.

mod types;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use types::*;

use crate::clock::Clock;
use crate::context_store::{ContextEntry, Provenance, Scope, EMPTY_CONTEXT};
use crate::error::{Error, Result};
use crate::prompts::{DetectionStrategy, PromptLibrary, RenderedPrompt, TemplateId};
use crate::provider::parse::{self, UNSPECIFIED_DURATION};
use crate::provider::{ChatMessage, CompletionRequest, LlmProvider, RequestParams};
use crate::session::{EventBody, ProviderCallRecord, Session};
use crate::task_graph::{NodeId, SubtaskKind, SubtaskSpec, MAX_FANOUT};

/// Appended to a detection conversation whose answer could not be parsed.
pub const REASK_INSTRUCTION: &str = "Answer with exactly 'Answer: Yes' or 'Answer: No'.";

/// Elicited-answer keys are the question text cut to this many characters.
pub const MAX_QUESTION_KEY_CHARS: usize = 80;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub mode: AblationMode,
    /// Strategy used by [`Engine::detect_actionability`] when none is given.
    pub strategy: DetectionStrategy,
    pub params: RequestParams,
    /// Per-template sampling parameters; anything absent uses `params`.
    pub overrides: BTreeMap<TemplateId, RequestParams>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            mode: AblationMode::FullCuration,
            strategy: DetectionStrategy::FewShotCotTree,
            params: RequestParams::default(),
            overrides: BTreeMap::new(),
        }
    }
}

impl EngineConfig {
    pub fn with_mode(mode: AblationMode) -> Self {
        EngineConfig { mode, ..Self::default() }
    }

    fn params_for(&self, id: TemplateId) -> RequestParams {
        self.overrides.get(&id).copied().unwrap_or(self.params)
    }
}

pub struct Engine {
    session: Session,
    provider: Arc<dyn LlmProvider>,
    prompts: Arc<PromptLibrary>,
    clock: Arc<dyn Clock>,
    config: EngineConfig,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("session", &self.session.id)
            .field("model", &self.provider.model())
            .field("config", &self.config)
            .finish()
    }
}

fn truncate_key(question: &str) -> String {
    let cut: String = question.chars().take(MAX_QUESTION_KEY_CHARS).collect();
    cut.trim_end().to_owned()
}

impl Engine {
    /// Opens a new session for `goal` in `config.mode`.
    pub fn start(
        session_id: &str,
        goal: &str,
        description: &str,
        config: EngineConfig,
        provider: Arc<dyn LlmProvider>,
        prompts: Arc<PromptLibrary>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self> {
        let session = Session::start(session_id, goal.trim(), description, config.mode, clock.now())?;
        Ok(Engine { session, provider, prompts, clock, config })
    }

    /// Continues an existing session. The session's own mode wins over the
    /// one in `config`.
    pub fn resume(
        session: Session,
        mut config: EngineConfig,
        provider: Arc<dyn LlmProvider>,
        prompts: Arc<PromptLibrary>,
        clock: Arc<dyn Clock>,
    ) -> Self {
        config.mode = session.mode;
        Engine { session, provider, prompts, clock, config }
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn into_session(self) -> Session {
        self.session
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn mode(&self) -> AblationMode {
        self.session.mode
    }

    /// Puts back a session snapshot, e.g. when persisting a change failed.
    pub(crate) fn restore(&mut self, session: Session) {
        self.session = session;
    }

    fn transact<T>(&mut self, op: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let snapshot = self.session.clone();
        let out = op(self);
        if out.is_err() {
            self.session = snapshot;
        }
        out
    }

    fn record(&mut self, body: EventBody) -> Result<()> {
        let at = self.clock.now();
        self.session.record(body, at).map(|_| ())
    }

    fn warn(&mut self, message: String) -> Result<()> {
        log::warn!("{message}");
        self.record(EventBody::Warning { message })
    }

    fn require(&self, enabled: bool, feature: &'static str) -> Result<()> {
        if enabled {
            Ok(())
        } else {
            Err(Error::FeatureDisabled { feature, mode: self.mode().as_str() })
        }
    }

    /// Sends one request and logs it, successful or not.
    fn call(&mut self, tag: &str, template: TemplateId, messages: Vec<ChatMessage>) -> Result<String> {
        let request = CompletionRequest::new(tag, messages, self.config.params_for(template));
        let result = self.provider.complete(&request);
        let record = match &result {
            Ok(c) => ProviderCallRecord {
                tag: tag.to_owned(),
                model: c.model.clone(),
                latency_ms: c.latency_ms,
                messages: request.messages,
                response: Some(c.text.clone()),
                error: None,
                usage: Some(c.usage),
            },
            Err(e) => ProviderCallRecord {
                tag: tag.to_owned(),
                model: self.provider.model().to_owned(),
                latency_ms: 0,
                messages: request.messages,
                response: None,
                error: Some(e.to_string()),
                usage: None,
            },
        };
        self.record(EventBody::ProviderCall(record))?;
        result.map(|c| c.text)
    }

    fn render(&self, id: TemplateId, bindings: &[(&str, &str)]) -> Result<RenderedPrompt> {
        self.prompts.render(id, bindings)
    }

    fn node_text(&self, node: &NodeId) -> Result<(String, String)> {
        let n = self.session.tree.get(node)?;
        Ok((n.title.clone(), n.description.clone()))
    }

    fn global_context(&self) -> String {
        self.session.context.render_scope(Scope::Global)
    }

    /// Global context followed by the named local entries.
    fn user_context<S: AsRef<str>>(&self, keys: &[S]) -> Result<String> {
        let global = self.global_context();
        if keys.is_empty() {
            return Ok(global);
        }
        let local = self.session.context.render_selected(keys)?;
        Ok(if global == EMPTY_CONTEXT { local } else { format!("{global}\n{local}") })
    }

    fn local_key_list(&self) -> String {
        let keys = self.session.context.keys(Scope::Local);
        if keys.is_empty() {
            EMPTY_CONTEXT.to_owned()
        } else {
            keys.iter().map(|k| format!("- {k}")).collect::<Vec<_>>().join("\n")
        }
    }

    // ---- elicitation ------------------------------------------------------

    /// Goal-level questions about documents and preferences to share.
    pub fn elicit_global_context(&mut self) -> Result<Vec<ElicitationQuestion>> {
        self.require(self.mode().elicitation_enabled(), "context elicitation")?;
        self.transact(|e| {
            let goal = e.session.goal.clone();
            let prompt = e.render(TemplateId::ElicitGlobal, &[("main_purpose", &goal)])?;
            let text = e.call("elicit_global", TemplateId::ElicitGlobal, prompt.messages())?;
            e.add_questions(None, parse::parse_questions(&text))
        })
    }

    fn add_questions(&mut self, node: Option<NodeId>, parsed: Vec<(String, bool)>) -> Result<Vec<ElicitationQuestion>> {
        let base = self.session.pending_questions.len();
        let questions: Vec<ElicitationQuestion> = parsed
            .into_iter()
            .enumerate()
            .map(|(i, (question, expects_file))| ElicitationQuestion {
                id: format!("q{}", base + i + 1),
                question,
                expects_file,
                answer: None,
                answered: false,
                node: node.clone(),
            })
            .collect();
        self.record(EventBody::QuestionsGenerated { node, questions: questions.clone() })?;
        Ok(questions)
    }

    /// Stores answers as context and returns the keys written. Goal-level
    /// questions produce global entries; task-level ones produce local
    /// `user_added` entries. Skipped questions produce no entry.
    pub fn commit_elicited(&mut self, answers: &[Answer]) -> Result<Vec<String>> {
        self.transact(|e| e.commit_answers(answers, None))
    }

    fn commit_answers(&mut self, answers: &[Answer], only_node: Option<&NodeId>) -> Result<Vec<String>> {
        let mut keys = Vec::new();
        for answer in answers {
            let question = self
                .session
                .question(&answer.question_id)
                .filter(|q| only_node.is_none() || q.node.as_ref() == only_node)
                .ok_or_else(|| Error::UnknownQuestion(answer.question_id.clone()))?
                .clone();
            let key = truncate_key(&question.question);
            let (value, file) = match &answer.response {
                AnswerResponse::Skip { .. } => {
                    self.record(EventBody::AnswerCommitted {
                        question_id: Some(question.id),
                        answer: Some(SKIPPED_ANSWER.into()),
                        entry: None,
                    })?;
                    continue;
                }
                AnswerResponse::Text { text } => (text.clone(), None),
                AnswerResponse::File { file_name, file_content } => (file_content.clone(), Some(file_name.clone())),
            };
            let (scope, provenance) = match (&question.node, file.is_some()) {
                (Some(_), _) => (Scope::Local, Provenance::UserAdded),
                (None, true) => (Scope::Global, Provenance::UploadedDocument),
                (None, false) => (Scope::Global, Provenance::ElicitedAnswer),
            };
            let entry = ContextEntry {
                key: key.clone(),
                value: value.clone(),
                scope,
                provenance,
                source_node: None,
                created_at: self.clock.now(),
            };
            self.record(EventBody::AnswerCommitted {
                question_id: Some(question.id),
                answer: Some(file.unwrap_or(value)),
                entry: Some(entry),
            })?;
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
        Ok(keys)
    }

    /// Adds a local `user_added` entry, replacing any entry with that key.
    pub fn add_context(&mut self, key: &str, value: &str) -> Result<String> {
        self.transact(|e| {
            let entry = ContextEntry {
                key: key.trim().to_owned(),
                value: value.to_owned(),
                scope: Scope::Local,
                provenance: Provenance::UserAdded,
                source_node: None,
                created_at: e.clock.now(),
            };
            entry.validate()?;
            if let Some(old) = e.session.context.get(Scope::Local, &entry.key) {
                if old.provenance == Provenance::SavedDraft {
                    e.warn(format!("user entry `{}` replaces a saved draft", entry.key))?;
                }
            }
            let key = entry.key.clone();
            e.record(EventBody::AnswerCommitted { question_id: None, answer: None, entry: Some(entry) })?;
            Ok(key)
        })
    }

    // ---- decomposition ----------------------------------------------------

    /// Asks for subtasks of `node`, aware of the current tree, and attaches
    /// them as standard children. One retry if the list cannot be parsed.
    pub fn generate_subtasks(&mut self, node: &NodeId) -> Result<Vec<NodeId>> {
        self.transact(|e| {
            e.session.tree.check_attach(node, 1)?;
            let (title, description) = e.node_text(node)?;
            let goal = e.session.goal.clone();
            let context = e.global_context();
            let outline = e.session.tree.outline();
            let prompt = e.render(
                TemplateId::GenerateSubtasks,
                &[
                    ("main_purpose", &goal),
                    ("user_context", &context),
                    ("task_name", &title),
                    ("task_description", &description),
                    ("tree_outline", outline.trim_end()),
                ],
            )?;
            let text = e.call("generate_subtasks", TemplateId::GenerateSubtasks, prompt.messages())?;
            let subtasks = match parse::parse_subtask_list(&text) {
                Ok(s) => s,
                Err(_) => {
                    let text = e.call("generate_subtasks", TemplateId::GenerateSubtasks, prompt.messages())?;
                    parse::parse_subtask_list(&text)?
                }
            };
            e.attach(node, subtasks, SubtaskKind::Standard)
        })
    }

    fn attach(&mut self, parent: &NodeId, mut subtasks: Vec<SubtaskSpec>, kind: SubtaskKind) -> Result<Vec<NodeId>> {
        if subtasks.len() > MAX_FANOUT {
            self.warn(format!("{} subtasks proposed for `{parent}`; keeping the first {MAX_FANOUT}", subtasks.len()))?;
            subtasks.truncate(MAX_FANOUT);
        }
        self.session.tree.check_attach(parent, subtasks.len())?;
        let first = self.session.tree.len();
        let children: Vec<NodeId> = (first..first + subtasks.len()).map(|i| NodeId::new(format!("n{i}"))).collect();
        self.record(EventBody::SubtasksAttached { parent: parent.clone(), kind, children: children.clone(), subtasks })?;
        Ok(children)
    }

    /// Sends a yes/no conversation, re-asking once if the first answer has
    /// no recognizable verdict.
    fn ask_yes_no(&mut self, tag: &str, template: TemplateId, messages: Vec<ChatMessage>) -> Result<(bool, String)> {
        let first = self.call(tag, template, messages.clone())?;
        if let Ok(v) = parse::parse_raw_answer(&first) {
            return Ok(v);
        }
        let mut retry = messages;
        retry.push(ChatMessage::assistant(first));
        retry.push(ChatMessage::user(REASK_INSTRUCTION));
        let second = self.call(tag, template, retry)?;
        parse::parse_raw_answer(&second)
    }

    /// Classifies `node` as actionable or in need of decomposition. Draft
    /// strategies first generate a throwaway draft (never saved) from the
    /// global context and every local entry.
    pub fn detect_actionability(&mut self, node: &NodeId, strategy: Option<DetectionStrategy>) -> Result<Verdict> {
        let strategy = strategy.unwrap_or(self.config.strategy);
        self.transact(|e| {
            let (title, description) = e.node_text(node)?;
            let level = strategy.includes_level().then(|| e.session.tree.get(node).map(|n| n.level)).transpose()?;
            let draft = if strategy.includes_draft() {
                let keys = e.session.context.keys(Scope::Local);
                let prompt = e.draft_prompt(node, &keys)?;
                Some(e.call("detect_draft", TemplateId::GenerateDraft, prompt.messages())?)
            } else {
                None
            };
            let prompt = e.prompts.detection_prompt(strategy, &title, &description, level, draft.as_deref())?;
            let (yes, reasoning) = e.ask_yes_no("detect_subtask", TemplateId::DetectSubtask, prompt.messages())?;
            let needs_decomposition = match strategy.polarity() {
                crate::prompts::Polarity::YesMeansDecompose => yes,
                crate::prompts::Polarity::YesMeansActionable => !yes,
            };
            e.record(EventBody::Detection {
                node: node.clone(),
                strategy,
                needs_decomposition,
                reasoning: reasoning.clone(),
            })?;
            Ok(Verdict { needs_decomposition, reasoning })
        })
    }

    /// [`detect_actionability`](Self::detect_actionability), then
    /// [`detect_fork`](Self::detect_fork) when decomposition is needed, as
    /// one transaction.
    pub fn detect(&mut self, node: &NodeId, strategy: Option<DetectionStrategy>) -> Result<DetectOutcome> {
        self.transact(|e| {
            let verdict = e.detect_actionability(node, strategy)?;
            let fork = if verdict.needs_decomposition { Some(e.detect_fork(node)?) } else { None };
            Ok(DetectOutcome {
                needs_decomposition: verdict.needs_decomposition,
                should_fork: fork.as_ref().is_some_and(|f| f.should_fork),
                reasoning: verdict.reasoning,
                fork_reasoning: fork.map(|f| f.reasoning),
            })
        })
    }

    /// Decides whether a node flagged for decomposition should be forked
    /// over distinct entities in the local context. With no local context
    /// there is nothing to fork over and the provider is not asked.
    pub fn detect_fork(&mut self, node: &NodeId) -> Result<ForkVerdict> {
        self.transact(|e| {
            let (title, description) = e.node_text(node)?;
            match e.session.last_detection(node) {
                Some((_, true)) => {}
                Some((_, false)) => {
                    return Err(Error::PipelineOrder(format!("`{node}` was detected as actionable; nothing to fork")))
                }
                None => return Err(Error::PipelineOrder(format!("run detection on `{node}` before the fork check"))),
            }
            let (should_fork, reasoning) = if e.session.context.is_scope_empty(Scope::Local) {
                (false, "No local context to fork over.".to_owned())
            } else {
                let goal = e.session.goal.clone();
                let history = e.session.context.render_scope(Scope::Local);
                let prompt = e.render(
                    TemplateId::ForkDecision,
                    &[
                        ("main_purpose", &goal),
                        ("task_name", &title),
                        ("task_description", &description),
                        ("context_history", &history),
                    ],
                )?;
                e.ask_yes_no("fork_decision", TemplateId::ForkDecision, prompt.messages())?
            };
            e.record(EventBody::ForkDecision { node: node.clone(), should_fork, reasoning: reasoning.clone() })?;
            Ok(ForkVerdict { should_fork, reasoning })
        })
    }

    /// Proposes local context keys relevant to `node`. Every candidate
    /// starts out accepted; the caller decides what to keep.
    pub fn select_context(&mut self, node: &NodeId, purpose: SelectionPurpose) -> Result<Vec<SelectionCandidate>> {
        self.require(self.mode().selection_enabled(), "context selection")?;
        self.transact(|e| {
            let (title, description) = e.node_text(node)?;
            let valid = e.session.context.keys(Scope::Local);
            let candidates = if valid.is_empty() {
                if purpose == SelectionPurpose::Forking {
                    return Err(Error::NoLocalContext);
                }
                Vec::new()
            } else {
                let template = match purpose {
                    SelectionPurpose::Drafting => TemplateId::SelectContextDraft,
                    SelectionPurpose::Forking => TemplateId::SelectContextFork,
                };
                let goal = e.session.goal.clone();
                let history = e.local_key_list();
                let prompt = e.render(
                    template,
                    &[
                        ("main_purpose", &goal),
                        ("task_name", &title),
                        ("task_description", &description),
                        ("context_history", &history),
                    ],
                )?;
                let text = e.call(template.as_str(), template, prompt.messages())?;
                let selection = parse::parse_key_selection(&text, &valid)?;
                for line in selection.dropped {
                    e.warn(format!("selection named an unknown key: {line}"))?;
                }
                selection
                    .picks
                    .into_iter()
                    .map(|p| SelectionCandidate { key: p.key, reason: p.reason, accepted: true })
                    .collect()
            };
            e.record(EventBody::ContextSelected { node: node.clone(), purpose, candidates: candidates.clone() })?;
            Ok(candidates)
        })
    }

    /// Splits `node` into one fork child per entity found in the accepted
    /// context. Child titles are `<parent title>: <entity>`.
    pub fn fork_task<S: AsRef<str>>(&mut self, node: &NodeId, accepted_keys: &[S]) -> Result<Vec<NodeId>> {
        self.transact(|e| {
            let (title, description) = e.node_text(node)?;
            if e.session.last_fork_decision(node) != Some(true) {
                return Err(Error::PipelineOrder(format!("the fork check for `{node}` has not recommended forking")));
            }
            if accepted_keys.is_empty() {
                return Err(Error::InvalidRequest("forking needs at least one accepted context key".into()));
            }
            e.session.tree.check_attach(node, 1)?;
            let selected = e.session.context.render_selected(accepted_keys)?;
            let goal = e.session.goal.clone();
            let prompt = e.render(
                TemplateId::ForkEntities,
                &[
                    ("main_purpose", &goal),
                    ("task_name", &title),
                    ("task_description", &description),
                    ("user_context", &selected),
                ],
            )?;
            let text = e.call("fork_entities", TemplateId::ForkEntities, prompt.messages())?;
            let entities = parse::parse_entities(&text);
            if entities.is_empty() {
                return Err(Error::NoEntitiesFound);
            }
            let subtasks = entities
                .into_iter()
                .map(|(entity, what)| SubtaskSpec::new(format!("{title}: {entity}"), what, UNSPECIFIED_DURATION))
                .collect();
            e.attach(node, subtasks, SubtaskKind::Fork)
        })
    }

    // ---- drafting ---------------------------------------------------------

    fn draft_prompt<S: AsRef<str>>(&self, node: &NodeId, keys: &[S]) -> Result<RenderedPrompt> {
        let (title, description) = self.node_text(node)?;
        let context = self.user_context(keys)?;
        self.render(
            TemplateId::GenerateDraft,
            &[
                ("main_purpose", &self.session.goal),
                ("user_context", &context),
                ("current_task", &title),
                ("task_description", &description),
            ],
        )
    }

    /// In `reuse_only` every local entry is used and `accepted_keys` is
    /// ignored; otherwise exactly the accepted keys are.
    fn effective_keys<S: AsRef<str>>(&self, accepted_keys: &[S]) -> Result<Vec<String>> {
        if !self.mode().selection_enabled() {
            return Ok(self.session.context.keys(Scope::Local));
        }
        let mut keys: Vec<String> = Vec::new();
        for k in accepted_keys {
            let k = k.as_ref();
            if self.session.context.get(Scope::Local, k).is_none() {
                return Err(Error::UnknownKey(k.to_owned()));
            }
            if !keys.iter().any(|x| x == k) {
                keys.push(k.to_owned());
            }
        }
        Ok(keys)
    }

    fn push_draft(&mut self, node: &NodeId, content: String, keys: Vec<String>, lineage: DraftLineage) -> Result<DraftCandidate> {
        let revision = self.session.drafts.get(node).map_or(0, Vec::len) as u32 + 1;
        let candidate = DraftCandidate { node: node.clone(), content, context_keys_used: keys, revision, lineage };
        self.record(EventBody::DraftGenerated { candidate: candidate.clone() })?;
        Ok(candidate)
    }

    fn draft_with(&mut self, node: &NodeId, keys: Vec<String>, lineage: DraftLineage) -> Result<DraftCandidate> {
        let prompt = self.draft_prompt(node, &keys)?;
        let content = self.call("generate_draft", TemplateId::GenerateDraft, prompt.messages())?;
        self.push_draft(node, content, keys, lineage)
    }

    /// Drafts an answer for `node`. Drafting is allowed whatever detection
    /// recommended.
    pub fn generate_draft<S: AsRef<str>>(&mut self, node: &NodeId, accepted_keys: &[S]) -> Result<DraftCandidate> {
        self.transact(|e| {
            e.session.tree.get(node)?;
            let keys = e.effective_keys(accepted_keys)?;
            let lineage =
                if e.session.drafts.get(node).is_some_and(|d| !d.is_empty()) { DraftLineage::Regenerated } else { DraftLineage::Initial };
            e.draft_with(node, keys, lineage)
        })
    }

    /// New draft with the same context as the latest one unless
    /// `accepted_keys` is given.
    pub fn regenerate_draft(&mut self, node: &NodeId, accepted_keys: Option<&[String]>) -> Result<DraftCandidate> {
        self.transact(|e| {
            let previous = e.latest(node)?.context_keys_used.clone();
            let keys = e.effective_keys(accepted_keys.unwrap_or(&previous))?;
            e.draft_with(node, keys, DraftLineage::Regenerated)
        })
    }

    fn latest(&self, node: &NodeId) -> Result<&DraftCandidate> {
        self.session.tree.get(node)?;
        self.session
            .latest_draft(node)
            .ok_or_else(|| Error::InvalidRequest(format!("`{node}` has no draft yet")))
    }

    /// Clarifying questions that would make the latest draft more personal.
    pub fn elicit_draft_context(&mut self, node: &NodeId) -> Result<Vec<ElicitationQuestion>> {
        self.require(self.mode().elicitation_enabled(), "draft context elicitation")?;
        self.transact(|e| {
            let latest = e.latest(node)?.clone();
            let (title, description) = e.node_text(node)?;
            let context = e.user_context(&latest.context_keys_used)?;
            let goal = e.session.goal.clone();
            let prompt = e.render(
                TemplateId::ElicitDraftIteration,
                &[
                    ("main_purpose", &goal),
                    ("user_context", &context),
                    ("current_task", &title),
                    ("task_description", &description),
                    ("draft", &latest.content),
                ],
            )?;
            let text = e.call("elicit_draft_iteration", TemplateId::ElicitDraftIteration, prompt.messages())?;
            e.add_questions(Some(node.clone()), parse::parse_questions(&text))
        })
    }

    /// Commits answers to `node`'s clarifying questions as local context and
    /// regenerates with those entries added to the latest draft's context.
    /// If every question was skipped this is a plain regeneration.
    pub fn regenerate_with_context(&mut self, node: &NodeId, answers: &[Answer]) -> Result<DraftCandidate> {
        self.require(self.mode().elicitation_enabled(), "draft context elicitation")?;
        self.transact(|e| {
            let mut keys = e.latest(node)?.context_keys_used.clone();
            let added = e.commit_answers(answers, Some(node))?;
            let lineage = if added.is_empty() { DraftLineage::Regenerated } else { DraftLineage::RegeneratedWithContext };
            for k in added {
                if !keys.contains(&k) {
                    keys.push(k);
                }
            }
            let keys = e.effective_keys(&keys)?;
            e.draft_with(node, keys, lineage)
        })
    }

    /// Follow-up turn: the original drafting prompt, the latest draft as the
    /// assistant's reply, then `instruction`.
    pub fn iterate_draft(&mut self, node: &NodeId, instruction: &str) -> Result<DraftCandidate> {
        if instruction.trim().is_empty() {
            return Err(Error::InvalidRequest("iteration instruction must not be empty".into()));
        }
        self.transact(|e| {
            let latest = e.latest(node)?.clone();
            let keys = e.effective_keys(&latest.context_keys_used)?;
            let mut messages = e.draft_prompt(node, &keys)?.messages();
            messages.push(ChatMessage::assistant(latest.content));
            messages.push(ChatMessage::user(instruction.trim()));
            let content = e.call("iterate_draft", TemplateId::GenerateDraft, messages)?;
            e.push_draft(node, content, keys, DraftLineage::Iterated)
        })
    }

    /// Saves a draft (the latest unless `revision` is given) as a local
    /// entry keyed by the title followed by " (U+2014) draft" and marks the node completed.
    pub fn save_draft(&mut self, node: &NodeId, revision: Option<u32>) -> Result<String> {
        self.transact(|e| {
            let candidate = match revision {
                Some(r) => {
                    e.session.tree.get(node)?;
                    e.session
                        .draft(node, r)
                        .ok_or_else(|| Error::InvalidRequest(format!("`{node}` has no draft revision {r}")))?
                }
                None => e.latest(node)?,
            }
            .clone();
            let key = format!("{} — draft", e.session.tree.get(node)?.title);
            if let Some(old) = e.session.context.get(Scope::Local, &key) {
                if old.provenance != Provenance::SavedDraft || old.source_node.as_ref() != Some(node) {
                    e.warn(format!("saved draft replaces existing local entry `{key}`"))?;
                }
            }
            e.record(EventBody::DraftSaved {
                node: node.clone(),
                key: key.clone(),
                revision: candidate.revision,
                content: candidate.content,
            })?;
            Ok(key)
        })
    }
}

#[cfg(test)]
mod tests;
