//! Prompt templates and subtask-detection strategies.
//!
//! Templates are UTF-8 text files with a small front matter declaring their
//! placeholders:
//!
//! ```text
//! ---
//! placeholders: [main_purpose, task_name]
//! ---
//! ### system
//! ...
//! ### user
//! ... {task_name} ...
//! ```
//!
//! `{name}` is a placeholder, `{{` and `}}` are literal braces. Bindings are
//! substituted verbatim.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::provider::ChatMessage;

/// Every name a template may declare.
pub const PLACEHOLDER_NAMES: [&str; 9] = [
    "main_purpose",
    "task_name",
    "task_description",
    "context_history",
    "user_context",
    "tree_outline",
    "level",
    "draft",
    "current_task",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    ElicitGlobal,
    ElicitDraftIteration,
    SelectContextDraft,
    SelectContextFork,
    GenerateSubtasks,
    DetectSubtask,
    ForkDecision,
    ForkEntities,
    GenerateDraft,
}

impl TemplateId {
    /// Templates with a single text. `DetectSubtask` has one text per strategy.
    pub const SINGLE: [TemplateId; 8] = [
        TemplateId::ElicitGlobal,
        TemplateId::ElicitDraftIteration,
        TemplateId::SelectContextDraft,
        TemplateId::SelectContextFork,
        TemplateId::GenerateSubtasks,
        TemplateId::ForkDecision,
        TemplateId::ForkEntities,
        TemplateId::GenerateDraft,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::ElicitGlobal => "elicit_global",
            TemplateId::ElicitDraftIteration => "elicit_draft_iteration",
            TemplateId::SelectContextDraft => "select_context_draft",
            TemplateId::SelectContextFork => "select_context_fork",
            TemplateId::GenerateSubtasks => "generate_subtasks",
            TemplateId::DetectSubtask => "detect_subtask",
            TemplateId::ForkDecision => "fork_decision",
            TemplateId::ForkEntities => "fork_entities",
            TemplateId::GenerateDraft => "generate_draft",
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How a strategy's raw Yes/No maps onto "needs decomposition".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    YesMeansDecompose,
    YesMeansActionable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionStrategy {
    ZeroShot,
    FewShot,
    FewShotCot,
    FewShotCotTree,
    FewShotCotDraft,
    FewShotCotTreeDraft,
}

impl DetectionStrategy {
    /// Report order: baselines first, then each added ingredient.
    pub const ALL: [DetectionStrategy; 6] = [
        DetectionStrategy::ZeroShot,
        DetectionStrategy::FewShot,
        DetectionStrategy::FewShotCot,
        DetectionStrategy::FewShotCotTree,
        DetectionStrategy::FewShotCotDraft,
        DetectionStrategy::FewShotCotTreeDraft,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DetectionStrategy::ZeroShot => "zero_shot",
            DetectionStrategy::FewShot => "few_shot",
            DetectionStrategy::FewShotCot => "few_shot_cot",
            DetectionStrategy::FewShotCotTree => "few_shot_cot_tree",
            DetectionStrategy::FewShotCotDraft => "few_shot_cot_draft",
            DetectionStrategy::FewShotCotTreeDraft => "few_shot_cot_tree_draft",
        }
    }

    /// Row label for report tables.
    pub fn label(self) -> &'static str {
        match self {
            DetectionStrategy::ZeroShot => "Zero-shot",
            DetectionStrategy::FewShot => "Few-shot",
            DetectionStrategy::FewShotCot => "+ CoT",
            DetectionStrategy::FewShotCotTree => "+ CoT + Tree",
            DetectionStrategy::FewShotCotDraft => "+ CoT + Draft",
            DetectionStrategy::FewShotCotTreeDraft => "+ CoT + Tree + Draft",
        }
    }

    pub fn includes_level(self) -> bool {
        self.as_str().contains("tree")
    }

    pub fn includes_draft(self) -> bool {
        self.as_str().contains("draft")
    }

    pub fn uses_cot(self) -> bool {
        self.as_str().contains("cot")
    }

    pub fn shot_count(self) -> usize {
        match self {
            DetectionStrategy::ZeroShot => 0,
            _ => 3,
        }
    }

    /// Draft variants ask whether the task is "specific and actionable";
    /// the rest ask whether it "needs to be decomposed".
    pub fn polarity(self) -> Polarity {
        if self.includes_draft() {
            Polarity::YesMeansActionable
        } else {
            Polarity::YesMeansDecompose
        }
    }
}

impl fmt::Display for DetectionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DetectionStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DetectionStrategy::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| format!("unknown detection strategy `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Text(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: TemplateId,
    pub system_text: String,
    pub user_text: String,
    pub placeholders: BTreeSet<String>,
    system: Vec<Segment>,
    user: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub system: String,
    pub user: String,
    pub strategy: Option<DetectionStrategy>,
}

impl RenderedPrompt {
    pub fn messages(&self) -> Vec<ChatMessage> {
        vec![ChatMessage::system(&self.system), ChatMessage::user(&self.user)]
    }
}

fn format_err(name: &str, reason: impl Into<String>) -> Error {
    Error::TemplateFormat { name: name.to_owned(), reason: reason.into() }
}

fn parse_segments(name: &str, text: &str) -> Result<Vec<Segment>> {
    let mut out = Vec::new();
    let mut lit = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '{' if chars.peek() == Some(&'{') => {
                chars.next();
                lit.push('{');
            }
            '}' if chars.peek() == Some(&'}') => {
                chars.next();
                lit.push('}');
            }
            '{' => {
                let mut slot = String::new();
                loop {
                    match chars.next() {
                        Some('}') => break,
                        Some(c) if c.is_ascii_lowercase() || c == '_' => slot.push(c),
                        _ => return Err(format_err(name, "unterminated or malformed placeholder")),
                    }
                }
                if !PLACEHOLDER_NAMES.contains(&slot.as_str()) {
                    return Err(format_err(name, format!("unknown placeholder `{slot}`")));
                }
                if !lit.is_empty() {
                    out.push(Segment::Text(std::mem::take(&mut lit)));
                }
                out.push(Segment::Slot(slot));
            }
            '}' => return Err(format_err(name, "stray `}`")),
            c => lit.push(c),
        }
    }
    if !lit.is_empty() {
        out.push(Segment::Text(lit));
    }
    Ok(out)
}

impl PromptTemplate {
    /// Parses a template file's contents.
    pub fn parse(id: TemplateId, name: &str, source: &str) -> Result<Self> {
        let mut lines = source.lines();
        if lines.next().map(str::trim) != Some("---") {
            return Err(format_err(name, "missing front matter"));
        }
        let decl = lines
            .next()
            .and_then(|l| l.trim().strip_prefix("placeholders:"))
            .ok_or_else(|| format_err(name, "missing placeholders line"))?;
        let decl = decl.trim().trim_start_matches('[').trim_end_matches(']');
        let placeholders: BTreeSet<String> =
            decl.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_owned).collect();
        if lines.next().map(str::trim) != Some("---") {
            return Err(format_err(name, "unterminated front matter"));
        }
        let body: Vec<&str> = lines.collect();
        let sys_at = body.iter().position(|l| l.trim() == "### system");
        let user_at = body.iter().position(|l| l.trim() == "### user");
        let (Some(s), Some(u)) = (sys_at, user_at) else {
            return Err(format_err(name, "expected `### system` and `### user` sections"));
        };
        if s > u {
            return Err(format_err(name, "system section must come first"));
        }
        let system_text = body[s + 1..u].join("\n").trim().to_owned();
        let user_text = body[u + 1..].join("\n").trim().to_owned();
        let system = parse_segments(name, &system_text)?;
        let user = parse_segments(name, &user_text)?;

        let used: BTreeSet<String> = system
            .iter()
            .chain(&user)
            .filter_map(|seg| match seg {
                Segment::Slot(n) => Some(n.clone()),
                Segment::Text(_) => None,
            })
            .collect();
        if used != placeholders {
            return Err(format_err(
                name,
                format!("declared placeholders {placeholders:?} differ from used {used:?}"),
            ));
        }
        Ok(PromptTemplate { id, system_text, user_text, placeholders, system, user })
    }

    /// Substitutes `bindings`, which must cover exactly the declared
    /// placeholders.
    pub fn render(&self, bindings: &[(&str, &str)]) -> Result<RenderedPrompt> {
        let map: HashMap<&str, &str> = bindings.iter().copied().collect();
        for name in map.keys() {
            if !self.placeholders.contains(*name) {
                return Err(Error::UnknownBinding((*name).to_owned()));
            }
        }
        for name in &self.placeholders {
            if !map.contains_key(name.as_str()) {
                return Err(Error::MissingBinding(name.clone()));
            }
        }
        Ok(RenderedPrompt { system: fill(&self.system, &map)?, user: fill(&self.user, &map)?, strategy: None })
    }
}

fn fill(segments: &[Segment], map: &HashMap<&str, &str>) -> Result<String> {
    let mut out = String::new();
    for seg in segments {
        match seg {
            Segment::Text(t) => out.push_str(t),
            Segment::Slot(name) => {
                out.push_str(map.get(name.as_str()).ok_or_else(|| Error::UnreplacedPlaceholder(name.clone()))?)
            }
        }
    }
    Ok(out)
}

macro_rules! builtin {
    ($file:literal) => {
        ($file, include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/prompts/", $file, ".txt")))
    };
}

const BUILTIN_SINGLE: [(&str, &str); 8] = [
    builtin!("elicit_global"),
    builtin!("elicit_draft_iteration"),
    builtin!("select_context_draft"),
    builtin!("select_context_fork"),
    builtin!("generate_subtasks"),
    builtin!("fork_decision"),
    builtin!("fork_entities"),
    builtin!("generate_draft"),
];

const BUILTIN_DETECTION: [(&str, &str); 6] = [
    builtin!("detect_subtask.zero_shot"),
    builtin!("detect_subtask.few_shot"),
    builtin!("detect_subtask.few_shot_cot"),
    builtin!("detect_subtask.few_shot_cot_tree"),
    builtin!("detect_subtask.few_shot_cot_draft"),
    builtin!("detect_subtask.few_shot_cot_tree_draft"),
];

/// All templates, immutable once loaded.
#[derive(Debug, Clone)]
pub struct PromptLibrary {
    templates: HashMap<TemplateId, PromptTemplate>,
    detection: HashMap<DetectionStrategy, PromptTemplate>,
}

impl PromptLibrary {
    /// The template set compiled into the binary.
    pub fn builtin() -> Self {
        Self::load(|name| Ok(Some(Self::builtin_source(name).to_owned()))).expect("built-in prompt templates are valid")
    }

    fn builtin_source(name: &str) -> &'static str {
        BUILTIN_SINGLE
            .iter()
            .chain(BUILTIN_DETECTION.iter())
            .find(|(n, _)| *n == name)
            .map(|(_, src)| *src)
            .expect("every template name has a built-in source")
    }

    /// Loads `<name>.txt` files from `dir`; templates without a file there
    /// fall back to the built-in text.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        Self::load(|name| {
            let path = dir.join(format!("{name}.txt"));
            match std::fs::read_to_string(&path) {
                Ok(s) => Ok(Some(s)),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
                Err(e) => Err(e.into()),
            }
        })
    }

    fn load(mut source: impl FnMut(&str) -> Result<Option<String>>) -> Result<Self> {
        let mut read = |name: &str| -> Result<String> {
            Ok(source(name)?.unwrap_or_else(|| Self::builtin_source(name).to_owned()))
        };
        let mut templates = HashMap::new();
        for id in TemplateId::SINGLE {
            let src = read(id.as_str())?;
            templates.insert(id, PromptTemplate::parse(id, id.as_str(), &src)?);
        }
        let mut detection = HashMap::new();
        for strategy in DetectionStrategy::ALL {
            let name = format!("detect_subtask.{strategy}");
            let src = read(&name)?;
            let tpl = PromptTemplate::parse(TemplateId::DetectSubtask, &name, &src)?;
            let expect_level = tpl.placeholders.contains("level");
            let expect_draft = tpl.placeholders.contains("draft");
            if expect_level != strategy.includes_level() || expect_draft != strategy.includes_draft() {
                return Err(format_err(&name, "placeholders do not match the strategy's inputs"));
            }
            detection.insert(strategy, tpl);
        }
        Ok(PromptLibrary { templates, detection })
    }

    pub fn template(&self, id: TemplateId) -> &PromptTemplate {
        match id {
            TemplateId::DetectSubtask => &self.detection[&DetectionStrategy::FewShotCotTree],
            other => &self.templates[&other],
        }
    }

    pub fn detection_template(&self, strategy: DetectionStrategy) -> &PromptTemplate {
        &self.detection[&strategy]
    }

    pub fn render(&self, id: TemplateId, bindings: &[(&str, &str)]) -> Result<RenderedPrompt> {
        self.template(id).render(bindings)
    }

    /// Builds the subtask-detection prompt for `strategy`. `level` must be
    /// given exactly for tree strategies and `draft` exactly for draft ones.
    pub fn detection_prompt(
        &self,
        strategy: DetectionStrategy,
        title: &str,
        description: &str,
        level: Option<u32>,
        draft: Option<&str>,
    ) -> Result<RenderedPrompt> {
        if level.is_some() != strategy.includes_level() {
            return Err(Error::StrategyInputMismatch(format!(
                "{strategy} {} a tree level",
                if strategy.includes_level() { "requires" } else { "does not take" }
            )));
        }
        if draft.is_some() != strategy.includes_draft() {
            return Err(Error::StrategyInputMismatch(format!(
                "{strategy} {} a draft",
                if strategy.includes_draft() { "requires" } else { "does not take" }
            )));
        }
        let level_text = level.map(|l| l.to_string());
        let mut bindings = vec![("task_name", title), ("task_description", description)];
        if let Some(l) = &level_text {
            bindings.push(("level", l));
        }
        if let Some(d) = draft {
            bindings.push(("draft", d));
        }
        let mut rendered = self.detection[&strategy].render(&bindings)?;
        rendered.strategy = Some(strategy);
        Ok(rendered)
    }
}
