//! Parsers for the structured text the prompts ask the model to produce.
//! All of them tolerate surrounding prose and light markdown.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompts::Polarity;
use crate::task_graph::SubtaskSpec;

pub const UNSPECIFIED_DURATION: &str = "unspecified";

const FIELD_SEPARATORS: [&str; 4] = [" — ", " – ", " -- ", " | "];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedVerdict {
    pub needs_decomposition: bool,
    pub reasoning: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyPick {
    pub key: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct KeySelection {
    pub picks: Vec<KeyPick>,
    /// `key: reason` lines whose key is not a valid context key.
    pub dropped: Vec<String>,
}

fn strip_markdown(s: &str) -> String {
    s.replace("**", "").replace("__", "").trim().trim_matches('`').trim().to_owned()
}

/// Returns the body of a numbered (`1.`, `2)`) or bulleted (`-`, `*`) line.
fn list_item(line: &str, allow_bullets: bool) -> Option<&str> {
    let t = line.trim_start();
    let digits = t.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        let rest = &t[digits..];
        let rest = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')'))?;
        return rest.starts_with(char::is_whitespace).then(|| rest.trim());
    }
    if allow_bullets {
        return t.strip_prefix("- ").or_else(|| t.strip_prefix("* ")).map(str::trim);
    }
    None
}

fn split_fields(item: &str) -> Vec<String> {
    let mut parts = vec![item.to_owned()];
    for sep in FIELD_SEPARATORS {
        parts = parts.iter().flat_map(|p| p.split(sep).map(str::to_owned).collect::<Vec<_>>()).collect();
    }
    parts.into_iter().map(|p| strip_markdown(&p)).collect()
}

fn clean_duration(raw: &str) -> String {
    let lower = raw.to_ascii_lowercase();
    for prefix in ["estimated completion time:", "estimated time:", "duration:", "time:"] {
        if lower.starts_with(prefix) {
            return raw[prefix.len()..].trim().to_owned();
        }
    }
    raw.trim().to_owned()
}

/// Numbered lines of title, description and duration separated by em-dash
/// characters (U+2014). A missing duration becomes `"unspecified"`.
pub fn parse_subtask_list(text: &str) -> Result<Vec<SubtaskSpec>> {
    let items: Vec<SubtaskSpec> = text
        .lines()
        .filter_map(|l| list_item(l, false))
        .filter_map(|item| {
            let fields = split_fields(item);
            let title = fields[0].trim_end_matches(':').trim().to_owned();
            if title.is_empty() {
                return None;
            }
            let description = fields.get(1).cloned().unwrap_or_default();
            let duration = fields
                .get(2..)
                .map(|rest| clean_duration(&rest.join(" ")))
                .filter(|d| !d.is_empty())
                .unwrap_or_else(|| UNSPECIFIED_DURATION.to_owned());
            Some(SubtaskSpec { title, description, estimated_duration: duration })
        })
        .collect();
    if items.is_empty() {
        Err(Error::UnparseableSubtasks)
    } else {
        Ok(items)
    }
}

/// Finds the raw Yes/No: the last `Answer: Yes|No` line, or failing that a
/// leading Yes/No token. Returns `(said_yes, reasoning)`.
pub fn parse_raw_answer(text: &str) -> Result<(bool, String)> {
    let lines: Vec<&str> = text.lines().collect();
    for (i, line) in lines.iter().enumerate().rev() {
        let cleaned = strip_markdown(line).to_ascii_lowercase();
        if let Some(rest) = cleaned.strip_prefix("answer") {
            let rest = rest.trim_start().strip_prefix(':').map(str::trim_start).map(|r| r.trim_start_matches("**"));
            if let Some(word) = rest.and_then(leading_word) {
                let reasoning = lines[..i].join("\n").trim().to_owned();
                return Ok((word, reasoning));
            }
        }
    }
    let cleaned = strip_markdown(text).to_ascii_lowercase();
    if let Some(word) = leading_word(&cleaned) {
        let reasoning = text.trim().split_once(char::is_whitespace).map(|(_, r)| r.trim().to_owned()).unwrap_or_default();
        return Ok((word, reasoning));
    }
    Err(Error::UnparseableVerdict(text.chars().take(80).collect()))
}

fn leading_word(s: &str) -> Option<bool> {
    let word: String = s.trim_start().chars().take_while(|c| c.is_ascii_alphabetic()).collect();
    match word.as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

pub fn parse_yes_no(text: &str, polarity: Polarity) -> Result<ParsedVerdict> {
    let (yes, reasoning) = parse_raw_answer(text)?;
    let needs_decomposition = match polarity {
        Polarity::YesMeansDecompose => yes,
        Polarity::YesMeansActionable => !yes,
    };
    Ok(ParsedVerdict { needs_decomposition, reasoning })
}

/// Extracts `key: reason` lines whose key matches one of `valid_keys`
/// (case-insensitively). Keys are returned in their canonical spelling, in
/// response order, first occurrence wins.
pub fn parse_key_selection<S: AsRef<str>>(text: &str, valid_keys: &[S]) -> Result<KeySelection> {
    let mut by_length: Vec<&str> = valid_keys.iter().map(AsRef::as_ref).collect();
    by_length.sort_by_key(|k| std::cmp::Reverse(k.len()));
    let mut out = KeySelection::default();
    for line in text.lines() {
        let body = list_item(line, true).unwrap_or(line);
        let body = strip_markdown(body);
        let body = body.trim_start_matches('<').trim_start_matches(['"', '\'']);
        if body.is_empty() {
            continue;
        }
        let lower = body.to_lowercase();
        let hit = by_length.iter().find(|k| {
            let k = k.to_lowercase();
            lower.starts_with(&k) && {
                let rest = lower.get(k.len()..).unwrap_or("x").trim_start_matches(['>', '"', '\'']).trim_start();
                rest.is_empty() || rest.starts_with(':')
            }
        });
        match hit {
            Some(key) => {
                let rest = body.get(key.len()..).unwrap_or_default();
                let reason = rest.trim_start_matches(['>', '"', '\'']).trim_start().trim_start_matches(':').trim();
                if !out.picks.iter().any(|p| p.key == *key) {
                    out.picks.push(KeyPick { key: (*key).to_owned(), reason: reason.to_owned() });
                }
            }
            None if body.contains(':') => out.dropped.push(body.to_owned()),
            None => {}
        }
    }
    if out.picks.is_empty() {
        Err(Error::NoValidKeys)
    } else {
        Ok(out)
    }
}

/// Numbered questions; a trailing `[file]` marker means a document upload
/// is expected.
pub fn parse_questions(text: &str) -> Vec<(String, bool)> {
    text.lines()
        .filter_map(|l| list_item(l, true))
        .filter_map(|item| {
            let item = strip_markdown(item);
            let lower = item.to_ascii_lowercase();
            let (question, file) = match lower.rfind("[file]") {
                Some(i) => (format!("{}{}", &item[..i], &item[i + 6..]).trim().to_owned(), true),
                None => (item.trim().to_owned(), false),
            };
            (!question.is_empty()).then_some((question, file))
        })
        .collect()
}

/// Numbered lines of entity and action separated by an em-dash character;
/// `NONE` or no items yields nothing.
pub fn parse_entities(text: &str) -> Vec<(String, String)> {
    let mut seen = Vec::<String>::new();
    text.lines()
        .filter_map(|l| list_item(l, true))
        .filter_map(|item| {
            let fields = split_fields(item);
            let name = fields[0].trim_end_matches(':').trim().to_owned();
            if name.is_empty() || name.eq_ignore_ascii_case("none") || seen.contains(&name) {
                return None;
            }
            seen.push(name.clone());
            Some((name, fields.get(1).cloned().unwrap_or_default()))
        })
        .collect()
}
