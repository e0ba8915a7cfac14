//! Tagged-output parsing. Every function here is total over arbitrary input.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseErrorKind {
    MissingAnswer,
    EmptyAction,
    MalformedAction,
    MissingThought,
    MissingDeepthink,
    EmptyThought,
    MissingReflection,
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
#[error("cannot parse model output: {kind:?}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
}

impl From<ParseErrorKind> for ParseError {
    fn from(kind: ParseErrorKind) -> Self {
        ParseError { kind }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActorOutput {
    pub thought: String,
    pub action: String,
}

impl ActorOutput {
    /// Canonical tagged form; `parse_actor_output` inverts it.
    pub fn render(&self) -> String {
        format!("<think>{}</think>\n<answer>{}</answer>", self.thought, self.action)
    }
}

enum Block<'a> {
    Found(&'a str),
    Unclosed,
    Absent,
}

/// First `<tag>...</tag>` block in `raw`.
fn first_block<'a>(raw: &'a str, tag: &str) -> Block<'a> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let Some(start) = raw.find(&open) else {
        return Block::Absent;
    };
    let body_start = start + open.len();
    match raw[body_start..].find(&close) {
        Some(len) => Block::Found(&raw[body_start..body_start + len]),
        None => Block::Unclosed,
    }
}

pub fn parse_actor_output(raw: &str) -> Result<ActorOutput, ParseError> {
    let action = match first_block(raw, "answer") {
        Block::Found(a) => a,
        Block::Unclosed | Block::Absent => return Err(ParseErrorKind::MissingAnswer.into()),
    };
    let action = action.split_whitespace().collect::<Vec<_>>().join(" ");
    if action.is_empty() {
        return Err(ParseErrorKind::EmptyAction.into());
    }
    if action.contains('<') || action.contains('>') {
        return Err(ParseErrorKind::MalformedAction.into());
    }
    let thought = match first_block(raw, "think") {
        Block::Found(t) if !t.trim().is_empty() => t.trim().to_string(),
        _ => return Err(ParseErrorKind::MissingThought.into()),
    };
    Ok(ActorOutput { thought, action })
}

/// Extracts the deep thought. Models with a hidden reasoning phase emit a
/// `<think>...</think>` preamble first; a deepthink block after the last
/// `</think>` takes precedence over anything inside the preamble.
pub fn parse_thinker_output(raw: &str) -> Result<String, ParseError> {
    let tail = raw.rfind("</think>").map(|i| &raw[i + "</think>".len()..]);
    let found = tail
        .and_then(|t| match first_block(t, "deepthink") {
            Block::Found(b) => Some(b),
            _ => None,
        })
        .or(match first_block(raw, "deepthink") {
            Block::Found(b) => Some(b),
            _ => None,
        });
    match found {
        Some(b) if !b.trim().is_empty() => Ok(b.trim().to_string()),
        Some(_) => Err(ParseErrorKind::EmptyThought.into()),
        None => Err(ParseErrorKind::MissingDeepthink.into()),
    }
}

/// Reflection text: the first `<reflection>` block, or the whole trimmed
/// output when the model ignored the tags.
pub fn parse_reflection(raw: &str) -> Result<String, ParseError> {
    let text = match first_block(raw, "reflection") {
        Block::Found(b) => b.trim(),
        _ => raw.trim(),
    };
    if text.is_empty() {
        Err(ParseErrorKind::MissingReflection.into())
    } else {
        Ok(text.split_whitespace().collect::<Vec<_>>().join(" "))
    }
}
