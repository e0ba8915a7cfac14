//! Action grammar.
//!
//! Actions are short verb phrases over entity ids, e.g. `go to fridge 1`,
//! `take apple 1 from fridge 1`, `put apple 1 on table 1`. Parsing is total:
//! anything that does not match a known verb becomes [`Command::Unknown`].

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verb {
    Go,
    Open,
    Close,
    Take,
    Put,
    Look,
    Unknown,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Command {
    GoTo(String),
    Open(String),
    Close(String),
    Take { object: String, source: Option<String> },
    Put { object: String, dest: Option<String> },
    Look,
    Unknown,
}

impl Command {
    pub fn parse(text: &str) -> Command {
        let norm = normalize(text);
        let s = norm.as_str();
        if s == "look around" || s == "look" {
            return Command::Look;
        }
        if let Some(rest) = s.strip_prefix("go to ") {
            return Command::GoTo(rest.to_string());
        }
        if let Some(rest) = s.strip_prefix("open ") {
            return Command::Open(rest.to_string());
        }
        if let Some(rest) = s.strip_prefix("close ") {
            return Command::Close(rest.to_string());
        }
        if let Some(rest) = s.strip_prefix("take ") {
            return match rest.split_once(" from ") {
                Some((obj, src)) if !obj.is_empty() && !src.is_empty() => {
                    Command::Take { object: obj.to_string(), source: Some(src.to_string()) }
                }
                _ => Command::Take { object: rest.to_string(), source: None },
            };
        }
        if let Some(rest) = s.strip_prefix("put ") {
            let split =
                rest.split_once(" in/on ").or_else(|| rest.split_once(" in ")).or_else(|| rest.split_once(" on "));
            return match split {
                Some((obj, dst)) if !obj.is_empty() && !dst.is_empty() => {
                    Command::Put { object: obj.to_string(), dest: Some(dst.to_string()) }
                }
                _ => Command::Put { object: rest.to_string(), dest: None },
            };
        }
        Command::Unknown
    }

    pub fn verb(&self) -> Verb {
        match self {
            Command::GoTo(_) => Verb::Go,
            Command::Open(_) => Verb::Open,
            Command::Close(_) => Verb::Close,
            Command::Take { .. } => Verb::Take,
            Command::Put { .. } => Verb::Put,
            Command::Look => Verb::Look,
            Command::Unknown => Verb::Unknown,
        }
    }

    /// The entity or room the command is directed at. For `take`/`put` this
    /// is the receptacle, not the carried object.
    pub fn target(&self) -> Option<&str> {
        match self {
            Command::GoTo(t) | Command::Open(t) | Command::Close(t) => Some(t),
            Command::Take { source, .. } => source.as_deref(),
            Command::Put { dest, .. } => dest.as_deref(),
            Command::Look | Command::Unknown => None,
        }
    }

    /// Target of a manipulation (everything except movement and looking).
    pub fn interaction_target(&self) -> Option<&str> {
        match self {
            Command::GoTo(_) => None,
            other => other.target(),
        }
    }
}

/// Lowercase, trim, collapse internal whitespace.
pub fn normalize(text: &str) -> String {
    text.split_whitespace().map(|w| w.to_lowercase()).collect::<Vec<_>>().join(" ")
}
