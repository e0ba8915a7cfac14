//! Declarative implicit-rule engine.
//!
//! A rule set is an ordered list of guard/effect pairs. Rules are checked in
//! list order and the first rule whose guard matches decides the verdict. An
//! `allow` rule therefore acts as an exception for the rules after it. After
//! the declared rules, a fixed set of built-in physical checks runs (unknown
//! entities, hand capacity, finished episodes); their ids start with
//! `builtin:`.

use serde::{Deserialize, Serialize};

use super::action::{Command, Verb};
use super::world::{Location, WorldState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Guard {
    /// The action's verb is one of these.
    Verb(Vec<Verb>),
    UnknownVerb,
    /// The action manipulates a receptacle the agent is not in front of.
    NotFacingTarget,
    HandOccupied,
    HandEmpty,
    /// The action's receptacle target is a closed receptacle.
    TargetClosed,
    TargetIs(String),
    Holding(String),
    AgentIn(String),
    All(Vec<Guard>),
    Any(Vec<Guard>),
    Not(Box<Guard>),
}

impl Guard {
    pub fn matches(&self, state: &WorldState, cmd: &Command) -> bool {
        match self {
            Guard::Verb(verbs) => verbs.contains(&cmd.verb()),
            Guard::UnknownVerb => cmd.verb() == Verb::Unknown,
            Guard::NotFacingTarget => match cmd.interaction_target() {
                Some(t) => state.agent.facing.as_deref() != Some(t),
                None => false,
            },
            Guard::HandOccupied => state.agent.hand.is_some(),
            Guard::HandEmpty => state.agent.hand.is_none(),
            Guard::TargetClosed => {
                cmd.interaction_target().and_then(|t| state.entity(t)).is_some_and(|e| e.is_closed())
            }
            Guard::TargetIs(id) => cmd.target() == Some(id.as_str()),
            Guard::Holding(id) => state.agent.hand.as_deref() == Some(id.as_str()),
            Guard::AgentIn(room) => state.agent.room == *room,
            Guard::All(gs) => gs.iter().all(|g| g.matches(state, cmd)),
            Guard::Any(gs) => gs.iter().any(|g| g.matches(state, cmd)),
            Guard::Not(g) => !g.matches(state, cmd),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Effect {
    Allow,
    Reject,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub id: String,
    pub guard: Guard,
    pub effect: Effect,
    /// Plain-language statement of the rule. Never shown to agents by the
    /// simulator; scripted oracles may quote it.
    #[serde(default)]
    pub hint: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    pub rules: Vec<Rule>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Allow,
    Reject(String),
}

impl Verdict {
    pub fn is_allow(&self) -> bool {
        matches!(self, Verdict::Allow)
    }
}

impl RuleSet {
    pub fn get(&self, id: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| r.id == id)
    }

    /// Verdict of the declared rules alone.
    pub fn evaluate(&self, state: &WorldState, cmd: &Command) -> Verdict {
        for rule in &self.rules {
            if rule.guard.matches(state, cmd) {
                return match rule.effect {
                    Effect::Allow => Verdict::Allow,
                    Effect::Reject => Verdict::Reject(rule.id.clone()),
                };
            }
        }
        Verdict::Allow
    }
}

pub const TASK_COMPLETE: &str = "builtin:task-complete";
pub const UNPARSEABLE: &str = "builtin:unparseable";
pub const UNREACHABLE: &str = "builtin:unreachable";
pub const NO_SUCH_ENTITY: &str = "builtin:no-such-entity";
pub const NOT_THERE: &str = "builtin:not-there";
pub const HAND_FULL: &str = "builtin:hand-full";
pub const NOT_HOLDING: &str = "builtin:not-holding";
pub const NO_EFFECT: &str = "builtin:no-effect";

/// Physical applicability checks that every world obeys regardless of its
/// declared rules.
pub(crate) fn builtin_check(state: &WorldState, cmd: &Command) -> Option<&'static str> {
    let here = state.agent.room.as_str();
    let local_receptacle =
        |id: &str| state.receptacle(id).is_some_and(|e| matches!(&e.location, Location::Room(r) if r == here));
    match cmd {
        Command::Unknown => Some(UNPARSEABLE),
        Command::Look => None,
        Command::GoTo(target) => {
            let exit = state.rooms.get(here).is_some_and(|r| r.exits.contains(target));
            if exit || local_receptacle(target) {
                if state.agent.facing.as_deref() == Some(target.as_str()) {
                    return Some(NO_EFFECT);
                }
                None
            } else if state.rooms.contains_key(target) || state.entities.contains_key(target) {
                Some(UNREACHABLE)
            } else {
                Some(NO_SUCH_ENTITY)
            }
        }
        Command::Open(target) | Command::Close(target) => {
            let Some(e) = state.entity(target) else {
                return Some(NO_SUCH_ENTITY);
            };
            if !local_receptacle(target) {
                return Some(UNREACHABLE);
            }
            let want_open = matches!(cmd, Command::Open(_));
            match e.open {
                None => Some(NO_EFFECT),
                Some(o) if o == want_open => Some(NO_EFFECT),
                Some(_) => None,
            }
        }
        Command::Take { object, source } => {
            let Some(source) = source else {
                return Some(UNPARSEABLE);
            };
            if state.entity(object).is_none() || state.entity(source).is_none() {
                return Some(NO_SUCH_ENTITY);
            }
            if !local_receptacle(source) {
                return Some(UNREACHABLE);
            }
            if state.entity(object).map(|e| &e.location) != Some(&Location::Inside(source.clone())) {
                return Some(NOT_THERE);
            }
            if state.agent.hand.is_some() {
                return Some(HAND_FULL);
            }
            None
        }
        Command::Put { object, dest } => {
            let Some(dest) = dest else {
                return Some(UNPARSEABLE);
            };
            if state.entity(object).is_none() || state.entity(dest).is_none() {
                return Some(NO_SUCH_ENTITY);
            }
            if state.agent.hand.as_deref() != Some(object.as_str()) {
                return Some(NOT_HOLDING);
            }
            if !local_receptacle(dest) {
                return Some(UNREACHABLE);
            }
            None
        }
    }
}
