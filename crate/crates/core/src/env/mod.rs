//! Deterministic, partially observable text worlds.
//!
//! A world is a set of rooms and entities plus an ordered rule table. The
//! agent only ever sees rendered [`Observation`] text. Actions the rules
//! reject leave the state untouched and produce the fixed text
//! [`NOTHING_HAPPENED`].

mod action;
pub mod fixtures;
mod rules;
mod score;
mod task;
mod text;
mod world;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use action::{normalize, Command, Verb};
pub use rules::{Effect, Guard, Rule, RuleSet, Verdict};
pub use score::{ProcessScore, Score};
pub use task::{fingerprint, Predicate, Subgoal, TaskSpec};
pub use world::{Agent, Entity, EntityKind, Location, Room, WorldState};

/// Observation text for every rejected action.
pub const NOTHING_HAPPENED: &str = "Nothing happened.";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid environment definition: `{field}`: {message}")]
    Validation { field: String, message: String },
    #[error("cannot parse environment definition: {0}")]
    Parse(String),
    #[error("cannot read `{path}`: {message}")]
    Io { path: String, message: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub text: String,
    pub step_index: usize,
}

/// Result of applying one action to a state.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: WorldState,
    pub text: String,
    pub verdict: Verdict,
    pub done: bool,
}

/// One transcript line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranscriptRecord {
    pub step: usize,
    pub action: String,
    pub observation: String,
    pub score: Score,
    pub done: bool,
}

/// Starts an episode. The returned state is the task's initial world with
/// the seed recorded; the seed only changes list order in observation text.
pub fn reset(task: &TaskSpec, seed: u64) -> (WorldState, Observation) {
    let mut state = task.initial_world.clone();
    state.rng_seed = seed;
    latch_milestones(task, &mut state);
    let obs = Observation { text: text::look(&state), step_index: 0 };
    (state, obs)
}

/// Rule verdict for an action in a state, without applying it.
pub fn check_rule(task: &TaskSpec, state: &WorldState, action: &str) -> Verdict {
    if is_done(task, state) {
        return Verdict::Reject(rules::TASK_COMPLETE.to_string());
    }
    let cmd = Command::parse(action);
    if let Verdict::Reject(id) = task.rules.evaluate(state, &cmd) {
        return Verdict::Reject(id);
    }
    match rules::builtin_check(state, &cmd) {
        Some(id) => Verdict::Reject(id.to_string()),
        None => Verdict::Allow,
    }
}

/// Applies one action. Never fails: unparseable or disallowed actions are
/// rejections.
pub fn step(task: &TaskSpec, state: &WorldState, action: &str) -> Transition {
    let verdict = check_rule(task, state, action);
    if !verdict.is_allow() {
        return Transition {
            state: state.clone(),
            text: NOTHING_HAPPENED.to_string(),
            verdict,
            done: is_done(task, state),
        };
    }
    let mut next = state.clone();
    let text = apply(&mut next, &Command::parse(action));
    latch_milestones(task, &mut next);
    let done = is_done(task, &next);
    Transition { state: next, text, verdict, done }
}

fn apply(s: &mut WorldState, cmd: &Command) -> String {
    match cmd {
        Command::Look => text::look(s),
        Command::GoTo(target) => {
            if s.rooms.contains_key(target) && s.agent.room != *target {
                s.agent.room = target.clone();
                s.agent.facing = None;
                format!("You enter the {target}. {}", text::room_listing(s, target))
            } else {
                s.agent.facing = Some(target.clone());
                format!("You arrive at the {target}. {}", text::receptacle_listing(s, target))
            }
        }
        Command::Open(target) => {
            if let Some(e) = s.entities.get_mut(target) {
                e.open = Some(true);
            }
            format!("You open the {target}. {}", text::receptacle_listing(s, target))
        }
        Command::Close(target) => {
            if let Some(e) = s.entities.get_mut(target) {
                e.open = Some(false);
            }
            format!("You close the {target}.")
        }
        Command::Take { object, source } => {
            if let Some(e) = s.entities.get_mut(object) {
                e.location = Location::Hand;
            }
            s.agent.hand = Some(object.clone());
            format!("You pick up the {object} from the {}.", source.as_deref().unwrap_or_default())
        }
        Command::Put { object, dest } => {
            let dest = dest.clone().unwrap_or_default();
            let prep = if s.entity(&dest).is_some_and(|e| e.is_surface()) { "on" } else { "in" };
            if let Some(e) = s.entities.get_mut(object) {
                e.location = Location::Inside(dest.clone());
            }
            s.agent.hand = None;
            format!("You put the {object} {prep} the {dest}.")
        }
        Command::Unknown => NOTHING_HAPPENED.to_string(),
    }
}

fn latch_milestones(task: &TaskSpec, s: &mut WorldState) {
    for (i, sg) in task.subgoals.iter().enumerate() {
        if sg.sticky && sg.predicate.holds(s) {
            s.milestones.insert(i);
        }
    }
}

fn satisfied(task: &TaskSpec, s: &WorldState) -> std::collections::BTreeSet<usize> {
    task.subgoals
        .iter()
        .enumerate()
        .filter(|(i, sg)| (sg.sticky && s.milestones.contains(i)) || sg.predicate.holds(s))
        .map(|(i, _)| i)
        .collect()
}

fn is_done(task: &TaskSpec, s: &WorldState) -> bool {
    satisfied(task, s).len() == task.subgoals.len()
}

pub fn process_score(state: &WorldState, task: &TaskSpec) -> ProcessScore {
    let sat = satisfied(task, state);
    ProcessScore { value: Score::from_fraction(sat.len(), task.subgoals.len()), satisfied_subgoals: sat }
}

/// Folds `step` over a fresh episode. Rejected actions are no-ops.
pub fn replay<S: AsRef<str>>(task: &TaskSpec, seed: u64, actions: &[S]) -> WorldState {
    let (mut state, _) = reset(task, seed);
    for a in actions {
        state = step(task, &state, a.as_ref()).state;
    }
    state
}

/// An episode in progress: a state plus the step counter.
#[derive(Clone, Debug)]
pub struct Session<'a> {
    task: &'a TaskSpec,
    state: WorldState,
    steps: usize,
    done: bool,
}

impl<'a> Session<'a> {
    pub fn start(task: &'a TaskSpec, seed: u64) -> (Session<'a>, Observation) {
        let (state, obs) = reset(task, seed);
        let done = is_done(task, &state);
        (Session { task, state, steps: 0, done }, obs)
    }

    /// Resumes from a replayed action prefix.
    pub fn replayed<S: AsRef<str>>(task: &'a TaskSpec, seed: u64, actions: &[S]) -> Session<'a> {
        let state = replay(task, seed, actions);
        let done = is_done(task, &state);
        Session { task, state, steps: actions.len(), done }
    }

    pub fn step(&mut self, action: &str) -> (Observation, bool) {
        let t = step(self.task, &self.state, action);
        self.state = t.state;
        self.steps += 1;
        self.done = t.done;
        (Observation { text: t.text, step_index: self.steps }, t.done)
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn score(&self) -> Score {
        process_score(&self.state, self.task).value
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }
}
