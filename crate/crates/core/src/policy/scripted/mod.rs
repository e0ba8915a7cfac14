//! Deterministic fixture policies.
//!
//! Each behaviour is a pure function of `(prompt, seed)`: it reads the
//! rendered prompt back with [`read_prompt`] and answers in the tagged
//! format of the prompt's role. The oracle behaviours additionally look the
//! task up by instruction in a [`Catalog`] and replay the history on the
//! simulator. The behaviour table is documented in `fixtures/policies.toml`.

pub mod belief;
pub mod planner;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use self::belief::Belief;
use super::prompt::{read_prompt, PromptKind, PromptView};
use super::{ActorOutput, Completer, DecodeParams, PolicyError, Role};
use crate::env::{self, fixtures::Catalog, normalize, TaskSpec, Verdict, WorldState, NOTHING_HAPPENED};
use crate::util::fnv1a;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Behavior {
    LoopActor,
    GreedyActor,
    ObedientActor,
    OracleActor,
    RandomActor,
    BabbleActor,
    OracleThinker,
    NullThinker,
    SamplingThinker,
    BrokenThinker,
}

const POLICIES: &[(&str, Role, Behavior)] = &[
    ("loop-actor", Role::Actor, Behavior::LoopActor),
    ("greedy-actor", Role::Actor, Behavior::GreedyActor),
    ("obedient-actor", Role::Actor, Behavior::ObedientActor),
    ("oracle-actor", Role::Actor, Behavior::OracleActor),
    ("random-actor", Role::Actor, Behavior::RandomActor),
    ("babble-actor", Role::Actor, Behavior::BabbleActor),
    ("oracle-thinker", Role::Thinker, Behavior::OracleThinker),
    ("null-thinker", Role::Thinker, Behavior::NullThinker),
    ("sampling-thinker", Role::Thinker, Behavior::SamplingThinker),
    ("broken-thinker", Role::Thinker, Behavior::BrokenThinker),
];

/// Names of every registered scripted policy with its role.
pub fn registered() -> impl Iterator<Item = (&'static str, Role)> {
    POLICIES.iter().map(|(n, r, _)| (*n, *r))
}

/// Resolves scripted policy names. Holds the tasks the oracle behaviours
/// may look up.
#[derive(Clone, Debug)]
pub struct ScriptedRegistry {
    catalog: Arc<Catalog>,
}

impl Default for ScriptedRegistry {
    fn default() -> Self {
        ScriptedRegistry::builtin()
    }
}

impl ScriptedRegistry {
    pub fn new(catalog: Catalog) -> Self {
        ScriptedRegistry { catalog: Arc::new(catalog) }
    }

    /// Registry that knows the built-in fixture worlds.
    pub fn builtin() -> Self {
        ScriptedRegistry::new(Catalog::builtin())
    }

    /// Registry that knows the built-in worlds plus `tasks`.
    pub fn with_tasks<I: IntoIterator<Item = Arc<TaskSpec>>>(tasks: I) -> Self {
        let all = env::fixtures::all().into_iter().map(Arc::new).chain(tasks);
        ScriptedRegistry::new(Catalog::new(all))
    }

    pub fn get(&self, name: &str, role: Role) -> Result<Arc<dyn Completer>, PolicyError> {
        let Some((_, r, behavior)) = POLICIES.iter().find(|(n, _, _)| *n == name) else {
            let known: Vec<&str> = POLICIES.iter().map(|(n, _, _)| *n).collect();
            return Err(PolicyError::Config(format!("unknown scripted policy `{name}` (known: {})", known.join(", "))));
        };
        if *r != role {
            return Err(PolicyError::Config(format!("scripted policy `{name}` is a {r}, not a {role}")));
        }
        Ok(Arc::new(Scripted { behavior: *behavior, role: *r, catalog: self.catalog.clone() }))
    }
}

struct Scripted {
    behavior: Behavior,
    role: Role,
    catalog: Arc<Catalog>,
}

impl Completer for Scripted {
    fn complete(&self, prompt: &str, _decode: &DecodeParams, seed: u64) -> Result<String, PolicyError> {
        let view = read_prompt(prompt).ok_or_else(|| {
            PolicyError::Contract("scripted policies only read prompts rendered by this crate".into())
        })?;
        let rng = || ChaCha8Rng::seed_from_u64(seed ^ fnv1a(prompt.as_bytes()));
        match (view.kind, self.role) {
            (PromptKind::Actor, Role::Actor) => Ok(self.act(&view, rng)),
            (PromptKind::Reflection, Role::Actor) => Ok(reflect(&view, self.behavior)),
            (PromptKind::Thinker, Role::Thinker) => Ok(self.think(&view, rng)),
            (kind, role) => Err(PolicyError::Contract(format!("a scripted {role} cannot answer a {kind:?} prompt"))),
        }
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

fn answer(thought: &str, action: &str) -> String {
    ActorOutput { thought: thought.to_string(), action: action.to_string() }.render()
}

fn deepthink(text: &str) -> String {
    format!("<deepthink>\n{text}\n</deepthink>")
}

impl Scripted {
    fn act(&self, view: &PromptView, rng: impl Fn() -> ChaCha8Rng) -> String {
        match self.behavior {
            Behavior::LoopActor => answer("Doing the same thing again.", &last_action(view)),
            Behavior::ObedientActor => match pending_plan_action(view) {
                Some(a) => answer("Following the plan.", &a),
                None => answer("Doing the same thing again.", &last_action(view)),
            },
            Behavior::GreedyActor => match pending_plan_action(view) {
                Some(a) => answer("Following the plan.", &a),
                None => {
                    let (thought, action) = greedy(view);
                    answer(&thought, &action)
                }
            },
            Behavior::OracleActor => {
                let action = self
                    .replayed(view)
                    .and_then(|(task, state)| planner::plan_to_next_milestone(task, &state))
                    .and_then(|p| p.into_iter().next())
                    .unwrap_or_else(|| "look around".to_string());
                answer("Heading for the next milestone.", &action)
            }
            Behavior::RandomActor => {
                let mut choices = vec!["look around".to_string()];
                if let Some((_, state)) = self.replayed(view) {
                    choices.extend(planner::candidate_actions(&state));
                }
                let pick = rng().gen_range(0..choices.len());
                answer("Trying something at random.", &choices[pick])
            }
            Behavior::BabbleActor => "I would rather describe the room than act in it.".to_string(),
            _ => unreachable!("thinker behaviour in actor role"),
        }
    }

    fn think(&self, view: &PromptView, rng: impl Fn() -> ChaCha8Rng) -> String {
        match self.behavior {
            Behavior::OracleThinker => deepthink(&self.oracle_thought(view)),
            Behavior::NullThinker => deepthink("continue"),
            Behavior::SamplingThinker => {
                let u: f64 = rng().gen();
                if u < 0.5 {
                    deepthink(&self.oracle_thought(view))
                } else if u < 0.75 {
                    deepthink("continue")
                } else {
                    deepthink(MISLEADING_THOUGHT)
                }
            }
            Behavior::BrokenThinker => "Hmm, I am not sure what to make of this.".to_string(),
            _ => unreachable!("actor behaviour in thinker role"),
        }
    }

    /// The task and current state behind a prompt, when the full history is
    /// available.
    fn replayed<'a>(&'a self, view: &PromptView) -> Option<(&'a TaskSpec, WorldState)> {
        if view.omitted > 0 {
            return None;
        }
        let task = self.catalog.by_instruction(&view.instruction)?;
        let actions: Vec<&str> = view.actions().collect();
        Some((task, env::replay(task, 0, &actions)))
    }

    fn oracle_thought(&self, view: &PromptView) -> String {
        let Some(task) = self.catalog.by_instruction(&view.instruction).filter(|_| view.omitted == 0) else {
            return "Summary: the history is incomplete.\nHypothesis: none.\nPlan:\n- look around".to_string();
        };
        let actions: Vec<&str> = view.actions().collect();
        let state = env::replay(task, 0, &actions);
        let score = env::process_score(&state, task);
        let mut text = format!(
            "Summary: {} of {} subgoals are complete after {} steps.\n",
            score.satisfied_subgoals.len(),
            task.subgoals.len(),
            actions.len()
        );
        let last_reject = view.steps.iter().rposition(|s| s.observation == NOTHING_HAPPENED);
        match last_reject {
            Some(i) => {
                let before = env::replay(task, 0, &actions[..i]);
                let action = &view.steps[i].action;
                let id = match env::check_rule(task, &before, action) {
                    Verdict::Reject(id) => id,
                    Verdict::Allow => "unknown".to_string(),
                };
                let hint = task
                    .rules
                    .get(&id)
                    .map(|r| r.hint.clone())
                    .filter(|h| !h.is_empty())
                    .unwrap_or_else(|| builtin_hint(&id).to_string());
                text.push_str(&format!("Hypothesis: \"{action}\" was rejected by the hidden rule `{id}`: {hint}.\n"));
            }
            None => {
                text.push_str("Hypothesis: the feedback so far is consistent; no hidden rule has been violated yet.\n")
            }
        }
        match planner::plan_to_next_milestone(task, &state) {
            Some(plan) => {
                text.push_str("Plan:");
                for a in plan {
                    text.push_str("\n- ");
                    text.push_str(&a);
                }
            }
            None => text.push_str("Plan:\n- look around"),
        }
        text
    }
}

const MISLEADING_THOUGHT: &str = "Summary: progress is slow.\nHypothesis: the room may need a closer look before anything works.\nPlan:\n- look around\n- look around";

fn builtin_hint(id: &str) -> &'static str {
    match id.strip_prefix("builtin:").unwrap_or(id) {
        "task-complete" => "the task is already complete",
        "unparseable" => "the action does not follow the action grammar",
        "unreachable" => "the target cannot be reached from the current room",
        "no-such-entity" => "the named thing does not exist",
        "not-there" => "the object is not in that receptacle",
        "hand-full" => "the hand is already full",
        "not-holding" => "the object is not being carried",
        "no-effect" => "the action would change nothing",
        _ => "the cause is unclear",
    }
}

fn last_action(view: &PromptView) -> String {
    view.steps.last().map(|s| s.action.clone()).unwrap_or_else(|| "look around".to_string())
}

/// `- action` lines following a `Plan:` line.
pub fn plan_lines(thought: &str) -> Vec<String> {
    let mut lines = thought.lines().map(str::trim);
    let mut out = Vec::new();
    if lines.by_ref().any(|l| l.to_ascii_lowercase().starts_with("plan:")) {
        for l in lines {
            match l.strip_prefix("- ") {
                Some(a) if !a.trim().is_empty() => out.push(a.trim().to_string()),
                _ => break,
            }
        }
    }
    out
}

/// The plan line for the current step: plan line `k` is the `k`-th action
/// after the latest thought's anchor.
fn pending_plan_action(view: &PromptView) -> Option<String> {
    let t = view.latest_thought()?;
    let k = view.step_count().checked_sub(t.anchor_step)?;
    plan_lines(&t.text).into_iter().nth(k)
}

enum Goal {
    Put { object: String, prep: String, dest: String },
    Reach { target: String },
}

fn parse_goal(instruction: &str) -> Option<Goal> {
    let s = normalize(instruction);
    if let Some(rest) = s.strip_prefix("put the ").or_else(|| s.strip_prefix("put a ")) {
        for prep in ["on", "in"] {
            if let Some((object, dest)) = rest.split_once(&format!(" {prep} the ")) {
                return Some(Goal::Put { object: object.into(), prep: prep.into(), dest: dest.into() });
            }
        }
        return None;
    }
    let rest = s.strip_prefix("go to the ")?;
    let target = rest.split(" in the ").next()?.to_string();
    Some(Goal::Reach { target })
}

fn matches_stem(id: &str, stem: &str) -> bool {
    id == stem || id.strip_prefix(stem).is_some_and(|r| r.starts_with(' '))
}

/// Walks to `target` and then performs `act`.
fn approach(b: &Belief, target: &str, act: String) -> String {
    if b.facing.as_deref() == Some(target) {
        return act;
    }
    match b.room_of(target) {
        Some(r) if Some(r) == b.room.as_deref() => format!("go to {target}"),
        Some(r) => b.next_hop(r).map(|h| format!("go to {h}")).unwrap_or_else(|| "look around".into()),
        None => "look around".into(),
    }
}

fn known_receptacles(b: &Belief) -> Vec<&str> {
    let mut all: Vec<&str> = b.room_things.values().flatten().map(String::as_str).collect();
    all.sort();
    all.dedup();
    all
}

/// Rule-ignorant subgoal chaser. Never opens anything and never frees its
/// hand.
fn greedy(view: &PromptView) -> (String, String) {
    let b = Belief::from_view(view);
    let here = b.room.clone().unwrap_or_default();
    let explore = |b: &Belief| -> Option<String> {
        let local = b.room_things.get(&here).into_iter().flatten().find(|r| !b.visited_receptacles.contains(*r));
        if let Some(r) = local {
            return Some(format!("go to {r}"));
        }
        b.explore_hop().map(|h| format!("go to {h}"))
    };
    match parse_goal(&view.instruction) {
        Some(Goal::Put { object, prep, dest }) => {
            if let Some(held) = b.holding.as_deref().filter(|h| matches_stem(h, &object)) {
                if let Some(d) = known_receptacles(&b).into_iter().find(|r| matches_stem(r, &dest)) {
                    return (
                        format!("Bringing the {held} to the {d}."),
                        approach(&b, d, format!("put {held} {prep} {d}")),
                    );
                }
                return ("Looking for the destination.".into(), explore(&b).unwrap_or_else(|| "look around".into()));
            }
            let seen: BTreeMap<&str, &str> = b
                .contents
                .iter()
                .flat_map(|(r, objs)| objs.iter().map(move |o| (o.as_str(), r.as_str())))
                .filter(|(o, _)| matches_stem(o, &object))
                .collect();
            if let Some((o, r)) = seen.into_iter().next() {
                return (format!("The {o} is on the {r}."), approach(&b, r, format!("take {o} from {r}")));
            }
            if let Some(a) = explore(&b) {
                return (format!("Searching for the {object}."), a);
            }
            let guess = known_receptacles(&b).into_iter().find(|r| b.closed.contains(*r));
            match guess {
                Some(r) => {
                    (format!("The {object} must be in the {r}."), approach(&b, r, format!("take {object} 1 from {r}")))
                }
                None => ("Nothing left to search.".into(), "look around".into()),
            }
        }
        Some(Goal::Reach { target }) => {
            if let Some(t) = known_receptacles(&b).into_iter().find(|r| matches_stem(r, &target)) {
                return (format!("Heading to the {t}."), approach(&b, t, "look around".into()));
            }
            match b.explore_hop() {
                Some(h) => (format!("Searching for the {target}."), format!("go to {h}")),
                None => ("Nothing left to search.".into(), "look around".into()),
            }
        }
        None => ("I do not understand the task.".into(), "look around".into()),
    }
}

/// Reflection shared by every scripted actor: names the most repeated
/// rejected action.
fn reflect(view: &PromptView, behavior: Behavior) -> String {
    if behavior == Behavior::BabbleActor {
        return "I would rather describe the room than reflect on it.".to_string();
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for s in view.steps.iter().filter(|s| s.observation == NOTHING_HAPPENED) {
        *counts.entry(s.action.as_str()).or_default() += 1;
    }
    let worst = counts.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)));
    let text = match worst {
        Some((a, n)) => format!(
            "The action \"{a}\" failed {n} times. Next time, look for a hidden precondition instead of repeating it."
        ),
        None => "No action was rejected, but the task was not finished. Next time, explore unvisited places earlier."
            .to_string(),
    };
    format!("<reflection>{text}</reflection>")
}
