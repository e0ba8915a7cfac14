//! Breadth-first search over fully observed world states. Only the oracle
//! policies use it; they are allowed to see the simulator.

use std::collections::{HashSet, VecDeque};

use crate::env::{self, TaskSpec, WorldState};

/// Depth limit for one search. Every fixture milestone is much closer.
pub const MAX_PLAN_DEPTH: usize = 12;

/// Actions worth trying in `state`, in a fixed order: movement first, then
/// manipulation of the faced receptacle. Excludes `look around`.
pub fn candidate_actions(state: &WorldState) -> Vec<String> {
    let mut out = Vec::new();
    let here = &state.agent.room;
    if let Some(room) = state.rooms.get(here) {
        out.extend(room.exits.iter().map(|r| format!("go to {r}")));
    }
    for id in state.in_room(here) {
        if state.receptacle(id).is_some() && state.agent.facing.as_deref() != Some(id) {
            out.push(format!("go to {id}"));
        }
    }
    if let Some(facing) = state.agent.facing.as_deref() {
        if let Some(e) = state.receptacle(facing) {
            match e.open {
                Some(false) => out.push(format!("open {facing}")),
                Some(true) => out.push(format!("close {facing}")),
                None => {}
            }
            for obj in state.contents(facing) {
                out.push(format!("take {obj} from {facing}"));
            }
            if let Some(held) = &state.agent.hand {
                let prep = if e.is_surface() { "on" } else { "in" };
                out.push(format!("put {held} {prep} {facing}"));
            }
        }
    }
    out
}

/// Shortest accepted action sequence from `state` to any state with a
/// strictly higher process score. `None` when the task is finished or no
/// improvement is reachable within [`MAX_PLAN_DEPTH`].
pub fn plan_to_next_milestone(task: &TaskSpec, state: &WorldState) -> Option<Vec<String>> {
    let base = env::process_score(state, task).value;
    if base.is_full() {
        return None;
    }
    let mut seen: HashSet<WorldState> = HashSet::new();
    seen.insert(state.clone());
    let mut queue: VecDeque<(WorldState, Vec<String>)> = VecDeque::new();
    queue.push_back((state.clone(), Vec::new()));
    while let Some((s, path)) = queue.pop_front() {
        if path.len() >= MAX_PLAN_DEPTH {
            continue;
        }
        for action in candidate_actions(&s) {
            let t = env::step(task, &s, &action);
            if !t.verdict.is_allow() {
                continue;
            }
            let mut next_path = path.clone();
            next_path.push(action);
            if env::process_score(&t.state, task).value > base {
                return Some(next_path);
            }
            if seen.insert(t.state.clone()) {
                queue.push_back((t.state, next_path));
            }
        }
    }
    None
}

/// Full plan to completion by chaining milestone plans.
pub fn plan_to_completion(task: &TaskSpec, state: &WorldState) -> Option<Vec<String>> {
    let mut s = state.clone();
    let mut plan = Vec::new();
    while !env::process_score(&s, task).value.is_full() {
        let leg = plan_to_next_milestone(task, &s)?;
        for a in &leg {
            s = env::step(task, &s, a).state;
        }
        plan.extend(leg);
    }
    Some(plan)
}
