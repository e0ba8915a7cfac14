//! Prompt templates for the actor, thinker and reflection roles, plus a
//! reader that recovers the structured history back out of a rendered
//! prompt (scripted backends only ever see prompt text).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::PolicyError;
use crate::env::TaskSpec;
use crate::trajectory::{DeepThought, HistoryView};

pub const ACTOR_PREAMBLE: &str = "You are an Action Agent responsible for achieving a text-based task.";
pub const THINKER_PREAMBLE: &str = "You are a Thinker Agent responsible for uncovering the implicit rules of the environment. You must analyze the history trajectory carefully and reason about any confusing feedback from the environment.";
pub const REFLECTION_PREAMBLE: &str = "You are an Action Agent reviewing a failed attempt at a text-based task.";

pub const ACTOR_FORMAT: &str = "<think> put your thought here </think>\n<answer> put your action here </answer>\n";
pub const THINKER_FORMAT: &str = "<deepthink> put your thought here </deepthink>\n";
pub const REFLECTION_FORMAT: &str = "<reflection> put your reflection here </reflection>\n";

const ACTOR_ATTENTION: &str = "Attention:\n\n\
1. You MUST provide your thought (one or two lines) before taking action.\n\n\
2. You MUST issue only ONE action in each interaction stage.\n\n\
Please provide your response to the task following the format strictly. Use the following format:\n";

const THINKER_ATTENTION: &str = "Attention:\n\n\
1. If you think all the feedback in the history trajectory is reasonable, summarize the subgoals you have completed and provide your next plan.\n\n\
2. If you find the environment's feedback in the latest steps confusing, think carefully about possible reasons. Do not assume the environment is erroneous; instead, consider what hidden rules could explain the observations.\n\n\
3. For any uncertainties, try to formulate hypotheses and design plans to verify them.\n\n\
Use the following format for your response:\n";

const ACTOR_HISTORY_HEADER: &str = "Interaction History:";
const THINKER_HISTORY_HEADER: &str = "History Trajectory:";
const EMPTY_HISTORY: &str = "(no interaction yet)";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptOptions {
    /// Character budget for a rendered prompt. When exceeded, the oldest
    /// action/observation pairs are dropped first; deep thoughts, the
    /// instruction and the initial observation are always kept.
    pub char_budget: Option<usize>,
    /// Whether the thinker's history includes earlier deep thoughts.
    pub thinker_sees_thoughts: bool,
}

impl Default for PromptOptions {
    fn default() -> Self {
        PromptOptions { char_budget: None, thinker_sees_thoughts: true }
    }
}

fn check_task(task: &TaskSpec, history: &HistoryView<'_>) -> Result<(), PolicyError> {
    if history.task_id != task.id {
        return Err(PolicyError::Contract(format!("history belongs to task `{}`, not `{}`", history.task_id, task.id)));
    }
    Ok(())
}

/// Renders the history block, skipping the first `omit` steps.
fn history_block(history: &HistoryView<'_>, include_thoughts: bool, omit: usize) -> String {
    let mut out = String::new();
    let thoughts: &[DeepThought] = if include_thoughts { history.thoughts } else { &[] };
    if history.steps.is_empty() && thoughts.is_empty() {
        return format!("{EMPTY_HISTORY}\n");
    }
    if omit > 0 {
        let _ = writeln!(out, "({omit} earlier steps omitted)");
    }
    let mut ti = 0;
    let emit_thoughts_upto = |out: &mut String, upto: usize, ti: &mut usize| {
        while *ti < thoughts.len() && thoughts[*ti].anchor_step <= upto {
            let t = &thoughts[*ti];
            let _ =
                write!(out, "Deep Thought (after step {}):\n<deepthink>\n{}\n</deepthink>\n", t.anchor_step, t.text);
            *ti += 1;
        }
    };
    emit_thoughts_upto(&mut out, 0, &mut ti);
    for (i, s) in history.steps.iter().enumerate() {
        let n = i + 1;
        if n > omit {
            let _ = write!(out, "Action {n}: {}\nObservation {n}: {}\n", s.action, s.observation);
        }
        emit_thoughts_upto(&mut out, n, &mut ti);
    }
    emit_thoughts_upto(&mut out, usize::MAX, &mut ti);
    out
}

fn fit<F: Fn(usize) -> String>(budget: Option<usize>, steps: usize, render: F) -> String {
    let full = render(0);
    let Some(budget) = budget else { return full };
    if full.len() <= budget {
        return full;
    }
    for omit in 1..=steps {
        let p = render(omit);
        if p.len() <= budget {
            return p;
        }
    }
    render(steps)
}

pub fn render_actor_prompt(
    task: &TaskSpec,
    history: &HistoryView<'_>,
    opts: &PromptOptions,
) -> Result<String, PolicyError> {
    check_task(task, history)?;
    Ok(fit(opts.char_budget, history.steps.len(), |omit| {
        let mut p = String::new();
        p.push_str(ACTOR_PREAMBLE);
        p.push('\n');
        if !history.reflections.is_empty() {
            p.push_str("\nReflections from previous attempts:\n");
            for r in history.reflections {
                let _ = writeln!(p, "- {}", r.trim());
            }
        }
        p.push_str("\nNow you need to finish a text-based task in an environment with multi-turn interaction.\n\n");
        let _ = write!(p, "Task Examples: {}\n\n", task.examples.join("\n\n"));
        let _ = write!(p, "Task Actions: {}\n\n", task.action_space_doc.trim());
        let _ = write!(p, "The Task: {}\n\n", task.instruction);
        let _ = write!(p, "Initial Observation: {}\n\n", history.initial_observation);
        let _ = write!(p, "{ACTOR_HISTORY_HEADER}\n{}\n", history_block(history, true, omit));
        p.push_str(ACTOR_ATTENTION);
        p.push_str(ACTOR_FORMAT);
        p
    }))
}

pub fn render_thinker_prompt(
    task: &TaskSpec,
    history: &HistoryView<'_>,
    opts: &PromptOptions,
) -> Result<String, PolicyError> {
    check_task(task, history)?;
    Ok(fit(opts.char_budget, history.steps.len(), |omit| {
        let mut p = String::new();
        p.push_str(THINKER_PREAMBLE);
        p.push_str("\n\nHere is the information about the task environment.\n\n");
        let _ = write!(p, "Task Actions: {}\n\n", task.action_space_doc.trim());
        let _ = write!(p, "The Task: {}\n\n", task.instruction);
        let _ = write!(p, "Initial Observation: {}\n\n", history.initial_observation);
        let _ = write!(p, "{THINKER_HISTORY_HEADER}\n{}\n", history_block(history, opts.thinker_sees_thoughts, omit));
        p.push_str(THINKER_ATTENTION);
        p.push_str(THINKER_FORMAT);
        p
    }))
}

pub fn render_reflection_prompt(
    task: &TaskSpec,
    history: &HistoryView<'_>,
    final_score: crate::env::Score,
) -> Result<String, PolicyError> {
    check_task(task, history)?;
    let mut p = String::new();
    p.push_str(REFLECTION_PREAMBLE);
    p.push_str("\n\n");
    let _ = write!(p, "Task Actions: {}\n\n", task.action_space_doc.trim());
    let _ = write!(p, "The Task: {}\n\n", task.instruction);
    let _ = write!(p, "Initial Observation: {}\n\n", history.initial_observation);
    let _ = write!(p, "{ACTOR_HISTORY_HEADER}\n{}\n", history_block(history, true, 0));
    let _ = write!(p, "Final process score: {final_score} / 100.\n\n");
    p.push_str("Attention:\n\nIn one or two sentences, state what went wrong and what to do differently next time.\n\nUse the following format:\n");
    p.push_str(REFLECTION_FORMAT);
    Ok(p)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PromptKind {
    Actor,
    Thinker,
    Reflection,
    Other,
}

pub fn prompt_kind(prompt: &str) -> PromptKind {
    if prompt.starts_with(ACTOR_PREAMBLE) {
        PromptKind::Actor
    } else if prompt.starts_with(THINKER_PREAMBLE) {
        PromptKind::Thinker
    } else if prompt.starts_with(REFLECTION_PREAMBLE) {
        PromptKind::Reflection
    } else {
        PromptKind::Other
    }
}

/// One step recovered from a rendered prompt.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ViewStep {
    pub index: usize,
    pub action: String,
    pub observation: String,
}

/// Structured content recovered from a rendered prompt.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptView {
    pub kind: PromptKind,
    pub instruction: String,
    pub initial_observation: String,
    pub steps: Vec<ViewStep>,
    pub thoughts: Vec<DeepThought>,
    /// Number of leading steps the renderer dropped to fit its budget.
    pub omitted: usize,
}

impl PromptView {
    /// Total number of steps in the underlying history.
    pub fn step_count(&self) -> usize {
        self.steps.last().map(|s| s.index).unwrap_or(self.omitted)
    }

    pub fn actions(&self) -> impl Iterator<Item = &str> {
        self.steps.iter().map(|s| s.action.as_str())
    }

    pub fn latest_thought(&self) -> Option<&DeepThought> {
        self.thoughts.last()
    }
}

fn section(text: &str, from: usize, marker: &str) -> Option<(usize, usize)> {
    let at = text[from..].find(marker)? + from;
    Some((at, at + marker.len()))
}

/// Reads back a prompt produced by one of the renderers above. Returns
/// `None` for text that does not have the expected layout.
pub fn read_prompt(prompt: &str) -> Option<PromptView> {
    let kind = prompt_kind(prompt);
    if kind == PromptKind::Other {
        return None;
    }
    let (_, a) = section(prompt, 0, "\n\nTask Actions: ")?;
    let (_, t) = section(prompt, a, "\n\nThe Task: ")?;
    let (t_end, i) = section(prompt, t, "\n\nInitial Observation: ")?;
    let header = if kind == PromptKind::Thinker { THINKER_HISTORY_HEADER } else { ACTOR_HISTORY_HEADER };
    let (i_end, h) = section(prompt, i, &format!("\n\n{header}\n"))?;
    let (h_end, _) = section(prompt, h, "\nAttention:\n")?;
    let instruction = prompt[t..t_end].to_string();
    let initial_observation = prompt[i..i_end].to_string();
    let body = &prompt[h..h_end];

    let mut steps: Vec<ViewStep> = Vec::new();
    let mut thoughts = Vec::new();
    let mut omitted = 0;
    let mut lines = body.lines();
    while let Some(line) = lines.next() {
        if let Some(rest) = line.strip_prefix('(') {
            if let Some(n) = rest.strip_suffix(" earlier steps omitted)") {
                omitted = n.parse().ok()?;
            }
        } else if let Some(rest) = line.strip_prefix("Action ") {
            let (n, action) = rest.split_once(": ")?;
            steps.push(ViewStep { index: n.parse().ok()?, action: action.to_string(), observation: String::new() });
        } else if let Some(rest) = line.strip_prefix("Observation ") {
            let (n, obs) = rest.split_once(": ")?;
            let last = steps.last_mut()?;
            if last.index != n.parse::<usize>().ok()? {
                return None;
            }
            last.observation = obs.to_string();
        } else if let Some(rest) = line.strip_prefix("Deep Thought (after step ") {
            let anchor: usize = rest.strip_suffix("):")?.parse().ok()?;
            if lines.next()? != "<deepthink>" {
                return None;
            }
            let mut text = Vec::new();
            for l in lines.by_ref() {
                if l == "</deepthink>" {
                    break;
                }
                text.push(l);
            }
            thoughts.push(DeepThought { text: text.join("\n"), anchor_step: anchor });
        }
    }
    Some(PromptView { kind, instruction, initial_observation, steps, thoughts, omitted })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::fixtures::{keymaze_1, minihouse_1};
    use crate::env::Session;
    use crate::trajectory::{StepRecord, Trajectory};
    use proptest::prelude::*;

    fn record(task: &TaskSpec, actions: &[&str]) -> Trajectory {
        let (mut s, obs) = Session::start(task, 0);
        let mut traj = Trajectory::new(&task.id, 0, obs.text);
        for a in actions {
            let (o, _) = s.step(a);
            traj.steps.push(StepRecord {
                action: a.to_string(),
                observation: o.text,
                score_after: s.score(),
                wall_ms: 0,
            });
        }
        traj
    }

    const WALK: [&str; 8] = [
        "go to kitchen",
        "go to cabinet 1",
        "go to fridge 1",
        "go to garbagecan 1",
        "go to table 1",
        "go to cabinet 1",
        "take apple 1 from cabinet 1",
        "take apple 1 from cabinet 1",
    ];

    #[test]
    fn empty_history_ends_with_format_block() {
        let task = minihouse_1();
        let traj = record(&task, &[]);
        let p = render_actor_prompt(&task, &traj.view(), &PromptOptions::default()).unwrap();
        assert!(p.ends_with("<think> put your thought here </think>\n<answer> put your action here </answer>\n"));
        assert!(p.starts_with(ACTOR_PREAMBLE));
        assert!(p.contains(EMPTY_HISTORY));
        let order = [
            "Task Examples:",
            "Task Actions:",
            "The Task:",
            "Initial Observation:",
            ACTOR_HISTORY_HEADER,
            "Attention:",
        ];
        let mut at = 0;
        for m in order {
            at += p[at..].find(m).unwrap_or_else(|| panic!("{m} missing or out of order"));
        }
    }

    #[test]
    fn thought_sits_between_its_anchor_and_the_next_step() {
        let task = minihouse_1();
        let mut traj = record(&task, &WALK);
        traj.thoughts.push(DeepThought { text: "open the fridge first".into(), anchor_step: 6 });
        let p = render_actor_prompt(&task, &traj.view(), &PromptOptions::default()).unwrap();
        let t = p.find("open the fridge first").unwrap();
        assert!(p.find("Observation 6:").unwrap() < t);
        assert!(t < p.find("Action 7:").unwrap());
        assert_eq!(p, render_actor_prompt(&task, &traj.view(), &PromptOptions::default()).unwrap());
    }

    #[test]
    fn thinker_prompt_carries_directives_and_history_label() {
        let task = minihouse_1();
        for traj in [record(&task, &[]), record(&task, &WALK)] {
            let p = render_thinker_prompt(&task, &traj.view(), &PromptOptions::default()).unwrap();
            assert!(p.starts_with("You are a Thinker Agent"));
            assert!(p.contains("consider what hidden rules could explain"));
            assert!(p.contains("History Trajectory:"));
            assert!(p.ends_with("<deepthink> put your thought here </deepthink>\n"));
        }
    }

    #[test]
    fn thinker_can_be_blind_to_earlier_thoughts() {
        let task = minihouse_1();
        let mut traj = record(&task, &WALK);
        traj.thoughts.push(DeepThought { text: "secret plan".into(), anchor_step: 6 });
        let seen = render_thinker_prompt(&task, &traj.view(), &PromptOptions::default()).unwrap();
        let blind = PromptOptions { thinker_sees_thoughts: false, ..PromptOptions::default() };
        let unseen = render_thinker_prompt(&task, &traj.view(), &blind).unwrap();
        assert!(seen.contains("secret plan"));
        assert!(!unseen.contains("secret plan"));
    }

    #[test]
    fn foreign_history_is_a_contract_violation() {
        let traj = record(&minihouse_1(), &[]);
        let err = render_actor_prompt(&keymaze_1(), &traj.view(), &PromptOptions::default()).unwrap_err();
        assert!(matches!(err, PolicyError::Contract(_)));
    }

    #[test]
    fn reflections_follow_the_preamble() {
        let task = minihouse_1();
        let mut traj = record(&task, &[]);
        traj.reflections.push("open things before taking from them".into());
        let p = render_actor_prompt(&task, &traj.view(), &PromptOptions::default()).unwrap();
        assert!(p.find("open things before").unwrap() < p.find("Task Examples:").unwrap());
        assert_eq!(read_prompt(&p).unwrap().kind, PromptKind::Actor);
    }

    #[test]
    fn read_prompt_recovers_the_history() {
        let task = minihouse_1();
        let mut traj = record(&task, &WALK);
        traj.thoughts.push(DeepThought { text: "line one\nPlan:\n- go to fridge 1".into(), anchor_step: 6 });
        for p in [
            render_actor_prompt(&task, &traj.view(), &PromptOptions::default()).unwrap(),
            render_thinker_prompt(&task, &traj.view(), &PromptOptions::default()).unwrap(),
            render_reflection_prompt(&task, &traj.view(), crate::env::Score::ZERO).unwrap(),
        ] {
            let v = read_prompt(&p).unwrap();
            assert_eq!(v.instruction, task.instruction);
            assert_eq!(v.initial_observation, traj.initial_observation);
            assert_eq!(v.step_count(), WALK.len());
            let actions: Vec<&str> = v.actions().collect();
            assert_eq!(actions, WALK);
            assert_eq!(v.steps[2].observation, traj.steps[2].observation);
            assert_eq!(v.thoughts, traj.thoughts);
        }
        assert!(read_prompt("anything else").is_none());
    }

    #[test]
    fn truncation_keeps_instruction_and_thoughts() {
        let task = minihouse_1();
        let mut traj = record(&task, &WALK);
        traj.thoughts.push(DeepThought { text: "keep me".into(), anchor_step: 2 });
        let full = render_actor_prompt(&task, &traj.view(), &PromptOptions::default()).unwrap();
        let opts = PromptOptions { char_budget: Some(full.len() - 150), ..PromptOptions::default() };
        let cut = render_actor_prompt(&task, &traj.view(), &opts).unwrap();
        assert!(cut.len() <= full.len() - 150);
        assert!(cut.contains("keep me"));
        assert!(cut.contains(&task.instruction));
        assert!(cut.contains(&traj.initial_observation));
        assert!(!cut.contains("Action 1: go to kitchen"));
        let v = read_prompt(&cut).unwrap();
        assert!(v.omitted > 0);
        assert_eq!(v.step_count(), WALK.len());
    }

    proptest! {
        #[test]
        fn appending_a_step_keeps_earlier_content(k in 0usize..WALK.len()) {
            let task = minihouse_1();
            let short = record(&task, &WALK[..k]);
            let long = record(&task, &WALK[..k + 1]);
            let a = render_actor_prompt(&task, &short.view(), &PromptOptions::default()).unwrap();
            let b = render_actor_prompt(&task, &long.view(), &PromptOptions::default()).unwrap();
            let head = a.split(ACTOR_HISTORY_HEADER).next().unwrap();
            prop_assert!(b.starts_with(head));
            for (i, s) in short.steps.iter().enumerate() {
                let line = format!("Action {}: {}\nObservation {}: {}\n", i + 1, s.action, i + 1, s.observation);
                prop_assert!(b.contains(&line));
            }
        }
    }
}
