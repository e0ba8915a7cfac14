use std::sync::Mutex;

use super::*;
use crate::env::fixtures::{keymaze_1, minihouse_1, minihouse_2};
use crate::env::{self, Score};
use crate::policy::prompt::read_prompt;
use crate::policy::{BackendDescriptor, Completer, DecodeParams, PromptOptions, ScriptedRegistry};

fn actor(name: &str) -> PolicyHandle {
    PolicyHandle::scripted(Role::Actor, name, &ScriptedRegistry::builtin()).unwrap()
}

fn thinker(name: &str) -> PolicyHandle {
    PolicyHandle::scripted(Role::Thinker, name, &ScriptedRegistry::builtin()).unwrap()
}

fn cfg(mode: Mode) -> RunConfig {
    RunConfig::with_mode(mode)
}

const MH1_PLAN: [&str; 6] = [
    "go to kitchen",
    "go to fridge 1",
    "open fridge 1",
    "take apple 1 from fridge 1",
    "go to table 1",
    "put apple 1 on table 1",
];

/// Test backend: each episode plays the first `budget` moves of the
/// MiniHouse-1 plan, then looks around. Budgets are consumed one per
/// episode, in order.
struct Budgeted {
    budgets: Mutex<Vec<usize>>,
    current: Mutex<usize>,
}

impl Budgeted {
    fn handle(budgets: &[usize]) -> PolicyHandle {
        let mut b = budgets.to_vec();
        b.reverse();
        let backend = Budgeted { budgets: Mutex::new(b), current: Mutex::new(0) };
        PolicyHandle::new(
            Role::Actor,
            BackendDescriptor::Scripted { name: "budgeted".into() },
            DecodeParams::default(),
            Arc::new(backend),
        )
    }
}

impl Completer for Budgeted {
    fn complete(&self, prompt: &str, _: &DecodeParams, _: u64) -> Result<String, PolicyError> {
        let view = read_prompt(prompt).unwrap();
        if view.kind == crate::policy::prompt::PromptKind::Reflection {
            return Ok("<reflection>try harder</reflection>".into());
        }
        let t = view.step_count();
        if t == 0 {
            *self.current.lock().unwrap() = self.budgets.lock().unwrap().pop().unwrap();
        }
        let budget = *self.current.lock().unwrap();
        let action = if t < budget { MH1_PLAN[t] } else { "look around" };
        Ok(format!("<think>t</think><answer>{action}</answer>"))
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

#[test]
fn greedy_react_stalls_on_minihouse_1() {
    let traj = run_react(&actor("greedy-actor"), &minihouse_1(), &cfg(Mode::React)).unwrap();
    assert!(traj.score() < Score::FULL);
    assert_eq!(traj.outcome.steps_used, 50);
    assert!(traj.thoughts.is_empty());
    assert!(!traj.outcome.success);
}

#[test]
fn obedient_actor_without_thoughts_loops() {
    let traj = run_react(&actor("obedient-actor"), &minihouse_1(), &cfg(Mode::React)).unwrap();
    assert!(traj.actions().all(|a| a == "look around"));
    assert_eq!(traj.score(), Score::ZERO);
}

#[test]
fn fixed_trigger_fires_eight_times_in_fifty_steps() {
    let traj =
        run_ttexplore(&actor("loop-actor"), &thinker("null-thinker"), &minihouse_1(), &cfg(Mode::Ttexplore)).unwrap();
    assert_eq!(traj.outcome.steps_used, 50);
    assert_eq!(traj.outcome.thinker_calls, 8);
    let anchors: Vec<usize> = traj.thoughts.iter().map(|t| t.anchor_step).collect();
    assert_eq!(anchors, [6, 12, 18, 24, 30, 36, 42, 48]);
}

#[test]
fn early_finish_skips_the_thinker() {
    let traj = run_ttexplore(&actor("oracle-actor"), &thinker("oracle-thinker"), &minihouse_1(), &cfg(Mode::Ttexplore))
        .unwrap();
    assert!(traj.outcome.success);
    assert_eq!(traj.outcome.steps_used, 6);
    assert_eq!(traj.outcome.thinker_calls, 0);
    let c = RunConfig { n_trigger: 4, ..cfg(Mode::Ttexplore) };
    let traj = run_ttexplore(&actor("oracle-actor"), &thinker("null-thinker"), &minihouse_1(), &c).unwrap();
    assert_eq!(traj.outcome.thinker_calls, 1);
    assert_eq!(traj.outcome.steps_used, 6);
}

#[test]
fn oracle_thinker_unblocks_greedy_actor_on_every_fixture() {
    for task in [minihouse_1(), minihouse_2(), keymaze_1()] {
        for seed in 0..5 {
            let c = RunConfig { seed, ..cfg(Mode::Ttexplore) };
            let tt = run_ttexplore(&actor("greedy-actor"), &thinker("oracle-thinker"), &task, &c).unwrap();
            let c = RunConfig { seed, ..cfg(Mode::React) };
            let react = run_react(&actor("greedy-actor"), &task, &c).unwrap();
            assert!(tt.outcome.success, "{} seed {seed}", task.id);
            assert!(tt.score() > react.score(), "{} seed {seed}", task.id);
            assert_eq!(tt.outcome.thinker_calls, 1, "{}", task.id);
        }
    }
}

#[test]
fn null_thinker_does_not_help() {
    let traj =
        run_ttexplore(&actor("greedy-actor"), &thinker("null-thinker"), &minihouse_1(), &cfg(Mode::Ttexplore)).unwrap();
    assert!(!traj.outcome.success);
    assert_eq!(traj.outcome.thinker_calls, 8);
}

#[test]
fn thoughts_persist_in_later_actor_prompts() {
    let traj =
        run_ttexplore(&actor("loop-actor"), &thinker("oracle-thinker"), &keymaze_1(), &cfg(Mode::Ttexplore)).unwrap();
    let task = keymaze_1();
    for t in 0..=traj.steps.len() {
        let prompt = render_actor_prompt(&task, &traj.view_upto(t), &PromptOptions::default()).unwrap();
        for d in traj.thoughts.iter().filter(|d| d.anchor_step <= t) {
            assert!(prompt.contains(&d.text), "thought at {} missing from prompt {t}", d.anchor_step);
        }
    }
    let budget = PromptOptions { char_budget: Some(2_000), ..PromptOptions::default() };
    let prompt = render_actor_prompt(&task, &traj.view(), &budget).unwrap();
    assert!(traj.thoughts.iter().all(|d| prompt.contains(&d.text)));
}

#[test]
fn recorded_scores_match_replay() {
    for task in [minihouse_1(), minihouse_2(), keymaze_1()] {
        let c = RunConfig { seed: 3, ..cfg(Mode::Ttexplore) };
        let traj = run_ttexplore(&actor("greedy-actor"), &thinker("sampling-thinker"), &task, &c).unwrap();
        let actions: Vec<&str> = traj.actions().collect();
        for (i, s) in traj.steps.iter().enumerate() {
            let state = env::replay(&task, 3, &actions[..=i]);
            assert_eq!(env::process_score(&state, &task).value, s.score_after);
        }
        assert_eq!(traj.outcome.success, traj.score().is_full());
        let anchors: Vec<usize> = traj.thoughts.iter().map(|t| t.anchor_step).collect();
        assert!(anchors.windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn unparseable_actor_falls_back_to_looking_around() {
    let c = RunConfig { max_steps: 5, ..cfg(Mode::React) };
    let traj = run_react(&actor("babble-actor"), &minihouse_1(), &c).unwrap();
    assert!(traj.actions().all(|a| a == FALLBACK_ACTION));
    assert_eq!(traj.incidents.len(), 5);
    assert!(traj.incidents.iter().all(|i| i.kind == IncidentKind::ActorParseFallback));
}

#[test]
fn broken_thinker_is_an_incident_not_an_abort() {
    let c = RunConfig { max_steps: 13, ..cfg(Mode::Ttexplore) };
    let traj = run_ttexplore(&actor("loop-actor"), &thinker("broken-thinker"), &minihouse_1(), &c).unwrap();
    assert_eq!(traj.outcome.steps_used, 13);
    assert!(traj.thoughts.is_empty());
    assert_eq!(traj.outcome.thinker_calls, 2);
    assert_eq!(traj.incidents.len(), 2);
    assert!(traj.abort.is_none());
}

#[test]
fn on_failure_trigger_needs_a_recent_rejection() {
    let c = RunConfig { trigger_policy: TriggerPolicy::OnFailure, ..cfg(Mode::Ttexplore) };
    let traj = run_ttexplore(&actor("loop-actor"), &thinker("null-thinker"), &minihouse_1(), &c).unwrap();
    assert_eq!(traj.outcome.thinker_calls, 0);
    let traj = run_ttexplore(&actor("greedy-actor"), &thinker("null-thinker"), &minihouse_1(), &c).unwrap();
    assert_eq!(traj.thoughts.first().map(|t| t.anchor_step), Some(12));
}

#[test]
fn mode_and_role_mismatches_are_config_errors() {
    assert!(matches!(run_react(&actor("loop-actor"), &minihouse_1(), &cfg(Mode::Ttexplore)), Err(RunError::Config(_))));
    let wrong = run_ttexplore(&actor("loop-actor"), &actor("loop-actor"), &minihouse_1(), &cfg(Mode::Ttexplore));
    assert!(matches!(wrong, Err(RunError::Config(_))));
    let agents = Agents::new(actor("loop-actor"), None);
    assert!(matches!(run(&agents, &minihouse_1(), &cfg(Mode::Ttexplore)), Err(RunError::Config(_))));
}

#[test]
fn reflexion_stops_at_first_success() {
    let traj = run_reflexion(&actor("oracle-actor"), &minihouse_1(), &cfg(Mode::Reflexion)).unwrap();
    assert!(traj.outcome.success);
    assert_eq!(traj.outcome.attempts, 1);
    assert!(traj.reflections.is_empty());
}

#[test]
fn reflexion_returns_the_best_attempt() {
    let policy = Budgeted::handle(&[0, 3, 3, 4, 3]);
    let traj = run_reflexion(&policy, &minihouse_1(), &RunConfig { max_steps: 8, ..cfg(Mode::Reflexion) }).unwrap();
    assert_eq!(traj.score().to_string(), "66.67");
    assert_eq!(traj.outcome.attempts, 5);
    assert_eq!(traj.reflections.len(), 3, "the fourth attempt carries three reflections");
}

#[test]
fn reflexion_attempts_start_from_reset() {
    let traj = run_reflexion(&actor("greedy-actor"), &minihouse_1(), &cfg(Mode::Reflexion)).unwrap();
    assert_eq!(traj.outcome.attempts, 5);
    assert_eq!(traj.steps[0].action, "go to kitchen");
    assert_eq!(traj.reflections.len(), 0, "ties keep the first attempt");
}

#[test]
fn best_of_n_picks_the_top_score() {
    let inner = RunConfig { max_steps: 8, ..cfg(Mode::React) };
    let agents = Agents::new(Budgeted::handle(&[0, 6, 3, 0, 4]), None);
    let r = run_best_of_n_detailed(&inner, &agents, &minihouse_1(), 5, 0.7).unwrap();
    let scores: Vec<String> = r.samples.iter().map(|s| s.score().to_string()).collect();
    assert_eq!(scores, ["0.00", "100.00", "33.33", "0.00", "66.67"]);
    assert_eq!(r.chosen, 1);
    let seeds: Vec<u64> = r.samples.iter().map(|s| s.seed).collect();
    assert_eq!(seeds, [0, 1, 2, 3, 4]);
    let agents = Agents::new(Budgeted::handle(&[0, 0, 0]), None);
    assert_eq!(run_best_of_n_detailed(&inner, &agents, &minihouse_1(), 3, 0.7).unwrap().chosen, 0);
}

#[test]
fn best_of_one_equals_the_inner_run() {
    let agents = Agents::new(actor("random-actor"), Some(thinker("sampling-thinker")));
    for mode in [Mode::React, Mode::Ttexplore, Mode::Reflexion] {
        let inner = RunConfig { seed: 11, max_steps: 20, ..cfg(mode) };
        let one = run_best_of_n(&inner, &agents, &minihouse_1(), 1, 0.7).unwrap();
        assert_eq!(one, run(&agents, &minihouse_1(), &inner).unwrap(), "{mode}");
    }
}

#[test]
fn aborted_samples_lose_to_completed_ones() {
    let mut a = Trajectory::new("t", 0, "o".into());
    a.outcome.process_score = Score::FULL;
    a.abort = Some("boom".into());
    let b = Trajectory::new("t", 1, "o".into());
    assert_eq!(select_best(&[a.clone(), b]), Some(1));
    assert_eq!(select_best(&[a.clone(), a]), Some(0));
}

#[test]
fn batch_preserves_order_and_persists_first() {
    struct Recorder(Mutex<Vec<usize>>);
    impl EpisodeSink for Recorder {
        fn persist(&self, r: &EpisodeResult) -> Result<(), String> {
            self.0.lock().unwrap().push(r.index);
            Ok(())
        }
    }
    let tasks: Vec<Arc<TaskSpec>> = [minihouse_1(), minihouse_2()].into_iter().map(Arc::new).collect();
    let jobs = jobs(&tasks, &[0, 1, 2, 3, 4]);
    let agents = Agents::new(actor("greedy-actor"), Some(thinker("oracle-thinker")));
    let rec = Recorder(Mutex::new(Vec::new()));
    let results = run_batch(&jobs, &agents, &cfg(Mode::Ttexplore), 4, Some(&rec)).unwrap();
    assert_eq!(results.len(), 10);
    for (i, r) in results.iter().enumerate() {
        assert_eq!(r.index, i);
        assert_eq!(r.trajectory.task_id, jobs[i].task.id);
        assert_eq!(r.trajectory.seed, jobs[i].seed);
    }
    let mut seen = rec.0.into_inner().unwrap();
    seen.sort();
    assert_eq!(seen, (0..10).collect::<Vec<_>>());
    let again = run_batch(&jobs, &agents, &cfg(Mode::Ttexplore), 1, None).unwrap();
    assert_eq!(results, again);
}

#[test]
fn sink_failure_fails_the_batch() {
    struct Broken;
    impl EpisodeSink for Broken {
        fn persist(&self, _: &EpisodeResult) -> Result<(), String> {
            Err("disk full".into())
        }
    }
    let tasks = vec![Arc::new(minihouse_1())];
    let agents = Agents::new(actor("loop-actor"), None);
    let err = run_batch(&jobs(&tasks, &[0]), &agents, &cfg(Mode::React), 1, Some(&Broken)).unwrap_err();
    assert!(matches!(err, RunError::Persist { index: 0, .. }));
}

#[test]
fn success_rate_is_the_success_fraction() {
    let tasks: Vec<Arc<TaskSpec>> = [minihouse_1(), keymaze_1()].into_iter().map(Arc::new).collect();
    let agents = Agents::new(actor("oracle-actor"), None);
    let mut results = run_batch(&jobs(&tasks, &[0]), &agents, &cfg(Mode::React), 2, None).unwrap();
    let agents = Agents::new(actor("loop-actor"), None);
    results.extend(run_batch(&jobs(&tasks, &[0]), &agents, &cfg(Mode::React), 2, None).unwrap());
    let summaries: Vec<_> = results.iter().map(EpisodeResult::summary).collect();
    let table = metrics::aggregate(&summaries).unwrap();
    assert_eq!(table.row("all").unwrap().success_rate, 50.0);
}
