use super::*;
use crate::env::{self, Session, TaskSpec};
use crate::orchestrator::{self, Driver, Mode, RunConfig};
use crate::policy::{parse_thinker_output, render_thinker_prompt, PolicyHandle, Role, FALLBACK_ACTION};
use crate::util::{fnv1a, mix_seed};

/// Call-seed streams; disjoint from the orchestrator's.
const CLASSIFY_STREAM: u64 = 3 << 32;
const SAMPLE_STREAM: u64 = 4 << 32;
const EVAL_STREAM: u64 = 5 << 32;
const NODE_STREAM: u64 = 6 << 32;

/// Quantum for step-penalty rewards, so repeated subtraction error never
/// reaches an export.
const REWARD_QUANTUM: f64 = 1e6;

/// The four roles of the pipeline.
#[derive(Clone, Debug)]
pub struct PipelineAgents {
    /// Produces the milestone trajectories.
    pub strong: PolicyHandle,
    /// Probes sub-task difficulty and writes the weak prefix.
    pub weak: PolicyHandle,
    pub thinker: PolicyHandle,
    /// Scores thoughts; must not be trainable.
    pub actor: PolicyHandle,
}

#[derive(Clone, Debug)]
pub struct Pipeline {
    pub agents: PipelineAgents,
    pub cfg: PipelineConfig,
    /// Strong-episode settings and prompt options.
    pub run: RunConfig,
    pub parallelism: usize,
}

/// `max(0, 1 - rate * (t - 1))` for step-penalty rewards, 1.0 for binary
/// ones; 0.0 without an improvement.
pub fn reward_value(mode: RewardMode, rate: f64, first_improvement: Option<usize>) -> f64 {
    match (mode, first_improvement) {
        (_, None) => 0.0,
        (RewardMode::Binary, Some(_)) => 1.0,
        (RewardMode::StepPenalty, Some(t)) => {
            let r = (1.0 - rate * t.saturating_sub(1) as f64).max(0.0);
            (r * REWARD_QUANTUM).round() / REWARD_QUANTUM
        }
    }
}

/// One sub-task per strict score increase of `strong`. Sub-task 0 starts
/// from reset; sub-task `j` starts right after the step of increase `j - 1`.
/// A trajectory that never raises the score yields no sub-tasks.
pub fn divide_subtasks(task: &TaskSpec, strong: &Trajectory) -> Result<Vec<SubTask>, PipelineError> {
    if strong.task_id != task.id {
        return Err(PipelineError::integrity(
            Stage::Divide,
            format!("trajectory of `{}` offered for task `{}`", strong.task_id, task.id),
        ));
    }
    let (initial, _) = env::reset(task, strong.seed);
    let initial = env::process_score(&initial, task).value;
    let actions: Vec<String> = strong.actions().map(str::to_string).collect();
    let mut subs = Vec::new();
    let mut prev = initial;
    let mut cut = 0;
    for (i, step) in strong.steps.iter().enumerate() {
        if step.score_after > prev {
            let start = if cut == 0 { initial } else { strong.steps[cut - 1].score_after };
            if step.score_after > start {
                subs.push(SubTask {
                    parent_task_id: task.id.clone(),
                    seed: strong.seed,
                    index: subs.len(),
                    prefix_actions: actions[..cut].to_vec(),
                    start_score: start,
                    target_score: step.score_after,
                    difficulty: Difficulty::Unset,
                    weak_prefix: None,
                });
            }
            cut = i + 1;
        }
        prev = step.score_after;
    }
    for sub in &subs {
        let replayed = env::process_score(&env::replay(task, sub.seed, &sub.prefix_actions), task).value;
        if replayed != sub.start_score {
            return Err(PipelineError::integrity(
                Stage::Divide,
                format!("{}: prefix replays to {replayed}, recorded {}", sub.id(), sub.start_score),
            ));
        }
    }
    if subs.is_empty() {
        log::warn!("{} seed {}: strong trajectory never raised the score; no sub-tasks", task.id, strong.seed);
    }
    Ok(subs)
}

/// Drops easy sub-tasks, keeping order.
pub fn filter_subtasks(subs: Vec<SubTask>) -> Result<Vec<SubTask>, PipelineError> {
    if let Some(s) = subs.iter().find(|s| s.difficulty == Difficulty::Unset) {
        return Err(PipelineError::stage(Stage::Filter, format!("{} was never classified", s.id())));
    }
    Ok(subs.into_iter().filter(|s| s.difficulty != Difficulty::Easy).collect())
}

fn context_seed(id: &str, seed: u64) -> u64 {
    mix_seed(seed ^ fnv1a(id.as_bytes()), 0)
}

impl Pipeline {
    pub fn new(
        agents: PipelineAgents,
        cfg: PipelineConfig,
        run: RunConfig,
        parallelism: usize,
    ) -> Result<Pipeline, PipelineError> {
        cfg.validate().map_err(PipelineError::Config)?;
        if parallelism == 0 {
            return Err(PipelineError::Config("`parallelism` must be positive".into()));
        }
        for (key, p, role) in [
            ("strong", &agents.strong, Role::Actor),
            ("weak", &agents.weak, Role::Actor),
            ("actor", &agents.actor, Role::Actor),
            ("thinker", &agents.thinker, Role::Thinker),
        ] {
            if p.role != role {
                return Err(PipelineError::Config(format!("`{key}` must be a {role} policy")));
            }
        }
        if agents.actor.trainable {
            return Err(PipelineError::Config("`actor` scores thoughts and must be frozen (trainable = false)".into()));
        }
        if agents.thinker.is_remote() && agents.thinker.decode.temperature == 0.0 {
            return Err(PipelineError::Config(
                "`thinker` is remote with temperature 0; its m samples would be identical".into(),
            ));
        }
        Ok(Pipeline { agents, cfg, run, parallelism })
    }

    /// Settings used when driving actors outside a full episode.
    fn driving(&self) -> RunConfig {
        RunConfig { mode: Mode::React, ..self.run.clone() }
    }

    pub fn strong_episode(&self, task: &TaskSpec, seed: u64) -> Result<Trajectory, PipelineError> {
        let cfg = RunConfig { seed, ..self.driving() };
        let traj = orchestrator::run_react(&self.agents.strong, task, &cfg)
            .map_err(|e| PipelineError::stage(Stage::Strong, e))?;
        if let Some(abort) = &traj.abort {
            return Err(PipelineError::skipped(Stage::Strong, abort));
        }
        Ok(traj)
    }

    fn completed(&self, sub: &SubTask, score: env::Score) -> bool {
        match self.cfg.completion {
            Completion::AnyImprovement => score > sub.start_score,
            Completion::NextMilestone => score >= sub.target_score,
        }
    }

    /// 1-based weak step at which `sub` was completed.
    pub fn weak_completion(&self, sub: &SubTask, weak: &Trajectory) -> Option<usize> {
        let n = sub.prefix_actions.len();
        weak.steps.iter().skip(n).position(|s| self.completed(sub, s.score_after)).map(|i| i + 1)
    }

    /// Runs the weak policy from the sub-task's prefix for up to `y` steps.
    /// The returned trajectory holds the prefix followed by the weak steps.
    pub fn classify(
        &self,
        task: &TaskSpec,
        sub: &SubTask,
        strong: &Trajectory,
    ) -> Result<(Difficulty, Trajectory), PipelineError> {
        let n = sub.prefix_actions.len();
        if strong.steps.len() < n || !strong.actions().zip(&sub.prefix_actions).all(|(a, b)| a == b) {
            return Err(PipelineError::integrity(
                Stage::Classify,
                format!("{} is not a prefix of its strong run", sub.id()),
            ));
        }
        let mut traj = strong.prefix(n);
        let mut session = Session::replayed(task, sub.seed, &sub.prefix_actions);
        if session.score() != sub.start_score {
            return Err(PipelineError::integrity(
                Stage::Classify,
                format!("{}: prefix replays to {}, recorded {}", sub.id(), session.score(), sub.start_score),
            ));
        }
        let cfg = self.driving();
        let seed = context_seed(&sub.id(), sub.seed);
        let driver = Driver {
            actor: &self.agents.weak,
            thinker: None,
            cfg: &cfg,
            call_seed: mix_seed(seed, CLASSIFY_STREAM),
            thinker_seed: 0,
            frozen: true,
        };
        driver
            .drive(task, &mut session, &mut traj, n + self.cfg.y, |t| {
                t.steps.last().is_some_and(|s| self.completed(sub, s.score_after))
            })
            .map_err(|e| PipelineError::stage(Stage::Classify, e))?;
        if let Some(abort) = &traj.abort {
            return Err(PipelineError::skipped(Stage::Classify, format!("{}: {abort}", sub.id())));
        }
        let difficulty = match self.weak_completion(sub, &traj) {
            Some(k) if k <= self.cfg.x => Difficulty::Easy,
            Some(k) if k <= self.cfg.y => Difficulty::Medium,
            _ => Difficulty::Hard,
        };
        Ok((difficulty, traj))
    }

    /// Sub-task prefix plus the first `x` weak actions, replayed, and the
    /// thinker prompt over that history.
    pub fn rollout_context(
        &self,
        task: &TaskSpec,
        sub: &SubTask,
        weak: &Trajectory,
    ) -> Result<RolloutContext, PipelineError> {
        let id = sub.id();
        let n = sub.prefix_actions.len();
        let x = self.cfg.x;
        let mut weak_prefix: Vec<String> = weak.actions().skip(n).take(x).map(str::to_string).collect();
        let recorded = n + weak_prefix.len();
        let padded = x - weak_prefix.len();
        if padded > 0 {
            match self.cfg.padding {
                Padding::Skip => {
                    return Err(PipelineError::skipped(
                        Stage::Context,
                        format!("{id}: weak run has {} steps, fewer than x = {x}", weak_prefix.len()),
                    ))
                }
                Padding::RepeatLast => {
                    let filler = weak_prefix
                        .last()
                        .or(sub.prefix_actions.last())
                        .cloned()
                        .unwrap_or_else(|| FALLBACK_ACTION.to_string());
                    weak_prefix.resize(x, filler);
                }
            }
        }
        let (mut session, obs) = Session::start(task, sub.seed);
        let mut history = Trajectory::new(&task.id, sub.seed, obs.text);
        for action in sub.prefix_actions.iter().chain(&weak_prefix) {
            let (obs, _) = session.step(action);
            history.steps.push(StepRecord {
                action: action.clone(),
                observation: obs.text,
                score_after: session.score(),
                wall_ms: 0,
            });
        }
        let diverged = history.initial_observation != weak.initial_observation
            || history.steps[..recorded]
                .iter()
                .zip(&weak.steps)
                .any(|(a, b)| a.observation != b.observation || a.score_after != b.score_after);
        if diverged {
            return Err(PipelineError::integrity(
                Stage::Context,
                format!("{id}: replay diverges from the recorded run"),
            ));
        }
        history.outcome.process_score = session.score();
        history.outcome.success = session.score().is_full();
        history.outcome.steps_used = history.steps.len();
        let prompt = render_thinker_prompt(task, &history.view(), &self.run.prompt)
            .map_err(|e| PipelineError::stage(Stage::Context, e))?;
        let mut sub = sub.clone();
        sub.weak_prefix = Some(weak_prefix);
        Ok(RolloutContext { id, sub, baseline: session.score(), history, prompt, padded })
    }

    /// `m` parsed thoughts on the context prompt. Each sample gets
    /// `sample_retries` extra tries; if one still fails the whole group is
    /// dropped.
    pub fn sample_thoughts(&self, ctx: &RolloutContext) -> Result<Vec<String>, PipelineError> {
        let base = context_seed(&ctx.id, ctx.sub.seed);
        let tries = self.cfg.sample_retries + 1;
        let mut thoughts = Vec::with_capacity(self.cfg.m);
        for j in 0..self.cfg.m {
            let mut last_error = String::new();
            for r in 0..tries {
                let seed = mix_seed(base, SAMPLE_STREAM + (j * tries + r) as u64);
                let raw = self
                    .agents
                    .thinker
                    .complete(&ctx.prompt, seed)
                    .map_err(|e| PipelineError::skipped(Stage::Sample, format!("{}: {e}", ctx.id)))?;
                match parse_thinker_output(&raw) {
                    Ok(t) => {
                        thoughts.push(t);
                        break;
                    }
                    Err(e) => last_error = e.to_string(),
                }
            }
            if thoughts.len() == j {
                return Err(PipelineError::skipped(
                    Stage::Sample,
                    format!("{}: sample {j} unparseable after {tries} tries: {last_error}", ctx.id),
                ));
            }
        }
        Ok(thoughts)
    }

    /// Lets the frozen actor continue for at most `y - x` steps with
    /// `thought` anchored at the context boundary. A backend failure is
    /// retried once with a fresh call seed.
    pub fn evaluate_thought(
        &self,
        task: &TaskSpec,
        ctx: &RolloutContext,
        thought: &str,
        j: usize,
    ) -> Result<RewardRecord, PipelineError> {
        let n = ctx.history.steps.len();
        let actions: Vec<&str> = ctx.history.actions().collect();
        let cfg = self.driving();
        let base = context_seed(&ctx.id, ctx.sub.seed);
        let mut failure = String::new();
        for attempt in 0..2 {
            let mut traj = ctx.history.clone();
            traj.thoughts.push(DeepThought { text: thought.to_string(), anchor_step: n });
            let mut session = Session::replayed(task, ctx.sub.seed, &actions);
            let driver = Driver {
                actor: &self.agents.actor,
                thinker: None,
                cfg: &cfg,
                call_seed: mix_seed(base, EVAL_STREAM + (attempt * self.cfg.m + j) as u64),
                thinker_seed: 0,
                frozen: true,
            };
            driver
                .drive(task, &mut session, &mut traj, n + self.cfg.continuation_steps(), |t| {
                    t.steps.last().is_some_and(|s| s.score_after > ctx.baseline)
                })
                .map_err(|e| PipelineError::stage(Stage::Evaluate, e))?;
            if let Some(abort) = traj.abort.take() {
                failure = abort;
                continue;
            }
            let continuation = traj.steps[n..].to_vec();
            let first_improvement = continuation.iter().position(|s| s.score_after > ctx.baseline).map(|i| i + 1);
            return Ok(RewardRecord {
                context_id: ctx.id.clone(),
                thought: traj.thoughts[traj.thoughts.len() - 1].clone(),
                continuation,
                first_improvement,
                reward: reward_value(self.cfg.reward_mode, self.cfg.penalty_rate, first_improvement),
                rollout: traj,
            });
        }
        Err(PipelineError::skipped(Stage::Evaluate, format!("{}: frozen actor failed twice: {failure}", ctx.id)))
    }

    /// Samples and scores `m` thoughts on one context.
    pub fn rollout_group(&self, task: &TaskSpec, ctx: &RolloutContext) -> Result<RolloutGroup, PipelineError> {
        let thoughts = self.sample_thoughts(ctx)?;
        let records = thoughts
            .iter()
            .enumerate()
            .map(|(j, t)| self.evaluate_thought(task, ctx, t, j))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(RolloutGroup {
            context_id: ctx.id.clone(),
            prompt: ctx.prompt.clone(),
            meta: GroupMeta {
                task_id: task.id.clone(),
                seed: ctx.sub.seed,
                subtask: Some(ctx.sub.index),
                difficulty: ctx.sub.difficulty,
                start_score: ctx.sub.start_score,
                target_score: Some(ctx.sub.target_score),
                prefix_len: ctx.sub.prefix_actions.len(),
                weak_prefix: ctx.sub.weak_prefix.clone().unwrap_or_default(),
                padded: ctx.padded,
                reward_mode: self.cfg.reward_mode,
                first_improvement: records.iter().map(|r| r.first_improvement).collect(),
                nodes: 1,
                extra_nodes: Vec::new(),
            },
            records,
        })
    }

    /// `m` rollouts from reset with the thinker firing at the node interval
    /// up to `rollout_max_steps`. Every node of a rollout shares the reward
    /// earned after its first node. The group prompt is the first node's,
    /// which must be identical across rollouts.
    pub fn multinode_group(&self, task: &TaskSpec, seed: u64) -> Result<RolloutGroup, PipelineError> {
        let nodes = self.cfg.nodes_per_trajectory;
        let interval =
            self.cfg.node_interval().map_err(PipelineError::Config)?.ok_or_else(|| {
                PipelineError::Config("multi-node rollouts need `nodes_per_trajectory` of 2 or 4".into())
            })?;
        let cfg = RunConfig {
            mode: Mode::Ttexplore,
            n_trigger: interval,
            max_steps: self.cfg.rollout_max_steps,
            trigger_policy: orchestrator::TriggerPolicy::Fixed,
            ..self.run.clone()
        };
        let id = format!("{}-s{seed}-n{nodes}", task.id);
        let base = context_seed(&id, seed);
        let mut records = Vec::with_capacity(self.cfg.m);
        let mut extra_nodes = Vec::with_capacity(self.cfg.m);
        let mut prompt: Option<String> = None;
        let mut start_score = env::Score::ZERO;
        for j in 0..self.cfg.m {
            let (mut session, obs) = Session::start(task, seed);
            let mut traj = Trajectory::new(&task.id, seed, obs.text);
            let driver = Driver {
                actor: &self.agents.actor,
                thinker: Some(&self.agents.thinker),
                cfg: &cfg,
                call_seed: mix_seed(base, EVAL_STREAM),
                thinker_seed: mix_seed(base, NODE_STREAM + j as u64),
                frozen: true,
            };
            driver
                .drive(task, &mut session, &mut traj, cfg.max_steps, |_| false)
                .map_err(|e| PipelineError::stage(Stage::Evaluate, e))?;
            if let Some(abort) = &traj.abort {
                return Err(PipelineError::skipped(Stage::Evaluate, format!("{id}: {abort}")));
            }
            let Some(first) = traj.thoughts.first().cloned() else {
                return Err(PipelineError::skipped(
                    Stage::Sample,
                    format!("{id}: rollout {j} reached no thinking node"),
                ));
            };
            let node_prompt = |i: usize| {
                render_thinker_prompt(task, &traj.thinker_view(i), &self.run.prompt)
                    .map_err(|e| PipelineError::stage(Stage::Context, e))
            };
            let p = node_prompt(0)?;
            match &prompt {
                None => prompt = Some(p),
                Some(q) if *q != p => {
                    return Err(PipelineError::skipped(Stage::Context, format!("{id}: first-node prompts diverged")))
                }
                Some(_) => {}
            }
            let anchor = first.anchor_step;
            let baseline = traj.steps[anchor - 1].score_after;
            start_score = baseline;
            let continuation = traj.steps[anchor..].to_vec();
            let first_improvement = continuation.iter().position(|s| s.score_after > baseline).map(|i| i + 1);
            let extras = (1..traj.thoughts.len())
                .map(|i| {
                    Ok(ExtraNode {
                        anchor_step: traj.thoughts[i].anchor_step,
                        prompt: node_prompt(i)?,
                        completion: traj.thoughts[i].text.clone(),
                    })
                })
                .collect::<Result<Vec<_>, PipelineError>>()?;
            extra_nodes.push(extras);
            records.push(RewardRecord {
                context_id: id.clone(),
                thought: first,
                continuation,
                first_improvement,
                reward: reward_value(self.cfg.reward_mode, self.cfg.penalty_rate, first_improvement),
                rollout: traj,
            });
        }
        Ok(RolloutGroup {
            context_id: id,
            prompt: prompt.expect("m >= 1"),
            meta: GroupMeta {
                task_id: task.id.clone(),
                seed,
                subtask: None,
                difficulty: Difficulty::Unset,
                start_score,
                target_score: None,
                prefix_len: 0,
                weak_prefix: Vec::new(),
                padded: 0,
                reward_mode: self.cfg.reward_mode,
                first_improvement: records.iter().map(|r| r.first_improvement).collect(),
                nodes,
                extra_nodes,
            },
            records,
        })
    }
}
