//! Episode runners: ReAct, TTExplore (actor plus periodic thinker),
//! Reflexion retries, Best-of-N sampling, and a batch driver.
//!
//! A single episode is strictly sequential. Batches fan episodes out over a
//! bounded worker pool and return results in input order.

mod config;

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{Mode, RunConfig, Timing, TriggerPolicy};

use crate::env::{Session, TaskSpec, NOTHING_HAPPENED};
use crate::exec;
use crate::metrics::{self, EpisodeSummary, ExplorationMetrics};
use crate::policy::{
    parse_actor_output, parse_reflection, parse_thinker_output, render_actor_prompt, render_reflection_prompt,
    render_thinker_prompt, PolicyError, PolicyHandle, Role, FALLBACK_ACTION,
};
use crate::trajectory::{DeepThought, Incident, IncidentKind, StepRecord, Trajectory};
use crate::util::mix_seed;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("cannot persist episode {index}: {message}")]
    Persist { index: usize, message: String },
}

/// Call-seed streams, so actor, thinker and reflection calls never share
/// seeds within an episode.
const ACTOR_STREAM: u64 = 0;
const THINKER_STREAM: u64 = 1 << 32;
const REFLECTION_STREAM: u64 = 2 << 32;

/// The policies an episode needs.
#[derive(Clone, Debug)]
pub struct Agents {
    pub actor: PolicyHandle,
    pub thinker: Option<PolicyHandle>,
}

impl Agents {
    pub fn new(actor: PolicyHandle, thinker: Option<PolicyHandle>) -> Self {
        Agents { actor, thinker }
    }

    fn deterministic(&self) -> bool {
        self.actor.is_deterministic() && self.thinker.as_ref().is_none_or(|t| t.is_deterministic())
    }

    fn with_temperature(&self, temperature: f64) -> Agents {
        Agents {
            actor: self.actor.with_temperature(temperature),
            thinker: self.thinker.as_ref().map(|t| t.with_temperature(temperature)),
        }
    }
}

/// Millisecond stopwatch; a frozen one always reads zero so that stores are
/// byte-reproducible.
#[derive(Clone, Copy)]
struct Stopwatch(Option<Instant>);

impl Stopwatch {
    fn start(frozen: bool) -> Self {
        Stopwatch((!frozen).then(Instant::now))
    }

    fn ms(&self) -> u64 {
        self.0.map(|t| t.elapsed().as_millis() as u64).unwrap_or(0)
    }
}

fn frozen(cfg: &RunConfig, agents: &Agents) -> bool {
    match cfg.timing {
        Timing::Frozen => true,
        Timing::Wall => false,
        Timing::Auto => agents.deterministic(),
    }
}

/// Calls a policy, parses its output, and retries once on a parse failure
/// with the identical prompt.
fn call_parsed<T>(
    policy: &PolicyHandle,
    prompt: &str,
    seed: u64,
    parse: impl Fn(&str) -> Result<T, crate::policy::ParseError>,
) -> Result<Result<T, crate::policy::ParseError>, PolicyError> {
    let raw = policy.complete(prompt, seed)?;
    match parse(&raw) {
        Ok(v) => Ok(Ok(v)),
        Err(_) => {
            let raw = policy.complete(prompt, seed)?;
            Ok(parse(&raw))
        }
    }
}

fn should_trigger(cfg: &RunConfig, traj: &Trajectory, t: usize) -> bool {
    if !t.is_multiple_of(cfg.n_trigger) || t >= cfg.max_steps {
        return false;
    }
    match cfg.trigger_policy {
        TriggerPolicy::Fixed => true,
        TriggerPolicy::OnFailure => {
            traj.steps.iter().rev().take(cfg.n_trigger).any(|s| s.observation == NOTHING_HAPPENED)
        }
    }
}

/// One episode. `thinker` enables TTExplore triggering. Backend failures of
/// the actor end the episode with `abort` set; thinker failures are logged
/// as incidents and the episode continues without a thought.
fn episode(
    actor: &PolicyHandle,
    thinker: Option<&PolicyHandle>,
    task: &TaskSpec,
    cfg: &RunConfig,
    seed: u64,
    reflections: &[String],
    frozen: bool,
) -> Result<Trajectory, RunError> {
    let clock = Stopwatch::start(frozen);
    let (mut session, obs) = Session::start(task, seed);
    let mut traj = Trajectory::new(&task.id, seed, obs.text);
    traj.reflections = reflections.to_vec();
    let driver = Driver { actor, thinker, cfg, call_seed: seed, thinker_seed: seed, frozen };
    driver.drive(task, &mut session, &mut traj, cfg.max_steps, |_| false)?;
    traj.outcome.wall_ms_total = clock.ms();
    Ok(traj)
}

/// Advances an episode that may already hold history. Shared by the
/// runners and by the pipeline, which resumes from replayed prefixes.
pub(crate) struct Driver<'a> {
    pub actor: &'a PolicyHandle,
    pub thinker: Option<&'a PolicyHandle>,
    /// Trigger settings and prompt options.
    pub cfg: &'a RunConfig,
    /// Base of every actor call seed; call seeds also mix in the step index.
    pub call_seed: u64,
    /// As `call_seed`, for thinker calls.
    pub thinker_seed: u64,
    pub frozen: bool,
}

impl Driver<'_> {
    /// Steps until `traj` holds `limit` steps, the episode ends, the actor
    /// backend fails, or `stop` returns true after a step. The outcome is
    /// refreshed from `session` except for `wall_ms_total`.
    pub fn drive(
        &self,
        task: &TaskSpec,
        session: &mut Session,
        traj: &mut Trajectory,
        limit: usize,
        stop: impl Fn(&Trajectory) -> bool,
    ) -> Result<(), RunError> {
        while traj.steps.len() < limit && !session.is_done() {
            let t = traj.steps.len() + 1;
            let step_clock = Stopwatch::start(self.frozen);
            let prompt = render_actor_prompt(task, &traj.view(), &self.cfg.prompt)?;
            let seed = mix_seed(self.call_seed, ACTOR_STREAM + t as u64);
            let action = match call_parsed(self.actor, &prompt, seed, parse_actor_output) {
                Ok(Ok(out)) => out.action,
                Ok(Err(e)) => {
                    traj.incidents.push(Incident {
                        step: t - 1,
                        kind: IncidentKind::ActorParseFallback,
                        detail: e.to_string(),
                    });
                    log::warn!("{}: actor output unparseable at step {t}, playing `{FALLBACK_ACTION}`", task.id);
                    FALLBACK_ACTION.to_string()
                }
                Err(e) => {
                    log::error!("{}: actor backend failed at step {t}: {e}", task.id);
                    traj.abort = Some(format!("actor backend failure at step {t}: {e}"));
                    break;
                }
            };
            let (obs, done) = session.step(&action);
            traj.steps.push(StepRecord {
                action,
                observation: obs.text,
                score_after: session.score(),
                wall_ms: step_clock.ms(),
            });
            if done || stop(traj) {
                break;
            }
            if let Some(thinker) = self.thinker {
                if should_trigger(self.cfg, traj, t) {
                    traj.outcome.thinker_calls += 1;
                    think(thinker, task, self.cfg, self.thinker_seed, t, traj)?;
                }
            }
        }
        traj.outcome.process_score = session.score();
        traj.outcome.success = session.score().is_full();
        traj.outcome.steps_used = traj.steps.len();
        Ok(())
    }
}

fn think(
    thinker: &PolicyHandle,
    task: &TaskSpec,
    cfg: &RunConfig,
    seed: u64,
    t: usize,
    traj: &mut Trajectory,
) -> Result<(), RunError> {
    let prompt = render_thinker_prompt(task, &traj.view(), &cfg.prompt)?;
    match call_parsed(thinker, &prompt, mix_seed(seed, THINKER_STREAM + t as u64), parse_thinker_output) {
        Ok(Ok(text)) => traj.thoughts.push(DeepThought { text, anchor_step: t }),
        Ok(Err(e)) => {
            log::warn!("{}: thinker output unparseable after step {t}", task.id);
            traj.incidents.push(Incident { step: t, kind: IncidentKind::ThinkerParseFailure, detail: e.to_string() });
        }
        Err(e) => {
            log::warn!("{}: thinker backend failed after step {t}: {e}", task.id);
            traj.incidents.push(Incident { step: t, kind: IncidentKind::ThinkerBackendFailure, detail: e.to_string() });
        }
    }
    Ok(())
}

fn expect_mode(cfg: &RunConfig, mode: Mode) -> Result<(), RunError> {
    cfg.validate().map_err(RunError::Config)?;
    if cfg.mode != mode {
        return Err(RunError::Config(format!("expected mode `{mode}`, got `{}`", cfg.mode)));
    }
    Ok(())
}

fn expect_role(p: &PolicyHandle, role: Role) -> Result<(), RunError> {
    if p.role != role {
        return Err(RunError::Config(format!("a {} policy was supplied where a {role} is required", p.role)));
    }
    Ok(())
}

/// Plain actor loop; records no thoughts.
pub fn run_react(actor: &PolicyHandle, task: &TaskSpec, cfg: &RunConfig) -> Result<Trajectory, RunError> {
    expect_mode(cfg, Mode::React)?;
    expect_role(actor, Role::Actor)?;
    let agents = Agents::new(actor.clone(), None);
    episode(actor, None, task, cfg, cfg.seed, &[], frozen(cfg, &agents))
}

/// Actor loop with a thinker call after every `n_trigger` steps.
pub fn run_ttexplore(
    actor: &PolicyHandle,
    thinker: &PolicyHandle,
    task: &TaskSpec,
    cfg: &RunConfig,
) -> Result<Trajectory, RunError> {
    expect_mode(cfg, Mode::Ttexplore)?;
    expect_role(actor, Role::Actor)?;
    expect_role(thinker, Role::Thinker)?;
    let agents = Agents::new(actor.clone(), Some(thinker.clone()));
    episode(actor, Some(thinker), task, cfg, cfg.seed, &[], frozen(cfg, &agents))
}

/// Up to `retries_n` independent ReAct attempts. After each failure the
/// actor writes a reflection that is added to every later attempt's
/// preamble. Returns the first success, else the best attempt (earliest on
/// ties).
pub fn run_reflexion(actor: &PolicyHandle, task: &TaskSpec, cfg: &RunConfig) -> Result<Trajectory, RunError> {
    expect_mode(cfg, Mode::Reflexion)?;
    expect_role(actor, Role::Actor)?;
    let agents = Agents::new(actor.clone(), None);
    reflexion(actor, task, cfg, cfg.seed, frozen(cfg, &agents))
}

fn reflexion(
    actor: &PolicyHandle,
    task: &TaskSpec,
    cfg: &RunConfig,
    seed: u64,
    frozen: bool,
) -> Result<Trajectory, RunError> {
    let mut reflections: Vec<String> = Vec::new();
    let mut pending_incidents: Vec<Incident> = Vec::new();
    let mut best: Option<Trajectory> = None;
    let mut wall = 0;
    let mut attempts = 0;
    for attempt in 0..cfg.retries_n {
        attempts = attempt + 1;
        let mut traj = episode(actor, None, task, cfg, seed, &reflections, frozen)?;
        traj.incidents.splice(0..0, pending_incidents.drain(..));
        wall += traj.outcome.wall_ms_total;
        let success = traj.outcome.success;
        let last = attempt + 1 == cfg.retries_n;
        if !success && !last && traj.abort.is_none() {
            let clock = Stopwatch::start(frozen);
            let prompt = render_reflection_prompt(task, &traj.view(), traj.score())?;
            let call_seed = mix_seed(seed, REFLECTION_STREAM + attempt as u64);
            match call_parsed(actor, &prompt, call_seed, parse_reflection) {
                Ok(Ok(text)) => reflections.push(text),
                Ok(Err(e)) => pending_incidents.push(Incident {
                    step: 0,
                    kind: IncidentKind::ReflectionFailure,
                    detail: e.to_string(),
                }),
                Err(e) => pending_incidents.push(Incident {
                    step: 0,
                    kind: IncidentKind::ReflectionFailure,
                    detail: e.to_string(),
                }),
            }
            wall += clock.ms();
        }
        let better = best.as_ref().is_none_or(|b| traj.score() > b.score());
        if better {
            best = Some(traj);
        }
        if success {
            break;
        }
    }
    let mut best = best.expect("retries_n >= 1");
    best.outcome.attempts = attempts;
    best.outcome.wall_ms_total = wall;
    Ok(best)
}

/// Every Best-of-N sample plus the index of the chosen one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestOfN {
    pub chosen: usize,
    pub samples: Vec<Trajectory>,
}

impl BestOfN {
    pub fn best(&self) -> &Trajectory {
        &self.samples[self.chosen]
    }
}

/// Index of the sample to keep: highest score, then lowest index. Aborted
/// samples count only when every sample aborted.
pub fn select_best(samples: &[Trajectory]) -> Option<usize> {
    let all_failed = samples.iter().all(|s| s.abort.is_some());
    let mut best: Option<usize> = None;
    for (i, s) in samples.iter().enumerate() {
        if s.abort.is_some() && !all_failed {
            continue;
        }
        // Scanning in index order, a later sample must score strictly higher
        // to win, so the lowest index takes every tie.
        if best.is_none_or(|b| s.score() > samples[b].score()) {
            best = Some(i);
        }
    }
    best
}

/// `n` independent runs of `inner` at `temperature`; sample `i` uses seed
/// `inner.seed + i`.
pub fn run_best_of_n_detailed(
    inner: &RunConfig,
    agents: &Agents,
    task: &TaskSpec,
    n: usize,
    temperature: f64,
) -> Result<BestOfN, RunError> {
    inner.validate().map_err(RunError::Config)?;
    if inner.mode == Mode::Bestofn {
        return Err(RunError::Config("Best-of-N cannot nest inside Best-of-N".into()));
    }
    if n == 0 {
        return Err(RunError::Config("Best-of-N needs at least one sample".into()));
    }
    if temperature == 0.0 && (agents.actor.is_remote() || agents.thinker.as_ref().is_some_and(|t| t.is_remote())) {
        return Err(RunError::Config("Best-of-N with a remote backend needs a temperature above 0".into()));
    }
    let agents = agents.with_temperature(temperature);
    let frozen = frozen(inner, &agents);
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let seed = inner.seed.wrapping_add(i as u64);
        samples.push(run_mode(inner.mode, &agents, task, inner, seed, frozen)?);
    }
    let chosen = select_best(&samples).expect("n >= 1");
    let wall: u64 = samples.iter().map(|s| s.outcome.wall_ms_total).sum();
    samples[chosen].outcome.wall_ms_total = wall;
    Ok(BestOfN { chosen, samples })
}

pub fn run_best_of_n(
    inner: &RunConfig,
    agents: &Agents,
    task: &TaskSpec,
    n: usize,
    temperature: f64,
) -> Result<Trajectory, RunError> {
    let mut r = run_best_of_n_detailed(inner, agents, task, n, temperature)?;
    Ok(r.samples.swap_remove(r.chosen))
}

fn run_mode(
    mode: Mode,
    agents: &Agents,
    task: &TaskSpec,
    cfg: &RunConfig,
    seed: u64,
    frozen: bool,
) -> Result<Trajectory, RunError> {
    match mode {
        Mode::React => episode(&agents.actor, None, task, cfg, seed, &[], frozen),
        Mode::Ttexplore => {
            let thinker =
                agents.thinker.as_ref().ok_or_else(|| RunError::Config("TTExplore needs a thinker policy".into()))?;
            episode(&agents.actor, Some(thinker), task, cfg, seed, &[], frozen)
        }
        Mode::Reflexion => reflexion(&agents.actor, task, cfg, seed, frozen),
        Mode::Bestofn => {
            let inner = RunConfig { mode: cfg.inner_mode, seed, ..cfg.clone() };
            run_best_of_n(&inner, agents, task, cfg.samples_n, cfg.best_of_n_temperature)
        }
    }
}

/// Runs `cfg.mode` once with seed `cfg.seed`.
pub fn run(agents: &Agents, task: &TaskSpec, cfg: &RunConfig) -> Result<Trajectory, RunError> {
    cfg.validate().map_err(RunError::Config)?;
    expect_role(&agents.actor, Role::Actor)?;
    if let Some(t) = &agents.thinker {
        expect_role(t, Role::Thinker)?;
    }
    if cfg.uses_thinker() && agents.thinker.is_none() {
        return Err(RunError::Config("TTExplore needs a thinker policy".into()));
    }
    run_mode(cfg.mode, agents, task, cfg, cfg.seed, frozen(cfg, agents))
}

/// One unit of batch work.
#[derive(Clone, Debug)]
pub struct Job {
    pub task: Arc<TaskSpec>,
    pub seed: u64,
}

/// Every task crossed with every seed, task-major.
pub fn jobs(tasks: &[Arc<TaskSpec>], seeds: &[u64]) -> Vec<Job> {
    tasks.iter().flat_map(|t| seeds.iter().map(move |&seed| Job { task: t.clone(), seed })).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub index: usize,
    pub trajectory: Trajectory,
    /// Absent for zero-step episodes.
    pub metrics: Option<ExplorationMetrics>,
    pub wall_seconds: f64,
}

impl EpisodeResult {
    pub fn new(index: usize, trajectory: Trajectory, k: usize) -> Self {
        let metrics = metrics::exploration_metrics(&trajectory, k).ok();
        let wall_seconds = trajectory.outcome.wall_ms_total as f64 / 1000.0;
        EpisodeResult { index, trajectory, metrics, wall_seconds }
    }

    pub fn summary(&self) -> EpisodeSummary {
        let t = &self.trajectory;
        EpisodeSummary {
            task_id: t.task_id.clone(),
            seed: t.seed,
            success: t.outcome.success,
            process_score: t.score().as_f64(),
            steps_used: t.outcome.steps_used,
            wall_seconds: self.wall_seconds,
            metrics: self.metrics.clone(),
        }
    }
}

/// Receives each finished episode before the batch reports it.
pub trait EpisodeSink: Sync {
    fn persist(&self, result: &EpisodeResult) -> Result<(), String>;
}

/// Runs every job under `cfg` (with the job's seed) on up to `parallelism`
/// workers. Results come back in job order. Each result is handed to `sink`
/// as soon as its episode finishes; a sink failure fails the batch.
pub fn run_batch(
    jobs: &[Job],
    agents: &Agents,
    cfg: &RunConfig,
    parallelism: usize,
    sink: Option<&dyn EpisodeSink>,
) -> Result<Vec<EpisodeResult>, RunError> {
    if parallelism == 0 {
        return Err(RunError::Config("parallelism must be positive".into()));
    }
    cfg.validate().map_err(RunError::Config)?;
    let results = exec::map_ordered(jobs, parallelism, |index, job| -> Result<EpisodeResult, RunError> {
        let run_cfg = RunConfig { seed: job.seed, ..cfg.clone() };
        let traj = run(agents, &job.task, &run_cfg)?;
        let result = EpisodeResult::new(index, traj, cfg.k);
        if let Some(sink) = sink {
            sink.persist(&result).map_err(|message| RunError::Persist { index, message })?;
        }
        Ok(result)
    });
    results.into_iter().collect()
}

#[cfg(test)]
mod tests;
