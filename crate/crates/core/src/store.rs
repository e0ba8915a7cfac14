//! On-disk run store.
//!
//! One directory per batch:
//!
//! ```text
//! manifest.json          resolved config, seeds, environments, episode rows, aggregate table
//! envs/<task>.toml       environment definitions exactly as run
//! episodes/<id>.jsonl    transcript, one step per line
//! episodes/<id>.json     full trajectory (thoughts, outcome, incidents)
//! ```
//!
//! The manifest is written last, so a directory without one is an
//! incomplete store. Nothing here overwrites an existing store.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::fixtures::LoadedTask;
use crate::env::{fingerprint, Score, Session, TaskSpec, TranscriptRecord};
use crate::metrics::{self, ExplorationMetrics, MetricsError, SummaryRow};
use crate::orchestrator::{EpisodeResult, EpisodeSink, Mode};
use crate::trajectory::Trajectory;

pub const MANIFEST: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("cannot access `{path}`: {message}")]
    Io { path: String, message: String },
    #[error("`{path}` line {line}: {message}")]
    Corrupt { path: String, line: usize, message: String },
    #[error("`{0}` already exists; run stores are never overwritten")]
    Exists(String),
    #[error("`{0}` is not a run store (no {MANIFEST})")]
    NotAStore(String),
    #[error("no episode `{0}` in this store")]
    UnknownEpisode(String),
    #[error("the store holds no episodes")]
    Empty,
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

fn io(path: &Path, e: impl ToString) -> StoreError {
    StoreError::Io { path: path.display().to_string(), message: e.to_string() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvRecord {
    pub task_id: String,
    /// `builtin:<name>` or the path given at run time.
    pub source: String,
    pub fingerprint: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub id: String,
    pub index: usize,
    pub task_id: String,
    pub seed: u64,
    pub success: bool,
    pub process_score: Score,
    pub steps_used: usize,
    pub thinker_calls: usize,
    pub attempts: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abort: Option<String>,
    pub metrics: Option<ExplorationMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub mode: Mode,
    /// The fully resolved experiment configuration.
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub envs: Vec<EnvRecord>,
    /// Most thinker calls a full-length episode can make under this config.
    pub max_thinker_calls: usize,
    pub episodes: Vec<EpisodeRow>,
    pub aggregate: Vec<SummaryRow>,
}

impl Manifest {
    pub fn build(
        mode: Mode,
        config: serde_json::Value,
        seeds: &[u64],
        envs: &[LoadedTask],
        max_thinker_calls: usize,
        results: &[EpisodeResult],
    ) -> Result<Manifest, StoreError> {
        let summaries: Vec<_> = results.iter().map(EpisodeResult::summary).collect();
        let aggregate = if summaries.is_empty() { Vec::new() } else { metrics::aggregate(&summaries)?.rows };
        Ok(Manifest {
            format: FORMAT_VERSION,
            mode,
            config,
            seeds: seeds.to_vec(),
            envs: envs
                .iter()
                .map(|e| EnvRecord {
                    task_id: e.task.id.clone(),
                    source: e.source.clone(),
                    fingerprint: e.fingerprint.clone(),
                })
                .collect(),
            max_thinker_calls,
            episodes: results.iter().map(row).collect(),
            aggregate,
        })
    }

    pub fn episode(&self, id: &str) -> Option<&EpisodeRow> {
        self.episodes.iter().find(|e| e.id == id)
    }

    pub fn env(&self, task_id: &str) -> Option<&EnvRecord> {
        self.envs.iter().find(|e| e.task_id == task_id)
    }
}

fn row(r: &EpisodeResult) -> EpisodeRow {
    let t = &r.trajectory;
    EpisodeRow {
        id: episode_id(r.index, &t.task_id, t.seed),
        index: r.index,
        task_id: t.task_id.clone(),
        seed: t.seed,
        success: t.outcome.success,
        process_score: t.score(),
        steps_used: t.outcome.steps_used,
        thinker_calls: t.outcome.thinker_calls,
        attempts: t.outcome.attempts,
        abort: t.abort.clone(),
        metrics: r.metrics.clone(),
    }
}

/// Keeps ids usable as file names on every platform.
fn file_safe(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' }).collect()
}

pub fn episode_id(index: usize, task_id: &str, seed: u64) -> String {
    format!("{index:04}-{}-s{seed}", file_safe(task_id))
}

/// Writes via a temporary sibling so readers never see half a file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io(path, e))
}

fn pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("store records always serialize");
    s.push('\n');
    s
}

#[derive(Clone, Debug)]
pub struct RunStore {
    root: PathBuf,
}

impl RunStore {
    /// Creates a fresh store at `root`, which must not exist yet, and copies
    /// the environment definitions into it.
    pub fn create(root: &Path, envs: &[LoadedTask]) -> Result<RunStore, StoreError> {
        if root.exists() {
            return Err(StoreError::Exists(root.display().to_string()));
        }
        if let Some(parent) = root.parent() {
            fs::create_dir_all(parent).map_err(|e| io(parent, e))?;
        }
        fs::create_dir(root).map_err(|e| match e.kind() {
            std::io::ErrorKind::AlreadyExists => StoreError::Exists(root.display().to_string()),
            _ => io(root, e),
        })?;
        let store = RunStore { root: root.to_path_buf() };
        for dir in [store.envs_dir(), store.episodes_dir()] {
            fs::create_dir(&dir).map_err(|e| io(&dir, e))?;
        }
        for env in envs {
            write_atomic(&store.env_path(&env.task.id), env.text.as_bytes())?;
        }
        Ok(store)
    }

    pub fn open(root: &Path) -> Result<RunStore, StoreError> {
        if !root.join(MANIFEST).is_file() {
            return Err(StoreError::NotAStore(root.display().to_string()));
        }
        Ok(RunStore { root: root.to_path_buf() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn envs_dir(&self) -> PathBuf {
        self.root.join("envs")
    }

    fn episodes_dir(&self) -> PathBuf {
        self.root.join("episodes")
    }

    pub fn env_path(&self, task_id: &str) -> PathBuf {
        self.envs_dir().join(format!("{}.toml", file_safe(task_id)))
    }

    pub fn transcript_path(&self, id: &str) -> PathBuf {
        self.episodes_dir().join(format!("{id}.jsonl"))
    }

    pub fn trajectory_path(&self, id: &str) -> PathBuf {
        self.episodes_dir().join(format!("{id}.json"))
    }

    pub fn write_episode(&self, result: &EpisodeResult) -> Result<(), StoreError> {
        let t = &result.trajectory;
        let id = episode_id(result.index, &t.task_id, t.seed);
        let mut lines = String::new();
        for rec in t.transcript() {
            lines.push_str(&serde_json::to_string(&rec).expect("transcript records always serialize"));
            lines.push('\n');
        }
        write_atomic(&self.transcript_path(&id), lines.as_bytes())?;
        write_atomic(&self.trajectory_path(&id), pretty(t).as_bytes())
    }

    /// Seals the store.
    pub fn finish(&self, manifest: &Manifest) -> Result<(), StoreError> {
        write_atomic(&self.root.join(MANIFEST), pretty(manifest).as_bytes())
    }

    /// Removes a store that was never sealed. Sealed stores are left alone.
    pub fn discard(self) -> Result<(), StoreError> {
        if self.root.join(MANIFEST).exists() {
            return Ok(());
        }
        fs::remove_dir_all(&self.root).map_err(|e| io(&self.root, e))
    }

    pub fn manifest(&self) -> Result<Manifest, StoreError> {
        let path = self.root.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| StoreError::Corrupt {
            path: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn read_transcript(&self, id: &str) -> Result<Vec<TranscriptRecord>, StoreError> {
        let path = self.transcript_path(id);
        if !path.is_file() {
            return Err(StoreError::UnknownEpisode(id.to_string()));
        }
        let text = fs::read_to_string(&path).map_err(|e| io(&path, e))?;
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| StoreError::Corrupt {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: e.to_string(),
                })
            })
            .collect()
    }

    pub fn read_trajectory(&self, id: &str) -> Result<Trajectory, StoreError> {
        let path = self.trajectory_path(id);
        if !path.is_file() {
            return Err(StoreError::UnknownEpisode(id.to_string()));
        }
        let text = fs::read_to_string(&path).map_err(|e| io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| StoreError::Corrupt {
            path: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn env_text(&self, task_id: &str) -> Result<String, StoreError> {
        let path = self.env_path(task_id);
        fs::read_to_string(&path).map_err(|e| io(&path, e))
    }

    /// Re-runs a stored episode's actions and compares every recorded step.
    /// `env_text` replaces the store's copy of the environment.
    pub fn replay(&self, id: &str, env_text: Option<&str>) -> Result<ReplayReport, StoreError> {
        let manifest = self.manifest()?;
        let row = manifest.episode(id).ok_or_else(|| StoreError::UnknownEpisode(id.to_string()))?;
        let transcript = self.read_transcript(id)?;
        let text = match env_text {
            Some(t) => t.to_string(),
            None => self.env_text(&row.task_id)?,
        };
        let mut report = ReplayReport { episode: id.to_string(), steps_checked: 0, mismatch: None, rule_note: None };
        let recorded = manifest.env(&row.task_id).map(|e| e.fingerprint.as_str());
        let actual = fingerprint(&text);
        if recorded != Some(actual.as_str()) {
            report.rule_note = Some(format!(
                "environment `{}` differs from the one recorded (fingerprint {} vs {}); its rules or world changed",
                row.task_id,
                short(&actual),
                recorded.map(short).unwrap_or("none"),
            ));
        }
        match TaskSpec::from_toml(&text) {
            Ok(task) => {
                let (checked, mismatch) = verify_transcript(&task, row.seed, &transcript);
                report.steps_checked = checked;
                report.mismatch = mismatch;
            }
            Err(e) => {
                let note = report.rule_note.take().unwrap_or_default();
                report.rule_note = Some(format!("{note}; the environment no longer loads: {e}"));
            }
        }
        Ok(report)
    }
}

fn short(fp: &str) -> &str {
    &fp[..fp.len().min(12)]
}

impl EpisodeSink for RunStore {
    fn persist(&self, result: &EpisodeResult) -> Result<(), String> {
        self.write_episode(result).map_err(|e| e.to_string())
    }
}

/// First step where a recorded transcript and its replay disagree.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StepMismatch {
    /// 1-based step number.
    pub step: usize,
    pub field: &'static str,
    pub recorded: String,
    pub replayed: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ReplayReport {
    pub episode: String,
    pub steps_checked: usize,
    pub mismatch: Option<StepMismatch>,
    /// Set when the environment differs from the one the episode ran on.
    pub rule_note: Option<String>,
}

impl ReplayReport {
    pub fn passed(&self) -> bool {
        self.mismatch.is_none() && self.rule_note.is_none()
    }
}

/// Replays `transcript`'s actions from `reset(task, seed)`. Returns the
/// number of steps that matched and the first mismatch, if any.
pub fn verify_transcript(task: &TaskSpec, seed: u64, transcript: &[TranscriptRecord]) -> (usize, Option<StepMismatch>) {
    let (mut session, _) = Session::start(task, seed);
    for (i, rec) in transcript.iter().enumerate() {
        let step = i + 1;
        let diff = |field, recorded: String, replayed: String| StepMismatch { step, field, recorded, replayed };
        if rec.step != step {
            return (i, Some(diff("step", rec.step.to_string(), step.to_string())));
        }
        if session.is_done() {
            return (i, Some(diff("done", "episode continues".into(), "episode already over".into())));
        }
        let (obs, done) = session.step(&rec.action);
        if obs.text != rec.observation {
            return (i, Some(diff("observation", rec.observation.clone(), obs.text)));
        }
        if session.score() != rec.score {
            return (i, Some(diff("score", rec.score.to_string(), session.score().to_string())));
        }
        if done != rec.done {
            return (i, Some(diff("done", rec.done.to_string(), done.to_string())));
        }
    }
    (transcript.len(), None)
}

/// Exploration metrics recomputed from a stored transcript.
pub fn transcript_metrics(transcript: &[TranscriptRecord], k: usize) -> Result<ExplorationMetrics, MetricsError> {
    let actions: Vec<&str> = transcript.iter().map(|r| r.action.as_str()).collect();
    let observations: Vec<&str> = transcript.iter().map(|r| r.observation.as_str()).collect();
    metrics::from_sequences(&actions, &observations, k)
}
