//! The five commands as library functions. Each returns a report; printing
//! and exit codes belong to the binary.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::Utc;
use thinkloop::env::TranscriptRecord;
use thinkloop::metrics::{aggregate, render_columns, EpisodeSummary, ExplorationMetrics, SummaryTable};
use thinkloop::orchestrator::{jobs, run_batch};
use thinkloop::pipeline::{Pipeline, PipelineManifest};
use thinkloop::store::{transcript_metrics, Manifest, ReplayReport, RunStore, StoreError};

use crate::config::Resolved;

/// Saved next to forge exports so the run can be repeated.
pub const FORGE_CONFIG_FILE: &str = "experiment.toml";

/// A fresh directory name under `parent`; existing paths are never reused.
pub fn timestamped(parent: &Path, label: &str) -> PathBuf {
    let stamp = Utc::now().format("%Y%m%dT%H%M%S%.3fZ");
    let base = parent.join(format!("{label}-{stamp}"));
    let mut path = base.clone();
    let mut i = 1;
    while path.exists() {
        path = PathBuf::from(format!("{}-{i}", base.display()));
        i += 1;
    }
    path
}

#[derive(Debug)]
pub struct RunReport {
    pub store: PathBuf,
    pub manifest: Manifest,
    /// Episodes that ended on an internal error rather than a task failure.
    pub aborted: Vec<String>,
}

impl RunReport {
    pub fn table(&self) -> String {
        SummaryTable { rows: self.manifest.aggregate.clone() }.to_text()
    }
}

/// Runs the batch into a new store at `out`, or under `store_dir` in a
/// timestamped directory. A failed batch leaves no store behind.
pub fn cmd_run(r: &Resolved, out: Option<&Path>) -> Result<RunReport> {
    let cfg = &r.config;
    let root = match out {
        Some(p) => p.to_path_buf(),
        None => timestamped(&cfg.store_dir, cfg.run.mode.as_str()),
    };
    let store = RunStore::create(&root, &r.envs)?;
    let work = jobs(&r.tasks(), &cfg.seeds);
    let results = match run_batch(&work, &r.agents(), &cfg.run, cfg.parallelism, Some(&store)) {
        Ok(results) => results,
        Err(e) => {
            if let Err(d) = store.discard() {
                log::warn!("could not remove the incomplete store: {d}");
            }
            return Err(e).context("batch failed; no store was kept");
        }
    };
    let config = serde_json::to_value(cfg).expect("configs always serialize");
    let manifest = Manifest::build(cfg.run.mode, config, &cfg.seeds, &r.envs, cfg.run.thinker_calls_cap(), &results)?;
    store.finish(&manifest)?;
    let aborted = manifest.episodes.iter().filter(|e| e.abort.is_some()).map(|e| e.id.clone()).collect();
    Ok(RunReport { store: root, manifest, aborted })
}

#[derive(Debug)]
pub struct EpisodeMetrics {
    pub id: String,
    pub task_id: String,
    pub seed: u64,
    /// Absent for zero-step episodes.
    pub metrics: Option<ExplorationMetrics>,
    /// Whether the manifest's cached values agree with the recomputation.
    pub matches_manifest: bool,
}

#[derive(Debug)]
pub struct MetricsReport {
    pub episodes: Vec<EpisodeMetrics>,
    pub table: SummaryTable,
}

impl MetricsReport {
    pub fn mismatches(&self) -> usize {
        self.episodes.iter().filter(|e| !e.matches_manifest).count()
    }

    pub fn to_text(&self) -> String {
        let opt = |m: &Option<ExplorationMetrics>, f: fn(&ExplorationMetrics) -> f64| {
            m.as_ref().map(|m| format!("{:.4}", f(m))).unwrap_or_else(|| "-".into())
        };
        let rows: Vec<Vec<String>> = self
            .episodes
            .iter()
            .map(|e| {
                vec![
                    e.id.clone(),
                    opt(&e.metrics, |m| m.action_diversity),
                    opt(&e.metrics, |m| m.action_repetition),
                    opt(&e.metrics, |m| m.observation_diversity),
                    opt(&e.metrics, |m| m.observation_repetition),
                    if e.matches_manifest { "yes" } else { "NO" }.to_string(),
                ]
            })
            .collect();
        let header = ["episode", "act_div", "act_rep", "obs_div", "obs_rep", "manifest"];
        format!("{}\n{}", render_columns(&header, &rows), self.table.to_text())
    }
}

/// Recomputes exploration metrics from the stored transcripts; the
/// manifest's values are only compared against.
pub fn cmd_metrics(store_dir: &Path, k: Option<usize>) -> Result<MetricsReport> {
    let store = RunStore::open(store_dir)?;
    let manifest = store.manifest()?;
    if manifest.episodes.is_empty() {
        return Err(StoreError::Empty.into());
    }
    let mut episodes = Vec::new();
    let mut summaries = Vec::new();
    for row in &manifest.episodes {
        let transcript: Vec<TranscriptRecord> = store.read_transcript(&row.id)?;
        let k = k.or(row.metrics.as_ref().map(|m| m.k)).unwrap_or(thinkloop::metrics::DEFAULT_K);
        let metrics = if transcript.is_empty() { None } else { Some(transcript_metrics(&transcript, k)?) };
        let last = transcript.last();
        let traj = store.read_trajectory(&row.id)?;
        summaries.push(EpisodeSummary {
            task_id: row.task_id.clone(),
            seed: row.seed,
            success: last.is_some_and(|l| l.score.is_full()),
            process_score: last.map(|l| l.score.as_f64()).unwrap_or(0.0),
            steps_used: transcript.len(),
            wall_seconds: traj.outcome.wall_ms_total as f64 / 1000.0,
            metrics: metrics.clone(),
        });
        episodes.push(EpisodeMetrics {
            id: row.id.clone(),
            task_id: row.task_id.clone(),
            seed: row.seed,
            matches_manifest: metrics == row.metrics,
            metrics,
        });
    }
    Ok(MetricsReport { episodes, table: aggregate(&summaries)? })
}

#[derive(Debug)]
pub struct ForgeReport {
    pub dir: PathBuf,
    pub manifest: PipelineManifest,
}

/// Runs the full pipeline and writes its exports into a new directory.
pub fn cmd_forge(r: &Resolved, out: Option<&Path>) -> Result<ForgeReport> {
    let cfg = &r.config;
    let dir = match out {
        Some(p) => p.to_path_buf(),
        None => timestamped(&cfg.store_dir, "forge"),
    };
    if dir.exists() {
        bail!("`{}` already exists; outputs are never overwritten", dir.display());
    }
    let pipeline = Pipeline::new(r.pipeline_agents(), cfg.pipeline.clone(), cfg.run.clone(), cfg.parallelism)?;
    let output = pipeline.forge(&r.tasks(), &cfg.seeds)?;
    output.write(&dir)?;
    let cfg_path = dir.join(FORGE_CONFIG_FILE);
    fs::write(&cfg_path, cfg.to_toml()).with_context(|| format!("cannot write `{}`", cfg_path.display()))?;
    Ok(ForgeReport { dir, manifest: output.manifest })
}

#[derive(Debug)]
pub struct ReplayOutcome {
    pub transcript: Vec<TranscriptRecord>,
    pub report: ReplayReport,
}

impl ReplayOutcome {
    pub fn transcript_text(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .transcript
            .iter()
            .map(|t| {
                vec![
                    t.step.to_string(),
                    t.action.clone(),
                    t.score.to_string(),
                    t.done.to_string(),
                    t.observation.clone(),
                ]
            })
            .collect();
        render_columns(&["step", "action", "score", "done", "observation"], &rows)
    }

    pub fn verdict(&self) -> String {
        let r = &self.report;
        let mut line = if r.passed() {
            format!("PASS {}: {} steps verified", r.episode, r.steps_checked)
        } else {
            format!("FAIL {}", r.episode)
        };
        if let Some(m) = &r.mismatch {
            line.push_str(&format!(
                ": step {} {} differs (recorded `{}`, replayed `{}`)",
                m.step, m.field, m.recorded, m.replayed
            ));
        }
        if let Some(note) = &r.rule_note {
            line.push_str(&format!(": {note}"));
        }
        line
    }
}

/// Replays one episode, or every episode in manifest order, against the
/// store's environment copies or against `env_file`.
pub fn cmd_replay(store_dir: &Path, episode: Option<&str>, env_file: Option<&Path>) -> Result<Vec<ReplayOutcome>> {
    let store = RunStore::open(store_dir)?;
    let env_text = match env_file {
        Some(p) => Some(fs::read_to_string(p).with_context(|| format!("cannot read `{}`", p.display()))?),
        None => None,
    };
    let ids: Vec<String> = match episode {
        Some(id) => vec![id.to_string()],
        None => store.manifest()?.episodes.into_iter().map(|e| e.id).collect(),
    };
    if ids.is_empty() {
        return Err(StoreError::Empty.into());
    }
    ids.iter()
        .map(|id| {
            let report = store.replay(id, env_text.as_deref())?;
            Ok(ReplayOutcome { transcript: store.read_transcript(id)?, report })
        })
        .collect()
}

/// Resolved configuration as TOML, followed by a one-line digest.
pub fn cmd_validate(r: &Resolved) -> String {
    let cfg = &r.config;
    let ids: Vec<&str> = r.envs.iter().map(|e| e.task.id.as_str()).collect();
    format!(
        "{}\n# ok: {} environments ({}), {} seeds, mode {}, at most {} thinker calls per episode\n",
        cfg.to_toml().trim_end(),
        ids.len(),
        ids.join(", "),
        cfg.seeds.len(),
        cfg.run.mode,
        cfg.run.thinker_calls_cap()
    )
}
