use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{GroupMeta, PipelineError, RolloutGroup, Stage};
use crate::env::TaskSpec;
use crate::policy::{render_thinker_prompt, PromptOptions};
use crate::trajectory::Trajectory;

/// One group-relative training example. Field order is the file order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrpoLine {
    pub context_id: String,
    pub prompt: String,
    pub completions: Vec<String>,
    pub rewards: Vec<f64>,
    pub meta: GroupMeta,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub prompt: String,
    pub completion: String,
}

pub fn grpo_lines(groups: &[RolloutGroup]) -> Vec<GrpoLine> {
    groups
        .iter()
        .map(|g| GrpoLine {
            context_id: g.context_id.clone(),
            prompt: g.prompt.clone(),
            completions: g.records.iter().map(|r| r.thought.text.clone()).collect(),
            rewards: g.records.iter().map(|r| r.reward).collect(),
            meta: g.meta.clone(),
        })
        .collect()
}

/// One record per deep thought: the thinker prompt it answered, re-rendered
/// from the trajectory, and its text.
pub fn sft_records(
    tasks: &[Arc<TaskSpec>],
    trajectories: &[Trajectory],
    opts: &PromptOptions,
) -> Result<Vec<SftRecord>, PipelineError> {
    let mut out = Vec::new();
    for traj in trajectories {
        if traj.thoughts.is_empty() {
            continue;
        }
        let task = tasks.iter().find(|t| t.id == traj.task_id).ok_or_else(|| PipelineError::Stage {
            stage: Stage::Export,
            message: format!("no task `{}` for an SFT trajectory", traj.task_id),
        })?;
        for (i, thought) in traj.thoughts.iter().enumerate() {
            let prompt = render_thinker_prompt(task, &traj.thinker_view(i), opts)
                .map_err(|e| PipelineError::Stage { stage: Stage::Export, message: e.to_string() })?;
            out.push(SftRecord { prompt, completion: thought.text.clone() });
        }
    }
    Ok(out)
}

/// Writes one JSON document per line. An empty slice gives an empty file.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), PipelineError> {
    let err = |e: std::io::Error| PipelineError::Io { path: path.display().to_string(), message: e.to_string() };
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).expect("export records always serialize");
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(err)?;
    f.write_all(&buf).map_err(err)?;
    f.sync_all().map_err(err)
}

/// Returns the number of lines written.
pub fn export_grpo(groups: &[RolloutGroup], path: &Path) -> Result<usize, PipelineError> {
    let lines = grpo_lines(groups);
    write_jsonl(path, &lines)?;
    Ok(lines.len())
}

/// Returns the number of records written.
pub fn export_sft(
    tasks: &[Arc<TaskSpec>],
    trajectories: &[Trajectory],
    opts: &PromptOptions,
    path: &Path,
) -> Result<usize, PipelineError> {
    let records = sft_records(tasks, trajectories, opts)?;
    write_jsonl(path, &records)?;
    Ok(records.len())
}
