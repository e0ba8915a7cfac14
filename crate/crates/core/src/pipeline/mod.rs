//! Thinker-training data factory.
//!
//! A strong policy's trajectory is cut into sub-tasks at each process-score
//! increase. A weak policy probes each sub-task for difficulty; easy ones
//! are dropped. For the rest, the sub-task prefix plus `x` weak steps form a
//! rollout context, the thinker is sampled `m` times on it, and a frozen
//! actor continues after each thought for at most `y - x` steps to score it.

mod export;
mod forge;
mod stages;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::Score;
use crate::trajectory::{DeepThought, StepRecord, Trajectory};

pub use export::{export_grpo, export_sft, grpo_lines, sft_records, write_jsonl, GrpoLine, SftRecord};
pub use forge::{
    DifficultyCounts, ForgeOutput, PipelineManifest, SkipRecord, StrongRow, SubtaskRow, GRPO_FILE, MANIFEST_FILE,
    SFT_FILE,
};
pub use stages::{divide_subtasks, filter_subtasks, reward_value, Pipeline, PipelineAgents};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Strong,
    Divide,
    Classify,
    Filter,
    Context,
    Sample,
    Evaluate,
    Export,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Strong => "strong",
            Stage::Divide => "divide",
            Stage::Classify => "classify",
            Stage::Filter => "filter",
            Stage::Context => "context",
            Stage::Sample => "sample",
            Stage::Evaluate => "evaluate",
            Stage::Export => "export",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline configuration: {0}")]
    Config(String),
    #[error("{stage} stage: {message}")]
    Stage { stage: Stage, message: String },
    /// A per-item failure; the item is dropped and the pipeline goes on.
    #[error("{stage} stage skipped an item: {reason}")]
    Skipped { stage: Stage, reason: String },
    #[error("{stage} stage: integrity check failed: {message}")]
    Integrity { stage: Stage, message: String },
    #[error("cannot write `{path}`: {message}")]
    Io { path: String, message: String },
}

impl PipelineError {
    fn stage(stage: Stage, e: impl ToString) -> Self {
        PipelineError::Stage { stage, message: e.to_string() }
    }

    fn skipped(stage: Stage, reason: impl ToString) -> Self {
        PipelineError::Skipped { stage, reason: reason.to_string() }
    }

    fn integrity(stage: Stage, message: impl ToString) -> Self {
        PipelineError::Integrity { stage, message: message.to_string() }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    #[default]
    Unset,
    Easy,
    Medium,
    Hard,
}

/// When a weak run counts as having completed a sub-task.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Completion {
    /// Any score above the sub-task's start score.
    #[default]
    AnyImprovement,
    /// Reaching the sub-task's target score.
    NextMilestone,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// 1.0 if the continuation raises the score, else 0.0.
    #[default]
    Binary,
    /// As binary, minus `penalty_rate` per step before the first increase.
    StepPenalty,
}

/// What to do when the weak run is shorter than `x` steps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Repeat the last action until the prefix has `x` steps.
    #[default]
    RepeatLast,
    /// Drop the context.
    Skip,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Weak steps within which a sub-task counts as easy; also the weak
    /// prefix length of a rollout context.
    pub x: usize,
    /// Weak steps within which a sub-task counts as medium.
    pub y: usize,
    /// Thought samples per rollout context.
    pub m: usize,
    pub reward_mode: RewardMode,
    pub penalty_rate: f64,
    /// Thinking nodes per rollout trajectory: 1, 2 or 4.
    pub nodes_per_trajectory: usize,
    /// Step cap of multi-node rollouts.
    pub rollout_max_steps: usize,
    pub completion: Completion,
    pub padding: Padding,
    /// Extra thinker calls allowed per sample when its output does not parse.
    pub sample_retries: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            x: 5,
            y: 15,
            m: 4,
            reward_mode: RewardMode::Binary,
            penalty_rate: 0.05,
            nodes_per_trajectory: 1,
            rollout_max_steps: 25,
            completion: Completion::AnyImprovement,
            padding: Padding::RepeatLast,
            sample_retries: 2,
        }
    }
}

impl PipelineConfig {
    /// Checks every field; the message names the offending key.
    pub fn validate(&self) -> Result<(), String> {
        if self.x == 0 {
            return Err("`x` must be positive".into());
        }
        if self.y <= self.x {
            return Err(format!("`y` ({}) must exceed `x` ({})", self.y, self.x));
        }
        if self.m == 0 {
            return Err("`m` must be positive".into());
        }
        if !(self.penalty_rate >= 0.0 && self.penalty_rate.is_finite()) {
            return Err("`penalty_rate` must be a finite number >= 0".into());
        }
        self.node_interval()?;
        if self.nodes_per_trajectory > 1 {
            let interval = self.node_interval()?.unwrap_or(1);
            if self.rollout_max_steps <= interval * (self.nodes_per_trajectory - 1) {
                return Err(format!(
                    "`rollout_max_steps` ({}) leaves room for fewer than {} thinking nodes",
                    self.rollout_max_steps, self.nodes_per_trajectory
                ));
            }
        }
        Ok(())
    }

    /// Continuation budget after a thought.
    pub fn continuation_steps(&self) -> usize {
        self.y - self.x
    }

    /// Thinker interval of multi-node rollouts; `None` for the single-node
    /// path.
    pub fn node_interval(&self) -> Result<Option<usize>, String> {
        match self.nodes_per_trajectory {
            1 => Ok(None),
            2 => Ok(Some(9)),
            4 => Ok(Some(6)),
            n => Err(format!("`nodes_per_trajectory` must be 1, 2 or 4, not {n}")),
        }
    }
}

/// A segment of a strong trajectory between two score milestones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubTask {
    pub parent_task_id: String,
    pub seed: u64,
    /// Position among the parent's sub-tasks.
    pub index: usize,
    pub prefix_actions: Vec<String>,
    pub start_score: Score,
    pub target_score: Score,
    pub difficulty: Difficulty,
    /// The `x` weak actions of the rollout context, once built.
    pub weak_prefix: Option<Vec<String>>,
}

impl SubTask {
    pub fn id(&self) -> String {
        format!("{}-s{}-st{}", self.parent_task_id, self.seed, self.index)
    }
}

/// Shared thinker prompt for `m` thought samples.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutContext {
    pub id: String,
    pub sub: SubTask,
    /// Sub-task prefix followed by the weak prefix.
    pub history: Trajectory,
    pub prompt: String,
    /// Score at the end of `history`; rewards key on exceeding it.
    pub baseline: Score,
    /// Weak-prefix steps that were padding.
    pub padded: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RewardRecord {
    pub context_id: String,
    pub thought: DeepThought,
    /// Frozen-actor steps after the thought.
    pub continuation: Vec<StepRecord>,
    /// 1-based continuation step of the first score increase.
    pub first_improvement: Option<usize>,
    pub reward: f64,
    /// Context history, thought and continuation together.
    pub rollout: Trajectory,
}

/// A later thinking node of a multi-node rollout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtraNode {
    pub anchor_step: usize,
    pub prompt: String,
    pub completion: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupMeta {
    pub task_id: String,
    pub seed: u64,
    /// Sub-task index; absent for multi-node groups.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subtask: Option<usize>,
    pub difficulty: Difficulty,
    pub start_score: Score,
    /// Absent for multi-node groups, which have no fixed milestone.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_score: Option<Score>,
    pub prefix_len: usize,
    pub weak_prefix: Vec<String>,
    pub padded: usize,
    pub reward_mode: RewardMode,
    pub first_improvement: Vec<Option<usize>>,
    pub nodes: usize,
    /// Per completion, the later nodes that share its reward.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra_nodes: Vec<Vec<ExtraNode>>,
}

/// `m` reward records over one prompt.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutGroup {
    pub context_id: String,
    pub prompt: String,
    pub records: Vec<RewardRecord>,
    pub meta: GroupMeta,
}
