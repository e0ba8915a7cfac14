use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::export::{grpo_lines, sft_records, write_jsonl, SftRecord};
use super::stages::{divide_subtasks, filter_subtasks, Pipeline};
use super::{Difficulty, PipelineConfig, PipelineError, RolloutGroup, Stage, SubTask};
use crate::env::{Score, TaskSpec};
use crate::exec;
use crate::orchestrator;
use crate::trajectory::Trajectory;

pub const GRPO_FILE: &str = "grpo.jsonl";
pub const SFT_FILE: &str = "sft.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrongRow {
    pub task_id: String,
    pub seed: u64,
    pub process_score: Score,
    pub steps_used: usize,
    pub subtasks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubtaskRow {
    pub id: String,
    pub prefix_len: usize,
    pub start_score: Score,
    pub target_score: Score,
    pub difficulty: Difficulty,
    /// Weak step that completed the sub-task, if any.
    pub weak_completion: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub id: String,
    pub stage: Stage,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DifficultyCounts {
    pub easy: usize,
    pub medium: usize,
    pub hard: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineManifest {
    pub config: PipelineConfig,
    pub tasks: Vec<String>,
    pub seeds: Vec<u64>,
    pub strong: Vec<StrongRow>,
    pub difficulty: DifficultyCounts,
    pub subtasks: Vec<SubtaskRow>,
    pub skipped: Vec<SkipRecord>,
    pub groups: usize,
    pub records: usize,
    pub mean_reward: Option<f64>,
    /// Rewards rounded to two decimals, with counts.
    pub reward_histogram: BTreeMap<String, usize>,
    pub sft_records: usize,
    pub warnings: Vec<String>,
}

impl PipelineManifest {
    /// Human-readable digest for the terminal.
    pub fn summary(&self) -> String {
        let d = &self.difficulty;
        let mean = self.mean_reward.map(|m| format!("{m:.4}")).unwrap_or_else(|| "n/a".into());
        let mut s = format!(
            "subtasks: {} (easy {}, medium {}, hard {})\ngroups: {}  records: {}  mean reward: {mean}\nsft records: {}  skipped: {}\n",
            self.subtasks.len(),
            d.easy,
            d.medium,
            d.hard,
            self.groups,
            self.records,
            self.sft_records,
            self.skipped.len()
        );
        for w in &self.warnings {
            s.push_str(&format!("warning: {w}\n"));
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct ForgeOutput {
    pub groups: Vec<RolloutGroup>,
    pub sft: Vec<SftRecord>,
    pub manifest: PipelineManifest,
}

impl ForgeOutput {
    /// Writes the GRPO and SFT exports and the manifest into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), PipelineError> {
        let io =
            |p: &Path, e: std::io::Error| PipelineError::Io { path: p.display().to_string(), message: e.to_string() };
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        write_jsonl(&dir.join(GRPO_FILE), &grpo_lines(&self.groups))?;
        write_jsonl(&dir.join(SFT_FILE), &self.sft)?;
        let mut text = serde_json::to_string_pretty(&self.manifest).expect("manifest always serializes");
        text.push('\n');
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, text).map_err(|e| io(&path, e))
    }
}

/// Records a per-item failure; anything else stops the pipeline.
fn skip_or_fail(e: PipelineError, id: &str, skipped: &mut Vec<SkipRecord>) -> Result<(), PipelineError> {
    match e {
        PipelineError::Skipped { stage, reason } => {
            log::warn!("{id}: skipped at the {stage} stage: {reason}");
            skipped.push(SkipRecord { id: id.to_string(), stage, reason });
            Ok(())
        }
        other => Err(other),
    }
}

struct Classified {
    task: Arc<TaskSpec>,
    sub: SubTask,
    weak: Trajectory,
}

impl Pipeline {
    /// Strong episodes, division, classification, filtering, rollouts and
    /// rewards over every task and seed.
    pub fn forge(&self, tasks: &[Arc<TaskSpec>], seeds: &[u64]) -> Result<ForgeOutput, PipelineError> {
        let jobs = orchestrator::jobs(tasks, seeds);
        let mut skipped = Vec::new();
        let mut warnings = Vec::new();

        let strong = exec::map_ordered(&jobs, self.parallelism, |_, j| self.strong_episode(&j.task, j.seed));
        let mut strong_rows = Vec::new();
        let mut subs: Vec<(Arc<TaskSpec>, Arc<Trajectory>, SubTask)> = Vec::new();
        for (job, result) in jobs.iter().zip(strong) {
            let id = format!("{}-s{}", job.task.id, job.seed);
            let traj = match result {
                Ok(t) => t,
                Err(e) => {
                    skip_or_fail(e, &id, &mut skipped)?;
                    continue;
                }
            };
            let divided = divide_subtasks(&job.task, &traj)?;
            if divided.is_empty() {
                skip_or_fail(
                    PipelineError::Skipped {
                        stage: Stage::Divide,
                        reason: "the strong run never raised the score".into(),
                    },
                    &id,
                    &mut skipped,
                )?;
            }
            strong_rows.push(StrongRow {
                task_id: job.task.id.clone(),
                seed: job.seed,
                process_score: traj.score(),
                steps_used: traj.outcome.steps_used,
                subtasks: divided.len(),
            });
            let traj = Arc::new(traj);
            subs.extend(divided.into_iter().map(|s| (job.task.clone(), traj.clone(), s)));
        }

        let results =
            exec::map_ordered(&subs, self.parallelism, |_, (task, strong, sub)| self.classify(task, sub, strong));
        let mut rows = Vec::new();
        let mut classified = Vec::new();
        let mut counts = DifficultyCounts::default();
        for ((task, _, mut sub), result) in subs.into_iter().zip(results) {
            match result {
                Ok((difficulty, weak)) => {
                    sub.difficulty = difficulty;
                    match difficulty {
                        Difficulty::Easy => counts.easy += 1,
                        Difficulty::Medium => counts.medium += 1,
                        Difficulty::Hard => counts.hard += 1,
                        Difficulty::Unset => {}
                    }
                    rows.push(SubtaskRow {
                        id: sub.id(),
                        prefix_len: sub.prefix_actions.len(),
                        start_score: sub.start_score,
                        target_score: sub.target_score,
                        difficulty,
                        weak_completion: self.weak_completion(&sub, &weak),
                    });
                    classified.push(Classified { task, sub, weak });
                }
                Err(e) => skip_or_fail(e, &sub.id(), &mut skipped)?,
            }
        }

        let kept = filter_subtasks(classified.iter().map(|c| c.sub.clone()).collect())?;
        let mut kept = kept.iter().map(SubTask::id).peekable();
        let survivors: Vec<Classified> = classified
            .into_iter()
            .filter(|c| {
                let keep = kept.peek() == Some(&c.sub.id());
                if keep {
                    kept.next();
                }
                keep
            })
            .collect();

        let mut groups = Vec::new();
        if self.cfg.nodes_per_trajectory == 1 {
            let results = exec::map_ordered(&survivors, self.parallelism, |_, c| {
                let ctx = self.rollout_context(&c.task, &c.sub, &c.weak)?;
                self.rollout_group(&c.task, &ctx)
            });
            for (c, result) in survivors.iter().zip(results) {
                match result {
                    Ok(g) => groups.push(g),
                    Err(e) => skip_or_fail(e, &c.sub.id(), &mut skipped)?,
                }
            }
        } else {
            let results = exec::map_ordered(&jobs, self.parallelism, |_, j| self.multinode_group(&j.task, j.seed));
            for (job, result) in jobs.iter().zip(results) {
                match result {
                    Ok(g) => groups.push(g),
                    Err(e) => skip_or_fail(e, &format!("{}-s{}", job.task.id, job.seed), &mut skipped)?,
                }
            }
        }
        if groups.is_empty() {
            let w = "no rollout groups were produced; the GRPO export is empty".to_string();
            log::warn!("{w}");
            warnings.push(w);
        }

        let rewards: Vec<f64> = groups.iter().flat_map(|g| g.records.iter().map(|r| r.reward)).collect();
        let mut reward_histogram = BTreeMap::new();
        for r in &rewards {
            *reward_histogram.entry(format!("{r:.2}")).or_insert(0) += 1;
        }
        let mean_reward =
            (!rewards.is_empty()).then(|| (rewards.iter().sum::<f64>() / rewards.len() as f64 * 1e4).round() / 1e4);

        let positive: Vec<Trajectory> = groups
            .iter()
            .flat_map(|g| g.records.iter().filter(|r| r.reward > 0.0).map(|r| r.rollout.clone()))
            .collect();
        let sft = sft_records(tasks, &positive, &self.run.prompt)?;

        let manifest = PipelineManifest {
            config: self.cfg.clone(),
            tasks: tasks.iter().map(|t| t.id.clone()).collect(),
            seeds: seeds.to_vec(),
            strong: strong_rows,
            difficulty: counts,
            subtasks: rows,
            skipped,
            groups: groups.len(),
            records: rewards.len(),
            mean_reward,
            reward_histogram,
            sft_records: sft.len(),
            warnings,
        };
        Ok(ForgeOutput { groups, sft, manifest })
    }
}
