//! Exploration metrics over action and observation sequences, and batch
//! aggregation.
//!
//! Length is the number of environment steps, rejected ones included.
//! Values are compared as exact strings after trimming. Deep thoughts are
//! never part of either sequence.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trajectory::Trajectory;
use crate::util::round2;

pub const DEFAULT_K: usize = 3;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("metrics are undefined for an empty trajectory")]
    EmptyTrajectory,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("cannot aggregate an empty list of episodes")]
    EmptyBatch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplorationMetrics {
    pub action_diversity: f64,
    pub action_repetition: f64,
    pub observation_diversity: f64,
    pub observation_repetition: f64,
    pub k: usize,
}

/// Value → count, keyed by trimmed text.
fn counts<S: AsRef<str>>(items: &[S]) -> BTreeMap<&str, usize> {
    let mut c = BTreeMap::new();
    for i in items {
        *c.entry(i.as_ref().trim()).or_insert(0) += 1;
    }
    c
}

/// Distinct values divided by length.
pub fn diversity<S: AsRef<str>>(items: &[S]) -> Result<f64, MetricsError> {
    if items.is_empty() {
        return Err(MetricsError::EmptyTrajectory);
    }
    Ok(counts(items).len() as f64 / items.len() as f64)
}

/// The `k` most frequent distinct values, ties at equal counts broken by
/// lexicographic order of the text.
pub fn top_k<S: AsRef<str>>(items: &[S], k: usize) -> Vec<(&str, usize)> {
    let mut ranked: Vec<(&str, usize)> = counts(items).into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    ranked.truncate(k);
    ranked
}

/// Summed counts of the `k` most frequent values divided by length.
pub fn repetition<S: AsRef<str>>(items: &[S], k: usize) -> Result<f64, MetricsError> {
    if k == 0 {
        return Err(MetricsError::ZeroK);
    }
    if items.is_empty() {
        return Err(MetricsError::EmptyTrajectory);
    }
    let covered: usize = top_k(items, k).iter().map(|(_, c)| c).sum();
    Ok(covered as f64 / items.len() as f64)
}

pub fn from_sequences<A: AsRef<str>, O: AsRef<str>>(
    actions: &[A],
    observations: &[O],
    k: usize,
) -> Result<ExplorationMetrics, MetricsError> {
    Ok(ExplorationMetrics {
        action_diversity: diversity(actions)?,
        action_repetition: repetition(actions, k)?,
        observation_diversity: diversity(observations)?,
        observation_repetition: repetition(observations, k)?,
        k,
    })
}

pub fn action_diversity(traj: &Trajectory) -> Result<f64, MetricsError> {
    diversity(&traj.actions().collect::<Vec<_>>())
}

pub fn action_repetition(traj: &Trajectory, k: usize) -> Result<f64, MetricsError> {
    repetition(&traj.actions().collect::<Vec<_>>(), k)
}

pub fn observation_diversity(traj: &Trajectory) -> Result<f64, MetricsError> {
    diversity(&traj.observations().collect::<Vec<_>>())
}

pub fn observation_repetition(traj: &Trajectory, k: usize) -> Result<f64, MetricsError> {
    repetition(&traj.observations().collect::<Vec<_>>(), k)
}

pub fn exploration_metrics(traj: &Trajectory, k: usize) -> Result<ExplorationMetrics, MetricsError> {
    let actions: Vec<&str> = traj.actions().collect();
    let observations: Vec<&str> = traj.observations().collect();
    from_sequences(&actions, &observations, k)
}

/// What aggregation needs from one episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub task_id: String,
    pub seed: u64,
    pub success: bool,
    pub process_score: f64,
    pub steps_used: usize,
    pub wall_seconds: f64,
    /// Absent for zero-step episodes.
    pub metrics: Option<ExplorationMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    /// A task id, or `all` for the whole batch.
    pub group: String,
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_process_score: f64,
    pub mean_steps: f64,
    pub mean_wall_seconds: f64,
    pub action_diversity: Option<f64>,
    pub action_repetition: Option<f64>,
    pub observation_diversity: Option<f64>,
    pub observation_repetition: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| round2(sum / n as f64))
}

fn row(group: &str, eps: &[&EpisodeSummary]) -> SummaryRow {
    let metric = |f: fn(&ExplorationMetrics) -> f64| mean(eps.iter().filter_map(|e| e.metrics.as_ref()).map(f));
    SummaryRow {
        group: group.to_string(),
        episodes: eps.len(),
        success_rate: mean(eps.iter().map(|e| if e.success { 100.0 } else { 0.0 })).unwrap_or(0.0),
        mean_process_score: mean(eps.iter().map(|e| e.process_score)).unwrap_or(0.0),
        mean_steps: mean(eps.iter().map(|e| e.steps_used as f64)).unwrap_or(0.0),
        mean_wall_seconds: mean(eps.iter().map(|e| e.wall_seconds)).unwrap_or(0.0),
        action_diversity: metric(|m| m.action_diversity),
        action_repetition: metric(|m| m.action_repetition),
        observation_diversity: metric(|m| m.observation_diversity),
        observation_repetition: metric(|m| m.observation_repetition),
    }
}

/// One row per task id (in order of first appearance) plus an `all` row.
/// Means are arithmetic and rounded half-up to two decimals.
pub fn aggregate(episodes: &[EpisodeSummary]) -> Result<SummaryTable, MetricsError> {
    if episodes.is_empty() {
        return Err(MetricsError::EmptyBatch);
    }
    let mut order: Vec<&str> = Vec::new();
    for e in episodes {
        if !order.contains(&e.task_id.as_str()) {
            order.push(&e.task_id);
        }
    }
    let mut rows: Vec<SummaryRow> =
        order.iter().map(|t| row(t, &episodes.iter().filter(|e| e.task_id == *t).collect::<Vec<_>>())).collect();
    rows.push(row("all", &episodes.iter().collect::<Vec<_>>()));
    Ok(SummaryTable { rows })
}

impl SummaryTable {
    pub fn row(&self, group: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.group == group)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            out.push_str(&serde_json::to_string(r).expect("summary rows serialize"));
            out.push('\n');
        }
        out
    }

    /// Aligned plain-text report.
    pub fn to_text(&self) -> String {
        let header =
            ["group", "episodes", "succ%", "proc", "steps", "wall_s", "act_div", "act_rep", "obs_div", "obs_rep"];
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into());
        let cells: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.group.clone(),
                    r.episodes.to_string(),
                    format!("{:.2}", r.success_rate),
                    format!("{:.2}", r.mean_process_score),
                    format!("{:.2}", r.mean_steps),
                    format!("{:.2}", r.mean_wall_seconds),
                    opt(r.action_diversity),
                    opt(r.action_repetition),
                    opt(r.observation_diversity),
                    opt(r.observation_repetition),
                ]
            })
            .collect();
        render_columns(&header, &cells)
    }
}

/// Left-aligns the first column and right-aligns the rest.
pub fn render_columns(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let mut line = |cells: Vec<&str>| {
        let mut l = String::new();
        for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
            if i == 0 {
                let _ = write!(l, "{c:<w$}");
            } else {
                let _ = write!(l, "  {c:>w$}");
            }
        }
        out.push_str(l.trim_end());
        out.push('\n');
    };
    line(header.to_vec());
    for r in rows {
        line(r.iter().map(String::as_str).collect());
    }
    out
}
