//! Episode records shared by the runners, metrics, pipeline and run store.

use serde::{Deserialize, Serialize};

use crate::env::{Score, TranscriptRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub action: String,
    pub observation: String,
    pub score_after: Score,
    #[serde(default)]
    pub wall_ms: u64,
}

/// A thinker output anchored after `anchor_step` environment steps.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeepThought {
    pub text: String,
    pub anchor_step: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IncidentKind {
    /// Actor output unparseable twice; the fallback action was used.
    ActorParseFallback,
    /// Thinker output unparseable twice; no thought was recorded.
    ThinkerParseFailure,
    /// Thinker backend call failed; no thought was recorded.
    ThinkerBackendFailure,
    ReflectionFailure,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Incident {
    /// Steps completed when the incident happened.
    pub step: usize,
    pub kind: IncidentKind,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FinalOutcome {
    pub success: bool,
    pub process_score: Score,
    pub steps_used: usize,
    /// Wall time of everything spent producing this result, including
    /// discarded attempts or samples.
    pub wall_ms_total: u64,
    pub attempts: usize,
    pub thinker_calls: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub seed: u64,
    pub initial_observation: String,
    /// Reflections that were in the actor preamble for this attempt.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reflections: Vec<String>,
    pub steps: Vec<StepRecord>,
    pub thoughts: Vec<DeepThought>,
    #[serde(rename = "final")]
    pub outcome: FinalOutcome,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub incidents: Vec<Incident>,
    /// Set when an unrecoverable backend error ended the episode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abort: Option<String>,
}

impl Trajectory {
    pub fn new(task_id: &str, seed: u64, initial_observation: String) -> Trajectory {
        Trajectory {
            task_id: task_id.to_string(),
            seed,
            initial_observation,
            reflections: Vec::new(),
            steps: Vec::new(),
            thoughts: Vec::new(),
            outcome: FinalOutcome { attempts: 1, ..FinalOutcome::default() },
            incidents: Vec::new(),
            abort: None,
        }
    }

    pub fn actions(&self) -> impl Iterator<Item = &str> {
        self.steps.iter().map(|s| s.action.as_str())
    }

    pub fn observations(&self) -> impl Iterator<Item = &str> {
        self.steps.iter().map(|s| s.observation.as_str())
    }

    pub fn score(&self) -> Score {
        self.outcome.process_score
    }

    /// History as seen by prompts, cut after `upto` steps. Thoughts anchored
    /// at or before `upto` are included.
    pub fn view_upto(&self, upto: usize) -> HistoryView<'_> {
        let upto = upto.min(self.steps.len());
        let n_thoughts = self.thoughts.iter().take_while(|t| t.anchor_step <= upto).count();
        HistoryView {
            task_id: &self.task_id,
            initial_observation: &self.initial_observation,
            steps: &self.steps[..upto],
            thoughts: &self.thoughts[..n_thoughts],
            reflections: &self.reflections,
        }
    }

    pub fn view(&self) -> HistoryView<'_> {
        self.view_upto(self.steps.len())
    }

    /// The history the thinker saw when it produced thought `i`: steps up
    /// to its anchor and only the thoughts before it.
    pub fn thinker_view(&self, i: usize) -> HistoryView<'_> {
        let anchor = self.thoughts[i].anchor_step.min(self.steps.len());
        HistoryView {
            task_id: &self.task_id,
            initial_observation: &self.initial_observation,
            steps: &self.steps[..anchor],
            thoughts: &self.thoughts[..i],
            reflections: &self.reflections,
        }
    }

    /// The first `len` steps as a fresh trajectory without thoughts,
    /// reflections or incidents. The outcome is left for the caller to fill.
    pub fn prefix(&self, len: usize) -> Trajectory {
        let mut t = Trajectory::new(&self.task_id, self.seed, self.initial_observation.clone());
        t.steps = self.steps[..len.min(self.steps.len())].to_vec();
        t
    }

    /// Transcript lines in the on-disk format.
    pub fn transcript(&self) -> Vec<TranscriptRecord> {
        let n = self.steps.len();
        self.steps
            .iter()
            .enumerate()
            .map(|(i, s)| TranscriptRecord {
                step: i + 1,
                action: s.action.clone(),
                observation: s.observation.clone(),
                score: s.score_after,
                done: i + 1 == n && self.outcome.success,
            })
            .collect()
    }
}

/// Borrowed view of an interaction history, used for prompt rendering.
#[derive(Clone, Copy, Debug)]
pub struct HistoryView<'a> {
    pub task_id: &'a str,
    pub initial_observation: &'a str,
    pub steps: &'a [StepRecord],
    pub thoughts: &'a [DeepThought],
    pub reflections: &'a [String],
}
