use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::metrics::DEFAULT_K;
use crate::policy::PromptOptions;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    React,
    Ttexplore,
    Reflexion,
    Bestofn,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::React, Mode::Ttexplore, Mode::Reflexion, Mode::Bestofn];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::React => "react",
            Mode::Ttexplore => "ttexplore",
            Mode::Reflexion => "reflexion",
            Mode::Bestofn => "bestofn",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode `{s}` (expected react, ttexplore, reflexion or bestofn)"))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerPolicy {
    /// After every `n_trigger` steps.
    #[default]
    Fixed,
    /// As `Fixed`, but only if one of the last `n_trigger` observations was
    /// a rejection.
    OnFailure,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Timing {
    /// Frozen when every backend is deterministic, wall-clock otherwise.
    #[default]
    Auto,
    Wall,
    /// All recorded durations are zero; stores become byte-reproducible.
    Frozen,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mode: Mode,
    /// What Best-of-N samples.
    pub inner_mode: Mode,
    /// Thinker interval in steps.
    pub n_trigger: usize,
    pub max_steps: usize,
    /// Reflexion attempts.
    pub retries_n: usize,
    /// Best-of-N samples.
    pub samples_n: usize,
    pub best_of_n_temperature: f64,
    pub seed: u64,
    pub trigger_policy: TriggerPolicy,
    pub timing: Timing,
    /// Top-k for repetition metrics.
    pub k: usize,
    pub prompt: PromptOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Ttexplore,
            inner_mode: Mode::Ttexplore,
            n_trigger: 6,
            max_steps: 50,
            retries_n: 5,
            samples_n: 5,
            best_of_n_temperature: 0.7,
            seed: 0,
            trigger_policy: TriggerPolicy::Fixed,
            timing: Timing::Auto,
            k: DEFAULT_K,
            prompt: PromptOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn with_mode(mode: Mode) -> Self {
        RunConfig { mode, ..RunConfig::default() }
    }

    /// Whether episodes under this config call a thinker.
    pub fn uses_thinker(&self) -> bool {
        self.mode == Mode::Ttexplore || (self.mode == Mode::Bestofn && self.inner_mode == Mode::Ttexplore)
    }

    /// Most thinker calls a fixed-trigger episode can make.
    pub fn thinker_calls_cap(&self) -> usize {
        if self.uses_thinker() {
            (self.max_steps - 1) / self.n_trigger
        } else {
            0
        }
    }

    /// Checks every field; the message names the offending key.
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("n_trigger", self.n_trigger),
            ("max_steps", self.max_steps),
            ("retries_n", self.retries_n),
            ("samples_n", self.samples_n),
            ("k", self.k),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(format!("`{key}` must be positive"));
            }
        }
        if self.uses_thinker() && self.n_trigger >= self.max_steps {
            return Err(format!("`n_trigger` ({}) must be below `max_steps` ({})", self.n_trigger, self.max_steps));
        }
        if self.inner_mode == Mode::Bestofn {
            return Err("`inner_mode` cannot be bestofn".into());
        }
        if !(self.best_of_n_temperature >= 0.0 && self.best_of_n_temperature.is_finite()) {
            return Err("`best_of_n_temperature` must be a finite number >= 0".into());
        }
        if self.prompt.char_budget == Some(0) {
            return Err("`prompt.char_budget` must be positive".into());
        }
        Ok(())
    }
}
