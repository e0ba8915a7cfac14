//! Experiment configuration: one TOML file, or the `config` object of a run
//! manifest, with command-line overrides applied on top.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use thinkloop::env::fixtures::{self, LoadedTask, BUILTIN_PREFIX};
use thinkloop::env::TaskSpec;
use thinkloop::orchestrator::{Agents, RunConfig};
use thinkloop::pipeline::{PipelineAgents, PipelineConfig};
use thinkloop::policy::{BackendDescriptor, DecodeParams, PolicyHandle, RemoteEndpoint, Role, ScriptedRegistry};

/// One policy: a scripted behaviour by name, or a remote endpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scripted: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remote: Option<RemoteEndpoint>,
    #[serde(default)]
    pub decode: DecodeParams,
}

impl PolicySpec {
    pub fn scripted(name: &str) -> Self {
        PolicySpec { scripted: Some(name.to_string()), remote: None, decode: DecodeParams::default() }
    }

    fn descriptor(&self, key: &str) -> Result<BackendDescriptor> {
        match (&self.scripted, &self.remote) {
            (Some(name), None) => Ok(BackendDescriptor::Scripted { name: name.clone() }),
            (None, Some(endpoint)) => Ok(BackendDescriptor::Remote(endpoint.clone())),
            _ => bail!("`{key}` needs exactly one of `scripted` or `remote`"),
        }
    }

    pub fn build(&self, key: &str, role: Role, registry: &ScriptedRegistry) -> Result<PolicyHandle> {
        let descriptor = self.descriptor(key)?;
        PolicyHandle::build(role, descriptor, self.decode.clone(), registry).with_context(|| format!("`{key}`"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// `builtin:<name>` or TOML paths, relative to the config file.
    pub env_files: Vec<String>,
    /// Task ids to run; a trailing `*` matches a prefix. Empty means all.
    pub tasks: Vec<String>,
    pub seeds: Vec<u64>,
    pub actor: PolicySpec,
    pub thinker: PolicySpec,
    /// Difficulty probe of the forge pipeline.
    pub weak: PolicySpec,
    /// Milestone source of the forge pipeline.
    pub strong: PolicySpec,
    pub run: RunConfig,
    pub pipeline: PipelineConfig,
    pub store_dir: PathBuf,
    pub parallelism: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            env_files: fixtures::BUILTIN_NAMES.iter().map(|n| format!("{BUILTIN_PREFIX}{n}")).collect(),
            tasks: Vec::new(),
            seeds: (0..5).collect(),
            actor: PolicySpec::scripted("greedy-actor"),
            thinker: PolicySpec::scripted("sampling-thinker"),
            weak: PolicySpec::scripted("greedy-actor"),
            strong: PolicySpec::scripted("oracle-actor"),
            run: RunConfig::default(),
            pipeline: PipelineConfig::default(),
            store_dir: PathBuf::from("runs"),
            parallelism: 4,
        }
    }
}

/// Manifests embed the config under this key.
#[derive(Deserialize)]
struct ManifestConfig {
    config: ExperimentConfig,
}

impl ExperimentConfig {
    /// Reads a TOML config, or a run manifest (`.json`) whose embedded
    /// config is reused as is. Relative env paths in TOML resolve against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config `{}`", path.display()))?;
        if path.extension().is_some_and(|e| e == "json") {
            let m: ManifestConfig = serde_json::from_str(&text)
                .with_context(|| format!("`{}` is not a run manifest with a `config` object", path.display()))?;
            return Ok(m.config);
        }
        let mut cfg: ExperimentConfig =
            toml::from_str(&text).with_context(|| format!("invalid config `{}`", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for f in &mut cfg.env_files {
            if !f.starts_with(BUILTIN_PREFIX) && Path::new(f).is_relative() {
                *f = base.join(&*f).display().to_string();
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configs always serialize")
    }

    /// Checks every value and loads every referenced environment.
    pub fn resolve(&self) -> Result<Resolved> {
        ensure!(!self.env_files.is_empty(), "`env_files` must name at least one environment");
        ensure!(!self.seeds.is_empty(), "`seeds` must hold at least one seed");
        ensure!(self.parallelism > 0, "`parallelism` must be positive");
        self.run.validate().map_err(|e| anyhow::anyhow!("invalid `run` section: {e}"))?;
        self.pipeline.validate().map_err(|e| anyhow::anyhow!("invalid `pipeline` section: {e}"))?;
        let mut loaded = Vec::new();
        for f in &self.env_files {
            let env = fixtures::load(f).with_context(|| format!("`env_files` entry `{f}`"))?;
            if loaded.iter().any(|l: &LoadedTask| l.task.id == env.task.id) {
                bail!("`env_files` loads task `{}` twice", env.task.id);
            }
            loaded.push(env);
        }
        let envs = select(&loaded, &self.tasks)?;
        let registry = ScriptedRegistry::with_tasks(envs.iter().map(|e| e.task.clone()));
        let actor = self.actor.build("actor", Role::Actor, &registry)?;
        let thinker = self.thinker.build("thinker", Role::Thinker, &registry)?;
        let weak = self.weak.build("weak", Role::Actor, &registry)?;
        let strong = self.strong.build("strong", Role::Actor, &registry)?;
        Ok(Resolved { config: self.clone(), envs, actor, thinker, weak, strong })
    }
}

fn select(loaded: &[LoadedTask], selectors: &[String]) -> Result<Vec<LoadedTask>> {
    if selectors.is_empty() {
        return Ok(loaded.to_vec());
    }
    let matches = |sel: &str, id: &str| match sel.strip_suffix('*') {
        Some(prefix) => id.starts_with(prefix),
        None => sel == id,
    };
    for sel in selectors {
        ensure!(loaded.iter().any(|l| matches(sel, &l.task.id)), "`tasks` entry `{sel}` matches no loaded environment");
    }
    Ok(loaded.iter().filter(|l| selectors.iter().any(|s| matches(s, &l.task.id))).cloned().collect())
}

/// A validated config with its environments loaded and policies built.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub config: ExperimentConfig,
    pub envs: Vec<LoadedTask>,
    pub actor: PolicyHandle,
    pub thinker: PolicyHandle,
    pub weak: PolicyHandle,
    pub strong: PolicyHandle,
}

impl Resolved {
    pub fn tasks(&self) -> Vec<Arc<TaskSpec>> {
        self.envs.iter().map(|e| e.task.clone()).collect()
    }

    pub fn agents(&self) -> Agents {
        Agents::new(self.actor.clone(), Some(self.thinker.clone()))
    }

    pub fn pipeline_agents(&self) -> PipelineAgents {
        PipelineAgents {
            strong: self.strong.clone(),
            weak: self.weak.clone(),
            thinker: self.thinker.clone().trainable(true),
            actor: self.actor.clone(),
        }
    }
}
