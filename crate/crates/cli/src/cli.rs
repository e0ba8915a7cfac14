//! Argument parsing. Every flag is optional and, when given, overrides the
//! config file; the defaults shown in `--help` are the built-in ones.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use thinkloop::orchestrator::{Mode, TriggerPolicy};
use thinkloop::pipeline::{Completion, Padding, RewardMode};

use crate::commands;
use crate::config::{ExperimentConfig, PolicySpec};

#[derive(Debug, Parser)]
#[command(name = "thinkloop", version, about = "Actor/thinker exploration runs and thinker-training data forging")]
pub struct Cli {
    /// Log verbosity: -v for info, -vv for debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a batch of episodes and write a run store.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        run: RunArgs,
        /// Store directory to create [default: a timestamped directory under the store dir].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute exploration metrics from a run store's transcripts.
    Metrics {
        store: PathBuf,
        /// Top-k for repetition [default: the k recorded per episode, else 3].
        #[arg(long)]
        k: Option<usize>,
        /// Print the aggregate table as line-delimited JSON.
        #[arg(long)]
        json: bool,
    },
    /// Build GRPO and SFT datasets from strong, weak, thinker and actor policies.
    Forge {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        pipeline: PipelineArgs,
        /// Output directory to create [default: a timestamped directory under the store dir].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-execute stored actions and check every recorded step.
    Replay {
        store: PathBuf,
        /// Episode id, as listed in the manifest [default: every episode].
        episode: Option<String>,
        /// Replay against this environment file instead of the store's copy.
        #[arg(long)]
        env: Option<PathBuf>,
        /// Print only the verdict.
        #[arg(short, long)]
        quiet: bool,
    },
    /// Check a configuration and print it fully resolved.
    Validate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
}

fn parse_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_"))).map_err(|e| e.to_string())
}

/// Seeds given on the command line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeedList(pub Vec<u64>);

fn parse_seeds(s: &str) -> Result<SeedList, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once("..") {
            Some((a, b)) => {
                let a: u64 = a.parse().map_err(|_| format!("bad seed range `{part}`"))?;
                let b: u64 = b.parse().map_err(|_| format!("bad seed range `{part}`"))?;
                out.extend(a..b);
            }
            None => out.push(part.parse().map_err(|_| format!("bad seed `{part}`"))?),
        }
    }
    if out.is_empty() {
        return Err("no seeds given".into());
    }
    Ok(SeedList(out))
}

#[derive(Debug, Default, Args)]
pub struct CommonArgs {
    /// Experiment config: TOML, or a run manifest to repeat [default: built-in defaults].
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Environment file or builtin:<name>; repeat to add more [default: the three built-in worlds].
    #[arg(long = "env")]
    pub env_files: Vec<String>,
    /// Task id to keep, `prefix*` allowed; repeat to add more [default: all].
    #[arg(long = "task")]
    pub tasks: Vec<String>,
    /// Seeds as a list or ranges, e.g. `0,1,2` or `0..5` [default: 0..5].
    #[arg(long, value_parser = parse_seeds)]
    pub seeds: Option<SeedList>,
    /// Scripted actor policy [default: greedy-actor].
    #[arg(long)]
    pub actor: Option<String>,
    /// Scripted thinker policy [default: sampling-thinker].
    #[arg(long)]
    pub thinker: Option<String>,
    /// Scripted weak policy of the forge pipeline [default: greedy-actor].
    #[arg(long)]
    pub weak: Option<String>,
    /// Scripted strong policy of the forge pipeline [default: oracle-actor].
    #[arg(long)]
    pub strong: Option<String>,
    /// Parent directory of timestamped outputs [default: runs].
    #[arg(long)]
    pub store_dir: Option<PathBuf>,
    /// Worker threads [default: 4].
    #[arg(long)]
    pub parallelism: Option<usize>,
}

#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// Execution mode: react, ttexplore, reflexion or bestofn [default: ttexplore].
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Mode sampled by Best-of-N [default: ttexplore].
    #[arg(long)]
    pub inner_mode: Option<Mode>,
    /// Thinker interval in steps [default: 6].
    #[arg(long = "n")]
    pub n_trigger: Option<usize>,
    /// Episode step limit [default: 50].
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Reflexion attempts [default: 5].
    #[arg(long)]
    pub retries: Option<usize>,
    /// Best-of-N samples N [default: 5].
    #[arg(long)]
    pub samples: Option<usize>,
    /// Best-of-N sampling temperature [default: 0.7].
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Thinker trigger: fixed or on-failure [default: fixed].
    #[arg(long, value_parser = parse_enum::<TriggerPolicy>)]
    pub trigger_policy: Option<TriggerPolicy>,
    /// Top-k for repetition metrics [default: 3].
    #[arg(long)]
    pub k: Option<usize>,
    /// Prompt history budget in characters [default: unlimited].
    #[arg(long)]
    pub char_budget: Option<usize>,
}

#[derive(Debug, Default, Args)]
pub struct PipelineArgs {
    /// Weak steps within which a sub-task is easy; also the weak prefix length [default: 5].
    #[arg(long)]
    pub x: Option<usize>,
    /// Weak steps within which a sub-task is medium [default: 15].
    #[arg(long)]
    pub y: Option<usize>,
    /// Thought samples per rollout context [default: 4].
    #[arg(long)]
    pub m: Option<usize>,
    /// Reward: binary or step-penalty [default: binary].
    #[arg(long, value_parser = parse_enum::<RewardMode>)]
    pub reward_mode: Option<RewardMode>,
    /// Penalty per continuation step before the first increase [default: 0.05].
    #[arg(long)]
    pub penalty_rate: Option<f64>,
    /// Thinking nodes per rollout: 1, 2 or 4 [default: 1].
    #[arg(long)]
    pub nodes: Option<usize>,
    /// Sub-task completion: any-improvement or next-milestone [default: any-improvement].
    #[arg(long, value_parser = parse_enum::<Completion>)]
    pub completion: Option<Completion>,
    /// Short weak runs: repeat-last or skip [default: repeat-last].
    #[arg(long, value_parser = parse_enum::<Padding>)]
    pub padding: Option<Padding>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn set_policy(slot: &mut PolicySpec, name: Option<String>) {
    if let Some(name) = name {
        *slot = PolicySpec { decode: slot.decode.clone(), ..PolicySpec::scripted(&name) };
    }
}

impl CommonArgs {
    pub fn base(&self) -> Result<ExperimentConfig> {
        match &self.config {
            Some(p) => ExperimentConfig::load(p),
            None => Ok(ExperimentConfig::default()),
        }
    }

    pub fn apply(self, cfg: &mut ExperimentConfig) {
        if !self.env_files.is_empty() {
            cfg.env_files = self.env_files;
        }
        if !self.tasks.is_empty() {
            cfg.tasks = self.tasks;
        }
        set(&mut cfg.seeds, self.seeds.map(|s| s.0));
        set_policy(&mut cfg.actor, self.actor);
        set_policy(&mut cfg.thinker, self.thinker);
        set_policy(&mut cfg.weak, self.weak);
        set_policy(&mut cfg.strong, self.strong);
        set(&mut cfg.store_dir, self.store_dir);
        set(&mut cfg.parallelism, self.parallelism);
    }
}

impl RunArgs {
    pub fn apply(self, cfg: &mut ExperimentConfig) {
        let r = &mut cfg.run;
        set(&mut r.mode, self.mode);
        set(&mut r.inner_mode, self.inner_mode);
        set(&mut r.n_trigger, self.n_trigger);
        set(&mut r.max_steps, self.max_steps);
        set(&mut r.retries_n, self.retries);
        set(&mut r.samples_n, self.samples);
        set(&mut r.best_of_n_temperature, self.temperature);
        set(&mut r.trigger_policy, self.trigger_policy);
        set(&mut r.k, self.k);
        if self.char_budget.is_some() {
            r.prompt.char_budget = self.char_budget;
        }
    }
}

impl PipelineArgs {
    pub fn apply(self, cfg: &mut ExperimentConfig) {
        let p = &mut cfg.pipeline;
        set(&mut p.x, self.x);
        set(&mut p.y, self.y);
        set(&mut p.m, self.m);
        set(&mut p.reward_mode, self.reward_mode);
        set(&mut p.penalty_rate, self.penalty_rate);
        set(&mut p.nodes_per_trajectory, self.nodes);
        set(&mut p.completion, self.completion);
        set(&mut p.padding, self.padding);
    }
}

fn configure(common: CommonArgs, run: RunArgs, pipeline: Option<PipelineArgs>) -> Result<ExperimentConfig> {
    let mut cfg = common.base()?;
    common.apply(&mut cfg);
    run.apply(&mut cfg);
    if let Some(p) = pipeline {
        p.apply(&mut cfg);
    }
    Ok(cfg)
}

fn out_path(p: &Option<PathBuf>) -> Option<&Path> {
    p.as_deref()
}

/// Runs a parsed command line. Exit code 2 means a run finished but some
/// episode aborted on an internal error; 1 means a replay failed.
pub fn execute(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { common, run, out } => {
            let cfg = configure(common, run, None)?;
            let report = commands::cmd_run(&cfg.resolve()?, out_path(&out))?;
            print!("{}", report.table());
            println!("store: {}", report.store.display());
            println!("max thinker calls per episode: {}", report.manifest.max_thinker_calls);
            if report.aborted.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("{} episode(s) aborted: {}", report.aborted.len(), report.aborted.join(", "));
                Ok(ExitCode::from(2))
            }
        }
        Command::Metrics { store, k, json } => {
            let report = commands::cmd_metrics(&store, k)?;
            if json {
                print!("{}", report.table.to_jsonl());
            } else {
                print!("{}", report.to_text());
            }
            if report.mismatches() > 0 {
                eprintln!("warning: {} episode(s) disagree with the manifest's cached metrics", report.mismatches());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Forge { common, run, pipeline, out } => {
            let cfg = configure(common, run, Some(pipeline))?;
            let report = commands::cmd_forge(&cfg.resolve()?, out_path(&out))?;
            print!("{}", report.manifest.summary());
            println!("output: {}", report.dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Replay { store, episode, env, quiet } => {
            let outcomes = commands::cmd_replay(&store, episode.as_deref(), env.as_deref())?;
            let mut ok = true;
            for o in &outcomes {
                if !quiet {
                    print!("{}", o.transcript_text());
                }
                println!("{}", o.verdict());
                ok &= o.report.passed();
            }
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Validate { common, run, pipeline } => {
            let cfg = configure(common, run, Some(pipeline))?;
            print!("{}", commands::cmd_validate(&cfg.resolve()?));
            Ok(ExitCode::SUCCESS)
        }
    }
}
