//! The binary end to end: exit codes, store contents and printed verdicts.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use thinkloop::store::Manifest;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_thinkloop"))
}

fn thinkloop(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).env_remove("RUST_LOG").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn manifest(store: &Path) -> Manifest {
    serde_json::from_str(&fs::read_to_string(store.join("manifest.json")).unwrap()).unwrap()
}

fn files(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

#[test]
fn ttexplore_runs_report_the_thinker_cap() {
    let tmp = tempfile::tempdir().unwrap();
    let o = thinkloop(&["run", "--mode", "ttexplore", "--n", "6", "--seeds", "0,1", "--out", "s"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("max thinker calls per episode: 8"));
    let m = manifest(&tmp.path().join("s"));
    assert_eq!(m.max_thinker_calls, 8);
    assert_eq!(m.episodes.len(), 6);
    assert!(m.episodes.iter().all(|e| e.thinker_calls <= 8));
    let full =
        thinkloop(&["run", "--mode", "ttexplore", "--actor", "loop-actor", "--seeds", "0", "--out", "f"], tmp.path());
    assert!(full.status.success());
    assert!(manifest(&tmp.path().join("f")).episodes.iter().all(|e| e.thinker_calls == 8 && e.steps_used == 50));
}

#[test]
fn react_reruns_give_identical_stores() {
    let tmp = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        assert!(thinkloop(&["run", "--mode", "react", "--out", out], tmp.path()).status.success());
    }
    assert_eq!(files(&tmp.path().join("a")), files(&tmp.path().join("b")));
}

#[test]
fn a_manifest_repeats_its_run() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["run", "--mode", "reflexion", "--seeds", "3", "--max-steps", "20", "--retries", "2", "--out", "a"];
    assert!(thinkloop(&args, tmp.path()).status.success());
    let o = thinkloop(&["run", "--config", "a/manifest.json", "--out", "b"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(files(&tmp.path().join("a")), files(&tmp.path().join("b")));
}

#[test]
fn default_outputs_land_in_new_timestamped_directories() {
    let tmp = tempfile::tempdir().unwrap();
    for _ in 0..2 {
        assert!(thinkloop(&["run", "--mode", "react", "--seeds", "0", "--store-dir", "out"], tmp.path())
            .status
            .success());
    }
    let names: Vec<String> =
        fs::read_dir(tmp.path().join("out")).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    assert_eq!(names.len(), 2);
    assert!(names.iter().all(|n| n.starts_with("react-")));
}

#[test]
fn existing_outputs_are_never_overwritten() {
    let tmp = tempfile::tempdir().unwrap();
    fs::create_dir(tmp.path().join("taken")).unwrap();
    let o = thinkloop(&["run", "--out", "taken"], tmp.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("already exists"));
    let o = thinkloop(&["forge", "--out", "taken"], tmp.path());
    assert!(!o.status.success());
    assert_eq!(fs::read_dir(tmp.path().join("taken")).unwrap().count(), 0);
}

#[test]
fn a_missing_env_file_leaves_no_store() {
    let tmp = tempfile::tempdir().unwrap();
    let o = thinkloop(&["run", "--env", "missing.toml", "--store-dir", "out"], tmp.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("missing.toml"));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn config_errors_name_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.toml"), "[run]\nmax_step = 10\n").unwrap();
    let o = thinkloop(&["validate", "--config", "bad.toml"], tmp.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("max_step"), "{}", stderr(&o));
    let o = thinkloop(&["validate", "--n", "60"], tmp.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("n_trigger"));
    let o = thinkloop(&["validate", "--nodes", "3"], tmp.path());
    assert!(stderr(&o).contains("nodes_per_trajectory"));
}

#[test]
fn validate_prints_a_loadable_config() {
    let tmp = tempfile::tempdir().unwrap();
    let o = thinkloop(&["validate", "--mode", "bestofn", "--samples", "3"], tmp.path());
    assert!(o.status.success());
    let cfg: thinkloop_cli::ExperimentConfig = toml::from_str(&stdout(&o)).unwrap();
    assert_eq!(cfg.run.samples_n, 3);
    assert!(stdout(&o).contains("# ok: 3 environments"));
}

#[test]
fn relative_env_paths_resolve_against_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    fs::create_dir(tmp.path().join("conf")).unwrap();
    fs::write(tmp.path().join("conf/world.toml"), thinkloop::env::fixtures::KEYMAZE_1).unwrap();
    fs::write(tmp.path().join("conf/exp.toml"), "env_files = [\"world.toml\"]\nseeds = [0]\n").unwrap();
    let o = thinkloop(&["run", "-c", "conf/exp.toml", "--mode", "react", "--out", "s"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(manifest(&tmp.path().join("s")).envs[0].task_id, "keymaze-1");
}

#[test]
fn backend_aborts_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("remote.toml"),
        "seeds = [0]\nenv_files = [\"builtin:minihouse-1\"]\n[actor.remote]\nbase_url = \"http://127.0.0.1:9/v1\"\nmodel = \"none\"\nmax_retries = 0\ntimeout_secs = 2\n",
    )
    .unwrap();
    let o = thinkloop(&["run", "-c", "remote.toml", "--mode", "react", "--out", "s"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("aborted"));
    assert!(manifest(&tmp.path().join("s")).episodes[0].abort.is_some());
}

#[test]
fn looping_stores_report_full_repetition() {
    let tmp = tempfile::tempdir().unwrap();
    let o = thinkloop(&["run", "--mode", "react", "--actor", "loop-actor", "--seeds", "0", "--out", "s"], tmp.path());
    assert!(o.status.success());
    let o = thinkloop(&["metrics", "s", "--json"], tmp.path());
    assert!(o.status.success());
    for line in stdout(&o).lines() {
        let row: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(row["action_repetition"], 1.0);
    }
    let text = stdout(&thinkloop(&["metrics", "s"], tmp.path()));
    assert!(text.lines().filter(|l| l.starts_with("000")).all(|l| l.ends_with("yes")));
}

#[test]
fn metrics_reject_empty_and_corrupt_stores() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(thinkloop(&["run", "--mode", "react", "--seeds", "0", "--out", "s"], tmp.path()).status.success());
    let transcript = tmp.path().join("s/episodes/0000-minihouse-1-s0.jsonl");
    let mut text = fs::read_to_string(&transcript).unwrap();
    text = text.replacen("\n", "\n{not json\n", 2);
    fs::write(&transcript, text).unwrap();
    let o = thinkloop(&["metrics", "s"], tmp.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("0000-minihouse-1-s0.jsonl` line 2"), "{}", stderr(&o));

    let mut m = manifest(&tmp.path().join("s"));
    m.episodes.clear();
    fs::write(tmp.path().join("s/manifest.json"), serde_json::to_string(&m).unwrap()).unwrap();
    let o = thinkloop(&["metrics", "s"], tmp.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("no episodes"));
    let o = thinkloop(&["metrics", "nowhere"], tmp.path());
    assert!(!o.status.success());
}

#[test]
fn replay_passes_shipped_stores_and_fails_the_edited_one() {
    let cwd = std::env::temp_dir();
    for store in ["stores/ttexplore-fixtures", "stores/react-fixtures"] {
        let o = thinkloop(&["replay", shipped(store).to_str().unwrap(), "--quiet"], &cwd);
        assert!(o.status.success(), "{}", stdout(&o));
        assert!(stdout(&o).lines().all(|l| l.starts_with("PASS")));
    }
    let mutated = shipped("mutated/ttexplore-edited-score");
    let o = thinkloop(&["replay", mutated.to_str().unwrap(), "0000-minihouse-1-s0"], &cwd);
    assert_eq!(o.status.code(), Some(1));
    let out = stdout(&o);
    assert!(out.lines().next().unwrap().starts_with("step"));
    assert!(
        out.contains("FAIL 0000-minihouse-1-s0: step 1 score differs (recorded `33.33`, replayed `0.00`)"),
        "{out}"
    );
    let o = thinkloop(&["replay", mutated.to_str().unwrap(), "0001-minihouse-1-s1", "-q"], &cwd);
    assert!(o.status.success());
}

#[test]
fn replay_against_a_changed_world_notes_the_rule_change() {
    let tmp = tempfile::tempdir().unwrap();
    let store = shipped("stores/react-fixtures");
    let world = fs::read_to_string(store.join("envs/minihouse-1.toml")).unwrap();
    let changed = world.replacen("location = \"kitchen\"", "location = \"hallway\"", 1);
    assert_ne!(changed, world);
    fs::write(tmp.path().join("changed.toml"), changed).unwrap();
    let o = thinkloop(
        &["replay", store.to_str().unwrap(), "0000-minihouse-1-s0", "--env", "changed.toml", "-q"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    let out = stdout(&o);
    assert!(out.starts_with("FAIL 0000-minihouse-1-s0: step"), "{out}");
    assert!(out.contains("rules or world changed"), "{out}");
    let o = thinkloop(&["replay", store.to_str().unwrap(), "9999-none-s0"], tmp.path());
    assert!(stderr(&o).contains("no episode"));
}

#[test]
fn forging_prints_counts_and_writes_exports() {
    let tmp = tempfile::tempdir().unwrap();
    let o = thinkloop(&["forge", "--seeds", "0,1", "--out", "f"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("subtasks: 18 (easy 10, medium 2, hard 6)"), "{out}");
    assert!(out.contains("mean reward: "));
    for f in ["grpo.jsonl", "sft.jsonl", "manifest.json", "experiment.toml"] {
        assert!(tmp.path().join("f").join(f).is_file(), "{f}");
    }
    let o = thinkloop(&["forge", "-c", "f/experiment.toml", "--out", "g"], tmp.path());
    assert!(o.status.success());
    assert_eq!(files(&tmp.path().join("f")), files(&tmp.path().join("g")));
}

#[test]
fn an_all_easy_forge_warns_and_exports_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let o = thinkloop(&["forge", "--weak", "oracle-actor", "--seeds", "0", "--out", "f"], tmp.path());
    assert!(o.status.success());
    assert!(stdout(&o).contains("warning: no rollout groups"));
    assert!(fs::read(tmp.path().join("f/grpo.jsonl")).unwrap().is_empty());
}

#[test]
fn forge_stage_failures_name_the_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let o = thinkloop(&["forge", "--thinker", "broken-thinker", "--seeds", "0", "--out", "f"], tmp.path());
    assert!(o.status.success());
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("f/manifest.json")).unwrap()).unwrap();
    let skipped = m["skipped"].as_array().unwrap();
    assert!(!skipped.is_empty());
    assert!(skipped.iter().all(|s| s["stage"] == "sample"));
}
