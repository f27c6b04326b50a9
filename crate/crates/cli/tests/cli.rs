use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
out_dir = "unused"
[env]
episode_len = 20
[skill]
[reward]
[train]
n_iterations = 2
n_envs = 4
repr_steps = 2
repr_batch = 32
policy_hidden = [8]
critic_hidden = [8]
repr_hidden = [8]
[hrl]
n_iterations = 2
n_envs = 4
hidden = [8]
decision_interval = 5
[eval]
n_rollouts = 4
n_seeds = 2
"#;

fn slim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slim"))
        .args(args)
        .env_remove("SLIM_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn assert_keys(line: &str, keys: &[&str]) {
    let v: serde_json::Value = serde_json::from_str(line).unwrap();
    for key in keys {
        assert!(v.get(key).is_some(), "missing {key} in {line}");
    }
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("cfg.toml");
    std::fs::write(&p, body).unwrap();
    p
}

fn trained(dir: &Path) -> PathBuf {
    let cfg = write_config(dir, TINY);
    let out = dir.join("run");
    let o = slim(&["train", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out.join("final.slim")
}

#[test]
fn missing_config_exits_2() {
    let o = slim(&["train", "--config", "/nonexistent/cfg.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &TINY.replace("[skill]", "[skill]\nbogus = 1"));
    assert_eq!(slim(&["train", "--config", s(&cfg)]).status.code(), Some(2));
}

#[test]
fn usage_error_exits_2() {
    assert_eq!(slim(&["train"]).status.code(), Some(2));
    assert_eq!(slim(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn train_writes_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let ck = trained(dir.path());
    let run = ck.parent().unwrap();
    assert!(ck.exists());
    assert!(run.join("config.toml").exists());
    let metrics = std::fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    for line in metrics.lines() {
        assert_keys(
            line,
            &[
                "iteration",
                "env_steps",
                "return_reach",
                "return_discovery",
                "return_safety",
                "safety_rate",
                "coverage",
                "repr_loss",
                "critic_loss",
                "policy_loss",
                "entropy",
                "approx_kl",
                "clip_frac",
            ],
        );
    }
}

#[test]
fn out_dir_env_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("from_env");
    let o = Command::new(env!("CARGO_BIN_EXE_slim"))
        .args(["train", "--config", s(&cfg), "--variant", "diayn"])
        .env("SLIM_OUT_DIR", &out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("final.slim").exists());
    let echo = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(echo.contains("variant = \"diayn\""));
}

#[test]
fn eval_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let ck = trained(dir.path());
    let o = slim(&["eval", s(&ck), "--rollouts", "3", "--seeds", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rep: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ck.with_file_name("eval.json")).unwrap()).unwrap();
    assert_eq!(rep["n_rollouts"], 3);
    assert_eq!(rep["per_seed"].as_array().unwrap().len(), 2);

    let path = dir.path().join("roll.jsonl");
    let o = slim(&["export", s(&ck), "--skills", "3", "--out", s(&path)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 3 * 20);
    for line in text.lines() {
        assert_keys(
            line,
            &[
                "rid", "t", "z", "obj", "ee", "yaw", "r_reach", "r_disc", "r_safe", "safe",
            ],
        );
    }
}

#[test]
fn export_io_failure_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let ck = trained(dir.path());
    let o = slim(&["export", s(&ck), "--skills", "2", "--out", "/nonexistent/dir/x.jsonl"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_checkpoint_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("junk.slim");
    std::fs::write(&p, b"not a checkpoint").unwrap();
    assert_eq!(slim(&["eval", s(&p)]).status.code(), Some(2));
}

#[test]
fn hrl_then_follow() {
    let dir = tempfile::tempdir().unwrap();
    let ck = trained(dir.path());
    let out = dir.path().join("hrl");
    let o = slim(&["hrl", s(&ck), "--task", "pos", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let curve = std::fs::read_to_string(out.join("curve.jsonl")).unwrap();
    assert_eq!(curve.lines().count(), 2);
    for line in curve.lines() {
        assert_keys(
            line,
            &[
                "iteration",
                "env_steps",
                "success_rate",
                "mean_return",
                "mean_final_error",
            ],
        );
    }
    let echo = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(echo.contains("pos_threshold = 0.05"));

    let hrl = out.join("hrl.slim");
    let a = slim(&["follow", s(&hrl), "--plan", "1", "--seed", "3", "--budget", "10"]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let text = String::from_utf8_lossy(&a.stdout).to_string();
    let names: Vec<&str> = text
        .lines()
        .skip(1)
        .map(|l| l.split_whitespace().next().unwrap())
        .collect();
    assert_eq!(
        names,
        ["overall_success", "max_distance", "points_success", "safety_rate"]
    );
    let b = slim(&["follow", s(&hrl), "--plan", "1", "--seed", "3", "--budget", "10"]);
    assert_eq!(a.stdout, b.stdout);
    let log = std::fs::read_to_string(out.join("follow.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);

    let bad = dir.path().join("plan.toml");
    std::fs::write(&bad, "waypoints = [[0.0, 0.0]]\n").unwrap();
    assert_eq!(slim(&["follow", s(&hrl), "--plan", s(&bad)]).status.code(), Some(2));
    assert_eq!(slim(&["follow", s(&hrl), "--plan", "7"]).status.code(), Some(2));
}

#[test]
fn hrl_dimension_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let ck = trained(dir.path());
    let cfg = write_config(dir.path(), &TINY.replace("[skill]", "[skill]\nd = 3"));
    let o = slim(&["hrl", s(&ck), "--config", s(&cfg), "--out", s(&dir.path().join("h"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("dimension"));
}
