//! End-to-end checks of the `vvo` binary: artifact layout, exit codes,
//! determinism contract, and the thread cap.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn vvo() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vvo"))
}

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn vvo");
    assert!(
        out.status.success(),
        "expected success, got {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read_manifest(dir: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(dir.join("manifest.json")).expect("manifest.json");
    serde_json::from_str(&text).expect("valid manifest json")
}

#[test]
fn place_ranks_candidates_and_writes_a_complete_manifest() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(vvo()
        .arg("place")
        .arg("--scenario")
        .arg(scenario("feeder13.json"))
        .arg("--out")
        .arg(dir.path())
        .arg("--top-k")
        .arg("3"));
    let csv = std::fs::read_to_string(dir.path().join("placement.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4, "header plus three ranked rows");
    assert_eq!(lines[0], "rank,bus,violation_total,loss_total_pu,fitness,diverged_hours");
    for (i, line) in lines[1..].iter().enumerate() {
        assert!(line.starts_with(&format!("{},", i + 1)), "rank column in {line}");
    }
    let manifest = read_manifest(dir.path());
    assert_eq!(manifest["subcommand"], "place");
    assert!(manifest["finished_unix"].is_u64(), "manifest stamped at completion");
    assert_eq!(manifest["scenario_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn place_rejects_a_missing_scenario_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = vvo()
        .arg("place")
        .arg("--scenario")
        .arg("/nonexistent/feeder.json")
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("/nonexistent/feeder.json"), "stderr: {stderr}");
}

#[test]
fn place_rejects_an_empty_horizon() {
    let dir = tempfile::tempdir().unwrap();
    let out = vvo()
        .arg("place")
        .arg("--scenario")
        .arg(scenario("feeder13.json"))
        .arg("--out")
        .arg(dir.path())
        .arg("--hours")
        .arg("0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty horizon"));
}

#[test]
fn train_with_zero_steps_is_a_valid_empty_run() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(vvo()
        .arg("train")
        .arg("--scenario")
        .arg(scenario("toy_discrete.json"))
        .arg("--out")
        .arg(dir.path())
        .arg("--steps")
        .arg("0"));
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(
        metrics,
        "iteration,env_steps,mean_episode_reward,steps_per_sec,queue_occupancy,version_lag,wall_clock_s\n"
    );
    assert!(dir.path().join("checkpoint.json").exists());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["env_steps"], 0);
}

#[test]
fn sync_training_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut outs = Vec::new();
    for run in ["a", "b"] {
        let out_dir = dir.path().join(run);
        run_ok(vvo()
            .arg("train")
            .arg("--scenario")
            .arg(scenario("toy_discrete.json"))
            .arg("--out")
            .arg(&out_dir)
            .arg("--sync")
            .arg("--actors")
            .arg("1")
            .arg("--seed")
            .arg("3")
            .arg("--steps")
            .arg("2000")
            .arg("--batch-size")
            .arg("500")
            .arg("--metrics-window")
            .arg("200"));
        outs.push(std::fs::read(out_dir.join("metrics.csv")).unwrap());
    }
    assert_eq!(outs[0], outs[1], "metrics files must match byte for byte");
    assert!(!outs[0].is_empty());
}

#[test]
fn eval_refuses_a_checkpoint_from_another_interface() {
    let dir = tempfile::tempdir().unwrap();
    let train_dir = dir.path().join("train");
    run_ok(vvo()
        .arg("train")
        .arg("--scenario")
        .arg(scenario("toy_discrete.json"))
        .arg("--out")
        .arg(&train_dir)
        .arg("--steps")
        .arg("0"));
    let out = vvo()
        .arg("eval")
        .arg("--scenario")
        .arg(scenario("feeder13.json"))
        .arg("--checkpoint")
        .arg(train_dir.join("checkpoint.json"))
        .arg("--out")
        .arg(dir.path().join("eval"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not fit"));
}

#[test]
fn eval_writes_day_traces_with_in_range_taps() {
    let dir = tempfile::tempdir().unwrap();
    let train_dir = dir.path().join("train");
    run_ok(vvo()
        .arg("train")
        .arg("--scenario")
        .arg(scenario("toy_discrete.json"))
        .arg("--out")
        .arg(&train_dir)
        .arg("--steps")
        .arg("0"));
    let eval_dir = dir.path().join("eval");
    run_ok(vvo()
        .arg("eval")
        .arg("--scenario")
        .arg(scenario("toy_discrete.json"))
        .arg("--checkpoint")
        .arg(train_dir.join("checkpoint.json"))
        .arg("--out")
        .arg(&eval_dir));
    let sp = std::fs::read_to_string(eval_dir.join("eval_setpoints.csv")).unwrap();
    let lines: Vec<&str> = sp.lines().collect();
    assert_eq!(lines.len(), 25, "header plus 24 hourly rows");
    assert!(lines[0].starts_with("hour,tap_t1,cap_cap-b3,cap_cap-b4"));
    for line in &lines[1..] {
        let tap: u32 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(tap <= 32, "tap index out of range in {line}");
    }
    let viols = std::fs::read_to_string(eval_dir.join("eval_violations.csv")).unwrap();
    assert_eq!(viols.lines().count(), 25);
    assert!(viols.starts_with("hour,violation_count,violation_fraction,reward,converged"));
}

#[test]
fn baseline_auto_enumerates_the_toy_and_finds_zero_violations() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(vvo()
        .arg("baseline")
        .arg("--scenario")
        .arg(scenario("toy_discrete.json"))
        .arg("--out")
        .arg(dir.path())
        .arg("--method")
        .arg("auto"));
    let result: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("result.json")).unwrap())
            .unwrap();
    assert_eq!(result["method"], "exhaustive");
    assert_eq!(result["evaluations"], 132);
    assert_eq!(result["best_reward"].as_f64().unwrap(), 0.0);
    let trace = std::fs::read_to_string(dir.path().join("baseline.csv")).unwrap();
    assert!(trace.starts_with("step,best_reward"));
}

#[test]
fn baseline_exhaustive_rejects_continuous_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let out = vvo()
        .arg("baseline")
        .arg("--scenario")
        .arg(scenario("feeder13.json"))
        .arg("--out")
        .arg(dir.path())
        .arg("--method")
        .arg("exhaustive")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn pf_prints_a_voltage_profile() {
    let out = run_ok(vvo()
        .arg("pf")
        .arg("--scenario")
        .arg(scenario("toy_discrete.json"))
        .arg("--tap")
        .arg("20"));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("v_pu"));
    assert!(stdout.contains("converged in"));
    assert!(stdout.lines().any(|l| l.starts_with("b4")));
}

#[test]
fn pf_rejects_an_out_of_range_tap() {
    let out = vvo()
        .arg("pf")
        .arg("--scenario")
        .arg(scenario("toy_discrete.json"))
        .arg("--tap")
        .arg("40")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn vvo_threads_caps_the_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(vvo()
        .env("VVO_THREADS", "1")
        .arg("train")
        .arg("--scenario")
        .arg(scenario("toy_discrete.json"))
        .arg("--out")
        .arg(dir.path())
        .arg("--actors")
        .arg("4")
        .arg("--steps")
        .arg("500")
        .arg("--batch-size")
        .arg("250")
        .arg("--metrics-window")
        .arg("100"));
    let manifest = read_manifest(dir.path());
    assert_eq!(manifest["config"]["actors"], 1);
    assert_eq!(manifest["config"]["actors_requested"], 4);
}

#[test]
fn unknown_subcommands_exit_with_the_usage_code() {
    let out = vvo().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
