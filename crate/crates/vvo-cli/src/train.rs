//! `train`: run the actor-learner trainer on a scenario and persist the
//! checkpoint, per-iteration metrics CSV, and a run summary.

use std::fs;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use clap::Args;
use vvo_rl::envs::{EnvFactory, Environment};
use vvo_rl::policy::{descriptor_hash, save_checkpoint};
use vvo_rl::runtime::{run as train_run, RuntimeConfig, RuntimeError, StopReason};

use crate::common::{
    build_env, cap_workers, ensure_out_dir, load_scenario, path_str, scenario_hash, usage,
    AppError,
};
use crate::manifest;

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Scenario JSON file.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Output directory for checkpoint, metrics, and manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Rollout worker count (capped by VVO_THREADS).
    #[arg(long, default_value_t = 4)]
    pub actors: usize,
    /// Environment-step budget.
    #[arg(long, default_value_t = 200_000)]
    pub steps: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Deterministic single-threaded mode (requires --actors 1).
    #[arg(long)]
    pub sync: bool,
    #[arg(long, default_value_t = 2500)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 50)]
    pub fragment_length: usize,
    #[arg(long, default_value_t = 16)]
    pub queue_capacity: usize,
    #[arg(long, default_value_t = 5e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.01)]
    pub entropy_coef: f64,
    #[arg(long, default_value_t = 40.0)]
    pub grad_clip: f64,
    #[arg(long, default_value_t = 0.99)]
    pub gamma: f64,
    /// Stop once the reward window mean reaches this level.
    #[arg(long, allow_negative_numbers = true)]
    pub stop_reward: Option<f64>,
    /// Wall-clock cap in minutes.
    #[arg(long)]
    pub max_minutes: Option<f64>,
    /// Episodes in the rolling reward window.
    #[arg(long, default_value_t = 1000)]
    pub metrics_window: usize,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [256, 256])]
    pub hidden: Vec<usize>,
    /// Seed for the irradiance profile.
    #[arg(long, default_value_t = 7)]
    pub profile_seed: u64,
}

pub fn run(args: &TrainArgs) -> Result<(), AppError> {
    let net = Arc::new(load_scenario(&args.scenario)?);
    let hash = scenario_hash(&args.scenario)?;
    ensure_out_dir(&args.out)?;

    let actors = cap_workers(args.actors);
    let cfg = RuntimeConfig {
        num_actors: actors,
        fragment_length: args.fragment_length,
        batch_size: args.batch_size,
        queue_capacity: args.queue_capacity,
        total_env_steps: args.steps,
        stop_reward_mean: args.stop_reward,
        metrics_window: args.metrics_window,
        gamma: args.gamma,
        entropy_coef: args.entropy_coef,
        grad_clip: args.grad_clip,
        sync: args.sync,
        seed: args.seed,
        max_duration: args.max_minutes.map(minutes_to_duration),
        hidden: args.hidden.clone(),
        adam: vvo_rl::optim::AdamConfig { lr: args.lr, ..Default::default() },
        ..Default::default()
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;

    let metrics_path = args.out.join("metrics.csv");
    let checkpoint_path = args.out.join("checkpoint.json");
    let report_path = args.out.join("report.json");

    let handle = manifest::begin(
        &args.out,
        "train",
        serde_json::json!({
            "scenario": path_str(&args.scenario),
            "actors": actors,
            "actors_requested": args.actors,
            "steps": args.steps,
            "seed": args.seed,
            "sync": args.sync,
            "batch_size": args.batch_size,
            "fragment_length": args.fragment_length,
            "queue_capacity": args.queue_capacity,
            "lr": args.lr,
            "entropy_coef": args.entropy_coef,
            "grad_clip": args.grad_clip,
            "gamma": args.gamma,
            "stop_reward": args.stop_reward,
            "max_minutes": args.max_minutes,
            "metrics_window": args.metrics_window,
            "hidden": args.hidden,
            "profile_seed": args.profile_seed,
        }),
        hash,
        args.seed,
        vec![path_str(&metrics_path), path_str(&checkpoint_path), path_str(&report_path)],
    )?;

    let profile_seed = args.profile_seed;
    let factory: Arc<dyn EnvFactory> = {
        let net = Arc::clone(&net);
        Arc::new(move || -> Box<dyn Environment> {
            Box::new(build_env(Arc::clone(&net), profile_seed))
        })
    };

    let report = train_run(&cfg, factory, Some(&metrics_path)).map_err(|e| match e {
        RuntimeError::BadConfig(m) => usage(m),
        other => AppError::Internal(other.into()),
    })?;

    let probe = build_env(Arc::clone(&net), profile_seed);
    let hash = descriptor_hash(probe.observation_len(), &probe.action_space());
    save_checkpoint(&checkpoint_path, &report.policy, &hash)?;

    let stop_reason = match report.stop_reason {
        StopReason::BudgetExhausted => "budget_exhausted",
        StopReason::RewardReached => "reward_reached",
        StopReason::TimeLimit => "time_limit",
        StopReason::WorkersStopped => "workers_stopped",
    };
    let summary = serde_json::json!({
        "iterations": report.iterations,
        "env_steps": report.env_steps,
        "produced_steps": report.produced_steps,
        "drained_steps": report.drained_steps,
        "final_mean_reward": report.final_mean_reward,
        "best_mean_reward": report.best_mean_reward,
        "duration_s": report.duration.as_secs_f64(),
        "steps_per_sec": report.steps_per_sec,
        "max_version_lag": report.max_version_lag,
        "skipped_updates": report.skipped_updates,
        "fifo_violations": report.fifo_violations,
        "panicked_workers": report.panicked_workers,
        "fragments_produced": report.accounting.produced,
        "fragments_consumed": report.accounting.consumed,
        "fragments_drained": report.accounting.drained,
        "stop_reason": stop_reason,
        "policy_version": report.policy.version(),
    });
    fs::write(&report_path, serde_json::to_string_pretty(&summary)?)?;

    println!(
        "trained {} iterations / {} env steps, final mean reward {}, stop: {stop_reason}",
        report.iterations,
        report.env_steps,
        report
            .final_mean_reward
            .map(|m| format!("{m:.6}"))
            .unwrap_or_else(|| "n/a".into()),
    );
    handle.finish()
}

fn minutes_to_duration(minutes: f64) -> Duration {
    Duration::from_secs_f64((minutes * 60.0).max(0.0))
}
