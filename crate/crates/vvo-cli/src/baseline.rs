//! `baseline`: classical search over one scenario hour, with the best-so-far
//! trace written as CSV and the winning action as JSON.

use std::fs;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, ValueEnum};
use vvo_core::env::ActionVector;
use vvo_rl::baselines::{
    exhaustive_search, particle_swarm, random_search, PsoConfig, SearchError, SearchResult,
    ENUMERATION_LIMIT,
};

use crate::common::{
    build_env, ensure_out_dir, load_scenario, path_str, scenario_hash, usage, AppError,
};
use crate::manifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    /// Global-best particle swarm over the relaxed action box.
    Pso,
    /// Uniform random sampling with a fixed evaluation budget.
    Random,
    /// Enumerate every discrete state (discrete-only scenarios).
    Exhaustive,
    /// Exhaustive when the space is small and discrete-only, swarm otherwise.
    Auto,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    /// Scenario JSON file.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Output directory for the trace CSV, result JSON, and manifest.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Auto)]
    pub method: Method,
    /// Hour of the profile year to optimize.
    #[arg(long, default_value_t = 12)]
    pub hour: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub particles: usize,
    #[arg(long, default_value_t = 50)]
    pub iterations: usize,
    /// Evaluation budget for random search.
    #[arg(long, default_value_t = 5000)]
    pub budget: u64,
    /// Seed for the scenario's demand draw at the chosen hour.
    #[arg(long, default_value_t = 0)]
    pub episode_seed: u64,
    /// Seed for the irradiance profile.
    #[arg(long, default_value_t = 7)]
    pub profile_seed: u64,
}

pub fn run(args: &BaselineArgs) -> Result<(), AppError> {
    let net = Arc::new(load_scenario(&args.scenario)?);
    let hash = scenario_hash(&args.scenario)?;
    ensure_out_dir(&args.out)?;

    let mut env = build_env(Arc::clone(&net), args.profile_seed);
    let space = env.action_space();
    let episode_seed = args.episode_seed;
    let hour = args.hour;
    let mut objective = |action: &ActionVector| -> f64 {
        env.reset(episode_seed, Some(hour));
        env.step(action).reward
    };

    let method = match args.method {
        Method::Auto => {
            if space.is_discrete_only() && space.total_discrete_states() <= ENUMERATION_LIMIT {
                Method::Exhaustive
            } else {
                Method::Pso
            }
        }
        m => m,
    };
    let method_name = match method {
        Method::Pso => "pso",
        Method::Random => "random",
        Method::Exhaustive => "exhaustive",
        Method::Auto => unreachable!(),
    };

    let trace_path = args.out.join("baseline.csv");
    let result_path = args.out.join("result.json");
    let handle = manifest::begin(
        &args.out,
        "baseline",
        serde_json::json!({
            "scenario": path_str(&args.scenario),
            "method": method_name,
            "hour": args.hour,
            "seed": args.seed,
            "particles": args.particles,
            "iterations": args.iterations,
            "budget": args.budget,
            "episode_seed": args.episode_seed,
            "profile_seed": args.profile_seed,
        }),
        hash,
        args.seed,
        vec![path_str(&trace_path), path_str(&result_path)],
    )?;

    let map_search_err = |e: SearchError| usage(e.to_string());
    let result: SearchResult = match method {
        Method::Pso => {
            let cfg = PsoConfig {
                particles: args.particles,
                iterations: args.iterations,
                seed: args.seed,
                ..Default::default()
            };
            particle_swarm(&space, &mut objective, &cfg).map_err(map_search_err)?
        }
        Method::Random => {
            random_search(&space, &mut objective, args.budget, args.seed).map_err(map_search_err)?
        }
        Method::Exhaustive => exhaustive_search(&space, &mut objective).map_err(map_search_err)?,
        Method::Auto => unreachable!(),
    };

    let mut w = BufWriter::new(File::create(&trace_path)?);
    writeln!(w, "step,best_reward")?;
    for (i, v) in result.trace.iter().enumerate() {
        writeln!(w, "{},{v}", i + 1)?;
    }
    w.flush()?;

    fs::write(
        &result_path,
        serde_json::to_string_pretty(&serde_json::json!({
            "method": method_name,
            "best_reward": result.best_value,
            "evaluations": result.evaluations,
            "best_continuous": result.best_action.continuous,
            "best_discrete": result.best_action.discrete,
        }))?,
    )?;

    println!(
        "{method_name} best reward {} after {} evaluations",
        result.best_value, result.evaluations
    );
    handle.finish()
}
