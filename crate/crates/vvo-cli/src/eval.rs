//! `eval`: roll a trained checkpoint deterministically over one day of
//! hourly episodes and write per-device setpoint traces plus per-hour
//! violation counts.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::Arc;

use clap::Args;
use vvo_rl::policy::{descriptor_hash, load_checkpoint, PolicyError};

use crate::common::{
    build_env, ensure_out_dir, load_scenario, path_str, scenario_hash, usage, AppError,
};
use crate::manifest;

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Scenario JSON file.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Trained checkpoint to evaluate.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output directory for the trace CSVs and manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Day offset into the profile year.
    #[arg(long, default_value_t = 0)]
    pub day: usize,
    /// Base seed for the per-hour demand draws.
    #[arg(long, default_value_t = 0)]
    pub episode_seed: u64,
    /// Seed for the irradiance profile.
    #[arg(long, default_value_t = 7)]
    pub profile_seed: u64,
}

pub fn run(args: &EvalArgs) -> Result<(), AppError> {
    let net = Arc::new(load_scenario(&args.scenario)?);
    let hash = scenario_hash(&args.scenario)?;
    ensure_out_dir(&args.out)?;

    let mut env = build_env(Arc::clone(&net), args.profile_seed);
    let expected = descriptor_hash(env.observation_len(), &env.action_space());
    let policy = load_checkpoint(&args.checkpoint, &expected).map_err(|e| match e {
        PolicyError::DescriptorMismatch { .. } | PolicyError::ShapeMismatch(_) => usage(format!(
            "checkpoint {} does not fit scenario {}: {e}",
            args.checkpoint.display(),
            args.scenario.display()
        )),
        other => AppError::Internal(other.into()),
    })?;

    let setpoints_path = args.out.join("eval_setpoints.csv");
    let violations_path = args.out.join("eval_violations.csv");
    let handle = manifest::begin(
        &args.out,
        "eval",
        serde_json::json!({
            "scenario": path_str(&args.scenario),
            "checkpoint": path_str(&args.checkpoint),
            "day": args.day,
            "episode_seed": args.episode_seed,
            "profile_seed": args.profile_seed,
        }),
        hash,
        args.episode_seed,
        vec![path_str(&setpoints_path), path_str(&violations_path)],
    )?;

    let mut sp_w = BufWriter::new(File::create(&setpoints_path)?);
    let mut header = String::from("hour");
    for t in &net.transformers {
        header.push_str(&format!(",tap_{}", t.id));
    }
    for c in &net.capacitors {
        header.push_str(&format!(",cap_{}", c.id));
    }
    for p in &net.pvs {
        header.push_str(&format!(",pv_{}_kw,pv_{}_kvar", p.id, p.id));
    }
    for b in &net.batteries {
        header.push_str(&format!(",batt_{}_kw", b.id));
    }
    writeln!(sp_w, "{header}")?;

    let mut viol_w = BufWriter::new(File::create(&violations_path)?);
    writeln!(viol_w, "hour,violation_count,violation_fraction,reward,converged")?;

    let mut total_violations = 0usize;
    for h in 0..24 {
        let hour = args.day * 24 + h;
        let reset = env.reset(args.episode_seed.wrapping_add(h as u64), Some(hour));
        let action = policy.mode(&reset.observation);
        let sp = env.decode(&action);
        let out = env.step(&action);

        let mut row = format!("{hour}");
        for tap in &sp.tap_indices {
            row.push_str(&format!(",{tap}"));
        }
        for status in &sp.cap_status {
            row.push_str(&format!(",{}", u8::from(*status)));
        }
        for (kw, kvar) in sp.pv_p_kw.iter().zip(&sp.pv_q_kvar) {
            row.push_str(&format!(",{kw},{kvar}"));
        }
        for kw in &sp.battery_p_kw {
            row.push_str(&format!(",{kw}"));
        }
        writeln!(sp_w, "{row}")?;

        writeln!(
            viol_w,
            "{hour},{},{},{},{}",
            out.info.violation_count,
            out.info.violation_fraction,
            out.reward,
            u8::from(out.info.converged)
        )?;
        total_violations += out.info.violation_count;
    }
    sp_w.flush()?;
    viol_w.flush()?;

    println!(
        "evaluated day {} with policy version {}: {} violating bus-hours across 24 hours",
        args.day,
        policy.version(),
        total_violations
    );
    handle.finish()
}
