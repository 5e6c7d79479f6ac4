//! `place`: rank candidate buses for a new PV installation over a daily
//! horizon and write the ranking as CSV.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::Args;
use vvo_core::placement::{default_candidates, rank_placements, PlacementConfig};
use vvo_core::profile::ExogenousProfile;

use crate::common::{ensure_out_dir, load_scenario, path_str, scenario_hash, usage, AppError};
use crate::manifest;

#[derive(Debug, Args)]
pub struct PlaceArgs {
    /// Scenario JSON file.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Output directory for the ranking CSV and manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Horizon length in hours, starting at hour 0 of the profile.
    #[arg(long, default_value_t = 24)]
    pub hours: usize,
    /// Evaluate every Nth hour of the horizon.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// Keep only the best K candidates (all when omitted).
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Nameplate of the trial PV, kW.
    #[arg(long, default_value_t = 100.0)]
    pub rating_kw: f64,
    /// Candidate bus ids (default: every non-slack bus).
    #[arg(long, value_delimiter = ',')]
    pub candidates: Vec<String>,
    /// Seed for the irradiance profile.
    #[arg(long, default_value_t = 7)]
    pub profile_seed: u64,
}

pub fn run(args: &PlaceArgs) -> Result<(), AppError> {
    if args.hours == 0 {
        return Err(usage("empty horizon: --hours must be at least 1"));
    }
    if args.stride == 0 {
        return Err(usage("--stride must be at least 1"));
    }
    let net = load_scenario(&args.scenario)?;
    let hash = scenario_hash(&args.scenario)?;
    ensure_out_dir(&args.out)?;

    let candidates = if args.candidates.is_empty() {
        default_candidates(&net)
    } else {
        args.candidates.clone()
    };
    let hours: Vec<usize> = (0..args.hours).step_by(args.stride).collect();
    let csv_path = args.out.join("placement.csv");

    let handle = manifest::begin(
        &args.out,
        "place",
        serde_json::json!({
            "scenario": path_str(&args.scenario),
            "hours": args.hours,
            "stride": args.stride,
            "top_k": args.top_k,
            "rating_kw": args.rating_kw,
            "candidates": candidates,
            "profile_seed": args.profile_seed,
        }),
        hash,
        args.profile_seed,
        vec![path_str(&csv_path)],
    )?;

    let profile = ExogenousProfile::new(args.profile_seed);
    let config = PlacementConfig { pv_rating_kw: args.rating_kw };
    let ranking = rank_placements(&net, &profile, &candidates, &hours, &config, args.top_k)
        .map_err(|e| usage(e.to_string()))?;

    let mut w = BufWriter::new(File::create(&csv_path)?);
    writeln!(w, "rank,bus,violation_total,loss_total_pu,fitness,diverged_hours")?;
    for (i, c) in ranking.iter().enumerate() {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            i + 1,
            c.bus,
            c.violation_total,
            c.loss_total_pu,
            c.fitness,
            c.diverged_hours
        )?;
    }
    w.flush()?;
    println!(
        "ranked {} candidates over {} hours; best: {}",
        ranking.len(),
        hours.len(),
        ranking.first().map(|c| c.bus.as_str()).unwrap_or("-")
    );
    handle.finish()
}
