//! `pf`: one-shot power-flow debug dump. Solves the scenario under neutral
//! setpoints with optional overrides and prints per-bus voltages plus a
//! convergence summary.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use vvo_core::env::{neutral_setpoints, state_from_setpoints};
use vvo_core::powerflow::{count_violations, total_losses, PowerFlowSolver};

use crate::common::{load_scenario, usage, AppError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CapMode {
    Off,
    On,
}

#[derive(Debug, Args)]
pub struct PfArgs {
    /// Scenario JSON file.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Solar irradiance in [0, 1].
    #[arg(long, default_value_t = 1.0)]
    pub irradiance: f64,
    /// Uniform demand multiplier.
    #[arg(long, default_value_t = 1.0)]
    pub load_factor: f64,
    /// Tap index override applied to every transformer.
    #[arg(long)]
    pub tap: Option<u32>,
    /// Capacitor switch state.
    #[arg(long, value_enum, default_value_t = CapMode::Off)]
    pub caps: CapMode,
    /// Scale on the PV active-power output relative to available power.
    #[arg(long, default_value_t = 1.0)]
    pub pv_scale: f64,
}

pub fn run(args: &PfArgs) -> Result<(), AppError> {
    if !(0.0..=1.5).contains(&args.irradiance) {
        return Err(usage("--irradiance must lie in [0, 1.5]"));
    }
    if args.load_factor < 0.0 {
        return Err(usage("--load-factor must be non-negative"));
    }
    let net = load_scenario(&args.scenario)?;
    if let Some(tap) = args.tap {
        for t in &net.transformers {
            if tap >= t.num_steps {
                return Err(usage(format!(
                    "--tap {tap} out of range for transformer {} with {} steps",
                    t.id, t.num_steps
                )));
            }
        }
    }

    let mut sp = neutral_setpoints(&net, args.irradiance);
    for kw in sp.pv_p_kw.iter_mut() {
        *kw *= args.pv_scale.clamp(0.0, 1.0);
    }
    for status in sp.cap_status.iter_mut() {
        *status = matches!(args.caps, CapMode::On);
    }
    if let Some(tap) = args.tap {
        for t in sp.tap_indices.iter_mut() {
            *t = tap;
        }
    }
    let factors = vec![args.load_factor; net.loads.len()];
    let state = state_from_setpoints(&net, &sp, &factors);

    let mut solver = PowerFlowSolver::new();
    match solver.solve(&net, &state) {
        Ok(sol) => {
            println!("{:<10} {:>10} {:>10}", "bus", "v_pu", "angle_deg");
            for (i, bus) in net.buses.iter().enumerate() {
                println!(
                    "{:<10} {:>10.6} {:>10.4}",
                    bus.id,
                    sol.v_mag[i],
                    sol.v_ang[i].to_degrees()
                );
            }
            let report = count_violations(&sol);
            let losses = total_losses(&net, &state, &sol);
            println!();
            println!(
                "converged in {} iterations, max mismatch {:.3e} pu",
                sol.iterations, sol.max_mismatch
            );
            println!(
                "violations: {} of {} buses; series losses {:.6} pu; slack {:.6} pu P, {:.6} pu Q",
                report.count, report.non_slack_buses, losses, sol.slack_p_pu, sol.slack_q_pu
            );
            Ok(())
        }
        Err(e) => Err(AppError::Internal(anyhow::anyhow!(
            "power flow did not converge: {e}"
        ))),
    }
}
