//! Fitness-based siting of a PV/storage pair on the feeder.
//!
//! Every candidate bus is scored by simulating the feeder hour by hour with a
//! trial PV of fixed rating at that bus: active power follows irradiance,
//! loads stay at their base values, and the co-located battery is idle, so it
//! does not influence the score. The fitness is the summed voltage-violation
//! count plus the summed per-unit losses over the horizon; smaller is better.
//! The two terms carry different units by construction and both components
//! are reported alongside the combined score.
//!
//! Candidates are scored independently of one another by default; a greedy
//! variant commits the best site before scoring the next one.

use rayon::prelude::*;
use thiserror::Error;

use crate::env::{neutral_setpoints, state_from_setpoints};
use crate::model::{FeederNetwork, PvSystem};
use crate::powerflow::{count_violations, total_losses, PowerFlowSolver};
use crate::profile::ExogenousProfile;

#[derive(Debug, Error)]
pub enum PlacementError {
    #[error("candidate bus {0:?} is not in the network")]
    UnknownBus(String),
    #[error("candidate list is empty")]
    NoCandidates,
    #[error("hour list is empty")]
    EmptyHorizon,
    #[error("augmenting the network failed: {0}")]
    Augment(#[from] crate::model::ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacementConfig {
    /// Nameplate of the trial PV placed at each candidate bus, kW.
    pub pv_rating_kw: f64,
}

impl Default for PlacementConfig {
    fn default() -> Self {
        PlacementConfig { pv_rating_kw: 100.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateFitness {
    pub bus: String,
    /// Violating-bus count summed over the horizon; a diverged hour counts
    /// every non-slack bus.
    pub violation_total: f64,
    /// Series losses summed over the horizon, pu.
    pub loss_total_pu: f64,
    /// `violation_total + loss_total_pu`.
    pub fitness: f64,
    pub diverged_hours: usize,
}

/// Scores one candidate bus over the given hours.
pub fn evaluate_fitness(
    net: &FeederNetwork,
    profile: &ExogenousProfile,
    candidate_bus: &str,
    hours: &[usize],
    config: &PlacementConfig,
) -> Result<CandidateFitness, PlacementError> {
    if hours.is_empty() {
        return Err(PlacementError::EmptyHorizon);
    }
    let bus = net
        .bus_index(candidate_bus)
        .ok_or_else(|| PlacementError::UnknownBus(candidate_bus.to_string()))?;

    let mut solver = PowerFlowSolver::new();
    let base_factors = vec![1.0; net.loads.len()];
    let non_slack = net.n_buses() - 1;
    let mut violation_total = 0.0;
    let mut loss_total = 0.0;
    let mut diverged_hours = 0;

    for &hour in hours {
        let irradiance = profile.irradiance(hour);
        // Existing devices at neutral controls; the trial PV adds
        // irradiance-driven active power at the candidate bus.
        let sp = neutral_setpoints(net, irradiance);
        let mut state = state_from_setpoints(net, &sp, &base_factors);
        state.add_injection(bus, net.kw_to_pu(config.pv_rating_kw * irradiance), 0.0);
        match solver.solve(net, &state) {
            Ok(sol) => {
                violation_total += count_violations(&sol).count as f64;
                loss_total += total_losses(net, &state, &sol);
            }
            Err(_) => {
                violation_total += non_slack as f64;
                diverged_hours += 1;
            }
        }
    }

    Ok(CandidateFitness {
        bus: candidate_bus.to_string(),
        violation_total,
        loss_total_pu: loss_total,
        fitness: violation_total + loss_total,
        diverged_hours,
    })
}

/// Scores every candidate independently and returns them sorted by fitness
/// ascending, ties broken by bus id. Candidate evaluations fan out across
/// the rayon pool; the merge order is fixed before sorting, so the result is
/// deterministic regardless of worker count.
pub fn rank_placements(
    net: &FeederNetwork,
    profile: &ExogenousProfile,
    candidates: &[String],
    hours: &[usize],
    config: &PlacementConfig,
    top_k: Option<usize>,
) -> Result<Vec<CandidateFitness>, PlacementError> {
    if candidates.is_empty() {
        return Err(PlacementError::NoCandidates);
    }
    if hours.is_empty() {
        return Err(PlacementError::EmptyHorizon);
    }
    for c in candidates {
        if net.bus_index(c).is_none() {
            return Err(PlacementError::UnknownBus(c.clone()));
        }
    }
    let mut scored: Vec<CandidateFitness> = candidates
        .par_iter()
        .map(|c| evaluate_fitness(net, profile, c, hours, config).expect("validated candidate"))
        .collect();
    sort_ranking(&mut scored);
    if let Some(k) = top_k {
        scored.truncate(k);
    }
    Ok(scored)
}

/// All non-slack bus ids in declaration order, the default candidate set.
pub fn default_candidates(net: &FeederNetwork) -> Vec<String> {
    net.buses
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != net.slack_index())
        .map(|(_, b)| b.id.clone())
        .collect()
}

/// Greedy variant: repeatedly scores the remaining candidates, commits the
/// winner by adding its PV to the working network, and continues until `k`
/// sites are chosen. Each returned entry carries the fitness at selection
/// time, i.e. with all previously committed sites present.
pub fn greedy_placements(
    net: &FeederNetwork,
    profile: &ExogenousProfile,
    candidates: &[String],
    hours: &[usize],
    config: &PlacementConfig,
    k: usize,
) -> Result<Vec<CandidateFitness>, PlacementError> {
    let mut working = net.clone();
    let mut remaining: Vec<String> = candidates.to_vec();
    let mut chosen = Vec::new();
    for round in 0..k.min(candidates.len()) {
        let ranked = rank_placements(&working, profile, &remaining, hours, config, Some(1))?;
        let winner = ranked.into_iter().next().expect("non-empty ranking");
        remaining.retain(|c| *c != winner.bus);
        let mut scenario = working.to_scenario();
        scenario.pvs.push(PvSystem {
            id: format!("placement-pv-{round}"),
            bus: winner.bus.clone(),
            pmpp_kw: config.pv_rating_kw,
            p_min_kw: 0.0,
            p_max_kw: config.pv_rating_kw,
            q_min_kvar: 0.0,
            q_max_kvar: 0.0,
        });
        working = FeederNetwork::from_scenario(scenario)?;
        chosen.push(winner);
    }
    Ok(chosen)
}

fn sort_ranking(scored: &mut [CandidateFitness]) {
    scored.sort_by(|a, b| {
        a.fitness
            .partial_cmp(&b.fitness)
            .expect("finite fitness")
            .then_with(|| a.bus.cmp(&b.bus))
    });
}
