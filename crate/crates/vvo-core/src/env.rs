//! One-step volt-var control environment over the feeder model.
//!
//! Each episode is a single control decision: `reset` samples an hour of the
//! year and demand variation, solves the feeder under neutral controls, and
//! returns the observation `[V_1..V_N, D_1..D_M]` (bus voltage magnitudes
//! followed by per-unit active demands, both in declaration order). `step`
//! applies one decoded action, solves again, and terminates the episode with
//! reward `-(violation fraction)` under the default weights.
//!
//! Action layout is fixed by the device lists of the scenario:
//! continuous block `[Q_pv x n_pv, P_pv x n_pv, P_batt x n_batt]` in
//! [-1, 1], then a discrete block with one switch entry per capacitor
//! followed by one tap entry per transformer.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::model::FeederNetwork;
use crate::powerflow::{count_violations, total_losses, NetworkState, PowerFlowSolver};
use crate::profile::{ExogenousProfile, HOURS_PER_YEAR};

/// Sizes of the hybrid action space for a scenario.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSpaceDescriptor {
    pub n_continuous: usize,
    /// One entry per discrete device: 2 per capacitor, then the tap position
    /// count per transformer.
    pub discrete_cardinalities: Vec<usize>,
}

impl ActionSpaceDescriptor {
    pub fn n_discrete(&self) -> usize {
        self.discrete_cardinalities.len()
    }

    pub fn total_discrete_states(&self) -> usize {
        self.discrete_cardinalities.iter().product::<usize>().max(1)
    }

    pub fn is_discrete_only(&self) -> bool {
        self.n_continuous == 0
    }
}

/// Action space implied by the scenario's device lists.
pub fn action_space(net: &FeederNetwork) -> ActionSpaceDescriptor {
    let mut discrete: Vec<usize> = vec![2; net.capacitors.len()];
    discrete.extend(net.transformers.iter().map(|t| t.num_steps as usize));
    ActionSpaceDescriptor {
        n_continuous: 2 * net.pvs.len() + net.batteries.len(),
        discrete_cardinalities: discrete,
    }
}

/// Raw policy output: continuous entries in [-1, 1] and one index per
/// discrete device. Entries outside range are clamped at decode time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionVector {
    pub continuous: Vec<f64>,
    pub discrete: Vec<u32>,
}

/// Physical setpoints after denormalization.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceSetpoints {
    pub pv_p_kw: Vec<f64>,
    pub pv_q_kvar: Vec<f64>,
    pub battery_p_kw: Vec<f64>,
    pub cap_status: Vec<bool>,
    pub tap_indices: Vec<u32>,
}

fn lerp(lo: f64, hi: f64, x: f64) -> f64 {
    let t = (x.clamp(-1.0, 1.0) + 1.0) / 2.0;
    lo + t * (hi - lo)
}

/// Maps a normalized action onto device bounds. The PV active-power ceiling
/// is the irradiance-limited available power `min(p_max, pmpp * irradiance)`,
/// so every decoded setpoint is feasible for the hour by construction.
pub fn decode_action(
    net: &FeederNetwork,
    action: &ActionVector,
    irradiance: f64,
) -> DeviceSetpoints {
    let n_pv = net.pvs.len();
    let n_batt = net.batteries.len();
    let want = 2 * n_pv + n_batt;
    assert_eq!(action.continuous.len(), want, "continuous action length");
    let n_caps = net.capacitors.len();
    let n_taps = net.transformers.len();
    assert_eq!(action.discrete.len(), n_caps + n_taps, "discrete action length");

    let get = |i: usize| action.continuous[i];
    let mut pv_q_kvar = Vec::with_capacity(n_pv);
    let mut pv_p_kw = Vec::with_capacity(n_pv);
    for (i, pv) in net.pvs.iter().enumerate() {
        pv_q_kvar.push(lerp(pv.q_min_kvar, pv.q_max_kvar, get(i)));
        let ceiling = (pv.pmpp_kw * irradiance).min(pv.p_max_kw).max(pv.p_min_kw);
        pv_p_kw.push(lerp(pv.p_min_kw, ceiling, get(n_pv + i)));
    }
    let battery_p_kw = net
        .batteries
        .iter()
        .enumerate()
        .map(|(i, b)| lerp(b.p_min_kw, b.p_max_kw, get(2 * n_pv + i)))
        .collect();

    let cap_status = (0..n_caps).map(|i| action.discrete[i] != 0).collect();
    let tap_indices = net
        .transformers
        .iter()
        .enumerate()
        .map(|(i, t)| action.discrete[n_caps + i].min(t.num_steps - 1))
        .collect();

    DeviceSetpoints { pv_p_kw, pv_q_kvar, battery_p_kw, cap_status, tap_indices }
}

/// Setpoints the environment applies before the agent acts: taps at their
/// unity position, capacitors open, PV at full available power and unity
/// power factor, batteries idle.
pub fn neutral_setpoints(net: &FeederNetwork, irradiance: f64) -> DeviceSetpoints {
    DeviceSetpoints {
        pv_p_kw: net
            .pvs
            .iter()
            .map(|pv| (pv.pmpp_kw * irradiance).min(pv.p_max_kw).max(pv.p_min_kw))
            .collect(),
        pv_q_kvar: vec![0.0; net.pvs.len()],
        battery_p_kw: vec![0.0; net.batteries.len()],
        cap_status: vec![false; net.capacitors.len()],
        tap_indices: net.transformers.iter().map(|t| t.neutral_position()).collect(),
    }
}

/// Builds a power-flow state from setpoints plus scaled loads.
pub fn state_from_setpoints(
    net: &FeederNetwork,
    sp: &DeviceSetpoints,
    load_factors: &[f64],
) -> NetworkState {
    assert_eq!(load_factors.len(), net.loads.len(), "load factor length");
    let mut state = NetworkState {
        tap_indices: sp.tap_indices.clone(),
        capacitor_status: sp.cap_status.clone(),
        p_injection_pu: vec![0.0; net.n_buses()],
        q_injection_pu: vec![0.0; net.n_buses()],
    };
    for ((load, &bus), &f) in net.loads.iter().zip(&net.index.load_bus).zip(load_factors) {
        state.add_injection(bus, -net.kw_to_pu(load.base_p_kw * f), -net.kw_to_pu(load.base_q_kvar * f));
    }
    for ((p, q), &bus) in sp.pv_p_kw.iter().zip(&sp.pv_q_kvar).zip(&net.index.pv_bus) {
        state.add_injection(bus, net.kw_to_pu(*p), net.kw_to_pu(*q));
    }
    for (&p, &bus) in sp.battery_p_kw.iter().zip(&net.index.battery_bus) {
        state.add_injection(bus, net.kw_to_pu(p), 0.0);
    }
    state
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    /// Standard deviation of the Gaussian demand factor (mean 1, floored at 0).
    pub load_sigma: f64,
    /// Weight on per-unit losses in the reward.
    pub loss_weight: f64,
    /// Weight on the violation fraction in the reward.
    pub violation_weight: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig { load_sigma: 0.1, loss_weight: 0.0, violation_weight: 1.0 }
    }
}

/// Reward when the post-action power flow fails to converge.
pub const DIVERGED_REWARD: f64 = -1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ResetOutcome {
    pub observation: Vec<f64>,
    pub hour: usize,
    pub irradiance: f64,
    /// False when even the neutral-control flow diverged; the observation is
    /// then built from flat 1.0 voltages.
    pub baseline_converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub converged: bool,
    pub violation_count: usize,
    pub violation_fraction: f64,
    pub losses_pu: Option<f64>,
    pub hour: usize,
    pub irradiance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone)]
struct EpisodeContext {
    hour: usize,
    irradiance: f64,
    load_factors: Vec<f64>,
    stepped: bool,
}

/// The control environment. Cloning shares the immutable model and profile
/// but gives the clone its own solver scratch and episode state.
#[derive(Debug, Clone)]
pub struct VvoEnv {
    net: Arc<FeederNetwork>,
    profile: Arc<ExogenousProfile>,
    config: EnvConfig,
    solver: PowerFlowSolver,
    ctx: Option<EpisodeContext>,
}

impl VvoEnv {
    pub fn new(net: Arc<FeederNetwork>, profile: Arc<ExogenousProfile>, config: EnvConfig) -> Self {
        VvoEnv { net, profile, config, solver: PowerFlowSolver::new(), ctx: None }
    }

    pub fn network(&self) -> &Arc<FeederNetwork> {
        &self.net
    }

    pub fn profile(&self) -> &Arc<ExogenousProfile> {
        &self.profile
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn action_space(&self) -> ActionSpaceDescriptor {
        action_space(&self.net)
    }

    /// Observation length: one voltage per bus plus one demand per load.
    pub fn observation_len(&self) -> usize {
        self.net.n_buses() + self.net.loads.len()
    }

    pub fn current_hour(&self) -> Option<usize> {
        self.ctx.as_ref().map(|c| c.hour)
    }

    pub fn current_irradiance(&self) -> Option<f64> {
        self.ctx.as_ref().map(|c| c.irradiance)
    }

    /// Demand factors drawn at the last `reset`; empty before the first one.
    pub fn last_load_factors(&self) -> &[f64] {
        self.ctx.as_ref().map(|c| c.load_factors.as_slice()).unwrap_or(&[])
    }

    /// Starts an episode. The seed fully determines the sampled hour (when
    /// `hour` is `None`) and the demand factors, so identical `(seed, hour)`
    /// pairs reproduce identical observations.
    pub fn reset(&mut self, seed: u64, hour: Option<usize>) -> ResetOutcome {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hour = match hour {
            Some(h) => h % HOURS_PER_YEAR,
            None => rng.gen_range(0..HOURS_PER_YEAR),
        };
        let irradiance = self.profile.irradiance(hour);

        let normal = Normal::new(1.0, self.config.load_sigma).expect("load sigma");
        let mut demand_rng;
        let factor_rng: &mut ChaCha8Rng = match self.profile.load_factor_seed(hour) {
            Some(s) => {
                demand_rng = ChaCha8Rng::seed_from_u64(s);
                &mut demand_rng
            }
            None => &mut rng,
        };
        let load_factors: Vec<f64> = (0..self.net.loads.len())
            .map(|_| normal.sample(factor_rng).max(0.0))
            .collect();

        let sp = neutral_setpoints(&self.net, irradiance);
        let state = state_from_setpoints(&self.net, &sp, &load_factors);
        let (voltages, baseline_converged) = match self.solver.solve(&self.net, &state) {
            Ok(sol) => (sol.v_mag, true),
            Err(_) => (vec![1.0; self.net.n_buses()], false),
        };
        let observation = self.build_observation(&voltages, &load_factors);
        self.ctx = Some(EpisodeContext { hour, irradiance, load_factors, stepped: false });
        ResetOutcome { observation, hour, irradiance, baseline_converged }
    }

    /// Applies one action and ends the episode (`done` is always true, so a
    /// bootstrap value of zero is correct for every transition).
    pub fn step(&mut self, action: &ActionVector) -> StepOutcome {
        let ctx = self.ctx.as_mut().expect("reset must be called before step");
        assert!(!ctx.stepped, "single-step episode already finished; call reset");
        ctx.stepped = true;
        let ctx = self.ctx.as_ref().unwrap();

        let sp = decode_action(&self.net, action, ctx.irradiance);
        let state = state_from_setpoints(&self.net, &sp, &ctx.load_factors);
        match self.solver.solve(&self.net, &state) {
            Ok(sol) => {
                let report = count_violations(&sol);
                let losses = total_losses(&self.net, &state, &sol);
                let reward = -(self.config.violation_weight * report.fraction
                    + self.config.loss_weight * losses);
                let observation = self.build_observation(&sol.v_mag, &ctx.load_factors);
                StepOutcome {
                    observation,
                    reward,
                    done: true,
                    info: StepInfo {
                        converged: true,
                        violation_count: report.count,
                        violation_fraction: report.fraction,
                        losses_pu: Some(losses),
                        hour: ctx.hour,
                        irradiance: ctx.irradiance,
                    },
                }
            }
            Err(_) => {
                let n = self.net.n_buses();
                let non_slack = n - 1;
                let observation = self.build_observation(&vec![1.0; n], &ctx.load_factors);
                StepOutcome {
                    observation,
                    reward: DIVERGED_REWARD,
                    done: true,
                    info: StepInfo {
                        converged: false,
                        violation_count: non_slack,
                        violation_fraction: 1.0,
                        losses_pu: None,
                        hour: ctx.hour,
                        irradiance: ctx.irradiance,
                    },
                }
            }
        }
    }

    /// Decodes an action against the current episode's irradiance.
    pub fn decode(&self, action: &ActionVector) -> DeviceSetpoints {
        let ctx = self.ctx.as_ref().expect("reset must be called before decode");
        decode_action(&self.net, action, ctx.irradiance)
    }

    fn build_observation(&self, voltages: &[f64], load_factors: &[f64]) -> Vec<f64> {
        let mut obs = Vec::with_capacity(self.observation_len());
        obs.extend_from_slice(voltages);
        for (load, &f) in self.net.loads.iter().zip(load_factors) {
            obs.push(self.net.kw_to_pu(load.base_p_kw * f));
        }
        obs
    }
}
