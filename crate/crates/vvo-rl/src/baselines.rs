//! Classical searchers over the device action space: particle swarm,
//! uniform random search, and exhaustive enumeration for small discrete
//! spaces. These optimize a single scenario (one environment episode) and
//! serve as reference points for the learned policy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;
use vvo_core::env::{ActionSpaceDescriptor, ActionVector};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid search config: {0}")]
    BadConfig(String),
    #[error("exhaustive search needs a discrete-only space, this one has {0} continuous dims")]
    NotDiscrete(usize),
    #[error("state space too large for enumeration: {0} states (limit {1})")]
    TooLarge(usize, usize),
}

/// A scenario-pinned scoring function; larger is better.
pub trait Objective {
    fn evaluate(&mut self, action: &ActionVector) -> f64;
}

impl<F: FnMut(&ActionVector) -> f64> Objective for F {
    fn evaluate(&mut self, action: &ActionVector) -> f64 {
        (self)(action)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub best_action: ActionVector,
    pub best_value: f64,
    pub evaluations: u64,
    /// Best value seen so far, one entry per iteration (or per evaluation
    /// for random search); non-decreasing by construction.
    pub trace: Vec<f64>,
}

/// Relaxed-box encoding shared by the swarm and random search: every
/// dimension lives in [-1, 1]; discrete dimensions map back by rounding
/// onto the index grid.
fn decode(position: &[f64], space: &ActionSpaceDescriptor) -> ActionVector {
    let nc = space.n_continuous;
    let continuous = position[..nc].to_vec();
    let discrete = space
        .discrete_cardinalities
        .iter()
        .zip(&position[nc..])
        .map(|(&k, &x)| {
            let idx = ((x + 1.0) / 2.0 * (k - 1) as f64).round();
            (idx.clamp(0.0, (k - 1) as f64)) as u32
        })
        .collect();
    ActionVector { continuous, discrete }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsoConfig {
    pub particles: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    pub seed: u64,
}

impl Default for PsoConfig {
    fn default() -> Self {
        PsoConfig {
            particles: 100,
            iterations: 60,
            inertia: 0.729,
            cognitive: 1.49445,
            social: 1.49445,
            seed: 0,
        }
    }
}

/// Global-best particle swarm over the relaxed box.
pub fn particle_swarm(
    space: &ActionSpaceDescriptor,
    objective: &mut dyn Objective,
    cfg: &PsoConfig,
) -> Result<SearchResult, SearchError> {
    if cfg.particles == 0 || cfg.iterations == 0 {
        return Err(SearchError::BadConfig("particles and iterations must be positive".into()));
    }
    let dims = space.n_continuous + space.discrete_cardinalities.len();
    if dims == 0 {
        return Err(SearchError::BadConfig("empty action space".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut evaluations = 0u64;
    let mut score = |pos: &[f64], evals: &mut u64| {
        *evals += 1;
        objective.evaluate(&decode(pos, space))
    };

    let mut positions: Vec<Vec<f64>> = (0..cfg.particles)
        .map(|_| (0..dims).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mut velocities: Vec<Vec<f64>> = (0..cfg.particles)
        .map(|_| (0..dims).map(|_| rng.gen_range(-0.5..0.5)).collect())
        .collect();
    let mut personal_best = positions.clone();
    let mut personal_value: Vec<f64> = positions
        .iter()
        .map(|p| score(p, &mut evaluations))
        .collect();
    let mut g_idx = 0;
    for i in 1..cfg.particles {
        if personal_value[i] > personal_value[g_idx] {
            g_idx = i;
        }
    }
    let mut global_best = personal_best[g_idx].clone();
    let mut global_value = personal_value[g_idx];

    let mut trace = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        for i in 0..cfg.particles {
            for d in 0..dims {
                let r1: f64 = rng.gen();
                let r2: f64 = rng.gen();
                velocities[i][d] = cfg.inertia * velocities[i][d]
                    + cfg.cognitive * r1 * (personal_best[i][d] - positions[i][d])
                    + cfg.social * r2 * (global_best[d] - positions[i][d]);
                positions[i][d] = (positions[i][d] + velocities[i][d]).clamp(-1.0, 1.0);
            }
            let value = score(&positions[i], &mut evaluations);
            if value > personal_value[i] {
                personal_value[i] = value;
                personal_best[i] = positions[i].clone();
                if value > global_value {
                    global_value = value;
                    global_best = positions[i].clone();
                }
            }
        }
        trace.push(global_value);
    }
    Ok(SearchResult {
        best_action: decode(&global_best, space),
        best_value: global_value,
        evaluations,
        trace,
    })
}

/// Uniform random search with an exact evaluation budget.
pub fn random_search(
    space: &ActionSpaceDescriptor,
    objective: &mut dyn Objective,
    budget: u64,
    seed: u64,
) -> Result<SearchResult, SearchError> {
    if budget == 0 {
        return Err(SearchError::BadConfig("budget must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best_action: Option<ActionVector> = None;
    let mut best_value = f64::NEG_INFINITY;
    let mut trace = Vec::with_capacity(budget as usize);
    for _ in 0..budget {
        let action = ActionVector {
            continuous: (0..space.n_continuous).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            discrete: space
                .discrete_cardinalities
                .iter()
                .map(|&k| rng.gen_range(0..k as u32))
                .collect(),
        };
        let value = objective.evaluate(&action);
        if value > best_value || best_action.is_none() {
            best_value = value;
            best_action = Some(action);
        }
        trace.push(best_value);
    }
    Ok(SearchResult {
        best_action: best_action.unwrap(),
        best_value,
        evaluations: budget,
        trace,
    })
}

pub const ENUMERATION_LIMIT: usize = 1_000_000;

/// Visits every joint discrete state; exact on small spaces.
pub fn exhaustive_search(
    space: &ActionSpaceDescriptor,
    objective: &mut dyn Objective,
) -> Result<SearchResult, SearchError> {
    if space.n_continuous != 0 {
        return Err(SearchError::NotDiscrete(space.n_continuous));
    }
    if space.discrete_cardinalities.is_empty() {
        return Err(SearchError::BadConfig("no discrete dimensions to enumerate".into()));
    }
    let total = space.total_discrete_states();
    if total > ENUMERATION_LIMIT {
        return Err(SearchError::TooLarge(total, ENUMERATION_LIMIT));
    }
    let mut indices = vec![0u32; space.discrete_cardinalities.len()];
    let mut best_action: Option<ActionVector> = None;
    let mut best_value = f64::NEG_INFINITY;
    let mut evaluations = 0u64;
    loop {
        let action = ActionVector { continuous: vec![], discrete: indices.clone() };
        let value = objective.evaluate(&action);
        evaluations += 1;
        if value > best_value || best_action.is_none() {
            best_value = value;
            best_action = Some(action);
        }
        // odometer increment over the index grid
        let mut d = indices.len();
        loop {
            if d == 0 {
                let best_action = best_action.unwrap();
                return Ok(SearchResult {
                    best_action,
                    best_value,
                    evaluations,
                    trace: vec![best_value],
                });
            }
            d -= 1;
            indices[d] += 1;
            if (indices[d] as usize) < space.discrete_cardinalities[d] {
                break;
            }
            indices[d] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_space() -> ActionSpaceDescriptor {
        ActionSpaceDescriptor { n_continuous: 2, discrete_cardinalities: vec![] }
    }

    fn sphere(center: (f64, f64)) -> impl FnMut(&ActionVector) -> f64 {
        move |a: &ActionVector| {
            let dx = a.continuous[0] - center.0;
            let dy = a.continuous[1] - center.1;
            -(dx * dx + dy * dy)
        }
    }

    #[test]
    fn swarm_finds_a_smooth_continuous_optimum() {
        let space = quadratic_space();
        let mut obj = sphere((0.3, -0.6));
        let cfg = PsoConfig { seed: 4, ..Default::default() };
        let result = particle_swarm(&space, &mut obj, &cfg).unwrap();
        assert!(result.best_value > -1e-4, "best value {}", result.best_value);
        assert!((result.best_action.continuous[0] - 0.3).abs() < 0.02);
        assert!((result.best_action.continuous[1] + 0.6).abs() < 0.02);
    }

    #[test]
    fn swarm_handles_mixed_spaces() {
        let space = ActionSpaceDescriptor { n_continuous: 1, discrete_cardinalities: vec![5] };
        // optimum: continuous at 0.25, discrete index 3
        let mut obj = |a: &ActionVector| {
            let dx = a.continuous[0] - 0.25;
            let di = a.discrete[0] as f64 - 3.0;
            -(dx * dx) - di.abs()
        };
        let cfg = PsoConfig { seed: 11, ..Default::default() };
        let result = particle_swarm(&space, &mut obj, &cfg).unwrap();
        assert_eq!(result.best_action.discrete[0], 3);
        assert!((result.best_action.continuous[0] - 0.25).abs() < 0.02);
    }

    #[test]
    fn swarm_trace_is_non_decreasing_and_counts_evaluations() {
        let space = quadratic_space();
        let mut obj = sphere((0.0, 0.0));
        let cfg = PsoConfig { particles: 20, iterations: 30, seed: 1, ..Default::default() };
        let result = particle_swarm(&space, &mut obj, &cfg).unwrap();
        assert_eq!(result.trace.len(), 30);
        assert!(result.trace.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(result.evaluations, 20 + 20 * 30);
    }

    #[test]
    fn swarm_is_reproducible_per_seed() {
        let space = quadratic_space();
        let cfg = PsoConfig { seed: 9, particles: 15, iterations: 20, ..Default::default() };
        let a = particle_swarm(&space, &mut sphere((0.1, 0.2)), &cfg).unwrap();
        let b = particle_swarm(&space, &mut sphere((0.1, 0.2)), &cfg).unwrap();
        assert_eq!(a, b);
        let cfg2 = PsoConfig { seed: 10, ..cfg };
        let c = particle_swarm(&space, &mut sphere((0.1, 0.2)), &cfg2).unwrap();
        assert_ne!(a.best_action.continuous, c.best_action.continuous);
    }

    #[test]
    fn random_search_spends_exactly_its_budget() {
        let space = ActionSpaceDescriptor { n_continuous: 1, discrete_cardinalities: vec![4] };
        let mut calls = 0u64;
        let mut obj = |a: &ActionVector| {
            calls += 1;
            -a.continuous[0].abs() - a.discrete[0] as f64
        };
        let result = random_search(&space, &mut obj, 500, 3).unwrap();
        assert_eq!(calls, 500);
        assert_eq!(result.evaluations, 500);
        assert_eq!(result.trace.len(), 500);
        assert!(result.trace.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(result.best_action.discrete[0], 0);
    }

    #[test]
    fn exhaustive_search_is_exact_on_a_known_grid() {
        let space = ActionSpaceDescriptor { n_continuous: 0, discrete_cardinalities: vec![7, 5] };
        let mut obj = |a: &ActionVector| {
            let di = a.discrete[0] as f64 - 4.0;
            let dj = a.discrete[1] as f64 - 1.0;
            -(di * di + dj * dj)
        };
        let result = exhaustive_search(&space, &mut obj).unwrap();
        assert_eq!(result.best_action.discrete, vec![4, 1]);
        assert_eq!(result.best_value, 0.0);
        assert_eq!(result.evaluations, 35);
    }

    #[test]
    fn exhaustive_search_refuses_continuous_and_huge_spaces() {
        let mixed = ActionSpaceDescriptor { n_continuous: 1, discrete_cardinalities: vec![2] };
        let mut obj = |_: &ActionVector| 0.0;
        assert!(matches!(exhaustive_search(&mixed, &mut obj), Err(SearchError::NotDiscrete(1))));
        let huge = ActionSpaceDescriptor {
            n_continuous: 0,
            discrete_cardinalities: vec![101; 3],
        };
        assert!(matches!(exhaustive_search(&huge, &mut obj), Err(SearchError::TooLarge(_, _))));
    }

    #[test]
    fn swarm_matches_exhaustive_on_a_small_discrete_space() {
        let space = ActionSpaceDescriptor { n_continuous: 0, discrete_cardinalities: vec![2, 2, 33] };
        let mut obj = |a: &ActionVector| {
            // rugged but single-optimum landscape
            let t = a.discrete[2] as f64;
            let caps = a.discrete[0] as f64 + a.discrete[1] as f64;
            -((t - 21.0) / 4.0).powi(2) - (caps - 1.0).abs() * 0.3
                - if a.discrete[0] == 1 { 0.05 } else { 0.0 }
        };
        let exact = exhaustive_search(&space, &mut obj).unwrap();
        let mut hits = 0;
        for seed in 0..10 {
            let cfg = PsoConfig { seed, ..Default::default() };
            let swarm = particle_swarm(&space, &mut obj, &cfg).unwrap();
            if (swarm.best_value - exact.best_value).abs() < 1e-12 {
                hits += 1;
            }
        }
        assert!(hits >= 9, "swarm matched exhaustive in only {hits}/10 seeds");
    }
}
