//! Environment abstraction the training runtime samples against.
//!
//! Rollout workers own boxed environments through this trait, so the
//! trainer is generic over the real feeder simulator, the small discrete
//! benchmark, and the synthetic fixtures used by runtime tests.

use vvo_core::env::{ActionSpaceDescriptor, ActionVector, VvoEnv};

/// One transition as seen by the trainer.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

pub trait Environment: Send {
    fn observation_len(&self) -> usize;
    fn action_space(&self) -> ActionSpaceDescriptor;
    /// Starts a fresh episode and returns its first observation.
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn step(&mut self, action: &ActionVector) -> Transition;
}

impl Environment for VvoEnv {
    fn observation_len(&self) -> usize {
        VvoEnv::observation_len(self)
    }

    fn action_space(&self) -> ActionSpaceDescriptor {
        VvoEnv::action_space(self)
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        VvoEnv::reset(self, seed, None).observation
    }

    fn step(&mut self, action: &ActionVector) -> Transition {
        let out = VvoEnv::step(self, action);
        Transition { observation: out.observation, reward: out.reward, done: out.done }
    }
}

/// Fixed-reward single-step environment for runtime plumbing tests. Every
/// episode is one step with the configured reward; observations are a
/// constant vector.
#[derive(Debug, Clone)]
pub struct ConstantRewardEnv {
    pub obs_len: usize,
    pub space: ActionSpaceDescriptor,
    pub reward: f64,
}

impl ConstantRewardEnv {
    pub fn new(obs_len: usize, space: ActionSpaceDescriptor, reward: f64) -> Self {
        ConstantRewardEnv { obs_len, space, reward }
    }
}

impl Environment for ConstantRewardEnv {
    fn observation_len(&self) -> usize {
        self.obs_len
    }

    fn action_space(&self) -> ActionSpaceDescriptor {
        self.space.clone()
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        vec![0.5; self.obs_len]
    }

    fn step(&mut self, _action: &ActionVector) -> Transition {
        Transition { observation: vec![0.5; self.obs_len], reward: self.reward, done: true }
    }
}

/// Single-step environment whose reward depends on the continuous action:
/// reward = -(a0 - target)^2. Lets runtime tests confirm actual learning
/// without the cost of power-flow solves.
#[derive(Debug, Clone)]
pub struct QuadraticBanditEnv {
    pub obs_len: usize,
    pub target: f64,
}

impl QuadraticBanditEnv {
    pub fn new(target: f64) -> Self {
        QuadraticBanditEnv { obs_len: 3, target }
    }
}

impl Environment for QuadraticBanditEnv {
    fn observation_len(&self) -> usize {
        self.obs_len
    }

    fn action_space(&self) -> ActionSpaceDescriptor {
        ActionSpaceDescriptor { n_continuous: 1, discrete_cardinalities: vec![] }
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        vec![1.0; self.obs_len]
    }

    fn step(&mut self, action: &ActionVector) -> Transition {
        let a = action.continuous[0];
        let d = a - self.target;
        Transition { observation: vec![1.0; self.obs_len], reward: -d * d, done: true }
    }
}

/// Builds fresh environment instances for each rollout worker.
pub trait EnvFactory: Send + Sync {
    fn build(&self) -> Box<dyn Environment>;
}

impl<F> EnvFactory for F
where
    F: Fn() -> Box<dyn Environment> + Send + Sync,
{
    fn build(&self) -> Box<dyn Environment> {
        (self)()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;
    use std::sync::Arc;
    use vvo_core::env::EnvConfig;
    use vvo_core::model::load_network;
    use vvo_core::profile::ExogenousProfile;

    fn feeder_env() -> VvoEnv {
        let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
            .join("../../scenarios/feeder13.json");
        let net = Arc::new(load_network(&path).unwrap());
        let profile = Arc::new(ExogenousProfile::new(7));
        VvoEnv::new(net, profile, EnvConfig::default())
    }

    #[test]
    fn feeder_adapter_round_trips_an_episode() {
        let mut env: Box<dyn Environment> = Box::new(feeder_env());
        let obs = env.reset(3);
        assert_eq!(obs.len(), env.observation_len());
        let space = env.action_space();
        let action = ActionVector {
            continuous: vec![0.0; space.n_continuous],
            discrete: space
                .discrete_cardinalities
                .iter()
                .map(|&k| (k / 2) as u32)
                .collect(),
        };
        let t = env.step(&action);
        assert!(t.done, "one decision per episode");
        assert!(t.reward <= 0.0);
        assert_eq!(t.observation.len(), obs.len());
    }

    #[test]
    fn constant_env_always_pays_the_same() {
        let space = ActionSpaceDescriptor { n_continuous: 1, discrete_cardinalities: vec![2] };
        let mut env = ConstantRewardEnv::new(4, space, -0.25);
        let obs = env.reset(0);
        assert_eq!(obs, vec![0.5; 4]);
        let action = ActionVector { continuous: vec![0.3], discrete: vec![1] };
        for _ in 0..3 {
            let t = env.step(&action);
            assert_eq!(t.reward, -0.25);
            assert!(t.done);
        }
    }

    #[test]
    fn quadratic_bandit_rewards_peak_at_the_target() {
        let mut env = QuadraticBanditEnv::new(0.4);
        env.reset(0);
        let mut at = |a: f64| {
            let action = ActionVector { continuous: vec![a], discrete: vec![] };
            env.step(&action).reward
        };
        assert_eq!(at(0.4), 0.0);
        assert!(at(0.0) < at(0.3));
        assert!(at(0.9) < at(0.5));
    }

    #[test]
    fn factory_builds_independent_instances() {
        let factory = || -> Box<dyn Environment> {
            Box::new(QuadraticBanditEnv::new(0.1))
        };
        let mut a = factory.build();
        let mut b = factory.build();
        let o1 = a.reset(1);
        let o2 = b.reset(2);
        assert_eq!(o1, o2);
    }
}
