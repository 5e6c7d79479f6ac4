//! Distributed actor-learner training for the volt-var control environment,
//! plus classical search baselines.
//!
//! [`policy`] holds the feedforward policy/value network with hand-written
//! reverse-mode gradients, [`vtrace`] the off-policy return corrections,
//! [`optim`] the Adam optimizer with global gradient clipping, [`queue`] the
//! bounded fragment channel between actors and the learner, [`runtime`] the
//! training loop itself, and [`baselines`] particle-swarm and brute-force
//! searches over the same action space.

pub mod baselines;
pub mod envs;
pub mod optim;
pub mod policy;
pub mod queue;
pub mod runtime;
pub mod vtrace;
