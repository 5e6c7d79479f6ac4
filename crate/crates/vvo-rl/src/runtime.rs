//! Actor-learner training runtime.
//!
//! Rollout workers sample fixed-length fragments with a snapshot of the
//! policy and push them through a bounded FIFO queue; the learner pops
//! fragments, recomputes values and log-probabilities under its current
//! parameters, applies off-policy corrected targets, and takes one clipped
//! Adam step per batch. A synchronous single-threaded mode runs the same
//! pipeline deterministically for reproducibility checks.

use std::collections::{HashMap, VecDeque};
use std::fs::File;
use std::io::{BufWriter, Write as IoWrite};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, RwLock};
use std::thread;
use std::time::{Duration, Instant};

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;
use vvo_core::env::ActionVector;

use crate::envs::EnvFactory;
use crate::optim::{clip_global_norm, Adam, AdamConfig};
use crate::policy::{DiscretePrior, FrozenLoss, Policy, PolicyConfig, PolicyError};
use crate::queue::{BoundedQueue, QueueAccounting};
use crate::vtrace::{compute_vtrace, VTraceConfig, VTraceError, VTraceInputs};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("invalid runtime config: {0}")]
    BadConfig(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    VTrace(#[from] VTraceError),
}

#[derive(Debug, Clone)]
pub struct RuntimeConfig {
    pub num_actors: usize,
    pub fragment_length: usize,
    pub batch_size: usize,
    pub queue_capacity: usize,
    /// Cumulative consumed environment steps before the run ends.
    pub total_env_steps: u64,
    /// Stop early once the episode-reward window mean reaches this level.
    pub stop_reward_mean: Option<f64>,
    /// Episodes in the rolling reward window.
    pub metrics_window: usize,
    pub gamma: f64,
    pub rho_clip: f64,
    pub c_clip: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub adam: AdamConfig,
    pub grad_clip: f64,
    pub num_sgd_iter: usize,
    /// Deterministic single-threaded mode: one inline worker, no queue,
    /// timing columns zeroed in the metrics file.
    pub sync: bool,
    pub seed: u64,
    pub max_duration: Option<Duration>,
    pub hidden: Vec<usize>,
    pub log_std_init: f64,
    pub discrete_prior: Option<DiscretePrior>,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        RuntimeConfig {
            num_actors: 4,
            fragment_length: 50,
            batch_size: 2500,
            queue_capacity: 16,
            total_env_steps: 200_000,
            stop_reward_mean: None,
            metrics_window: 1000,
            gamma: 0.99,
            rho_clip: 1.0,
            c_clip: 1.0,
            value_coef: 0.5,
            entropy_coef: 0.01,
            adam: AdamConfig::default(),
            grad_clip: 40.0,
            num_sgd_iter: 1,
            sync: false,
            seed: 0,
            max_duration: None,
            hidden: vec![256, 256],
            log_std_init: 0.0,
            discrete_prior: Some(DiscretePrior::default()),
        }
    }
}

impl RuntimeConfig {
    pub fn validate(&self) -> Result<(), RuntimeError> {
        if self.num_actors == 0 {
            return Err(RuntimeError::BadConfig("need at least one worker".into()));
        }
        if self.fragment_length == 0 || self.batch_size == 0 {
            return Err(RuntimeError::BadConfig("fragment and batch must be positive".into()));
        }
        if self.batch_size % self.fragment_length != 0 {
            return Err(RuntimeError::BadConfig(format!(
                "batch size {} must be a multiple of fragment length {}",
                self.batch_size, self.fragment_length
            )));
        }
        if self.queue_capacity == 0 {
            return Err(RuntimeError::BadConfig("queue capacity must be positive".into()));
        }
        if self.metrics_window == 0 {
            return Err(RuntimeError::BadConfig("metrics window must be positive".into()));
        }
        if self.num_sgd_iter == 0 {
            return Err(RuntimeError::BadConfig("need at least one update pass".into()));
        }
        if self.sync && self.num_actors != 1 {
            return Err(RuntimeError::BadConfig(
                "synchronous mode runs exactly one inline worker".into(),
            ));
        }
        Ok(())
    }

    fn fragments_per_batch(&self) -> usize {
        self.batch_size / self.fragment_length
    }
}

/// A fixed-length slice of experience from one worker.
#[derive(Debug, Clone)]
pub struct Fragment {
    pub worker_id: usize,
    pub policy_version: u64,
    /// Row-major steps x obs_len.
    pub observations: Vec<f64>,
    pub actions: Vec<ActionVector>,
    pub rewards: Vec<f64>,
    pub behavior_log_probs: Vec<f64>,
    pub dones: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    BudgetExhausted,
    RewardReached,
    TimeLimit,
    WorkersStopped,
}

#[derive(Debug)]
pub struct TrainReport {
    pub iterations: u64,
    /// Steps the learner actually trained on.
    pub env_steps: u64,
    pub produced_steps: u64,
    pub drained_steps: u64,
    pub final_mean_reward: Option<f64>,
    pub best_mean_reward: Option<f64>,
    pub duration: Duration,
    pub steps_per_sec: f64,
    pub max_version_lag: u64,
    pub skipped_updates: u64,
    pub fifo_violations: u64,
    pub panicked_workers: usize,
    pub accounting: QueueAccounting,
    pub stop_reason: StopReason,
    pub policy: Policy,
}

struct Shared {
    queue: BoundedQueue<Fragment>,
    snapshot: RwLock<Arc<Policy>>,
    stop: AtomicBool,
    active_workers: AtomicUsize,
}

/// Closes the queue when the last worker exits, normally or by panic, so
/// the learner can never block forever on a dead producer set.
struct WorkerGuard {
    shared: Arc<Shared>,
}

impl Drop for WorkerGuard {
    fn drop(&mut self) {
        if self.shared.active_workers.fetch_sub(1, Ordering::SeqCst) == 1 {
            self.shared.queue.close();
        }
    }
}

fn worker_rng(seed: u64, worker_id: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(worker_id as u64 + 1)))
}

/// Collects one fragment with the given policy. `pending_obs` carries an
/// unfinished episode's observation across fragment boundaries.
fn collect_fragment(
    env: &mut dyn crate::envs::Environment,
    policy: &Policy,
    rng: &mut ChaCha8Rng,
    worker_id: usize,
    fragment_length: usize,
    pending_obs: &mut Option<Vec<f64>>,
) -> Fragment {
    let obs_len = env.observation_len();
    let mut observations = Vec::with_capacity(fragment_length * obs_len);
    let mut actions = Vec::with_capacity(fragment_length);
    let mut rewards = Vec::with_capacity(fragment_length);
    let mut behavior_log_probs = Vec::with_capacity(fragment_length);
    let mut dones = Vec::with_capacity(fragment_length);
    for _ in 0..fragment_length {
        let obs = match pending_obs.take() {
            Some(o) => o,
            None => env.reset(rng.gen()),
        };
        let (action, lp) = policy.sample(&obs, rng);
        let t = env.step(&action);
        observations.extend_from_slice(&obs);
        actions.push(action);
        rewards.push(t.reward);
        behavior_log_probs.push(lp);
        dones.push(t.done);
        if !t.done {
            *pending_obs = Some(t.observation);
        }
    }
    Fragment {
        worker_id,
        policy_version: policy.version(),
        observations,
        actions,
        rewards,
        behavior_log_probs,
        dones,
    }
}

fn worker_loop(shared: Arc<Shared>, factory: Arc<dyn EnvFactory>, cfg: RuntimeConfig, worker_id: usize) {
    let _guard = WorkerGuard { shared: Arc::clone(&shared) };
    let mut env = factory.build();
    let mut rng = worker_rng(cfg.seed, worker_id);
    let mut pending_obs: Option<Vec<f64>> = None;
    while !shared.stop.load(Ordering::SeqCst) {
        let policy = Arc::clone(&shared.snapshot.read().unwrap());
        let fragment = collect_fragment(
            env.as_mut(),
            &policy,
            &mut rng,
            worker_id,
            cfg.fragment_length,
            &mut pending_obs,
        );
        if shared.queue.push(fragment).is_none() {
            break;
        }
    }
}

struct EpisodeTracker {
    window: VecDeque<f64>,
    capacity: usize,
    running: HashMap<usize, f64>,
}

impl EpisodeTracker {
    fn new(capacity: usize) -> Self {
        EpisodeTracker { window: VecDeque::with_capacity(capacity), capacity, running: HashMap::new() }
    }

    fn absorb(&mut self, fragment: &Fragment) {
        let acc = self.running.entry(fragment.worker_id).or_insert(0.0);
        for (r, d) in fragment.rewards.iter().zip(&fragment.dones) {
            *acc += r;
            if *d {
                if self.window.len() == self.capacity {
                    self.window.pop_front();
                }
                self.window.push_back(*acc);
                *acc = 0.0;
            }
        }
    }

    fn mean(&self) -> Option<f64> {
        if self.window.is_empty() {
            None
        } else {
            Some(self.window.iter().sum::<f64>() / self.window.len() as f64)
        }
    }

    fn is_full(&self) -> bool {
        self.window.len() == self.capacity
    }
}

struct MetricsWriter {
    out: Option<BufWriter<File>>,
    sync: bool,
}

impl MetricsWriter {
    fn create(path: Option<&Path>, sync: bool) -> Result<Self, RuntimeError> {
        let out = match path {
            Some(p) => {
                let mut w = BufWriter::new(File::create(p)?);
                writeln!(
                    w,
                    "iteration,env_steps,mean_episode_reward,steps_per_sec,queue_occupancy,version_lag,wall_clock_s"
                )?;
                Some(w)
            }
            None => None,
        };
        Ok(MetricsWriter { out, sync })
    }

    #[allow(clippy::too_many_arguments)]
    fn row(
        &mut self,
        iteration: u64,
        env_steps: u64,
        mean: Option<f64>,
        steps_per_sec: f64,
        occupancy: usize,
        version_lag: u64,
        wall_clock_s: f64,
    ) -> Result<(), RuntimeError> {
        if let Some(w) = self.out.as_mut() {
            let mean_txt = mean.map(|m| format!("{m}")).unwrap_or_default();
            if self.sync {
                writeln!(w, "{iteration},{env_steps},{mean_txt},0,{occupancy},{version_lag},0")?;
            } else {
                writeln!(
                    w,
                    "{iteration},{env_steps},{mean_txt},{steps_per_sec},{occupancy},{version_lag},{wall_clock_s}"
                )?;
            }
        }
        Ok(())
    }

    fn finish(&mut self) -> Result<(), RuntimeError> {
        if let Some(w) = self.out.as_mut() {
            w.flush()?;
        }
        Ok(())
    }
}

struct Learner {
    policy: Policy,
    opt: Adam,
    cfg: RuntimeConfig,
    vtrace_cfg: VTraceConfig,
    tracker: EpisodeTracker,
    max_version_lag: u64,
    skipped_updates: u64,
    fifo_violations: u64,
    next_expected_seq: u64,
}

struct UpdateStats {
    version_lag: u64,
}

impl Learner {
    fn new(cfg: &RuntimeConfig, obs_len: usize, space: &vvo_core::env::ActionSpaceDescriptor) -> Result<Self, RuntimeError> {
        let mut pc = PolicyConfig::for_space(obs_len, space);
        pc.hidden = cfg.hidden.clone();
        pc.log_std_init = cfg.log_std_init;
        pc.discrete_prior = cfg.discrete_prior;
        let policy = Policy::new(pc, cfg.seed)?;
        let opt = Adam::new(cfg.adam, policy.params.n_params());
        let vtrace_cfg = VTraceConfig {
            gamma: cfg.gamma,
            rho_clip: cfg.rho_clip,
            c_clip: cfg.c_clip,
            value_coef: cfg.value_coef,
            entropy_coef: cfg.entropy_coef,
        };
        vtrace_cfg.validate()?;
        Ok(Learner {
            policy,
            opt,
            cfg: cfg.clone(),
            vtrace_cfg,
            tracker: EpisodeTracker::new(cfg.metrics_window),
            max_version_lag: 0,
            skipped_updates: 0,
            fifo_violations: 0,
            next_expected_seq: 0,
        })
    }

    fn observe_sequence(&mut self, seq: u64) {
        if seq != self.next_expected_seq {
            self.fifo_violations += 1;
        }
        self.next_expected_seq = seq + 1;
    }

    /// One optimization round on a full batch of fragments.
    fn train_on_batch(&mut self, fragments: &[Fragment]) -> Result<UpdateStats, RuntimeError> {
        let rows = fragments.len();
        let steps = self.cfg.fragment_length;
        let total = rows * steps;
        let obs_len = self.policy.config().obs_len;

        let mut version_lag = 0;
        for f in fragments {
            self.tracker.absorb(f);
            version_lag = version_lag.max(self.policy.version().saturating_sub(f.policy_version));
        }
        self.max_version_lag = self.max_version_lag.max(version_lag);

        let mut obs = Array2::<f64>::zeros((total, obs_len));
        let mut actions: Vec<&ActionVector> = Vec::with_capacity(total);
        let mut rewards = Vec::with_capacity(total);
        let mut dones = Vec::with_capacity(total);
        let mut behavior = Vec::with_capacity(total);
        for (b, f) in fragments.iter().enumerate() {
            let base = b * steps;
            for t in 0..steps {
                obs.row_mut(base + t)
                    .assign(&ArrayView2::from_shape((1, obs_len), &f.observations[t * obs_len..(t + 1) * obs_len]).unwrap().row(0));
                actions.push(&f.actions[t]);
                rewards.push(f.rewards[t]);
                dones.push(f.dones[t]);
                behavior.push(f.behavior_log_probs[t]);
            }
        }
        let owned_actions: Vec<ActionVector> = actions.iter().map(|a| (*a).clone()).collect();

        for _ in 0..self.cfg.num_sgd_iter {
            let cache = self.policy.forward(obs.view());
            let eval = self.policy.evaluate_actions(&cache, &owned_actions);

            // Values laid out rows x (steps + 1); the bootstrap slot carries
            // zero because every fragment ends its episodes explicitly and a
            // terminal flag masks the bootstrap anyway. When a fragment ends
            // mid-episode the truncated tail is treated as terminal for the
            // batch, biasing only that final step's target.
            let mut values = vec![0.0; rows * (steps + 1)];
            for b in 0..rows {
                for t in 0..steps {
                    values[b * (steps + 1) + t] = eval.values[b * steps + t];
                }
            }
            let inputs = VTraceInputs {
                batch: rows,
                steps,
                rewards: &rewards,
                dones: &dones,
                behavior_log_probs: &behavior,
                target_log_probs: &eval.log_probs,
                values: &values,
            };
            let vt = compute_vtrace(&inputs, &self.vtrace_cfg)?;

            let frozen = FrozenLoss {
                advantages: &vt.advantages,
                value_targets: &vt.v_targets,
                value_coef: self.cfg.value_coef,
                entropy_coef: self.cfg.entropy_coef,
            };
            let mut grads = self.policy.backward(&cache, &owned_actions, &frozen);
            if grads.iter().any(|g| !g.is_finite()) {
                self.skipped_updates += 1;
                eprintln!("warning: non-finite gradient, skipping update");
                continue;
            }
            clip_global_norm(&mut grads, self.cfg.grad_clip);
            let mut flat = self.policy.params.to_flat();
            self.opt.step(&mut flat, &grads);
            self.policy.params.from_flat(&flat);
            self.policy.params.version += 1;
        }
        Ok(UpdateStats { version_lag })
    }

    fn should_stop_on_reward(&self) -> bool {
        match (self.cfg.stop_reward_mean, self.tracker.mean()) {
            (Some(threshold), Some(mean)) => self.tracker.is_full() && mean >= threshold,
            _ => false,
        }
    }
}

/// Runs a training session to completion and returns the trained policy
/// with run statistics. `metrics_path`, when given, receives one CSV row
/// per learner iteration.
pub fn run(
    cfg: &RuntimeConfig,
    factory: Arc<dyn EnvFactory>,
    metrics_path: Option<&Path>,
) -> Result<TrainReport, RuntimeError> {
    cfg.validate()?;
    let probe = factory.build();
    let obs_len = probe.observation_len();
    let space = probe.action_space();
    drop(probe);
    let learner = Learner::new(cfg, obs_len, &space)?;
    let mut metrics = MetricsWriter::create(metrics_path, cfg.sync)?;

    if cfg.total_env_steps == 0 {
        metrics.finish()?;
        return Ok(TrainReport {
            iterations: 0,
            env_steps: 0,
            produced_steps: 0,
            drained_steps: 0,
            final_mean_reward: None,
            best_mean_reward: None,
            duration: Duration::ZERO,
            steps_per_sec: 0.0,
            max_version_lag: 0,
            skipped_updates: 0,
            fifo_violations: 0,
            panicked_workers: 0,
            accounting: QueueAccounting { produced: 0, consumed: 0, drained: 0 },
            stop_reason: StopReason::BudgetExhausted,
            policy: learner.policy,
        });
    }

    if cfg.sync {
        run_sync(cfg, factory, learner, metrics)
    } else {
        run_async(cfg, factory, learner, metrics)
    }
}

fn run_sync(
    cfg: &RuntimeConfig,
    factory: Arc<dyn EnvFactory>,
    mut learner: Learner,
    mut metrics: MetricsWriter,
) -> Result<TrainReport, RuntimeError> {
    let start = Instant::now();
    let mut env = factory.build();
    let mut rng = worker_rng(cfg.seed, 0);
    let mut pending_obs: Option<Vec<f64>> = None;
    let fpb = cfg.fragments_per_batch();
    let mut iterations = 0u64;
    let mut env_steps = 0u64;
    let mut best: Option<f64> = None;
    let mut stop_reason = StopReason::BudgetExhausted;
    'outer: loop {
        if env_steps >= cfg.total_env_steps {
            break;
        }
        let mut fragments = Vec::with_capacity(fpb);
        for _ in 0..fpb {
            fragments.push(collect_fragment(
                env.as_mut(),
                &learner.policy,
                &mut rng,
                0,
                cfg.fragment_length,
                &mut pending_obs,
            ));
        }
        learner.train_on_batch(&fragments)?;
        iterations += 1;
        env_steps += cfg.batch_size as u64;
        let mean = learner.tracker.mean();
        if let Some(m) = mean {
            best = Some(best.map_or(m, |b: f64| b.max(m)));
        }
        metrics.row(iterations, env_steps, mean, 0.0, 0, 0, 0.0)?;
        if learner.should_stop_on_reward() {
            stop_reason = StopReason::RewardReached;
            break 'outer;
        }
        if let Some(limit) = cfg.max_duration {
            if start.elapsed() >= limit {
                stop_reason = StopReason::TimeLimit;
                break 'outer;
            }
        }
    }
    metrics.finish()?;
    let duration = start.elapsed();
    Ok(TrainReport {
        iterations,
        env_steps,
        produced_steps: env_steps,
        drained_steps: 0,
        final_mean_reward: learner.tracker.mean(),
        best_mean_reward: best,
        duration,
        steps_per_sec: if duration.as_secs_f64() > 0.0 {
            env_steps as f64 / duration.as_secs_f64()
        } else {
            0.0
        },
        max_version_lag: learner.max_version_lag,
        skipped_updates: learner.skipped_updates,
        fifo_violations: 0,
        panicked_workers: 0,
        accounting: QueueAccounting {
            produced: env_steps / cfg.fragment_length as u64,
            consumed: env_steps / cfg.fragment_length as u64,
            drained: 0,
        },
        stop_reason,
        policy: learner.policy,
    })
}

fn run_async(
    cfg: &RuntimeConfig,
    factory: Arc<dyn EnvFactory>,
    mut learner: Learner,
    mut metrics: MetricsWriter,
) -> Result<TrainReport, RuntimeError> {
    let start = Instant::now();
    let shared = Arc::new(Shared {
        queue: BoundedQueue::new(cfg.queue_capacity),
        snapshot: RwLock::new(Arc::new(learner.policy.clone())),
        stop: AtomicBool::new(false),
        active_workers: AtomicUsize::new(cfg.num_actors),
    });
    let mut handles = Vec::with_capacity(cfg.num_actors);
    for worker_id in 0..cfg.num_actors {
        let shared = Arc::clone(&shared);
        let factory = Arc::clone(&factory);
        let cfg = cfg.clone();
        handles.push(
            thread::Builder::new()
                .name(format!("rollout-{worker_id}"))
                .spawn(move || worker_loop(shared, factory, cfg, worker_id))?,
        );
    }

    let fpb = cfg.fragments_per_batch();
    let mut iterations = 0u64;
    let mut env_steps = 0u64;
    let mut best: Option<f64> = None;
    let mut stop_reason = StopReason::BudgetExhausted;
    'outer: while env_steps < cfg.total_env_steps {
        let mut fragments = Vec::with_capacity(fpb);
        while fragments.len() < fpb {
            match shared.queue.pop() {
                Some(item) => {
                    learner.observe_sequence(item.seq);
                    fragments.push(item.item);
                }
                None => {
                    stop_reason = StopReason::WorkersStopped;
                    break 'outer;
                }
            }
        }
        let stats = learner.train_on_batch(&fragments)?;
        iterations += 1;
        env_steps += cfg.batch_size as u64;
        *shared.snapshot.write().unwrap() = Arc::new(learner.policy.clone());
        let mean = learner.tracker.mean();
        if let Some(m) = mean {
            best = Some(best.map_or(m, |b: f64| b.max(m)));
        }
        let elapsed = start.elapsed().as_secs_f64();
        metrics.row(
            iterations,
            env_steps,
            mean,
            if elapsed > 0.0 { env_steps as f64 / elapsed } else { 0.0 },
            shared.queue.occupancy(),
            stats.version_lag,
            elapsed,
        )?;
        if learner.should_stop_on_reward() {
            stop_reason = StopReason::RewardReached;
            break;
        }
        if let Some(limit) = cfg.max_duration {
            if start.elapsed() >= limit {
                stop_reason = StopReason::TimeLimit;
                break;
            }
        }
    }

    shared.stop.store(true, Ordering::SeqCst);
    shared.queue.close();
    let mut panicked_workers = 0;
    for handle in handles {
        if handle.join().is_err() {
            panicked_workers += 1;
        }
    }
    // All producers have stopped; whatever is left in the queue is waste.
    let (_leftovers, accounting) = shared.queue.drain();
    debug_assert!(accounting.balances());
    metrics.finish()?;
    let duration = start.elapsed();
    Ok(TrainReport {
        iterations,
        env_steps,
        produced_steps: accounting.produced * cfg.fragment_length as u64,
        drained_steps: accounting.drained * cfg.fragment_length as u64,
        final_mean_reward: learner.tracker.mean(),
        best_mean_reward: best,
        duration,
        steps_per_sec: if duration.as_secs_f64() > 0.0 {
            env_steps as f64 / duration.as_secs_f64()
        } else {
            0.0
        },
        max_version_lag: learner.max_version_lag,
        skipped_updates: learner.skipped_updates,
        fifo_violations: learner.fifo_violations,
        panicked_workers,
        accounting,
        stop_reason,
        policy: learner.policy,
    })
}
