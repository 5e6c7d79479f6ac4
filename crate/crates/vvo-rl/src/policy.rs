//! Stochastic control policy over hybrid action spaces, with analytic
//! gradients for a fixed feed-forward architecture.
//!
//! Continuous dimensions use a tanh-squashed Gaussian with state-independent
//! log-std; discrete dimensions use independent categorical heads. Output
//! heads initialize to a neutral prior (zero means, nominal-centered tap
//! logits, mostly-off switch logits) so an untrained policy behaves like
//! hands-off device settings instead of uniform noise.
//!
//! Gradients are reverse-mode, written out by hand for this architecture and
//! checked coordinate-by-coordinate against central finite differences.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use vvo_core::env::{ActionSpaceDescriptor, ActionVector};

use rand::SeedableRng;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint parse error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("checkpoint descriptor hash mismatch: file has {found}, expected {expected}")]
    DescriptorMismatch { found: String, expected: String },
    #[error("checkpoint shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid config: {0}")]
    BadConfig(String),
}

/// Initialization priors for discrete heads. Binary heads start with the
/// second choice (the "on" state) at the given logit relative to "off";
/// wider heads get logits falling off as a Gaussian around the middle index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscretePrior {
    pub binary_on_logit: f64,
    pub center_std: f64,
}

impl Default for DiscretePrior {
    fn default() -> Self {
        // on-probability ~0.10 for switches; ~1.5 step spread around the
        // middle position for multi-way heads
        DiscretePrior { binary_on_logit: -2.1972245773362196, center_std: 1.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub obs_len: usize,
    pub n_continuous: usize,
    pub discrete_cardinalities: Vec<usize>,
    pub hidden: Vec<usize>,
    pub log_std_init: f64,
    pub log_std_min: f64,
    pub log_std_max: f64,
    pub squash_eps: f64,
    pub discrete_prior: Option<DiscretePrior>,
}

impl PolicyConfig {
    pub fn for_space(obs_len: usize, space: &ActionSpaceDescriptor) -> Self {
        PolicyConfig {
            obs_len,
            n_continuous: space.n_continuous,
            discrete_cardinalities: space.discrete_cardinalities.clone(),
            hidden: vec![256, 256],
            log_std_init: 0.0,
            log_std_min: -5.0,
            log_std_max: 2.0,
            squash_eps: 1e-6,
            discrete_prior: Some(DiscretePrior::default()),
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.obs_len == 0 {
            return Err(PolicyError::BadConfig("obs_len must be positive".into()));
        }
        if self.hidden.is_empty() || self.hidden.iter().any(|&h| h == 0) {
            return Err(PolicyError::BadConfig("hidden sizes must be positive".into()));
        }
        if self.discrete_cardinalities.iter().any(|&k| k < 2) {
            return Err(PolicyError::BadConfig("discrete heads need >= 2 choices".into()));
        }
        if !(self.log_std_min < self.log_std_max) {
            return Err(PolicyError::BadConfig("log_std bounds inverted".into()));
        }
        Ok(())
    }
}

/// Stable identity of the interface a set of parameters was trained against.
/// Checkpoints refuse to load into a different interface.
pub fn descriptor_hash(obs_len: usize, space: &ActionSpaceDescriptor) -> String {
    let mut hasher = Sha256::new();
    hasher.update(format!(
        "obs={obs_len};continuous={};discrete={:?}",
        space.n_continuous, space.discrete_cardinalities
    ));
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

/// All learnable parameters. The flat ordering used by `to_flat`/`from_flat`
/// is the serialization and optimizer contract: trunk layers in order (weight
/// row-major, then bias), mean head, mean bias, log-std, value head, value
/// bias, then each discrete head (weight row-major, then bias).
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParameters {
    pub version: u64,
    trunk_w: Vec<Array2<f64>>,
    trunk_b: Vec<Array1<f64>>,
    mean_w: Array2<f64>,
    mean_b: Array1<f64>,
    log_std: Array1<f64>,
    value_w: Array1<f64>,
    value_b: f64,
    disc_w: Vec<Array2<f64>>,
    disc_b: Vec<Array1<f64>>,
}

impl PolicyParameters {
    pub fn n_params(&self) -> usize {
        let mut n = 0;
        for (w, b) in self.trunk_w.iter().zip(&self.trunk_b) {
            n += w.len() + b.len();
        }
        n += self.mean_w.len() + self.mean_b.len() + self.log_std.len();
        n += self.value_w.len() + 1;
        for (w, b) in self.disc_w.iter().zip(&self.disc_b) {
            n += w.len() + b.len();
        }
        n
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for (w, b) in self.trunk_w.iter().zip(&self.trunk_b) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out.extend(self.mean_w.iter());
        out.extend(self.mean_b.iter());
        out.extend(self.log_std.iter());
        out.extend(self.value_w.iter());
        out.push(self.value_b);
        for (w, b) in self.disc_w.iter().zip(&self.disc_b) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn from_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params(), "flat parameter length mismatch");
        let mut it = flat.iter();
        let mut take = |dst: &mut f64| *dst = *it.next().unwrap();
        for (w, b) in self.trunk_w.iter_mut().zip(&mut self.trunk_b) {
            for x in w.iter_mut() {
                take(x);
            }
            for x in b.iter_mut() {
                take(x);
            }
        }
        for x in self.mean_w.iter_mut() {
            take(x);
        }
        for x in self.mean_b.iter_mut() {
            take(x);
        }
        for x in self.log_std.iter_mut() {
            take(x);
        }
        for x in self.value_w.iter_mut() {
            take(x);
        }
        take(&mut self.value_b);
        for (w, b) in self.disc_w.iter_mut().zip(&mut self.disc_b) {
            for x in w.iter_mut() {
                take(x);
            }
            for x in b.iter_mut() {
                take(x);
            }
        }
        debug_assert!(it.next().is_none());
    }
}

/// Frozen per-sample loss inputs. Advantages already carry the importance
/// weighting and, like the value targets, are constants with respect to the
/// parameters being differentiated.
#[derive(Debug, Clone, Copy)]
pub struct FrozenLoss<'a> {
    pub advantages: &'a [f64],
    pub value_targets: &'a [f64],
    pub value_coef: f64,
    pub entropy_coef: f64,
}

/// Cached activations from one batched forward pass.
pub struct ForwardCache {
    obs: Array2<f64>,
    trunk: Vec<Array2<f64>>,
    pub means: Array2<f64>,
    pub values: Vec<f64>,
    pub probs: Vec<Array2<f64>>,
    pub log_probs: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.obs.nrows()
    }
}

/// Per-action evaluation under current parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchEval {
    pub log_probs: Vec<f64>,
    pub entropies: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Policy {
    cfg: PolicyConfig,
    pub params: PolicyParameters,
}

const LN_2PI: f64 = 1.8378770664093453;
const HALF_LN_2PI_E: f64 = 1.4189385332046727;

impl Policy {
    /// Builds a policy with a randomly initialized trunk and neutral heads.
    pub fn new(cfg: PolicyConfig, seed: u64) -> Result<Self, PolicyError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut trunk_w = Vec::new();
        let mut trunk_b = Vec::new();
        let mut fan_in = cfg.obs_len;
        for &h in &cfg.hidden {
            let limit = (6.0 / (fan_in + h) as f64).sqrt();
            let w = Array2::from_shape_fn((h, fan_in), |_| rng.gen_range(-limit..limit));
            trunk_w.push(w);
            trunk_b.push(Array1::zeros(h));
            fan_in = h;
        }
        let last = *cfg.hidden.last().unwrap();
        let mut disc_w = Vec::new();
        let mut disc_b = Vec::new();
        for &k in &cfg.discrete_cardinalities {
            disc_w.push(Array2::zeros((k, last)));
            let mut b = Array1::zeros(k);
            if let Some(prior) = cfg.discrete_prior {
                if k == 2 {
                    b[1] = prior.binary_on_logit;
                } else {
                    let center = (k - 1) as f64 / 2.0;
                    for (idx, v) in b.iter_mut().enumerate() {
                        let d = idx as f64 - center;
                        *v = -d * d / (2.0 * prior.center_std * prior.center_std);
                    }
                }
            }
            disc_b.push(b);
        }
        let params = PolicyParameters {
            version: 0,
            trunk_w,
            trunk_b,
            mean_w: Array2::zeros((cfg.n_continuous, last)),
            mean_b: Array1::zeros(cfg.n_continuous),
            log_std: Array1::from_elem(cfg.n_continuous, cfg.log_std_init),
            value_w: Array1::zeros(last),
            value_b: 0.0,
            disc_w,
            disc_b,
        };
        Ok(Policy { cfg, params })
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.cfg
    }

    pub fn version(&self) -> u64 {
        self.params.version
    }

    fn clamped_log_std(&self, j: usize) -> (f64, bool) {
        let raw = self.params.log_std[j];
        if raw < self.cfg.log_std_min {
            (self.cfg.log_std_min, true)
        } else if raw > self.cfg.log_std_max {
            (self.cfg.log_std_max, true)
        } else {
            (raw, false)
        }
    }

    /// Batched forward pass caching everything the backward pass needs.
    pub fn forward(&self, obs: ArrayView2<f64>) -> ForwardCache {
        assert_eq!(obs.ncols(), self.cfg.obs_len, "observation width mismatch");
        let mut trunk = Vec::with_capacity(self.params.trunk_w.len());
        let mut x = obs.to_owned();
        for (w, b) in self.params.trunk_w.iter().zip(&self.params.trunk_b) {
            let mut pre = x.dot(&w.t());
            pre += b;
            pre.mapv_inplace(f64::tanh);
            trunk.push(pre.clone());
            x = pre;
        }
        let h = trunk.last().unwrap();
        let mut means = h.dot(&self.params.mean_w.t());
        means += &self.params.mean_b;
        let values: Vec<f64> = h
            .dot(&self.params.value_w)
            .iter()
            .map(|v| v + self.params.value_b)
            .collect();
        let mut probs = Vec::new();
        let mut log_probs = Vec::new();
        for (w, b) in self.params.disc_w.iter().zip(&self.params.disc_b) {
            let mut z = h.dot(&w.t());
            z += b;
            // stable log-softmax per row
            let mut lp = z;
            for mut row in lp.rows_mut() {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
                row.mapv_inplace(|v| v - lse);
            }
            let p = lp.mapv(f64::exp);
            probs.push(p);
            log_probs.push(lp);
        }
        ForwardCache { obs: obs.to_owned(), trunk, means, values, probs, log_probs }
    }

    /// Log-density of a squashed continuous action vector plus chosen
    /// discrete indices, for sample row `i` of the cache. The continuous
    /// pre-squash point is recovered from the stored action so that actor
    /// and learner evaluate the exact same quantity.
    fn action_log_prob(&self, cache: &ForwardCache, i: usize, action: &ActionVector) -> f64 {
        let mut lp = 0.0;
        for j in 0..self.cfg.n_continuous {
            let (ls, _) = self.clamped_log_std(j);
            let sigma = ls.exp();
            let a = action.continuous[j].clamp(-1.0 + self.cfg.squash_eps, 1.0 - self.cfg.squash_eps);
            let u = a.atanh();
            let z = (u - cache.means[(i, j)]) / sigma;
            lp += -0.5 * z * z - 0.5 * LN_2PI - ls;
            lp -= (1.0 - action.continuous[j] * action.continuous[j] + self.cfg.squash_eps).ln();
        }
        for (d, &choice) in action.discrete.iter().enumerate() {
            lp += cache.log_probs[d][(i, choice as usize)];
        }
        lp
    }

    fn entropy_at(&self, cache: &ForwardCache, i: usize) -> f64 {
        let mut h = 0.0;
        for j in 0..self.cfg.n_continuous {
            let (ls, _) = self.clamped_log_std(j);
            h += HALF_LN_2PI_E + ls;
        }
        for (p_head, lp_head) in cache.probs.iter().zip(&cache.log_probs) {
            for (p, lp) in p_head.row(i).iter().zip(lp_head.row(i)) {
                if *p > 0.0 {
                    h -= p * lp;
                }
            }
        }
        h
    }

    /// Evaluates stored actions: log-probabilities, entropies, values.
    pub fn evaluate_actions(&self, cache: &ForwardCache, actions: &[ActionVector]) -> BatchEval {
        assert_eq!(actions.len(), cache.batch());
        let mut log_probs = Vec::with_capacity(actions.len());
        let mut entropies = Vec::with_capacity(actions.len());
        for (i, action) in actions.iter().enumerate() {
            log_probs.push(self.action_log_prob(cache, i, action));
            entropies.push(self.entropy_at(cache, i));
        }
        BatchEval { log_probs, entropies, values: cache.values.clone() }
    }

    /// Samples one action and returns it with its log-probability.
    pub fn sample(&self, obs: &[f64], rng: &mut impl Rng) -> (ActionVector, f64) {
        let cache = self.forward(
            ArrayView2::from_shape((1, obs.len()), obs).expect("obs shape"),
        );
        let mut continuous = Vec::with_capacity(self.cfg.n_continuous);
        for j in 0..self.cfg.n_continuous {
            let (ls, _) = self.clamped_log_std(j);
            let z: f64 = StandardNormal.sample(rng);
            let u = cache.means[(0, j)] + ls.exp() * z;
            continuous.push(u.tanh());
        }
        let mut discrete = Vec::with_capacity(self.cfg.discrete_cardinalities.len());
        for head in &cache.probs {
            let draw: f64 = rng.gen();
            let mut acc = 0.0;
            let mut choice = head.ncols() - 1;
            for (k, &p) in head.row(0).iter().enumerate() {
                acc += p;
                if draw < acc {
                    choice = k;
                    break;
                }
            }
            discrete.push(choice as u32);
        }
        let action = ActionVector { continuous, discrete };
        let lp = self.action_log_prob(&cache, 0, &action);
        (action, lp)
    }

    /// Deterministic action: squashed means and argmax discrete choices.
    pub fn mode(&self, obs: &[f64]) -> ActionVector {
        let cache = self.forward(
            ArrayView2::from_shape((1, obs.len()), obs).expect("obs shape"),
        );
        let continuous = (0..self.cfg.n_continuous)
            .map(|j| cache.means[(0, j)].tanh())
            .collect();
        let discrete = cache
            .probs
            .iter()
            .map(|head| {
                let row = head.row(0);
                let mut best = 0usize;
                for (k, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = k;
                    }
                }
                best as u32
            })
            .collect();
        ActionVector { continuous, discrete }
    }

    /// Gradient of the composite loss
    ///   mean(-log_prob * advantage) + value_coef * mean((target - V)^2)
    ///   - entropy_coef * mean(entropy)
    /// with respect to every parameter, flattened in `to_flat` order.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        actions: &[ActionVector],
        frozen: &FrozenLoss,
    ) -> Vec<f64> {
        let n = cache.batch();
        assert_eq!(actions.len(), n);
        assert_eq!(frozen.advantages.len(), n);
        assert_eq!(frozen.value_targets.len(), n);
        let inv_n = 1.0 / n as f64;
        let last_h = cache.trunk.last().unwrap();
        let hid = last_h.ncols();

        // Head-level gradients
        let nc = self.cfg.n_continuous;
        let mut g_means = Array2::<f64>::zeros((n, nc));
        let mut g_log_std = Array1::<f64>::zeros(nc);
        for j in 0..nc {
            let (ls, clamped) = self.clamped_log_std(j);
            let sigma = ls.exp();
            let mut acc = 0.0;
            for (i, action) in actions.iter().enumerate() {
                let a = action.continuous[j]
                    .clamp(-1.0 + self.cfg.squash_eps, 1.0 - self.cfg.squash_eps);
                let u = a.atanh();
                let z = (u - cache.means[(i, j)]) / sigma;
                // d(-logpi * adv)/d mean = -adv * z / sigma
                g_means[(i, j)] = -frozen.advantages[i] * inv_n * z / sigma;
                // d(-logpi * adv)/d log_std = -adv * (z^2 - 1)
                acc += -frozen.advantages[i] * inv_n * (z * z - 1.0);
            }
            // entropy depends on log_std with unit slope per sample
            acc -= frozen.entropy_coef;
            g_log_std[j] = if clamped { 0.0 } else { acc };
        }

        let mut g_value = Array1::<f64>::zeros(n);
        for i in 0..n {
            g_value[i] =
                frozen.value_coef * 2.0 * (cache.values[i] - frozen.value_targets[i]) * inv_n;
        }

        let mut g_logits: Vec<Array2<f64>> = Vec::with_capacity(cache.probs.len());
        for (d, (p_head, lp_head)) in cache.probs.iter().zip(&cache.log_probs).enumerate() {
            let k = p_head.ncols();
            let mut g = Array2::<f64>::zeros((n, k));
            for i in 0..n {
                let mut h_cat = 0.0;
                for (p, lp) in p_head.row(i).iter().zip(lp_head.row(i)) {
                    if *p > 0.0 {
                        h_cat -= p * lp;
                    }
                }
                let chosen = actions[i].discrete[d] as usize;
                for kk in 0..k {
                    let p = p_head[(i, kk)];
                    let onehot = if kk == chosen { 1.0 } else { 0.0 };
                    let policy_term = -frozen.advantages[i] * inv_n * (onehot - p);
                    let entropy_term = if p > 0.0 {
                        frozen.entropy_coef * inv_n * p * (lp_head[(i, kk)] + h_cat)
                    } else {
                        0.0
                    };
                    g[(i, kk)] = policy_term + entropy_term;
                }
            }
            g_logits.push(g);
        }

        // Accumulate head weight grads and the gradient flowing into the
        // last trunk activation.
        let mut g_h = Array2::<f64>::zeros((n, hid));
        let g_mean_w = g_means.t().dot(last_h);
        let g_mean_b = g_means.sum_axis(Axis(0));
        if nc > 0 {
            g_h += &g_means.dot(&self.params.mean_w);
        }
        let g_value_w = last_h.t().dot(&g_value);
        let g_value_b = g_value.sum();
        for i in 0..n {
            let gv = g_value[i];
            if gv != 0.0 {
                for c in 0..hid {
                    g_h[(i, c)] += gv * self.params.value_w[c];
                }
            }
        }
        let mut g_disc_w = Vec::new();
        let mut g_disc_b = Vec::new();
        for (g, w) in g_logits.iter().zip(&self.params.disc_w) {
            g_disc_w.push(g.t().dot(last_h));
            g_disc_b.push(g.sum_axis(Axis(0)));
            g_h += &g.dot(w);
        }

        // Trunk backprop through tanh layers.
        let mut g_trunk_w: Vec<Array2<f64>> = Vec::with_capacity(self.params.trunk_w.len());
        let mut g_trunk_b: Vec<Array1<f64>> = Vec::with_capacity(self.params.trunk_w.len());
        let mut upstream = g_h;
        for layer in (0..self.params.trunk_w.len()).rev() {
            let h = &cache.trunk[layer];
            let mut g_pre = upstream;
            g_pre.zip_mut_with(h, |g, &a| *g *= 1.0 - a * a);
            let input = if layer == 0 { &cache.obs } else { &cache.trunk[layer - 1] };
            g_trunk_w.push(g_pre.t().dot(input));
            g_trunk_b.push(g_pre.sum_axis(Axis(0)));
            upstream = g_pre.dot(&self.params.trunk_w[layer]);
        }
        g_trunk_w.reverse();
        g_trunk_b.reverse();

        // Flatten in the canonical order.
        let mut out = Vec::with_capacity(self.params.n_params());
        for (w, b) in g_trunk_w.iter().zip(&g_trunk_b) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out.extend(g_mean_w.iter());
        out.extend(g_mean_b.iter());
        out.extend(g_log_std.iter());
        out.extend(g_value_w.iter());
        out.push(g_value_b);
        for (w, b) in g_disc_w.iter().zip(&g_disc_b) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    policy_version: u64,
    descriptor_hash: String,
    config: PolicyConfig,
    params_flat: Vec<f64>,
}

pub fn save_checkpoint(
    path: &Path,
    policy: &Policy,
    descriptor_hash: &str,
) -> Result<(), PolicyError> {
    let file = CheckpointFile {
        format_version: 1,
        policy_version: policy.params.version,
        descriptor_hash: descriptor_hash.to_string(),
        config: policy.cfg.clone(),
        params_flat: policy.params.to_flat(),
    };
    fs::write(path, serde_json::to_string(&file)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path, expected_hash: &str) -> Result<Policy, PolicyError> {
    let file: CheckpointFile = serde_json::from_str(&fs::read_to_string(path)?)?;
    if file.descriptor_hash != expected_hash {
        return Err(PolicyError::DescriptorMismatch {
            found: file.descriptor_hash,
            expected: expected_hash.to_string(),
        });
    }
    let mut policy = Policy::new(file.config, 0)?;
    if file.params_flat.len() != policy.params.n_params() {
        return Err(PolicyError::ShapeMismatch(format!(
            "{} parameters in file, architecture has {}",
            file.params_flat.len(),
            policy.params.n_params()
        )));
    }
    policy.params.from_flat(&file.params_flat);
    policy.params.version = file.policy_version;
    Ok(policy)
}
