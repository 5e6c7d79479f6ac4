//! Off-policy return correction and the composite actor-critic loss.
//!
//! Targets are computed from trajectory fragments laid out row-major as
//! `batch x steps`, with one extra bootstrap value per row. The backward
//! recursion here is algebraically equal to the explicit clipped-product
//! summation; tests hold the two within 1e-12 of each other.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum VTraceError {
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("input `{name}` has length {got}, expected {expected}")]
    LengthMismatch { name: &'static str, got: usize, expected: usize },
    #[error("non-finite value in `{0}`")]
    NonFinite(&'static str),
}

/// Discounting, clipping, and loss weighting. `rho_clip` bounds the ratio
/// used in the temporal-difference terms, `c_clip` the ratio carried across
/// timesteps; the standard requirement `rho_clip >= c_clip` is enforced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VTraceConfig {
    pub gamma: f64,
    pub rho_clip: f64,
    pub c_clip: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
}

impl Default for VTraceConfig {
    fn default() -> Self {
        VTraceConfig {
            gamma: 0.99,
            rho_clip: 1.0,
            c_clip: 1.0,
            value_coef: 0.5,
            entropy_coef: 0.01,
        }
    }
}

impl VTraceConfig {
    pub fn validate(&self) -> Result<(), VTraceError> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(VTraceError::BadConfig(format!(
                "gamma {} outside [0, 1]",
                self.gamma
            )));
        }
        if !(self.c_clip > 0.0) || !(self.rho_clip >= self.c_clip) {
            return Err(VTraceError::BadConfig(format!(
                "need rho_clip >= c_clip > 0, got rho {} c {}",
                self.rho_clip, self.c_clip
            )));
        }
        for (name, v) in [
            ("value_coef", self.value_coef),
            ("entropy_coef", self.entropy_coef),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(VTraceError::BadConfig(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// One fragment batch, row-major `batch x steps`. `values` carries one extra
/// entry per row: the bootstrap value of the state after the last step.
#[derive(Debug, Clone, Copy)]
pub struct VTraceInputs<'a> {
    pub batch: usize,
    pub steps: usize,
    pub rewards: &'a [f64],
    pub dones: &'a [bool],
    pub behavior_log_probs: &'a [f64],
    pub target_log_probs: &'a [f64],
    pub values: &'a [f64],
}

#[derive(Debug, Clone, PartialEq)]
pub struct VTraceOutput {
    /// Corrected value targets v_s, `batch x steps`.
    pub v_targets: Vec<f64>,
    /// Clipped per-step ratios used in the difference terms.
    pub rho: Vec<f64>,
    /// Ratio-weighted policy-gradient advantages
    /// rho_t * (r_t + gamma_t * v_{t+1} - V(s_t)); already carry the full
    /// importance correction, so the policy loss must not weight them again.
    pub advantages: Vec<f64>,
}

/// Clipped importance ratios computed in log space. Returns `(rho, c)`.
pub fn importance_ratios(
    target_log_probs: &[f64],
    behavior_log_probs: &[f64],
    rho_clip: f64,
    c_clip: f64,
) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(target_log_probs.len(), behavior_log_probs.len());
    let mut rho = Vec::with_capacity(target_log_probs.len());
    let mut c = Vec::with_capacity(target_log_probs.len());
    for (&lp, &lm) in target_log_probs.iter().zip(behavior_log_probs) {
        let ratio = (lp - lm).exp();
        rho.push(ratio.min(rho_clip));
        c.push(ratio.min(c_clip));
    }
    (rho, c)
}

fn check_finite(name: &'static str, xs: &[f64]) -> Result<(), VTraceError> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(VTraceError::NonFinite(name))
    }
}

/// Backward-recursion computation of the corrected targets.
///
/// Per row, with gamma_t = gamma * (1 - done_t) and V the raw value
/// predictions (V[steps] being the bootstrap):
///   delta_t = rho_t * (r_t + gamma_t * V_{t+1} - V_t)
///   v_t     = V_t + delta_t + gamma_t * c_t * (v_{t+1} - V_{t+1})
/// with v_{steps} = V[steps]. A terminal flag zeroes gamma_t, which cuts
/// every term that would reach past the episode boundary.
pub fn compute_vtrace(
    inputs: &VTraceInputs,
    cfg: &VTraceConfig,
) -> Result<VTraceOutput, VTraceError> {
    cfg.validate()?;
    let (b, t) = (inputs.batch, inputs.steps);
    let n = b * t;
    for (name, len) in [
        ("rewards", inputs.rewards.len()),
        ("dones", inputs.dones.len()),
        ("behavior_log_probs", inputs.behavior_log_probs.len()),
        ("target_log_probs", inputs.target_log_probs.len()),
    ] {
        if len != n {
            return Err(VTraceError::LengthMismatch { name: "inputs", got: len, expected: n });
        }
        let _ = name;
    }
    if inputs.values.len() != b * (t + 1) {
        return Err(VTraceError::LengthMismatch {
            name: "values",
            got: inputs.values.len(),
            expected: b * (t + 1),
        });
    }
    check_finite("rewards", inputs.rewards)?;
    check_finite("behavior_log_probs", inputs.behavior_log_probs)?;
    check_finite("target_log_probs", inputs.target_log_probs)?;
    check_finite("values", inputs.values)?;

    let (rho, c) = importance_ratios(
        inputs.target_log_probs,
        inputs.behavior_log_probs,
        cfg.rho_clip,
        cfg.c_clip,
    );

    let mut v_targets = vec![0.0; n];
    let mut advantages = vec![0.0; n];
    for row in 0..b {
        let vals = &inputs.values[row * (t + 1)..(row + 1) * (t + 1)];
        // v_next tracks v_{t+1}; past the fragment end it is the bootstrap.
        let mut v_next = vals[t];
        for step in (0..t).rev() {
            let i = row * t + step;
            let gamma_t = if inputs.dones[i] { 0.0 } else { cfg.gamma };
            let delta = rho[i] * (inputs.rewards[i] + gamma_t * vals[step + 1] - vals[step]);
            let v = vals[step] + delta + gamma_t * c[i] * (v_next - vals[step + 1]);
            advantages[i] = rho[i] * (inputs.rewards[i] + gamma_t * v_next - vals[step]);
            v_targets[i] = v;
            v_next = v;
        }
    }
    Ok(VTraceOutput { v_targets, rho, advantages })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub total: f64,
}

/// Composite loss over one batch. All slices are `batch x steps` and the
/// targets/advantages are treated as constants (no gradient flows through
/// them); `values_t` holds the value predictions V(s_t) without bootstrap
/// entries. Minimizing `total` ascends reward and entropy together.
pub fn losses(
    advantages: &[f64],
    v_targets: &[f64],
    values_t: &[f64],
    target_log_probs: &[f64],
    entropies: &[f64],
    cfg: &VTraceConfig,
) -> Result<LossBreakdown, VTraceError> {
    cfg.validate()?;
    let n = advantages.len();
    for (name, len) in [
        ("v_targets", v_targets.len()),
        ("values_t", values_t.len()),
        ("target_log_probs", target_log_probs.len()),
        ("entropies", entropies.len()),
    ] {
        if len != n {
            return Err(VTraceError::LengthMismatch { name, got: len, expected: n });
        }
    }
    let mut policy_sum = 0.0;
    let mut value_sum = 0.0;
    let mut entropy_sum = 0.0;
    for i in 0..n {
        policy_sum += target_log_probs[i] * advantages[i];
        let err = v_targets[i] - values_t[i];
        value_sum += err * err;
        entropy_sum += entropies[i];
    }
    let m = n as f64;
    let policy_loss = -policy_sum / m;
    let value_loss = value_sum / m;
    let entropy = entropy_sum / m;
    let total = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy;
    for (name, v) in [
        ("policy_loss", policy_loss),
        ("value_loss", value_loss),
        ("entropy", entropy),
    ] {
        if !v.is_finite() {
            return Err(VTraceError::NonFinite(name));
        }
    }
    Ok(LossBreakdown { policy_loss, value_loss, entropy, total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(gamma: f64) -> VTraceConfig {
        VTraceConfig { gamma, ..Default::default() }
    }

    /// Independent oracle: evaluates the corrected target as the explicit
    /// summation v_s = V_s + sum_t (prod of per-step discounts) *
    /// (prod of carried ratios) * delta_t, term by term.
    fn literal_vtrace(inputs: &VTraceInputs, cfg: &VTraceConfig) -> Vec<f64> {
        let (b, t) = (inputs.batch, inputs.steps);
        let (rho, c) = importance_ratios(
            inputs.target_log_probs,
            inputs.behavior_log_probs,
            cfg.rho_clip,
            cfg.c_clip,
        );
        let mut out = vec![0.0; b * t];
        for row in 0..b {
            let vals = &inputs.values[row * (t + 1)..(row + 1) * (t + 1)];
            for s in 0..t {
                let mut v = vals[s];
                for k in s..t {
                    // discount product over steps s..k and ratio product
                    // over steps s..k-1, honoring terminal masking
                    let mut coeff = 1.0;
                    for j in s..k {
                        let i = row * t + j;
                        let gamma_j = if inputs.dones[i] { 0.0 } else { cfg.gamma };
                        coeff *= gamma_j * c[i];
                    }
                    let i = row * t + k;
                    let gamma_k = if inputs.dones[i] { 0.0 } else { cfg.gamma };
                    let delta = rho[i] * (inputs.rewards[i] + gamma_k * vals[k + 1] - vals[k]);
                    v += coeff * delta;
                }
                out[row * t + s] = v;
            }
        }
        out
    }

    fn random_inputs(
        rng: &mut ChaCha8Rng,
        b: usize,
        t: usize,
        on_policy: bool,
        with_dones: bool,
    ) -> (Vec<f64>, Vec<bool>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = b * t;
        let rewards: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let dones: Vec<bool> = (0..n)
            .map(|_| with_dones && rng.gen_bool(0.15))
            .collect();
        let behavior: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..0.0)).collect();
        let target: Vec<f64> = if on_policy {
            behavior.clone()
        } else {
            (0..n).map(|_| rng.gen_range(-3.0..0.0)).collect()
        };
        let values: Vec<f64> = (0..b * (t + 1)).map(|_| rng.gen_range(-1.0..1.0)).collect();
        (rewards, dones, behavior, target, values)
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        assert!(VTraceConfig::default().validate().is_ok());
        assert!(cfg(-0.1).validate().is_err());
        assert!(cfg(1.1).validate().is_err());
        let bad_clip = VTraceConfig { rho_clip: 0.5, c_clip: 1.0, ..Default::default() };
        assert!(bad_clip.validate().is_err());
        let zero_c = VTraceConfig { c_clip: 0.0, ..Default::default() };
        assert!(zero_c.validate().is_err());
    }

    #[test]
    fn on_policy_ratios_are_unit_before_clipping() {
        let lp = [-0.5, -2.0, -10.0];
        let (rho, c) = importance_ratios(&lp, &lp, 1.0, 1.0);
        for (&r, &cc) in rho.iter().zip(&c) {
            assert_abs_diff_eq!(r, 1.0, epsilon = 1e-15);
            assert_abs_diff_eq!(cc, 1.0, epsilon = 1e-15);
        }
        let (rho_low, _) = importance_ratios(&lp, &lp, 0.5, 0.5);
        assert!(rho_low.iter().all(|&r| r == 0.5));
    }

    #[test]
    fn clipping_caps_large_ratios_and_passes_small_ones() {
        let three = [3.0f64.ln()];
        let zero = [0.0f64];
        let (rho, c) = importance_ratios(&three, &zero, 1.0, 1.0);
        assert_abs_diff_eq!(rho[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c[0], 1.0, epsilon = 1e-15);

        let half = [0.5f64.ln()];
        let (rho, c) = importance_ratios(&half, &zero, 1.0, 1.0);
        assert_abs_diff_eq!(rho[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(c[0], 0.5, epsilon = 1e-15);
        let (rho2, _) = importance_ratios(&half, &zero, 2.0, 2.0);
        assert_abs_diff_eq!(rho2[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn single_step_hand_computed_target() {
        // gamma 0: delta = 1 * (2 + 0 - 0.5) = 1.5, v = 0.5 + 1.5 = 2.0
        let inputs = VTraceInputs {
            batch: 1,
            steps: 1,
            rewards: &[2.0],
            dones: &[false],
            behavior_log_probs: &[-1.0],
            target_log_probs: &[-1.0],
            values: &[0.5, 0.0],
        };
        let out = compute_vtrace(&inputs, &cfg(0.0)).unwrap();
        assert_abs_diff_eq!(out.v_targets[0], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(out.advantages[0], 1.5, epsilon = 1e-15);

        // Terminal flag must give the identical result at any gamma.
        let done_inputs = VTraceInputs { dones: &[true], ..inputs };
        let out2 = compute_vtrace(&done_inputs, &cfg(0.99)).unwrap();
        assert_abs_diff_eq!(out2.v_targets[0], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(out2.advantages[0], 1.5, epsilon = 1e-15);
    }

    #[test]
    fn two_step_hand_computed_targets() {
        // on-policy, r = [1, 1], gamma = 0.9, all V = 0:
        // v_1 = 1, v_0 = 1 + 0.9 * 1 = 1.9
        let inputs = VTraceInputs {
            batch: 1,
            steps: 2,
            rewards: &[1.0, 1.0],
            dones: &[false, false],
            behavior_log_probs: &[-1.0, -1.0],
            target_log_probs: &[-1.0, -1.0],
            values: &[0.0, 0.0, 0.0],
        };
        let out = compute_vtrace(&inputs, &cfg(0.9)).unwrap();
        assert_abs_diff_eq!(out.v_targets[1], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(out.v_targets[0], 1.9, epsilon = 1e-15);
        assert_abs_diff_eq!(out.advantages[1], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(out.advantages[0], 1.9, epsilon = 1e-15);
    }

    #[test]
    fn values_at_the_fixed_point_give_zero_corrections() {
        // Build V as the exact bootstrapped return of constant rewards; all
        // deltas then vanish and v == V.
        let t = 12;
        let gamma = 0.9;
        let r = 0.7;
        let mut values = vec![0.0; t + 1];
        values[t] = 0.4;
        for s in (0..t).rev() {
            values[s] = r + gamma * values[s + 1];
        }
        let rewards = vec![r; t];
        let dones = vec![false; t];
        let lp = vec![-0.3; t];
        let inputs = VTraceInputs {
            batch: 1,
            steps: t,
            rewards: &rewards,
            dones: &dones,
            behavior_log_probs: &lp,
            target_log_probs: &lp,
            values: &values,
        };
        let out = compute_vtrace(&inputs, &cfg(gamma)).unwrap();
        for s in 0..t {
            assert_abs_diff_eq!(out.v_targets[s], values[s], epsilon = 1e-12);
            assert_abs_diff_eq!(out.advantages[s], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn on_policy_targets_reduce_to_nstep_returns() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (b, t) = (8, 50);
        let gamma = 0.99;
        for _ in 0..20 {
            let (rewards, dones, behavior, target, values) =
                random_inputs(&mut rng, b, t, true, false);
            let inputs = VTraceInputs {
                batch: b,
                steps: t,
                rewards: &rewards,
                dones: &dones,
                behavior_log_probs: &behavior,
                target_log_probs: &target,
                values: &values,
            };
            let out = compute_vtrace(&inputs, &cfg(gamma)).unwrap();
            for row in 0..b {
                let vals = &values[row * (t + 1)..(row + 1) * (t + 1)];
                for s in 0..t {
                    let mut ret = 0.0;
                    let mut disc = 1.0;
                    for k in s..t {
                        ret += disc * rewards[row * t + k];
                        disc *= gamma;
                    }
                    ret += disc * vals[t];
                    assert!(
                        (out.v_targets[row * t + s] - ret).abs() < 1e-10,
                        "row {row} step {s}: {} vs {ret}",
                        out.v_targets[row * t + s]
                    );
                }
            }
        }
    }

    #[test]
    fn recursion_matches_literal_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for trial in 0..200 {
            let b = rng.gen_range(1..4usize);
            let t = rng.gen_range(1..=50usize);
            let (rewards, dones, behavior, target, values) =
                random_inputs(&mut rng, b, t, false, true);
            let inputs = VTraceInputs {
                batch: b,
                steps: t,
                rewards: &rewards,
                dones: &dones,
                behavior_log_probs: &behavior,
                target_log_probs: &target,
                values: &values,
            };
            let c = VTraceConfig {
                gamma: rng.gen_range(0.0..1.0),
                rho_clip: 1.0,
                c_clip: rng.gen_range(0.2..1.0),
                ..Default::default()
            };
            let fast = compute_vtrace(&inputs, &c).unwrap();
            let slow = literal_vtrace(&inputs, &c);
            for i in 0..b * t {
                assert!(
                    (fast.v_targets[i] - slow[i]).abs() < 1e-12,
                    "trial {trial} idx {i}: {} vs {}",
                    fast.v_targets[i],
                    slow[i]
                );
            }
        }
    }

    #[test]
    fn terminal_flag_cuts_dependence_on_later_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (b, t) = (1, 10);
        let (rewards, mut dones, behavior, target, values) =
            random_inputs(&mut rng, b, t, false, false);
        let cut = 4;
        dones[cut] = true;
        let inputs = VTraceInputs {
            batch: b,
            steps: t,
            rewards: &rewards,
            dones: &dones,
            behavior_log_probs: &behavior,
            target_log_probs: &target,
            values: &values,
        };
        let base = compute_vtrace(&inputs, &cfg(0.95)).unwrap();

        // Scramble everything strictly after the terminal step.
        let mut rewards2 = rewards.clone();
        let mut behavior2 = behavior.clone();
        let mut target2 = target.clone();
        let mut values2 = values.clone();
        for i in cut + 1..t {
            rewards2[i] = 99.0;
            behavior2[i] = -0.01;
            target2[i] = -5.0;
            values2[i + 1] = -7.0;
        }
        values2[cut + 1] = 123.0; // the value "after" the terminal state
        let scrambled = VTraceInputs {
            batch: b,
            steps: t,
            rewards: &rewards2,
            dones: &dones,
            behavior_log_probs: &behavior2,
            target_log_probs: &target2,
            values: &values2,
        };
        let after = compute_vtrace(&scrambled, &cfg(0.95)).unwrap();
        for s in 0..=cut {
            assert_eq!(
                base.v_targets[s], after.v_targets[s],
                "step {s} depends on post-terminal data"
            );
            assert_eq!(base.advantages[s], after.advantages[s]);
        }
    }

    #[test]
    fn lowering_rho_clip_shrinks_single_sign_corrections() {
        // All deltas positive: rewards large, values zero, ratios above 1.
        let t = 8;
        let rewards = vec![1.0; t];
        let dones = vec![false; t];
        let behavior = vec![-2.0; t];
        let target = vec![-1.0; t]; // ratio e > 1 everywhere
        let values = vec![0.0; t + 1];
        let inputs = VTraceInputs {
            batch: 1,
            steps: t,
            rewards: &rewards,
            dones: &dones,
            behavior_log_probs: &behavior,
            target_log_probs: &target,
            values: &values,
        };
        let wide = VTraceConfig { gamma: 0.9, rho_clip: 1.0, c_clip: 1.0, ..Default::default() };
        let narrow = VTraceConfig { gamma: 0.9, rho_clip: 0.4, c_clip: 0.4, ..Default::default() };
        let v_wide = compute_vtrace(&inputs, &wide).unwrap();
        let v_narrow = compute_vtrace(&inputs, &narrow).unwrap();
        for s in 0..t {
            let wide_dev = v_wide.v_targets[s] - values[s];
            let narrow_dev = v_narrow.v_targets[s] - values[s];
            assert!(wide_dev >= 0.0 && narrow_dev >= 0.0);
            assert!(
                narrow_dev <= wide_dev + 1e-12,
                "step {s}: narrowing the clip increased the correction"
            );
        }
    }

    #[test]
    fn loss_zero_cases_and_composition() {
        let c = VTraceConfig::default();
        let zeros = vec![0.0; 4];
        let targets = vec![1.0, -0.5, 0.25, 2.0];
        let lp = vec![-0.1, -0.2, -0.3, -0.4];
        let ent = vec![0.5; 4];

        // Zero advantages kill the policy term entirely.
        let out = losses(&zeros, &targets, &targets, &lp, &ent, &c).unwrap();
        assert_eq!(out.policy_loss, 0.0);
        assert_eq!(out.value_loss, 0.0);
        assert_abs_diff_eq!(out.entropy, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(out.total, -c.entropy_coef * 0.5, epsilon = 1e-15);

        // Composition: total = policy + value_coef * value - entropy_coef * entropy.
        let adv = vec![1.0, 2.0, -1.0, 0.5];
        let values_t = vec![0.9, -0.6, 0.05, 2.2];
        let out = losses(&adv, &targets, &values_t, &lp, &ent, &c).unwrap();
        let expect_policy =
            -(lp[0] * adv[0] + lp[1] * adv[1] + lp[2] * adv[2] + lp[3] * adv[3]) / 4.0;
        let expect_value = targets
            .iter()
            .zip(&values_t)
            .map(|(t, v)| (t - v) * (t - v))
            .sum::<f64>()
            / 4.0;
        assert_abs_diff_eq!(out.policy_loss, expect_policy, epsilon = 1e-15);
        assert_abs_diff_eq!(out.value_loss, expect_value, epsilon = 1e-15);
        assert_abs_diff_eq!(
            out.total,
            expect_policy + 0.5 * expect_value - 0.01 * 0.5,
            epsilon = 1e-15
        );
    }

    #[test]
    fn one_step_batches_match_the_bandit_closed_form() {
        // Every episode is a single step with done=true, the setting the
        // trainer actually runs. v = V + rho * (r - V); the policy term is
        // importance-weighted log-prob times (r - V).
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let b = 64;
        let (rewards, _, behavior, target, _) = random_inputs(&mut rng, b, 1, false, false);
        let dones = vec![true; b];
        let values: Vec<f64> = (0..b * 2)
            .map(|i| if i % 2 == 0 { rng.gen_range(-1.0..1.0) } else { 0.0 })
            .collect();
        let inputs = VTraceInputs {
            batch: b,
            steps: 1,
            rewards: &rewards,
            dones: &dones,
            behavior_log_probs: &behavior,
            target_log_probs: &target,
            values: &values,
        };
        let c = VTraceConfig::default();
        let out = compute_vtrace(&inputs, &c).unwrap();
        let values_t: Vec<f64> = (0..b).map(|row| values[row * 2]).collect();
        let ent = vec![1.2; b];
        let loss = losses(&out.advantages, &out.v_targets, &values_t, &target, &ent, &c).unwrap();

        let mut expect_policy = 0.0;
        let mut expect_value = 0.0;
        for row in 0..b {
            let rho = (target[row] - behavior[row]).exp().min(c.rho_clip);
            let adv = rho * (rewards[row] - values_t[row]);
            assert_abs_diff_eq!(out.advantages[row], adv, epsilon = 1e-14);
            assert_abs_diff_eq!(
                out.v_targets[row],
                values_t[row] + adv,
                epsilon = 1e-14
            );
            expect_policy += target[row] * adv;
            expect_value += adv * adv;
        }
        assert_abs_diff_eq!(loss.policy_loss, -expect_policy / b as f64, epsilon = 1e-12);
        assert_abs_diff_eq!(loss.value_loss, expect_value / b as f64, epsilon = 1e-12);
    }

    #[test]
    fn shape_and_finiteness_errors_are_reported() {
        let good = VTraceInputs {
            batch: 1,
            steps: 2,
            rewards: &[1.0, 1.0],
            dones: &[false, false],
            behavior_log_probs: &[-1.0, -1.0],
            target_log_probs: &[-1.0, -1.0],
            values: &[0.0, 0.0, 0.0],
        };
        assert!(compute_vtrace(&good, &cfg(0.9)).is_ok());

        let short_values = VTraceInputs { values: &[0.0, 0.0], ..good };
        assert!(matches!(
            compute_vtrace(&short_values, &cfg(0.9)),
            Err(VTraceError::LengthMismatch { .. })
        ));

        let nan_reward = VTraceInputs { rewards: &[f64::NAN, 1.0], ..good };
        assert!(matches!(
            compute_vtrace(&nan_reward, &cfg(0.9)),
            Err(VTraceError::NonFinite(_))
        ));
    }

    proptest! {
        #[test]
        fn targets_stay_finite_on_finite_inputs(
            seed in 0u64..500,
            b in 1usize..4,
            t in 1usize..20,
            gamma in 0.0f64..1.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (rewards, dones, behavior, target, values) =
                random_inputs(&mut rng, b, t, false, true);
            let inputs = VTraceInputs {
                batch: b,
                steps: t,
                rewards: &rewards,
                dones: &dones,
                behavior_log_probs: &behavior,
                target_log_probs: &target,
                values: &values,
            };
            let out = compute_vtrace(&inputs, &cfg(gamma)).unwrap();
            prop_assert!(out.v_targets.iter().all(|v| v.is_finite()));
            prop_assert!(out.advantages.iter().all(|a| a.is_finite()));
            prop_assert!(out.rho.iter().all(|&r| (0.0..=1.0).contains(&r)));
        }
    }
}
