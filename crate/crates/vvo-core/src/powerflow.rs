//! Newton-Raphson AC power flow in polar form on the per-unit feeder model.
//!
//! The slack bus holds 1.0 pu at angle zero; every other bus is a PQ node
//! whose net injection comes from a [`NetworkState`]. Shunt elements
//! (line charging, switched capacitors) enter the admittance matrix, so a
//! capacitor contributes `rated * |V|^2` of reactive power by construction.
//!
//! A transformer is a series impedance behind an ideal off-nominal tap on the
//! from side, parameterized so that the tap ratio scales the downstream
//! voltage directly: at ratio `r` an unloaded secondary sits at `r * V_from`.
//! Raising the tap position therefore raises downstream voltages.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::model::FeederNetwork;

/// Convergence threshold on the largest absolute power mismatch, in pu.
pub const MISMATCH_TOLERANCE: f64 = 1e-8;
/// Iteration cap; exceeding it is reported as divergence.
pub const MAX_ITERATIONS: u32 = 50;

/// ANSI C84.1 service band used for violation counting, in pu.
pub const V_LOWER: f64 = 0.95;
pub const V_UPPER: f64 = 1.05;

#[derive(Debug, Error)]
pub enum StateError {
    #[error("expected {expected} {what}, got {got}")]
    WrongLength { what: &'static str, expected: usize, got: usize },
    #[error("tap index {index} out of range for transformer {transformer} ({num_steps} positions)")]
    TapOutOfRange { transformer: String, index: u32, num_steps: u32 },
    #[error("non-finite injection at bus index {0}")]
    NonFiniteInjection(usize),
}

#[derive(Debug, Error)]
#[error("power flow diverged after {iterations} iterations (max mismatch {max_mismatch:.3e} pu)")]
pub struct Diverged {
    pub iterations: u32,
    pub max_mismatch: f64,
}

/// Controllable quantities and net bus injections for one power-flow solve.
/// Injections are in pu on the system base with generation positive, so
/// loads appear as negative entries. Slack-bus injections are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub tap_indices: Vec<u32>,
    pub capacitor_status: Vec<bool>,
    pub p_injection_pu: Vec<f64>,
    pub q_injection_pu: Vec<f64>,
}

impl NetworkState {
    pub fn new(
        net: &FeederNetwork,
        tap_indices: Vec<u32>,
        capacitor_status: Vec<bool>,
        p_injection_pu: Vec<f64>,
        q_injection_pu: Vec<f64>,
    ) -> Result<Self, StateError> {
        if tap_indices.len() != net.transformers.len() {
            return Err(StateError::WrongLength {
                what: "tap indices",
                expected: net.transformers.len(),
                got: tap_indices.len(),
            });
        }
        if capacitor_status.len() != net.capacitors.len() {
            return Err(StateError::WrongLength {
                what: "capacitor states",
                expected: net.capacitors.len(),
                got: capacitor_status.len(),
            });
        }
        for (v, what) in [(&p_injection_pu, "P injections"), (&q_injection_pu, "Q injections")] {
            if v.len() != net.n_buses() {
                return Err(StateError::WrongLength {
                    what,
                    expected: net.n_buses(),
                    got: v.len(),
                });
            }
        }
        for (tr, &idx) in net.transformers.iter().zip(&tap_indices) {
            if idx >= tr.num_steps {
                return Err(StateError::TapOutOfRange {
                    transformer: tr.id.clone(),
                    index: idx,
                    num_steps: tr.num_steps,
                });
            }
        }
        for (i, (&p, &q)) in p_injection_pu.iter().zip(&q_injection_pu).enumerate() {
            if !p.is_finite() || !q.is_finite() {
                return Err(StateError::NonFiniteInjection(i));
            }
        }
        Ok(NetworkState { tap_indices, capacitor_status, p_injection_pu, q_injection_pu })
    }

    /// Neutral controls: every tap at its unity-ratio position, capacitors
    /// open, zero injections.
    pub fn neutral(net: &FeederNetwork) -> Self {
        NetworkState {
            tap_indices: net.transformers.iter().map(|t| t.neutral_position()).collect(),
            capacitor_status: vec![false; net.capacitors.len()],
            p_injection_pu: vec![0.0; net.n_buses()],
            q_injection_pu: vec![0.0; net.n_buses()],
        }
    }

    pub fn add_injection(&mut self, bus: usize, p_pu: f64, q_pu: f64) {
        self.p_injection_pu[bus] += p_pu;
        self.q_injection_pu[bus] += q_pu;
    }
}

/// Dense complex nodal admittance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    pub y: DMatrix<Complex64>,
}

impl AdmittanceMatrix {
    pub fn g(&self, i: usize, j: usize) -> f64 {
        self.y[(i, j)].re
    }

    pub fn b(&self, i: usize, j: usize) -> f64 {
        self.y[(i, j)].im
    }
}

/// Assembles the admittance matrix for a model under the given tap positions
/// and capacitor switch states.
pub fn build_admittance(net: &FeederNetwork, state: &NetworkState) -> AdmittanceMatrix {
    let n = net.n_buses();
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));

    for (line, &(f, t)) in net.lines.iter().zip(&net.index.line_ends) {
        let series = Complex64::new(line.resistance_pu, line.reactance_pu).inv();
        let half_shunt = Complex64::new(0.0, line.shunt_susceptance_pu / 2.0);
        y[(f, f)] += series + half_shunt;
        y[(t, t)] += series + half_shunt;
        y[(f, t)] -= series;
        y[(t, f)] -= series;
    }

    for ((tr, &(f, t)), &tap) in net.transformers.iter().zip(&net.index.transformer_ends).zip(&state.tap_indices) {
        let series = Complex64::new(tr.resistance_pu, tr.reactance_pu).inv();
        let r = tr.tap_ratio(tap);
        y[(f, f)] += series * (r * r);
        y[(t, t)] += series;
        y[(f, t)] -= series * r;
        y[(t, f)] -= series * r;
    }

    for ((cap, &bus), &on) in net.capacitors.iter().zip(&net.index.capacitor_bus).zip(&state.capacitor_status) {
        if on {
            y[(bus, bus)] += Complex64::new(0.0, net.kw_to_pu(cap.rated_kvar));
        }
    }

    AdmittanceMatrix { y }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution {
    /// Voltage magnitude per bus, pu.
    pub v_mag: Vec<f64>,
    /// Voltage angle per bus, radians.
    pub v_ang: Vec<f64>,
    /// Newton iterations taken before the mismatch check passed.
    pub iterations: u32,
    /// Largest absolute power mismatch at convergence, pu.
    pub max_mismatch: f64,
    /// Net injection realized at the slack bus, pu.
    pub slack_p_pu: f64,
    pub slack_q_pu: f64,
    pub slack_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViolationReport {
    /// Non-slack buses outside the open band (exactly 0.95 or 1.05 is fine).
    pub count: usize,
    pub non_slack_buses: usize,
    pub fraction: f64,
}

/// Counts non-slack buses with voltage strictly outside [`V_LOWER`, `V_UPPER`].
pub fn count_violations(sol: &PowerFlowSolution) -> ViolationReport {
    let mut count = 0;
    let mut non_slack = 0;
    for (i, &v) in sol.v_mag.iter().enumerate() {
        if i == sol.slack_index {
            continue;
        }
        non_slack += 1;
        if v < V_LOWER || v > V_UPPER {
            count += 1;
        }
    }
    ViolationReport {
        count,
        non_slack_buses: non_slack,
        fraction: if non_slack == 0 { 0.0 } else { count as f64 / non_slack as f64 },
    }
}

/// Total series I^2 R losses over all branches, pu. Shunt elements are pure
/// susceptances and contribute nothing.
pub fn total_losses(net: &FeederNetwork, state: &NetworkState, sol: &PowerFlowSolution) -> f64 {
    let volt = |i: usize| Complex64::from_polar(sol.v_mag[i], sol.v_ang[i]);
    let mut loss = 0.0;
    for (line, &(f, t)) in net.lines.iter().zip(&net.index.line_ends) {
        let series = Complex64::new(line.resistance_pu, line.reactance_pu).inv();
        let current = (volt(f) - volt(t)) * series;
        loss += current.norm_sqr() * line.resistance_pu;
    }
    for ((tr, &(f, t)), &tap) in net.transformers.iter().zip(&net.index.transformer_ends).zip(&state.tap_indices) {
        let series = Complex64::new(tr.resistance_pu, tr.reactance_pu).inv();
        let r = tr.tap_ratio(tap);
        let current = (volt(f) * r - volt(t)) * series;
        loss += current.norm_sqr() * tr.resistance_pu;
    }
    loss
}

/// Newton-Raphson solver. Each instance owns its scratch buffers, so clones
/// can run concurrently without sharing mutable state.
#[derive(Debug, Clone, Default)]
pub struct PowerFlowSolver {
    jacobian: DMatrix<f64>,
    mismatch: DVector<f64>,
    p_calc: Vec<f64>,
    q_calc: Vec<f64>,
}

impl PowerFlowSolver {
    pub fn new() -> Self {
        Self::default()
    }

    /// Solves from a flat start (1.0 pu, zero angle). Returns an error with
    /// the last mismatch when the iteration cap is hit or the update turns
    /// numerically invalid.
    pub fn solve(
        &mut self,
        net: &FeederNetwork,
        state: &NetworkState,
    ) -> Result<PowerFlowSolution, Diverged> {
        let n = net.n_buses();
        let slack = net.slack_index();
        let adm = build_admittance(net, state);
        let y = &adm.y;

        // Unknown ordering: angles of non-slack buses, then magnitudes.
        let order: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
        let m = order.len();
        let dim = 2 * m;
        if self.jacobian.nrows() != dim {
            self.jacobian = DMatrix::zeros(dim, dim);
            self.mismatch = DVector::zeros(dim);
        }
        self.p_calc.resize(n, 0.0);
        self.q_calc.resize(n, 0.0);

        let mut v_mag: Vec<f64> = vec![1.0; n];
        let mut v_ang: Vec<f64> = vec![0.0; n];
        let mut last_mismatch = f64::INFINITY;

        for iteration in 0..=MAX_ITERATIONS {
            for i in 0..n {
                let mut p = 0.0;
                let mut q = 0.0;
                for k in 0..n {
                    let yik = y[(i, k)];
                    if yik.re == 0.0 && yik.im == 0.0 {
                        continue;
                    }
                    let theta = v_ang[i] - v_ang[k];
                    let (sin_t, cos_t) = theta.sin_cos();
                    let vv = v_mag[i] * v_mag[k];
                    p += vv * (yik.re * cos_t + yik.im * sin_t);
                    q += vv * (yik.re * sin_t - yik.im * cos_t);
                }
                self.p_calc[i] = p;
                self.q_calc[i] = q;
            }

            let mut max_mm: f64 = 0.0;
            for (row, &i) in order.iter().enumerate() {
                let dp = state.p_injection_pu[i] - self.p_calc[i];
                let dq = state.q_injection_pu[i] - self.q_calc[i];
                self.mismatch[row] = dp;
                self.mismatch[m + row] = dq;
                max_mm = max_mm.max(dp.abs()).max(dq.abs());
            }
            last_mismatch = max_mm;
            if !max_mm.is_finite() {
                return Err(Diverged { iterations: iteration, max_mismatch: max_mm });
            }
            if max_mm <= MISMATCH_TOLERANCE {
                return Ok(PowerFlowSolution {
                    v_mag,
                    v_ang,
                    iterations: iteration,
                    max_mismatch: max_mm,
                    slack_p_pu: self.p_calc[slack],
                    slack_q_pu: self.q_calc[slack],
                    slack_index: slack,
                });
            }
            if iteration == MAX_ITERATIONS {
                break;
            }

            for (row, &i) in order.iter().enumerate() {
                for (col, &j) in order.iter().enumerate() {
                    let (dp_da, dp_dv, dq_da, dq_dv) = if i == j {
                        let yii = y[(i, i)];
                        (
                            -self.q_calc[i] - yii.im * v_mag[i] * v_mag[i],
                            self.p_calc[i] / v_mag[i] + yii.re * v_mag[i],
                            self.p_calc[i] - yii.re * v_mag[i] * v_mag[i],
                            self.q_calc[i] / v_mag[i] - yii.im * v_mag[i],
                        )
                    } else {
                        let yij = y[(i, j)];
                        if yij.re == 0.0 && yij.im == 0.0 {
                            (0.0, 0.0, 0.0, 0.0)
                        } else {
                            let theta = v_ang[i] - v_ang[j];
                            let (sin_t, cos_t) = theta.sin_cos();
                            let gc_bs = yij.re * cos_t + yij.im * sin_t;
                            let gs_bc = yij.re * sin_t - yij.im * cos_t;
                            (
                                v_mag[i] * v_mag[j] * gs_bc,
                                v_mag[i] * gc_bs,
                                -v_mag[i] * v_mag[j] * gc_bs,
                                v_mag[i] * gs_bc,
                            )
                        }
                    };
                    self.jacobian[(row, col)] = dp_da;
                    self.jacobian[(row, m + col)] = dp_dv;
                    self.jacobian[(m + row, col)] = dq_da;
                    self.jacobian[(m + row, m + col)] = dq_dv;
                }
            }

            let step = match self.jacobian.clone().lu().solve(&self.mismatch) {
                Some(s) => s,
                None => return Err(Diverged { iterations: iteration, max_mismatch: max_mm }),
            };
            for (row, &i) in order.iter().enumerate() {
                v_ang[i] += step[row];
                v_mag[i] += step[m + row];
                if !v_mag[i].is_finite() || !v_ang[i].is_finite() || v_mag[i] <= 0.0 {
                    return Err(Diverged { iterations: iteration + 1, max_mismatch: max_mm });
                }
            }
        }

        Err(Diverged { iterations: MAX_ITERATIONS, max_mismatch: last_mismatch })
    }
}

/// One-shot convenience wrapper around a fresh [`PowerFlowSolver`].
pub fn solve(net: &FeederNetwork, state: &NetworkState) -> Result<PowerFlowSolution, Diverged> {
    PowerFlowSolver::new().solve(net, state)
}
