//! Validated per-unit model of a radial distribution feeder.
//!
//! A [`FeederNetwork`] is loaded from a JSON scenario file and is immutable
//! afterwards; all controllable quantities (tap positions, capacitor switch
//! states, injections) live in the power-flow state, never in the model.
//! Validation enforces exactly one slack bus, resolvable references, sane
//! device bounds, and radial connected topology.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("failed to read scenario file: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse scenario JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("scenario has no buses")]
    NoBuses,
    #[error("expected exactly one slack bus, found {0}")]
    SlackCount(usize),
    #[error("duplicate bus id {0:?}")]
    DuplicateBusId(String),
    #[error("duplicate {kind} id {id:?}")]
    DuplicateDeviceId { kind: &'static str, id: String },
    #[error("{device} references unknown bus {bus:?}")]
    UnknownBus { device: String, bus: String },
    #[error("branch {0:?} has zero series impedance")]
    ZeroImpedance(String),
    #[error("branch {0:?} has negative resistance")]
    NegativeResistance(String),
    #[error("{0}")]
    InvalidBounds(String),
    #[error("mva_base must be positive, got {0}")]
    InvalidBase(f64),
    #[error("network is not radial: {edges} branches for {buses} buses")]
    NotRadial { edges: usize, buses: usize },
    #[error("bus {0:?} is not connected to the slack bus")]
    Disconnected(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Load,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: String,
    pub bus_type: BusKind,
    pub base_kv: f64,
    #[serde(default = "default_phases")]
    pub phases: u8,
}

fn default_phases() -> u8 {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub id: String,
    pub from_bus: String,
    pub to_bus: String,
    pub resistance_pu: f64,
    pub reactance_pu: f64,
    /// Total charging susceptance of the line; half is lumped at each end.
    #[serde(default)]
    pub shunt_susceptance_pu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transformer {
    pub id: String,
    pub from_bus: String,
    pub to_bus: String,
    pub resistance_pu: f64,
    pub reactance_pu: f64,
    #[serde(default = "default_tap_min")]
    pub tap_min: f64,
    #[serde(default = "default_tap_max")]
    pub tap_max: f64,
    #[serde(default = "default_num_steps")]
    pub num_steps: u32,
}

fn default_tap_min() -> f64 {
    0.9
}

fn default_tap_max() -> f64 {
    1.1
}

fn default_num_steps() -> u32 {
    33
}

impl Transformer {
    /// Voltage ratio applied to the downstream (to) side at a tap position.
    /// Positions are evenly spaced: 0 maps to `tap_min`, the last position to
    /// `tap_max`. With the defaults the midpoint position 16 is exactly 1.0.
    pub fn tap_ratio(&self, index: u32) -> f64 {
        assert!(index < self.num_steps, "tap index {index} out of range");
        let step = (self.tap_max - self.tap_min) / (self.num_steps - 1) as f64;
        self.tap_min + index as f64 * step
    }

    /// Position whose ratio is closest to 1.0; 16 with the default range.
    pub fn neutral_position(&self) -> u32 {
        let step = (self.tap_max - self.tap_min) / (self.num_steps - 1) as f64;
        let raw = (1.0 - self.tap_min) / step;
        (raw.round().max(0.0) as u32).min(self.num_steps - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Capacitor {
    pub id: String,
    pub bus: String,
    pub rated_kvar: f64,
    /// Switch state used when a power-flow state does not override it.
    #[serde(default)]
    pub status: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PvSystem {
    pub id: String,
    pub bus: String,
    /// Nameplate active power at full irradiance.
    pub pmpp_kw: f64,
    #[serde(default)]
    pub p_min_kw: f64,
    pub p_max_kw: f64,
    pub q_min_kvar: f64,
    pub q_max_kvar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Battery {
    pub id: String,
    pub bus: String,
    /// Most negative dispatch (charging).
    pub p_min_kw: f64,
    /// Most positive dispatch (discharging).
    pub p_max_kw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Load {
    pub id: String,
    pub bus: String,
    pub base_p_kw: f64,
    pub base_q_kvar: f64,
}

/// Raw scenario file contents, mirroring the JSON schema one to one.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub mva_base: f64,
    pub buses: Vec<Bus>,
    #[serde(default)]
    pub lines: Vec<Line>,
    #[serde(default)]
    pub transformers: Vec<Transformer>,
    #[serde(default)]
    pub capacitors: Vec<Capacitor>,
    #[serde(default)]
    pub pvs: Vec<PvSystem>,
    #[serde(default)]
    pub batteries: Vec<Battery>,
    #[serde(default)]
    pub loads: Vec<Load>,
}

/// Resolved bus indices for every reference in the model, built once at load.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NetworkIndex {
    pub slack: usize,
    pub line_ends: Vec<(usize, usize)>,
    pub transformer_ends: Vec<(usize, usize)>,
    pub capacitor_bus: Vec<usize>,
    pub pv_bus: Vec<usize>,
    pub battery_bus: Vec<usize>,
    pub load_bus: Vec<usize>,
    bus_of: HashMap<String, usize>,
}

/// Immutable validated feeder model in per-unit on `mva_base`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeederNetwork {
    pub mva_base: f64,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub transformers: Vec<Transformer>,
    pub capacitors: Vec<Capacitor>,
    pub pvs: Vec<PvSystem>,
    pub batteries: Vec<Battery>,
    pub loads: Vec<Load>,
    pub index: NetworkIndex,
}

impl FeederNetwork {
    pub fn from_scenario(scenario: ScenarioFile) -> Result<Self, ModelError> {
        let index = validate(&scenario)?;
        Ok(FeederNetwork {
            mva_base: scenario.mva_base,
            buses: scenario.buses,
            lines: scenario.lines,
            transformers: scenario.transformers,
            capacitors: scenario.capacitors,
            pvs: scenario.pvs,
            batteries: scenario.batteries,
            loads: scenario.loads,
            index,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self, ModelError> {
        Self::from_scenario(serde_json::from_str(text)?)
    }

    pub fn to_scenario(&self) -> ScenarioFile {
        ScenarioFile {
            mva_base: self.mva_base,
            buses: self.buses.clone(),
            lines: self.lines.clone(),
            transformers: self.transformers.clone(),
            capacitors: self.capacitors.clone(),
            pvs: self.pvs.clone(),
            batteries: self.batteries.clone(),
            loads: self.loads.clone(),
        }
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_scenario()).expect("scenario serialization")
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    /// Series branch count; equals `n_buses() - 1` on a radial feeder.
    pub fn n_branches(&self) -> usize {
        self.lines.len() + self.transformers.len()
    }

    pub fn slack_index(&self) -> usize {
        self.index.slack
    }

    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.index.bus_of.get(id).copied()
    }

    /// Converts a kW figure to per-unit power on the system base.
    pub fn kw_to_pu(&self, kw: f64) -> f64 {
        kw / (1000.0 * self.mva_base)
    }

    pub fn pu_to_kw(&self, pu: f64) -> f64 {
        pu * 1000.0 * self.mva_base
    }
}

/// Reads and validates a scenario file.
pub fn load_network(path: &Path) -> Result<FeederNetwork, ModelError> {
    let text = std::fs::read_to_string(path)?;
    FeederNetwork::from_json_str(&text)
}

fn validate(s: &ScenarioFile) -> Result<NetworkIndex, ModelError> {
    if s.buses.is_empty() {
        return Err(ModelError::NoBuses);
    }
    if !(s.mva_base > 0.0) {
        return Err(ModelError::InvalidBase(s.mva_base));
    }

    let mut bus_of = HashMap::new();
    for (i, bus) in s.buses.iter().enumerate() {
        if bus_of.insert(bus.id.clone(), i).is_some() {
            return Err(ModelError::DuplicateBusId(bus.id.clone()));
        }
    }
    let slacks: Vec<usize> = s
        .buses
        .iter()
        .enumerate()
        .filter(|(_, b)| b.bus_type == BusKind::Slack)
        .map(|(i, _)| i)
        .collect();
    if slacks.len() != 1 {
        return Err(ModelError::SlackCount(slacks.len()));
    }
    let slack = slacks[0];

    let resolve = |device: &str, bus: &str| -> Result<usize, ModelError> {
        bus_of.get(bus).copied().ok_or_else(|| ModelError::UnknownBus {
            device: device.to_string(),
            bus: bus.to_string(),
        })
    };
    let check_ids = |kind: &'static str, ids: Vec<&String>| -> Result<(), ModelError> {
        let mut seen = HashMap::new();
        for id in ids {
            if seen.insert(id, ()).is_some() {
                return Err(ModelError::DuplicateDeviceId { kind, id: id.clone() });
            }
        }
        Ok(())
    };
    check_ids("line", s.lines.iter().map(|x| &x.id).collect())?;
    check_ids("transformer", s.transformers.iter().map(|x| &x.id).collect())?;
    check_ids("capacitor", s.capacitors.iter().map(|x| &x.id).collect())?;
    check_ids("pv", s.pvs.iter().map(|x| &x.id).collect())?;
    check_ids("battery", s.batteries.iter().map(|x| &x.id).collect())?;
    check_ids("load", s.loads.iter().map(|x| &x.id).collect())?;

    let mut line_ends = Vec::with_capacity(s.lines.len());
    for line in &s.lines {
        if line.resistance_pu < 0.0 {
            return Err(ModelError::NegativeResistance(line.id.clone()));
        }
        if line.resistance_pu == 0.0 && line.reactance_pu == 0.0 {
            return Err(ModelError::ZeroImpedance(line.id.clone()));
        }
        let f = resolve(&format!("line {:?}", line.id), &line.from_bus)?;
        let t = resolve(&format!("line {:?}", line.id), &line.to_bus)?;
        line_ends.push((f, t));
    }

    let mut transformer_ends = Vec::with_capacity(s.transformers.len());
    for tr in &s.transformers {
        if tr.resistance_pu < 0.0 {
            return Err(ModelError::NegativeResistance(tr.id.clone()));
        }
        if tr.resistance_pu == 0.0 && tr.reactance_pu == 0.0 {
            return Err(ModelError::ZeroImpedance(tr.id.clone()));
        }
        if !(tr.tap_min > 0.0 && tr.tap_max > tr.tap_min && tr.num_steps >= 2) {
            return Err(ModelError::InvalidBounds(format!(
                "transformer {:?} tap range [{}, {}] with {} positions is invalid",
                tr.id, tr.tap_min, tr.tap_max, tr.num_steps
            )));
        }
        let f = resolve(&format!("transformer {:?}", tr.id), &tr.from_bus)?;
        let t = resolve(&format!("transformer {:?}", tr.id), &tr.to_bus)?;
        transformer_ends.push((f, t));
    }

    let mut capacitor_bus = Vec::with_capacity(s.capacitors.len());
    for cap in &s.capacitors {
        if cap.rated_kvar < 0.0 {
            return Err(ModelError::InvalidBounds(format!(
                "capacitor {:?} has negative rating",
                cap.id
            )));
        }
        capacitor_bus.push(resolve(&format!("capacitor {:?}", cap.id), &cap.bus)?);
    }

    let mut pv_bus = Vec::with_capacity(s.pvs.len());
    for pv in &s.pvs {
        if !(pv.pmpp_kw >= 0.0 && 0.0 <= pv.p_min_kw && pv.p_min_kw <= pv.p_max_kw) {
            return Err(ModelError::InvalidBounds(format!(
                "pv {:?} active-power bounds are invalid",
                pv.id
            )));
        }
        if pv.q_min_kvar > pv.q_max_kvar {
            return Err(ModelError::InvalidBounds(format!(
                "pv {:?} reactive bounds are inverted",
                pv.id
            )));
        }
        pv_bus.push(resolve(&format!("pv {:?}", pv.id), &pv.bus)?);
    }

    let mut battery_bus = Vec::with_capacity(s.batteries.len());
    for b in &s.batteries {
        if !(b.p_min_kw <= 0.0 && 0.0 <= b.p_max_kw) {
            return Err(ModelError::InvalidBounds(format!(
                "battery {:?} bounds must straddle zero",
                b.id
            )));
        }
        battery_bus.push(resolve(&format!("battery {:?}", b.id), &b.bus)?);
    }

    let mut load_bus = Vec::with_capacity(s.loads.len());
    for l in &s.loads {
        if l.base_p_kw < 0.0 {
            return Err(ModelError::InvalidBounds(format!(
                "load {:?} has negative base power",
                l.id
            )));
        }
        load_bus.push(resolve(&format!("load {:?}", l.id), &l.bus)?);
    }

    let n = s.buses.len();
    let edges = line_ends.len() + transformer_ends.len();
    if edges != n - 1 {
        return Err(ModelError::NotRadial { edges, buses: n });
    }
    // Connectivity by breadth-first search from the slack; together with the
    // edge count this certifies a radial (tree) topology.
    let mut adjacency = vec![Vec::new(); n];
    for &(f, t) in line_ends.iter().chain(transformer_ends.iter()) {
        adjacency[f].push(t);
        adjacency[t].push(f);
    }
    let mut seen = vec![false; n];
    let mut frontier = vec![slack];
    seen[slack] = true;
    while let Some(i) = frontier.pop() {
        for &j in &adjacency[i] {
            if !seen[j] {
                seen[j] = true;
                frontier.push(j);
            }
        }
    }
    if let Some(i) = seen.iter().position(|&v| !v) {
        return Err(ModelError::Disconnected(s.buses[i].id.clone()));
    }

    Ok(NetworkIndex {
        slack,
        line_ends,
        transformer_ends,
        capacitor_bus,
        pv_bus,
        battery_bus,
        load_bus,
        bus_of,
    })
}
