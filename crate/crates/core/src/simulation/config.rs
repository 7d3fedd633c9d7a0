use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{IdleState, Payload, VehicleId};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {0}: {1}")]
    Io(String, std::io::Error),
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Simulation parameters. Every field has a default, so a config file
/// only lists what it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Physics tick, s.
    pub dt: f64,
    /// Constant V2V latency, s.
    pub latency: f64,
    #[serde(alias = "drop-probability")]
    pub drop_probability: f64,
    /// Intra-platoon gap, m.
    pub d: f64,
    /// Inter-platoon gap, m.
    #[serde(rename = "D")]
    pub big_d: f64,
    pub v_free: f64,
    pub a_max: f64,
    pub b_max: f64,
    /// Proportional gain of the speed controller, 1/s.
    pub kp: f64,
    #[serde(alias = "arrival-tolerance")]
    pub arrival_tolerance: f64,
    #[serde(alias = "speed-tolerance")]
    pub speed_tolerance: f64,
    /// Free space needed on the target lane for a lane change, and the
    /// standstill distance kept by the safety cap, m.
    pub min_gap: f64,
    pub max_platoon_size: usize,
    pub controlling_timeout: f64,
    pub superstate_timeout: f64,
    pub t_max: f64,
    /// Period of physics-sample trace records, s; 0 disables them.
    pub sample_interval: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 0.1,
            latency: 0.1,
            drop_probability: 0.0,
            d: 6.0,
            big_d: 30.0,
            v_free: 20.0,
            a_max: 2.0,
            b_max: 3.0,
            kp: 0.5,
            arrival_tolerance: 0.5,
            speed_tolerance: 0.5,
            min_gap: 2.0,
            max_platoon_size: 8,
            controlling_timeout: 30.0,
            superstate_timeout: 90.0,
            t_max: 600.0,
            sample_interval: 1.0,
        }
    }
}

impl SimConfig {
    pub fn from_json(text: &str) -> Result<SimConfig, ConfigError> {
        let c: SimConfig = serde_json::from_str(text)?;
        c.check()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<SimConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.display().to_string(), e))?;
        SimConfig::from_json(&text)
    }

    // Negated comparisons so NaN fails too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn check(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if !(self.dt > 0.0) {
            return bad("dt must be positive");
        }
        if !(0.0..=1.0).contains(&self.drop_probability) {
            return bad("drop_probability must lie in [0, 1]");
        }
        if !(self.d < self.big_d) {
            return bad("d must be smaller than D");
        }
        if self.latency < 0.0 || self.a_max <= 0.0 || self.b_max <= 0.0 || self.kp <= 0.0 {
            return bad("latency must be non-negative and a_max, b_max, kp positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSpec {
    pub id: VehicleId,
    pub lane: i64,
    pub s: f64,
    pub v: f64,
    /// Initial idle state.
    pub role: IdleState,
    /// Leader of the platoon this vehicle belongs to.
    #[serde(default)]
    pub platoon: Option<VehicleId>,
    /// Admission answer of this vehicle's LLI when it leads.
    #[serde(default = "yes")]
    pub accept: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatoonSpec {
    pub leader: VehicleId,
    /// Followers front to back; a leading entry equal to `leader` is
    /// accepted and ignored.
    pub members: Vec<VehicleId>,
    #[serde(default)]
    pub d: Option<f64>,
    #[serde(default, rename = "D")]
    pub big_d: Option<f64>,
}

/// A scripted non-communicating object, e.g. a human-driven car.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSpec {
    pub id: VehicleId,
    pub lane: i64,
    pub s: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestSpec {
    pub leader: VehicleId,
    /// Extra REQ payload, e.g. `ahead` for a join in the middle.
    #[serde(default)]
    pub fields: Payload,
}

/// One LLI command: a request from a free vehicle (`request` set) or a
/// direct initiation by a leader.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    pub t: f64,
    pub vehicle: VehicleId,
    pub action: String,
    #[serde(default)]
    pub bindings: BTreeMap<String, VehicleId>,
    #[serde(default)]
    pub params: Payload,
    #[serde(default)]
    pub request: Option<RequestSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: Option<String>,
    pub vehicles: Vec<VehicleSpec>,
    #[serde(default)]
    pub platoons: Vec<PlatoonSpec>,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
    #[serde(default)]
    pub script: Vec<ScriptEntry>,
    /// Overrides the configured horizon, s.
    #[serde(default)]
    pub t_max: Option<f64>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario, ConfigError> {
        let s: Scenario = serde_json::from_str(text)?;
        s.check()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Scenario, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.display().to_string(), e))?;
        Scenario::from_json(&text)
    }

    pub fn vehicle(&self, id: &VehicleId) -> Option<&VehicleSpec> {
        self.vehicles.iter().find(|v| &v.id == id)
    }

    pub fn followers<'a>(&'a self, p: &'a PlatoonSpec) -> impl Iterator<Item = &'a VehicleId> + 'a {
        p.members.iter().filter(move |m| *m != &p.leader)
    }

    /// Structural checks: unique ids, platoon membership agrees with the
    /// vehicles' `platoon` fields and idle states, script names vehicles.
    // Negated comparisons so NaN fails too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn check(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let mut ids = std::collections::BTreeSet::new();
        for id in self.vehicles.iter().map(|v| &v.id).chain(self.obstacles.iter().map(|o| &o.id)) {
            if !ids.insert(id) {
                return bad(format!("duplicate id {id}"));
            }
        }
        for v in &self.vehicles {
            if !v.role.is_stable() {
                return bad(format!("{} starts in unstable {}", v.id, v.role));
            }
            let listed = self
                .platoons
                .iter()
                .find(|p| p.leader == v.id || self.followers(p).any(|m| *m == v.id));
            match (v.role, listed) {
                (IdleState::Fv, None) if v.platoon.is_none() => {}
                (IdleState::Pl, Some(p)) if p.leader == v.id && v.platoon.as_ref().is_none_or(|l| *l == v.id) => {}
                (IdleState::Pl, None) if v.platoon.as_ref().is_none_or(|l| *l == v.id) => {}
                (IdleState::Pf, Some(p)) if p.leader != v.id && v.platoon.as_ref().is_none_or(|l| *l == p.leader) => {}
                _ => return bad(format!("{} ({}) disagrees with the platoon list", v.id, v.role)),
            }
        }
        for p in &self.platoons {
            if self.vehicle(&p.leader).map(|v| v.role) != Some(IdleState::Pl) {
                return bad(format!("platoon leader {} is not a PL vehicle", p.leader));
            }
            for m in self.followers(p) {
                if self.vehicle(m).is_none() {
                    return bad(format!("unknown platoon member {m}"));
                }
            }
        }
        for e in &self.script {
            if self.vehicle(&e.vehicle).is_none() {
                return bad(format!("script names unknown vehicle {}", e.vehicle));
            }
            if !(e.t >= 0.0) {
                return bad(format!("script time {} is negative", e.t));
            }
        }
        Ok(())
    }
}
