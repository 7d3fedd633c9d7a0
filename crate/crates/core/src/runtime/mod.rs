//! Per-vehicle agents: the reactive state machine every vehicle runs, the
//! leader-side manoeuvring engine, the LLI stub and timer management.
//!
//! Agents never touch the world directly. They read it through
//! [`WorldView`] and return [`Effect`]s, which the simulation applies in
//! order.

mod agent;

use std::collections::BTreeMap;

use serde_json::Value as Json;
use thiserror::Error;

pub use agent::{timer_name, ManoeuvreRecord, Pme, RequestRecord, VehicleAgent};

use crate::params::{resolve, ResolveError};
use crate::types::{CorrelationId, Headway, IdleState, Message, Primitive, Value, VehicleId};

/// Simulated time in milliseconds.
pub type Millis = u64;

pub fn secs_to_millis(s: f64) -> Millis {
    (s * 1000.0).round().max(0.0) as Millis
}

/// Read-only access to simulation ground truth.
pub trait WorldView {
    /// Leader first, then followers ordered upstream to downstream.
    fn members(&self, leader: &VehicleId) -> Vec<VehicleId>;
    fn leader_of(&self, v: &VehicleId) -> Option<VehicleId>;
    fn lane(&self, v: &VehicleId) -> Option<i64>;
}

/// Goal handed to the regulation layer.
#[derive(Debug, Clone, PartialEq)]
pub enum PhysicalTarget {
    /// Reach `offset` metres relative to `target` (negative is behind), in
    /// `lane` if given, and match its speed.
    Position {
        target: VehicleId,
        offset: f64,
        lane: Option<i64>,
    },
    /// Keep a time (s) or space (m) headway to the vehicle ahead in the
    /// platoon.
    TimeHeadway(f64),
    SpaceHeadway(f64),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum TimerKey {
    Instance(CorrelationId),
    /// Recovery timer of the waiting superstates.
    Superstate,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Effect {
    Send(Message),
    Target(Option<PhysicalTarget>),
    /// Point this vehicle at `leader` (or at nobody).
    SetLeader(Option<VehicleId>),
    /// This vehicle leads itself and every member downstream of it.
    Split,
    /// This vehicle and its followers join `leader`'s platoon.
    Merge(VehicleId),
    /// Refresh this leader's member list from ground truth.
    Upi,
    TimerArmed { key: TimerKey, deadline: Millis },
    Trace {
        kind: &'static str,
        detail: BTreeMap<String, Json>,
    },
}

impl Effect {
    pub fn trace(kind: &'static str, detail: impl IntoIterator<Item = (&'static str, Json)>) -> Effect {
        Effect::Trace {
            kind,
            detail: detail.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }

    pub fn warning(reason: &str, message: impl Into<String>) -> Effect {
        Effect::trace(
            "warning",
            [
                ("reason", Json::from(reason)),
                ("message", Json::from(message.into())),
            ],
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Admission {
    pub max_platoon_size: usize,
    /// Scripted LLI answer; `false` rejects every request.
    pub accept: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub d: f64,
    pub big_d: f64,
    /// Default for controlling W primitives without a timeout value.
    pub controlling_timeout: f64,
    pub superstate_timeout: f64,
    pub admission: Admission,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            d: 6.0,
            big_d: 30.0,
            controlling_timeout: 30.0,
            superstate_timeout: 90.0,
            admission: Admission {
                max_platoon_size: 8,
                accept: true,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InitError {
    #[error("NOT_LEADER: {0} is not a platoon leader")]
    NotLeader(VehicleId),
    #[error("BUSY: {0} is already performing a manoeuvre")]
    Busy(VehicleId),
    #[error("NON_FOLLOWER_DIRECT_INIT: {0}")]
    NonFollowerDirectInit(String),
    #[error("UNSTABLE: {0} is in {1} and cannot take LLI commands")]
    Unstable(VehicleId, IdleState),
    #[error("UNKNOWN_ACTION: {0}")]
    UnknownAction(String),
    #[error("UNBOUND_ROLE: {0}")]
    Unbound(String),
    #[error("UNRESOLVED_PARAM: {0}")]
    Param(String),
}

impl InitError {
    pub fn code(&self) -> &'static str {
        match self {
            InitError::NotLeader(_) => "NOT_LEADER",
            InitError::Busy(_) => "BUSY",
            InitError::NonFollowerDirectInit(_) => "NON_FOLLOWER_DIRECT_INIT",
            InitError::Unstable(..) => "UNSTABLE",
            InitError::UnknownAction(_) => "UNKNOWN_ACTION",
            InitError::Unbound(_) => "UNBOUND_ROLE",
            InitError::Param(_) => "UNRESOLVED_PARAM",
        }
    }
}

/// Resolve every reference inside a primitive.
pub fn resolve_primitive(
    p: &Primitive,
    lookup: &dyn Fn(&str) -> Option<Value>,
) -> Result<Primitive, ResolveError> {
    let r = |v: &Value| resolve(v, lookup);
    Ok(match p {
        Primitive::Mtp {
            target,
            offset,
            lane,
        } => Primitive::Mtp {
            target: r(target)?,
            offset: r(offset)?,
            lane: lane.as_ref().map(r).transpose()?,
        },
        Primitive::Sh(Headway::Time(v)) => Primitive::Sh(Headway::Time(r(v)?)),
        Primitive::Sh(Headway::Space(v)) => Primitive::Sh(Headway::Space(r(v)?)),
        Primitive::Snd(t) => {
            let mut t = t.clone();
            t.payload = crate::params::resolve_payload(&t.payload, lookup)?;
            if let Some(a) = &t.action {
                t.action = Some(match r(&Value::Str(a.clone()))? {
                    Value::Str(s) => s,
                    other => other.to_string(),
                });
            }
            Primitive::Snd(t)
        }
        other => other.clone(),
    })
}
