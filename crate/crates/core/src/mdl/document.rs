use std::collections::BTreeMap;
use std::fmt;

use crate::types::{ActionId, IdleState, MessageKind, Payload, Primitive, ResultLabel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DocKind {
    SubManoeuvre,
    Manoeuvre,
}

impl DocKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DocKind::SubManoeuvre => "sub-manoeuvre",
            DocKind::Manoeuvre => "manoeuvre",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Controlling,
    Reactive,
}

impl Part {
    pub fn as_str(self) -> &'static str {
        match self {
            Part::Controlling => "controlling",
            Part::Reactive => "reactive",
        }
    }
}

/// How a sub-manoeuvre half gets started.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trigger {
    /// Reception of `KIND/<sub-manoeuvre id>`.
    Message(MessageKind),
    /// A local decision of the vehicle's link-layer interface.
    Lli,
}

/// Where a manoeuvre role's vehicle comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Binding {
    /// The vehicle whose REQ started the manoeuvre.
    Requester,
    /// A vehicle id carried in the REQ payload under this key.
    RequestField(String),
    /// The platoon member directly behind another role's vehicle.
    Behind(String),
    /// The platoon member directly ahead of another role's vehicle.
    Ahead(String),
}

impl fmt::Display for Binding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Binding::Requester => f.write_str("requester"),
            Binding::RequestField(k) => write!(f, "request:{k}"),
            Binding::Behind(r) => write!(f, "behind:{r}"),
            Binding::Ahead(r) => write!(f, "ahead:{r}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoleDef {
    pub name: String,
    pub entry_state: IdleState,
    pub part: Part,
    /// First state of this role's sub-state machine (sub-manoeuvres only).
    pub start: Option<String>,
    pub trigger: Option<Trigger>,
    /// Manoeuvre roles only; `None` means the initiator supplies it.
    pub bind: Option<Binding>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventPattern {
    /// `KIND` or `KIND/ACTION`; a missing action matches any.
    Msg {
        kind: MessageKind,
        action: Option<String>,
    },
    Timeout,
    Arrived,
    Done,
    /// Outcome of the admission policy, fed by the runtime.
    Policy(bool),
    /// A new order from the same controller arrived while lingering.
    Superseded,
}

impl fmt::Display for EventPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EventPattern::Msg { kind, action: None } => write!(f, "{kind}"),
            EventPattern::Msg {
                kind,
                action: Some(a),
            } => write!(f, "{kind}/{a}"),
            EventPattern::Timeout => f.write_str("timeout"),
            EventPattern::Arrived => f.write_str("arrived"),
            EventPattern::Done => f.write_str("done"),
            EventPattern::Policy(b) => write!(f, "policy={b}"),
            EventPattern::Superseded => f.write_str("superseded"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Target {
    State(String),
    Result(ResultLabel),
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::State(s) => f.write_str(s),
            Target::Result(r) => write!(f, "{r}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    /// `None` is an immediate transition, legal only in states without W.
    pub on: Option<EventPattern>,
    pub to: Target,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateDef {
    pub primitives: Vec<Primitive>,
    pub transitions: Vec<Transition>,
}

impl StateDef {
    pub fn waits(&self) -> bool {
        self.wait_timeout().is_some()
    }

    /// `Some(timeout)` when the last primitive is W.
    pub fn wait_timeout(&self) -> Option<Option<f64>> {
        match self.primitives.last() {
            Some(Primitive::W { timeout }) => Some(*timeout),
            _ => None,
        }
    }

    pub fn has_timeout_transition(&self) -> bool {
        self.transitions
            .iter()
            .any(|t| t.on == Some(EventPattern::Timeout))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultDef {
    pub label: ResultLabel,
    pub finals: BTreeMap<String, IdleState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubManoeuvreDef {
    /// role -> state-id -> state
    pub states: BTreeMap<String, BTreeMap<String, StateDef>>,
    pub results: Vec<ResultDef>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Invoke {
    pub action: ActionId,
    /// sub-manoeuvre role -> manoeuvre role
    pub participants: BTreeMap<String, String>,
    pub params: Payload,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Invocation {
    Single(Invoke),
    Sim(Vec<Invoke>),
}

impl Invocation {
    pub fn invokes(&self) -> &[Invoke] {
        match self {
            Invocation::Single(i) => std::slice::from_ref(i),
            Invocation::Sim(v) => v,
        }
    }
}

/// A result of a single invocation or the ordered tuple of a SIM wrapper.
pub type ResultKey = Vec<ResultLabel>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NextTarget {
    Step(String),
    Terminate,
}

impl fmt::Display for NextTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NextTarget::Step(s) => f.write_str(s),
            NextTarget::Terminate => f.write_str("TERMINATE"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepDef {
    pub invoke: Invocation,
    pub next: Vec<(ResultKey, NextTarget)>,
}

impl StepDef {
    pub fn next_for(&self, key: &[ResultLabel]) -> Option<&NextTarget> {
        self.next
            .iter()
            .find(|(k, _)| k.as_slice() == key)
            .map(|(_, t)| t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManoeuvreDef {
    pub start: String,
    pub steps: BTreeMap<String, StepDef>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Body {
    Sub(SubManoeuvreDef),
    Manoeuvre(ManoeuvreDef),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdlDocument {
    pub id: ActionId,
    pub kind: DocKind,
    pub version: String,
    pub roles: Vec<RoleDef>,
    pub body: Body,
}

impl MdlDocument {
    pub fn role(&self, name: &str) -> Option<&RoleDef> {
        self.roles.iter().find(|r| r.name == name)
    }

    pub fn controlling_role(&self) -> Option<&RoleDef> {
        self.roles.iter().find(|r| r.part == Part::Controlling)
    }

    pub fn as_sub(&self) -> Option<&SubManoeuvreDef> {
        match &self.body {
            Body::Sub(s) => Some(s),
            Body::Manoeuvre(_) => None,
        }
    }

    pub fn as_manoeuvre(&self) -> Option<&ManoeuvreDef> {
        match &self.body {
            Body::Manoeuvre(m) => Some(m),
            Body::Sub(_) => None,
        }
    }

    pub fn result_labels(&self) -> Vec<ResultLabel> {
        self.as_sub()
            .map(|s| s.results.iter().map(|r| r.label.clone()).collect())
            .unwrap_or_default()
    }
}
