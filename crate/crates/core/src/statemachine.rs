//! Sub-manoeuvre instances, SIM wrappers and manoeuvre chaining.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::mdl::validate::cartesian;
use crate::mdl::{Body, EventPattern, MdlDocument, Part, ResultKey, Target, Trigger};
use crate::mdl::NextTarget;
use crate::types::{ActionId, CorrelationId, IdleState, MessageKind, Payload, Primitive, ResultLabel, VehicleId};

/// Input to [`SubMachineInstance::step`].
#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    /// Start of a controlling half that has no message trigger.
    Start,
    /// Initiation by the link layer interface.
    Lli,
    Message {
        kind: MessageKind,
        action: ActionId,
    },
    Timeout,
    Arrived,
    Done,
    Policy(bool),
    Superseded,
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Event::Start => f.write_str("start"),
            Event::Lli => f.write_str("lli"),
            Event::Message { kind, action } => write!(f, "{kind}/{action}"),
            Event::Timeout => f.write_str("timeout"),
            Event::Arrived => f.write_str("arrived"),
            Event::Done => f.write_str("done"),
            Event::Policy(b) => write!(f, "policy:{b}"),
            Event::Superseded => f.write_str("superseded"),
        }
    }
}

impl EventPattern {
    pub fn matches(&self, event: &Event) -> bool {
        match (self, event) {
            (EventPattern::Msg { kind, action }, Event::Message { kind: k, action: a }) => {
                kind == k && action.as_deref().is_none_or(|want| want == a.as_str())
            }
            (EventPattern::Timeout, Event::Timeout)
            | (EventPattern::Arrived, Event::Arrived)
            | (EventPattern::Done, Event::Done)
            | (EventPattern::Superseded, Event::Superseded) => true,
            (EventPattern::Policy(a), Event::Policy(b)) => a == b,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Position {
    /// Not started; accepts only the role's trigger.
    Entry,
    At(String),
    Concluded(ResultLabel),
}

/// What a settled state waits for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Awaiting {
    /// A W primitive; `timeout` is as written (runtime fills defaults).
    Events { timeout: Option<f64>, has_timeout: bool },
    /// A policy decision from the admission logic.
    Decision,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Next {
    State { id: String, awaiting: Awaiting },
    Result { label: ResultLabel, final_state: IdleState },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// Primitives of every entered state in order, W excluded.
    pub primitives: Vec<Primitive>,
    /// States entered, in order.
    pub entered: Vec<String>,
    pub next: Next,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StepError {
    #[error("UNEXPECTED_EVENT: {event} in {state}")]
    UnexpectedEvent { state: String, event: String },
    #[error("instance already concluded with {0}")]
    Concluded(ResultLabel),
    #[error("immediate transitions loop at {0}")]
    ImmediateCycle(String),
    #[error("UNDECLARED_RESULT: {0} has no final state for this role")]
    UndeclaredResult(ResultLabel),
}

impl StepError {
    pub fn code(&self) -> &'static str {
        match self {
            StepError::UnexpectedEvent { .. } => "UNEXPECTED_EVENT",
            StepError::Concluded(_) => "CONCLUDED",
            StepError::ImmediateCycle(_) => "IMMEDIATE_CYCLE",
            StepError::UndeclaredResult(_) => "UNDECLARED_RESULT",
        }
    }
}

/// One half of a running sub-manoeuvre on one vehicle.
#[derive(Debug, Clone)]
pub struct SubMachineInstance {
    pub def: Arc<MdlDocument>,
    pub role: String,
    pub position: Position,
    pub correlation: CorrelationId,
    /// Role name -> vehicle, including the controlling role.
    pub participants: BTreeMap<String, VehicleId>,
    /// Resolved parameters (step params or received payload).
    pub params: Payload,
    /// Milliseconds of simulated time.
    pub started_at: u64,
}

impl SubMachineInstance {
    pub fn new(
        def: Arc<MdlDocument>,
        role: impl Into<String>,
        correlation: CorrelationId,
        participants: BTreeMap<String, VehicleId>,
        params: Payload,
        started_at: u64,
    ) -> Self {
        SubMachineInstance {
            def,
            role: role.into(),
            position: Position::Entry,
            correlation,
            participants,
            params,
            started_at,
        }
    }

    pub fn action(&self) -> &ActionId {
        &self.def.id
    }

    pub fn part(&self) -> Part {
        self.def.role(&self.role).map(|r| r.part).unwrap_or(Part::Reactive)
    }

    pub fn trigger(&self) -> Option<Trigger> {
        self.def.role(&self.role).and_then(|r| r.trigger)
    }

    pub fn controller(&self) -> Option<&VehicleId> {
        let ctrl = self.def.controlling_role()?;
        self.participants.get(&ctrl.name)
    }

    pub fn is_concluded(&self) -> bool {
        matches!(self.position, Position::Concluded(_))
    }

    pub fn state(&self) -> Option<&str> {
        match &self.position {
            Position::At(s) => Some(s),
            _ => None,
        }
    }

    /// The event that starts this half.
    pub fn start_event(&self) -> Event {
        match self.trigger() {
            Some(Trigger::Lli) => Event::Lli,
            Some(Trigger::Message(kind)) => Event::Message {
                kind,
                action: self.def.id.clone(),
            },
            None => Event::Start,
        }
    }

    fn accepts_start(&self, event: &Event) -> bool {
        match (self.trigger(), event) {
            (None, Event::Start) | (Some(Trigger::Lli), Event::Lli) => true,
            (Some(Trigger::Message(k)), Event::Message { kind, .. }) => k == *kind,
            _ => false,
        }
    }

    fn machine(&self) -> &BTreeMap<String, crate::mdl::StateDef> {
        match &self.def.body {
            Body::Sub(s) => &s.states[&self.role],
            Body::Manoeuvre(_) => panic!("instances run sub-manoeuvres only"),
        }
    }

    /// Does the current state have a transition for `event`?
    pub fn accepts(&self, event: &Event) -> bool {
        match &self.position {
            Position::Entry => self.accepts_start(event),
            Position::At(id) => self.machine()[id]
                .transitions
                .iter()
                .any(|t| t.on.as_ref().is_some_and(|p| p.matches(event))),
            Position::Concluded(_) => false,
        }
    }

    pub fn step(&mut self, event: &Event) -> Result<StepOutcome, StepError> {
        let target = match &self.position {
            Position::Concluded(l) => return Err(StepError::Concluded(l.clone())),
            Position::Entry => {
                if !self.accepts_start(event) {
                    return Err(self.unexpected(event));
                }
                let start = self
                    .def
                    .role(&self.role)
                    .and_then(|r| r.start.clone())
                    .unwrap_or_default();
                Target::State(start)
            }
            Position::At(id) => self.machine()[id]
                .transitions
                .iter()
                .find(|t| t.on.as_ref().is_some_and(|p| p.matches(event)))
                .map(|t| t.to.clone())
                .ok_or_else(|| self.unexpected(event))?,
        };
        self.settle(target)
    }

    fn unexpected(&self, event: &Event) -> StepError {
        let state = match &self.position {
            Position::Entry => "entry".to_string(),
            Position::At(s) => s.clone(),
            Position::Concluded(l) => l.to_string(),
        };
        StepError::UnexpectedEvent {
            state: format!("{}:{}.{state}", self.def.id, self.role),
            event: event.to_string(),
        }
    }

    /// Enter `target` and follow immediate transitions.
    fn settle(&mut self, mut target: Target) -> Result<StepOutcome, StepError> {
        let mut primitives = Vec::new();
        let mut entered = Vec::new();
        let limit = self.machine().len() + 1;
        loop {
            let id = match target {
                Target::Result(label) => {
                    let final_state = self
                        .def
                        .as_sub()
                        .and_then(|s| s.results.iter().find(|r| r.label == label))
                        .and_then(|r| r.finals.get(&self.role).copied())
                        .ok_or_else(|| StepError::UndeclaredResult(label.clone()))?;
                    self.position = Position::Concluded(label.clone());
                    return Ok(StepOutcome {
                        primitives,
                        entered,
                        next: Next::Result { label, final_state },
                    });
                }
                Target::State(id) => id,
            };
            if entered.len() > limit {
                return Err(StepError::ImmediateCycle(id));
            }
            let state = &self.machine()[&id];
            primitives.extend(
                state
                    .primitives
                    .iter()
                    .filter(|p| !matches!(p, Primitive::W { .. }))
                    .cloned(),
            );
            entered.push(id.clone());
            if let Some(timeout) = state.wait_timeout() {
                let has_timeout = state.has_timeout_transition();
                self.position = Position::At(id.clone());
                return Ok(StepOutcome {
                    primitives,
                    entered,
                    next: Next::State {
                        id,
                        awaiting: Awaiting::Events { timeout, has_timeout },
                    },
                });
            }
            if state
                .transitions
                .iter()
                .any(|t| matches!(t.on, Some(EventPattern::Policy(_))))
            {
                self.position = Position::At(id.clone());
                return Ok(StepOutcome {
                    primitives,
                    entered,
                    next: Next::State {
                        id,
                        awaiting: Awaiting::Decision,
                    },
                });
            }
            target = state
                .transitions
                .iter()
                .find(|t| t.on.is_none())
                .map(|t| t.to.clone())
                .ok_or_else(|| StepError::UnexpectedEvent {
                    state: format!("{}:{}.{id}", self.def.id, self.role),
                    event: "immediate".into(),
                })?;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("SIM_PARTICIPANT_OVERLAP: {0} takes part in two children")]
    ParticipantOverlap(VehicleId),
    #[error("SIM_DIFFERENT_LEADER: children are controlled by {0} and {1}")]
    DifferentLeader(VehicleId, VehicleId),
    #[error("SIM_ARITY: a SIM wrapper needs at least two children, got {0}")]
    Arity(usize),
}

impl SimError {
    pub fn code(&self) -> &'static str {
        match self {
            SimError::ParticipantOverlap(_) => "SIM_PARTICIPANT_OVERLAP",
            SimError::DifferentLeader(..) => "SIM_DIFFERENT_LEADER",
            SimError::Arity(_) => "SIM_ARITY",
        }
    }
}

/// Product machine over the controlling halves of parallel sub-manoeuvres.
#[derive(Debug, Clone)]
pub struct SimWrapperInstance {
    pub children: Vec<SubMachineInstance>,
    pub results: BTreeMap<usize, ResultLabel>,
}

pub fn wrap_sim(children: Vec<SubMachineInstance>) -> Result<SimWrapperInstance, SimError> {
    if children.len() < 2 {
        return Err(SimError::Arity(children.len()));
    }
    let mut leader: Option<&VehicleId> = None;
    let mut seen = BTreeSet::new();
    for child in &children {
        if let Some(l) = child.controller() {
            match leader {
                Some(prev) if prev != l => {
                    return Err(SimError::DifferentLeader(prev.clone(), l.clone()))
                }
                _ => leader = Some(l),
            }
        }
        let ctrl = child.def.controlling_role().map(|r| r.name.as_str());
        for (role, v) in &child.participants {
            if Some(role.as_str()) != ctrl && !seen.insert(v.clone()) {
                return Err(SimError::ParticipantOverlap(v.clone()));
            }
        }
    }
    Ok(SimWrapperInstance {
        children,
        results: BTreeMap::new(),
    })
}

impl SimWrapperInstance {
    pub fn record(&mut self, index: usize, label: ResultLabel) {
        self.results.insert(index, label);
    }

    pub fn is_complete(&self) -> bool {
        self.results.len() == self.children.len()
    }

    /// Ordered result tuple once every child concluded.
    pub fn outcome(&self) -> Option<ResultKey> {
        self.is_complete().then(|| self.results.values().cloned().collect())
    }

    /// Every tuple the wrapper can conclude with.
    pub fn outcome_set(&self) -> Vec<ResultKey> {
        let sets: Vec<Vec<ResultLabel>> = self.children.iter().map(|c| c.def.result_labels()).collect();
        cartesian(&sets)
    }
}

/// A sub-manoeuvre invocation with roles bound to vehicles.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundInvoke {
    pub action: ActionId,
    /// Sub-manoeuvre role -> vehicle, including the controlling role.
    pub participants: BTreeMap<String, VehicleId>,
    /// Unresolved step params.
    pub params: Payload,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NextAction {
    Invoke { step: String, invokes: Vec<BoundInvoke> },
    Terminate,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ManoeuvreError {
    #[error("UNDECLARED_RESULT: step {step} has no next entry for {key}")]
    UndeclaredResult { step: String, key: String },
    #[error("manoeuvre already terminated")]
    Terminated,
    #[error("role `{0}` is not bound to a vehicle")]
    Unbound(String),
}

/// Leader-side progress through a manoeuvre's step graph.
#[derive(Debug, Clone)]
pub struct ManoeuvreInstance {
    pub def: Arc<MdlDocument>,
    pub step: String,
    /// Manoeuvre role -> vehicle.
    pub bindings: BTreeMap<String, VehicleId>,
    pub history: Vec<(String, ResultKey)>,
    pub terminated: bool,
}

impl ManoeuvreInstance {
    pub fn new(def: Arc<MdlDocument>, bindings: BTreeMap<String, VehicleId>) -> Self {
        let step = def.as_manoeuvre().map(|m| m.start.clone()).unwrap_or_default();
        ManoeuvreInstance {
            def,
            step,
            bindings,
            history: Vec::new(),
            terminated: false,
        }
    }

    pub fn leader(&self) -> Option<&VehicleId> {
        self.def
            .controlling_role()
            .and_then(|r| self.bindings.get(&r.name))
    }

    /// Invocations of the current step with vehicles bound.
    pub fn invokes(&self, subs: &dyn Fn(&ActionId) -> Option<Arc<MdlDocument>>) -> Result<Vec<BoundInvoke>, ManoeuvreError> {
        let m = self.def.as_manoeuvre().expect("manoeuvre instance");
        let leader = self.leader().cloned().ok_or_else(|| ManoeuvreError::Unbound("leader".into()))?;
        m.steps[&self.step]
            .invoke
            .invokes()
            .iter()
            .map(|inv| {
                let mut participants = BTreeMap::new();
                if let Some(ctrl) = subs(&inv.action).and_then(|d| d.controlling_role().map(|r| r.name.clone())) {
                    participants.insert(ctrl, leader.clone());
                }
                for (sub_role, m_role) in &inv.participants {
                    let v = self
                        .bindings
                        .get(m_role)
                        .ok_or_else(|| ManoeuvreError::Unbound(m_role.clone()))?;
                    participants.insert(sub_role.clone(), v.clone());
                }
                Ok(BoundInvoke {
                    action: inv.action.clone(),
                    participants,
                    params: inv.params.clone(),
                })
            })
            .collect()
    }

    pub fn advance_manoeuvre(
        &mut self,
        key: &[ResultLabel],
        subs: &dyn Fn(&ActionId) -> Option<Arc<MdlDocument>>,
    ) -> Result<NextAction, ManoeuvreError> {
        if self.terminated {
            return Err(ManoeuvreError::Terminated);
        }
        let m = self.def.as_manoeuvre().expect("manoeuvre instance");
        let next = m.steps[&self.step].next_for(key).cloned().ok_or_else(|| {
            let labels: Vec<String> = key.iter().map(|l| l.to_string()).collect();
            ManoeuvreError::UndeclaredResult {
                step: self.step.clone(),
                key: format!("[{}]", labels.join(",")),
            }
        })?;
        self.history.push((self.step.clone(), key.to_vec()));
        match next {
            NextTarget::Terminate => {
                self.terminated = true;
                Ok(NextAction::Terminate)
            }
            NextTarget::Step(step) => {
                self.step = step.clone();
                Ok(NextAction::Invoke {
                    step,
                    invokes: self.invokes(subs)?,
                })
            }
        }
    }
}

/// Free-function form of [`ManoeuvreInstance::advance_manoeuvre`].
pub fn advance_manoeuvre(
    instance: &mut ManoeuvreInstance,
    key: &[ResultLabel],
    subs: &dyn Fn(&ActionId) -> Option<Arc<MdlDocument>>,
) -> Result<NextAction, ManoeuvreError> {
    instance.advance_manoeuvre(key, subs)
}

/// Free-function form of [`SubMachineInstance::step`].
pub fn step(instance: &mut SubMachineInstance, event: &Event) -> Result<StepOutcome, StepError> {
    instance.step(event)
}
