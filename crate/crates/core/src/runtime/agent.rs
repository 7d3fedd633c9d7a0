use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde_json::json;

use super::{resolve_primitive, secs_to_millis, AgentConfig, Effect, InitError, Millis, PhysicalTarget, TimerKey, WorldView};
use crate::mdl::{single_step_manoeuvre, Binding, CompiledBehaviour, Library, MdlDocument, Part, ResultKey, Trigger};
use crate::params::resolve_payload;
use crate::statemachine::{wrap_sim, Awaiting, Event, ManoeuvreInstance, NextAction, SimWrapperInstance, SubMachineInstance, Next};
use crate::types::{ActionId, CorrelationId, Headway, IdleState, Message, MessageKind, Payload, Primitive, PrimitiveOp, ResultLabel, Value, VehicleId};

/// Leader-side engine state for the manoeuvre in progress.
#[derive(Debug, Clone)]
pub struct Pme {
    pub manoeuvre: ManoeuvreInstance,
    /// Controlling halves of the current step.
    pub step: SimWrapperInstance,
    /// Correlation of the REQ that started a requested manoeuvre.
    pub request: Option<CorrelationId>,
    /// Manoeuvre-level parameters (initiation params or REQ payload).
    pub context: Payload,
    /// Every sub-manoeuvre instance started so far.
    pub correlations: Vec<CorrelationId>,
    pub started_at: Millis,
}

/// A manoeuvre this vehicle led to TERMINATE.
#[derive(Debug, Clone, PartialEq)]
pub struct ManoeuvreRecord {
    pub manoeuvre: ActionId,
    pub request: Option<CorrelationId>,
    pub bindings: BTreeMap<String, VehicleId>,
    pub history: Vec<(String, ResultKey)>,
    /// Result key of the step that terminated.
    pub key: ResultKey,
    pub correlations: Vec<CorrelationId>,
    pub started_at: Millis,
    pub finished_at: Millis,
}

/// A request this vehicle issued through its LLI.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestRecord {
    pub correlation: CorrelationId,
    pub manoeuvre: ActionId,
    pub leader: VehicleId,
    pub label: Option<ResultLabel>,
    pub requested_at: Millis,
    pub answered_at: Option<Millis>,
}

/// Per-vehicle state that instances act on while being stepped.
#[derive(Debug, Clone)]
struct Core {
    id: VehicleId,
    idle: IdleState,
    config: AgentConfig,
    timers: BTreeMap<TimerKey, Millis>,
    seen: BTreeSet<CorrelationId>,
}

/// One vehicle: the RSM dispatching reactive halves, the PME when leading,
/// the LLI entry points and timers.
#[derive(Debug, Clone)]
pub struct VehicleAgent {
    core: Core,
    library: Arc<Library>,
    reactive: Option<SubMachineInstance>,
    pme: Option<Pme>,
    next_corr: u64,
    manoeuvres: Vec<ManoeuvreRecord>,
    requests: Vec<RequestRecord>,
}

fn vehicle(v: &VehicleId) -> Value {
    Value::Str(v.to_string())
}

impl Core {
    fn lookup(&self, inst: &SubMachineInstance, name: &str) -> Option<Value> {
        if let Some(v) = inst.params.get(name) {
            return Some(v.clone());
        }
        match name {
            "self" => Some(vehicle(&self.id)),
            "controller" => inst.controller().map(vehicle),
            _ => None,
        }
    }

    fn set_idle(&mut self, to: IdleState, out: &mut Vec<Effect>) {
        if to != self.idle {
            out.push(Effect::trace(
                "idle",
                [("from", json!(self.idle.as_str())), ("to", json!(to.as_str()))],
            ));
            self.idle = to;
        }
    }

    fn arm(&mut self, key: TimerKey, now: Millis, secs: f64, out: &mut Vec<Effect>) {
        let deadline = now + secs_to_millis(secs);
        self.timers.insert(key.clone(), deadline);
        out.push(Effect::TimerArmed { key, deadline });
    }

    fn policy(&self, world: &dyn WorldView) -> bool {
        self.config.admission.accept
            && self.idle == IdleState::Pl
            && world.members(&self.id).len() < self.config.admission.max_platoon_size
    }

    /// Execute one resolved primitive. With `replay` set only idle changes
    /// and their membership effects happen.
    fn execute(&mut self, inst: Option<&SubMachineInstance>, p: &Primitive, replay: bool, out: &mut Vec<Effect>) {
        let op = p.op();
        if replay && !matches!(op, PrimitiveOp::Bfv | PrimitiveOp::Bpl | PrimitiveOp::Bpf | PrimitiveOp::Btl | PrimitiveOp::Sw | PrimitiveOp::Usw) {
            return;
        }
        let whom = inst.map(|i| format!("{}:{}", i.action(), i.role)).unwrap_or_else(|| "superstate".into());
        if !crate::types::primitive_allowed(op, self.idle) {
            out.push(Effect::warning("ACTOR_VIOLATION", format!("{op} is not allowed in {} ({whom})", self.idle)));
            return;
        }
        let resolved = match resolve_primitive(p, &|n| inst.and_then(|i| self.lookup(i, n))) {
            Ok(r) => r,
            Err(e) => {
                out.push(Effect::warning("PARAM_UNRESOLVED", format!("{whom}: {e}")));
                return;
            }
        };
        out.push(Effect::trace(
            "primitive",
            [
                ("op", json!(op.as_str())),
                ("action", json!(inst.map(|i| i.action().as_str()).unwrap_or(""))),
                ("correlation", json!(inst.map(|i| i.correlation.as_str()).unwrap_or(""))),
            ],
        ));
        if let Some(to) = op.idle_effect(self.idle) {
            self.set_idle(to, out);
        }
        match resolved {
            Primitive::Mtp { target, offset, lane } => {
                let target = VehicleId::new(target.to_string());
                let offset = offset.as_f64().unwrap_or(0.0);
                let lane = lane.and_then(|l| l.as_f64()).map(|l| l.round() as i64);
                out.push(Effect::Target(Some(PhysicalTarget::Position { target, offset, lane })));
            }
            Primitive::Sh(Headway::Time(v)) => {
                out.push(Effect::Target(Some(PhysicalTarget::TimeHeadway(v.as_f64().unwrap_or(0.0)))));
            }
            Primitive::Sh(Headway::Space(v)) => {
                out.push(Effect::Target(Some(PhysicalTarget::SpaceHeadway(v.as_f64().unwrap_or(0.0)))));
            }
            Primitive::Bfv => {
                out.push(Effect::SetLeader(None));
                out.push(Effect::Target(None));
            }
            Primitive::Bpl => {
                out.push(Effect::Split);
                out.push(Effect::Target(None));
            }
            Primitive::Bpf => {
                if let Some(c) = inst.and_then(|i| i.controller()).filter(|c| **c != self.id) {
                    out.push(Effect::Merge(c.clone()));
                }
            }
            Primitive::Upi => out.push(Effect::Upi),
            Primitive::Snd(t) => {
                let Some(inst) = inst else { return };
                let Some(to) = inst.participants.get(&t.to) else {
                    out.push(Effect::warning("ROLE_UNBOUND", format!("no vehicle for role {}", t.to)));
                    return;
                };
                let mut payload = Payload::new();
                if t.kind.carries_payload() {
                    if t.forward_params {
                        payload.extend(inst.params.clone());
                    }
                    payload.extend(t.payload);
                }
                out.push(Effect::Send(Message {
                    kind: t.kind,
                    action: ActionId::new(t.action.unwrap_or_else(|| inst.action().to_string())),
                    sender: self.id.clone(),
                    receivers: vec![to.clone()],
                    correlation: inst.correlation.clone(),
                    payload,
                }));
            }
            Primitive::Btl | Primitive::Sw | Primitive::Usw | Primitive::W { .. } => {}
        }
    }

    /// Feed `event` to `inst`, execute what it enters and arm its timer.
    /// Returns the result once the instance concludes.
    fn drive(
        &mut self,
        inst: &mut SubMachineInstance,
        mut event: Event,
        now: Millis,
        world: &dyn WorldView,
        replay: bool,
        out: &mut Vec<Effect>,
    ) -> Option<ResultLabel> {
        let key = TimerKey::Instance(inst.correlation.clone());
        self.timers.remove(&key);
        self.seen.insert(inst.correlation.clone());
        loop {
            let from = inst.state().unwrap_or("entry").to_string();
            let outcome = match inst.step(&event) {
                Ok(o) => o,
                Err(e) => {
                    out.push(Effect::warning(e.code(), e.to_string()));
                    return None;
                }
            };
            let to = match &outcome.next {
                Next::State { id, .. } => id.clone(),
                Next::Result { label, .. } => label.to_string(),
            };
            out.push(Effect::trace(
                "transition",
                [
                    ("action", json!(inst.action().as_str())),
                    ("role", json!(inst.role)),
                    ("correlation", json!(inst.correlation.as_str())),
                    ("from", json!(from)),
                    ("event", json!(event.to_string())),
                    ("to", json!(to)),
                ],
            ));
            for p in &outcome.primitives {
                self.execute(Some(inst), p, replay, out);
            }
            match outcome.next {
                Next::State { awaiting: Awaiting::Decision, .. } => {
                    let accept = self.policy(world);
                    event = Event::Policy(accept);
                }
                Next::State { awaiting: Awaiting::Events { timeout, has_timeout }, .. } => {
                    if has_timeout {
                        let default = match inst.part() {
                            Part::Controlling => self.config.controlling_timeout,
                            Part::Reactive => self.config.controlling_timeout + 5.0,
                        };
                        self.arm(key, now, timeout.unwrap_or(default), out);
                    }
                    return None;
                }
                Next::Result { label, final_state } => {
                    out.push(Effect::trace(
                        "result",
                        [
                            ("action", json!(inst.action().as_str())),
                            ("role", json!(inst.role)),
                            ("correlation", json!(inst.correlation.as_str())),
                            ("label", json!(label.to_string())),
                            ("final", json!(final_state.as_str())),
                        ],
                    ));
                    if inst.part() == Part::Reactive {
                        self.conclude_reactive(final_state, now, out);
                    }
                    return Some(label);
                }
            }
        }
    }

    fn conclude_reactive(&mut self, final_state: IdleState, now: Millis, out: &mut Vec<Effect>) {
        if self.idle != final_state {
            out.push(Effect::warning(
                "FINAL_STATE_MISMATCH",
                format!("{} concluded in {} but the result declares {final_state}", self.id, self.idle),
            ));
        }
        if !matches!(self.idle, IdleState::Pf | IdleState::Wfv | IdleState::Wpf) {
            out.push(Effect::Target(None));
        }
        if self.idle.is_waiting() || self.idle == IdleState::Tpl {
            self.arm(TimerKey::Superstate, now, self.config.superstate_timeout, out);
        }
    }
}

impl VehicleAgent {
    pub fn new(id: VehicleId, idle: IdleState, library: Arc<Library>, config: AgentConfig) -> Self {
        VehicleAgent {
            core: Core {
                id,
                idle,
                config,
                timers: BTreeMap::new(),
                seen: BTreeSet::new(),
            },
            library,
            reactive: None,
            pme: None,
            next_corr: 0,
            manoeuvres: Vec::new(),
            requests: Vec::new(),
        }
    }

    pub fn id(&self) -> &VehicleId {
        &self.core.id
    }

    pub fn idle(&self) -> IdleState {
        self.core.idle
    }

    pub fn config(&self) -> &AgentConfig {
        &self.core.config
    }

    pub fn timers(&self) -> &BTreeMap<TimerKey, Millis> {
        &self.core.timers
    }

    pub fn pme(&self) -> Option<&Pme> {
        self.pme.as_ref()
    }

    pub fn reactive(&self) -> Option<&SubMachineInstance> {
        self.reactive.as_ref()
    }

    pub fn manoeuvres(&self) -> &[ManoeuvreRecord] {
        &self.manoeuvres
    }

    pub fn requests(&self) -> &[RequestRecord] {
        &self.requests
    }

    /// Anything left to do: a running instance or an armed timer.
    pub fn is_active(&self) -> bool {
        self.pme.is_some()
            || self.reactive.as_ref().is_some_and(|r| !r.is_concluded())
            || !self.core.timers.is_empty()
    }

    fn is_busy(&self) -> bool {
        self.pme.is_some() || self.reactive.as_ref().is_some_and(|r| !r.is_concluded())
    }

    pub fn next_deadline(&self) -> Option<Millis> {
        self.core.timers.values().copied().min()
    }

    fn fresh_correlation(&mut self) -> CorrelationId {
        self.next_corr += 1;
        CorrelationId::new(format!("{}#{}", self.core.id, self.next_corr))
    }

    /// LLI: ask `leader` to run the requested manoeuvre `manoeuvre` with this
    /// vehicle as requester. `fields` travel in the REQ payload.
    pub fn request(
        &mut self,
        now: Millis,
        world: &dyn WorldView,
        manoeuvre: &str,
        leader: VehicleId,
        fields: Payload,
    ) -> Result<Vec<Effect>, InitError> {
        let (sub, role) = self
            .library
            .behaviours
            .values()
            .filter_map(|b| match b {
                CompiledBehaviour::Sub(s) => s
                    .reactive
                    .iter()
                    .find(|(_, t)| **t == Trigger::Lli)
                    .map(|(r, _)| (s.clone(), r.clone())),
                _ => None,
            })
            .next()
            .ok_or_else(|| InitError::UnknownAction("no LLI-triggered sub-manoeuvre".into()))?;
        if self.library.manoeuvre(&ActionId::new(manoeuvre)).is_none() {
            return Err(InitError::UnknownAction(manoeuvre.to_string()));
        }
        if self.is_busy() {
            return Err(InitError::Busy(self.core.id.clone()));
        }
        let entry = sub.doc.role(&role).map(|r| r.entry_state);
        if entry != Some(self.core.idle) {
            return Err(if self.core.idle.is_stable() {
                InitError::NonFollowerDirectInit(format!("{} is {} but {manoeuvre} must be requested from {}", self.core.id, self.core.idle, entry.map(|e| e.to_string()).unwrap_or_default()))
            } else {
                InitError::Unstable(self.core.id.clone(), self.core.idle)
            });
        }
        let correlation = self.fresh_correlation();
        let participants = BTreeMap::from([(sub.controlling.clone(), leader.clone()), (role.clone(), self.core.id.clone())]);
        let mut params = fields;
        params.insert("manoeuvre".into(), Value::Str(manoeuvre.to_string()));
        let mut inst = SubMachineInstance::new(Arc::clone(&sub.doc), role, correlation.clone(), participants, params, now);
        self.requests.push(RequestRecord {
            correlation,
            manoeuvre: ActionId::new(manoeuvre),
            leader,
            label: None,
            requested_at: now,
            answered_at: None,
        });
        let mut out = vec![Effect::trace("lli", [("request", json!(manoeuvre))])];
        let label = self.core.drive(&mut inst, Event::Lli, now, world, false, &mut out);
        self.reactive = Some(inst);
        if let Some(l) = label {
            self.record_request(l, now);
        }
        Ok(out)
    }

    fn record_request(&mut self, label: ResultLabel, now: Millis) {
        let Some(inst) = &self.reactive else { return };
        if let Some(r) = self.requests.iter_mut().find(|r| r.correlation == inst.correlation) {
            r.label = Some(label);
            r.answered_at = Some(now);
        }
    }

    /// LLI on a leader: start a manoeuvre or a single sub-manoeuvre directly.
    /// `bindings` name the vehicles of roles without a binding rule.
    pub fn initiate(
        &mut self,
        now: Millis,
        world: &dyn WorldView,
        action: &str,
        bindings: BTreeMap<String, VehicleId>,
        params: Payload,
    ) -> Result<Vec<Effect>, InitError> {
        let (doc, context) = match self.library.get(action) {
            Some(CompiledBehaviour::Manoeuvre(m)) => (Arc::clone(&m.doc), params),
            Some(CompiledBehaviour::Sub(s)) => (Arc::new(single_step_manoeuvre(&s.doc, params)), Payload::new()),
            None => return Err(InitError::UnknownAction(action.to_string())),
        };
        if self.core.idle != IdleState::Pl {
            return Err(InitError::NotLeader(self.core.id.clone()));
        }
        if self.is_busy() {
            return Err(InitError::Busy(self.core.id.clone()));
        }
        if self.requested(&doc) {
            return Err(InitError::NonFollowerDirectInit(format!("{action} must be requested by the joining vehicle")));
        }
        let bound = self.bind(world, &doc, bindings, None).map_err(InitError::Unbound)?;
        for role in &doc.roles {
            if role.part == Part::Reactive && role.entry_state == IdleState::Pf && world.leader_of(&bound[&role.name]).as_ref() != Some(&self.core.id) {
                return Err(InitError::NonFollowerDirectInit(format!(
                    "{} ({}) is not a follower of {}",
                    bound[&role.name], role.name, self.core.id
                )));
            }
        }
        let mut out = vec![Effect::trace(
            "lli",
            [("initiate", json!(action)), ("bindings", json!(bound))],
        )];
        self.start_pme(now, world, doc, bound, context, None, &mut out)
            .map_err(InitError::Param)?;
        Ok(out)
    }

    /// Does the start step run a sub-manoeuvre whose controlling half is
    /// triggered by a REQ?
    fn requested(&self, doc: &MdlDocument) -> bool {
        let Some(m) = doc.as_manoeuvre() else { return false };
        m.steps[&m.start].invoke.invokes().iter().any(|inv| {
            self.library
                .sub(&inv.action)
                .and_then(|s| s.doc.controlling_role())
                .is_some_and(|r| r.trigger == Some(Trigger::Message(MessageKind::Req)))
        })
    }

    fn bind(
        &self,
        world: &dyn WorldView,
        doc: &MdlDocument,
        mut bound: BTreeMap<String, VehicleId>,
        req: Option<&Message>,
    ) -> Result<BTreeMap<String, VehicleId>, String> {
        let members = world.members(&self.core.id);
        let neighbour = |v: &VehicleId, delta: isize| -> Option<VehicleId> {
            let i = members.iter().position(|m| m == v)? as isize + delta;
            (i >= 0).then(|| members.get(i as usize).cloned()).flatten()
        };
        for _ in 0..doc.roles.len() {
            for role in &doc.roles {
                if bound.contains_key(&role.name) {
                    continue;
                }
                let v = match (&role.part, &role.bind) {
                    (Part::Controlling, _) => Some(self.core.id.clone()),
                    (_, Some(Binding::Requester)) => req.map(|m| m.sender.clone()),
                    (_, Some(Binding::RequestField(k))) => req
                        .and_then(|m| m.payload.get(k))
                        .and_then(|v| v.as_str())
                        .map(VehicleId::new),
                    (_, Some(Binding::Behind(r))) => bound.get(r).and_then(|v| neighbour(v, 1)),
                    (_, Some(Binding::Ahead(r))) => bound.get(r).and_then(|v| neighbour(v, -1)),
                    (_, None) => None,
                };
                if let Some(v) = v {
                    bound.insert(role.name.clone(), v);
                }
            }
        }
        match doc.roles.iter().find(|r| !bound.contains_key(&r.name)) {
            Some(r) => Err(match &r.bind {
                Some(b) => format!("{} ({b})", r.name),
                None => r.name.clone(),
            }),
            None => Ok(bound),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn start_pme(
        &mut self,
        now: Millis,
        world: &dyn WorldView,
        doc: Arc<MdlDocument>,
        bindings: BTreeMap<String, VehicleId>,
        context: Payload,
        request: Option<&Message>,
        out: &mut Vec<Effect>,
    ) -> Result<(), String> {
        let manoeuvre = ManoeuvreInstance::new(doc, bindings);
        let pme = Pme {
            step: SimWrapperInstance {
                children: Vec::new(),
                results: BTreeMap::new(),
            },
            request: request.map(|m| m.correlation.clone()),
            manoeuvre,
            context,
            correlations: Vec::new(),
            started_at: now,
        };
        self.pme = Some(pme);
        let invokes = {
            let lib = Arc::clone(&self.library);
            let pme = self.pme.as_ref().expect("just set");
            pme.manoeuvre
                .invokes(&|a| lib.sub(a).map(|s| Arc::clone(&s.doc)))
                .map_err(|e| e.to_string())?
        };
        let step = self.pme.as_ref().expect("just set").manoeuvre.step.clone();
        self.start_step(now, world, step, invokes, request, out)
    }

    fn context_lookup(&self, world: &dyn WorldView, pme: &Pme, name: &str) -> Option<Value> {
        let me = &self.core.id;
        let members = world.members(me);
        let neighbour = |role: &str, delta: isize| -> Option<Value> {
            let v = pme.manoeuvre.bindings.get(role)?;
            let i = members.iter().position(|m| m == v)? as isize + delta;
            (i >= 0).then(|| members.get(i as usize).map(vehicle)).flatten()
        };
        if let Some(r) = name.strip_prefix("role:") {
            return pme.manoeuvre.bindings.get(r).map(vehicle);
        }
        if let Some(r) = name.strip_prefix("ahead:") {
            return neighbour(r, -1);
        }
        if let Some(r) = name.strip_prefix("behind:") {
            return neighbour(r, 1);
        }
        match name {
            "d" => Some(Value::Number(self.core.config.d)),
            "D" => Some(Value::Number(self.core.config.big_d)),
            "lane" => world.lane(me).map(|l| Value::Number(l as f64)),
            "tail" => members.last().map(vehicle),
            "leader" | "self" => Some(vehicle(me)),
            "manoeuvre" => Some(Value::Str(pme.manoeuvre.def.id.to_string())),
            _ => pme.context.get(name).cloned(),
        }
    }

    fn start_step(
        &mut self,
        now: Millis,
        world: &dyn WorldView,
        step: String,
        invokes: Vec<crate::statemachine::BoundInvoke>,
        request: Option<&Message>,
        out: &mut Vec<Effect>,
    ) -> Result<(), String> {
        let mut children = Vec::new();
        for inv in invokes {
            let lib = Arc::clone(&self.library);
            let sub = lib.sub(&inv.action).ok_or_else(|| format!("unknown sub-manoeuvre {}", inv.action))?;
            let pme = self.pme.as_ref().expect("running");
            let mut params = resolve_payload(&inv.params, &|n| self.context_lookup(world, pme, n))
                .map_err(|e| format!("step {step}: {e}"))?;
            params.insert("manoeuvre".into(), Value::Str(pme.manoeuvre.def.id.to_string()));
            let by_request = sub.doc.controlling_role().and_then(|r| r.trigger) == Some(Trigger::Message(MessageKind::Req));
            let correlation = match request.filter(|_| by_request) {
                Some(m) => m.correlation.clone(),
                None => self.fresh_correlation(),
            };
            children.push(SubMachineInstance::new(
                Arc::clone(&sub.doc),
                sub.controlling.clone(),
                correlation,
                inv.participants,
                params,
                now,
            ));
        }
        let wrapper = if children.len() > 1 {
            wrap_sim(children).map_err(|e| e.to_string())?
        } else {
            SimWrapperInstance {
                children,
                results: BTreeMap::new(),
            }
        };
        out.push(Effect::trace(
            "step",
            [
                ("manoeuvre", json!(self.pme.as_ref().expect("running").manoeuvre.def.id.as_str())),
                ("step", json!(step)),
                (
                    "invokes",
                    json!(wrapper
                        .children
                        .iter()
                        .map(|c| json!({"action": c.action().as_str(), "correlation": c.correlation.as_str()}))
                        .collect::<Vec<_>>()),
                ),
            ],
        ));
        let pme = self.pme.as_mut().expect("running");
        pme.correlations.extend(wrapper.children.iter().map(|c| c.correlation.clone()));
        pme.step = wrapper;
        let n = self.pme.as_ref().expect("running").step.children.len();
        for i in 0..n {
            let mut child = self.pme.as_ref().expect("running").step.children[i].clone();
            let event = child.start_event();
            let label = self.core.drive(&mut child, event, now, world, false, out);
            let pme = self.pme.as_mut().expect("running");
            pme.step.children[i] = child;
            if let Some(l) = label {
                pme.step.record(i, l);
            }
        }
        self.advance(now, world, out);
        Ok(())
    }

    /// Move the manoeuvre on once every child of the step concluded.
    fn advance(&mut self, now: Millis, world: &dyn WorldView, out: &mut Vec<Effect>) {
        let Some(pme) = &mut self.pme else { return };
        let Some(key) = pme.step.outcome() else { return };
        let lib = Arc::clone(&self.library);
        let from = pme.manoeuvre.step.clone();
        let next = pme
            .manoeuvre
            .advance_manoeuvre(&key, &|a| lib.sub(a).map(|s| Arc::clone(&s.doc)));
        let labels: Vec<String> = key.iter().map(|l| l.to_string()).collect();
        let next_name = match &next {
            Ok(NextAction::Invoke { step, .. }) => step.clone(),
            Ok(NextAction::Terminate) => "TERMINATE".into(),
            Err(e) => e.to_string(),
        };
        out.push(Effect::trace(
            "manoeuvre",
            [
                ("manoeuvre", json!(pme.manoeuvre.def.id.as_str())),
                ("step", json!(from)),
                ("key", json!(labels)),
                ("next", json!(next_name)),
            ],
        ));
        match next {
            Ok(NextAction::Invoke { step, invokes }) => {
                if let Err(e) = self.start_step(now, world, step, invokes, None, out) {
                    out.push(Effect::warning("MANOEUVRE_FAILED", e));
                    self.pme = None;
                }
            }
            Ok(NextAction::Terminate) => {
                let pme = self.pme.take().expect("running");
                self.manoeuvres.push(ManoeuvreRecord {
                    manoeuvre: pme.manoeuvre.def.id.clone(),
                    request: pme.request,
                    bindings: pme.manoeuvre.bindings,
                    history: pme.manoeuvre.history,
                    key,
                    correlations: pme.correlations,
                    started_at: pme.started_at,
                    finished_at: now,
                });
            }
            Err(e) => {
                out.push(Effect::warning("MANOEUVRE_FAILED", e.to_string()));
                self.pme = None;
            }
        }
    }

    /// Feed `event` to the PME child with `correlation`.
    fn drive_child(&mut self, now: Millis, world: &dyn WorldView, i: usize, event: Event, out: &mut Vec<Effect>) {
        let Some(pme) = &self.pme else { return };
        let mut child = pme.step.children[i].clone();
        let label = self.core.drive(&mut child, event, now, world, false, out);
        let pme = self.pme.as_mut().expect("running");
        pme.step.children[i] = child;
        if let Some(l) = label {
            pme.step.record(i, l);
            self.advance(now, world, out);
        }
    }

    fn child_index(&self, correlation: &CorrelationId) -> Option<usize> {
        self.pme
            .as_ref()?
            .step
            .children
            .iter()
            .position(|c| &c.correlation == correlation && !c.is_concluded())
    }

    fn drive_reactive(&mut self, now: Millis, world: &dyn WorldView, event: Event, replay: bool, out: &mut Vec<Effect>) {
        let Some(mut inst) = self.reactive.take() else { return };
        let label = self.core.drive(&mut inst, event, now, world, replay, out);
        self.reactive = Some(inst);
        if let Some(l) = label {
            self.record_request(l, now);
        }
    }

    pub fn on_message(&mut self, now: Millis, world: &dyn WorldView, msg: &Message) -> Vec<Effect> {
        let mut out = Vec::new();
        let event = Event::Message {
            kind: msg.kind,
            action: msg.action.clone(),
        };
        if msg.kind == MessageKind::TmplSplit {
            if self.core.idle == IdleState::Tpl {
                self.core.execute(None, &Primitive::Bpl, false, &mut out);
                if let Some(r) = &self.reactive {
                    self.core.timers.remove(&TimerKey::Instance(r.correlation.clone()));
                }
                self.reactive = None;
            } else {
                out.push(Effect::warning("STALE_MESSAGE", format!("{} ignored in {}", msg.label(), self.core.idle)));
            }
            return out;
        }
        if let Some(i) = self.child_index(&msg.correlation) {
            let accepts = self.pme.as_ref().expect("running").step.children[i].accepts(&event);
            if accepts {
                self.drive_child(now, world, i, event, &mut out);
            } else {
                out.push(Effect::warning("UNEXPECTED_EVENT", format!("{} from {}", msg.label(), msg.sender)));
            }
            return out;
        }
        if let Some(r) = self.reactive.as_ref().filter(|r| r.correlation == msg.correlation && !r.is_concluded()) {
            if r.accepts(&event) {
                self.drive_reactive(now, world, event, false, &mut out);
            } else {
                out.push(Effect::warning("UNEXPECTED_EVENT", format!("{} from {}", msg.label(), msg.sender)));
            }
            return out;
        }
        match msg.kind {
            MessageKind::Req => self.on_request(now, world, msg, &mut out),
            MessageKind::Ord => self.on_order(now, world, msg, &mut out),
            MessageKind::Abt if !self.core.seen.contains(&msg.correlation) => self.on_orphan_abort(now, world, msg, &mut out),
            _ => out.push(Effect::warning("STALE_MESSAGE", format!("{} from {} ({})", msg.label(), msg.sender, msg.correlation))),
        }
        out
    }

    fn on_request(&mut self, now: Millis, world: &dyn WorldView, msg: &Message, out: &mut Vec<Effect>) {
        let nack = |reason: &str, detail: String, out: &mut Vec<Effect>| {
            out.push(Effect::warning(reason, detail));
            out.push(Effect::Send(Message {
                kind: MessageKind::Nack,
                action: msg.action.clone(),
                sender: msg.receivers.first().cloned().unwrap_or_else(|| VehicleId::new("")),
                receivers: vec![msg.sender.clone()],
                correlation: msg.correlation.clone(),
                payload: Payload::new(),
            }));
        };
        let doc = match self.library.manoeuvre(&msg.action) {
            Some(m) if self.requested(&m.doc) => Arc::clone(&m.doc),
            _ => return nack("UNKNOWN_ACTION", format!("{} cannot be requested", msg.action), out),
        };
        if self.core.idle != IdleState::Pl || self.is_busy() {
            return nack("BUSY", format!("{} is {} and cannot serve {}", self.core.id, self.core.idle, msg.action), out);
        }
        let bound = match self.bind(world, &doc, BTreeMap::new(), Some(msg)) {
            Ok(b) => b,
            Err(role) => return nack("UNBOUND_ROLE", role, out),
        };
        for role in &doc.roles {
            if role.part == Part::Reactive && role.entry_state == IdleState::Pf && world.leader_of(&bound[&role.name]).as_ref() != Some(&self.core.id) {
                return nack("UNBOUND_ROLE", format!("{} is not a follower", bound[&role.name]), out);
            }
        }
        if let Err(e) = self.start_pme(now, world, doc, bound, msg.payload.clone(), Some(msg), out) {
            out.push(Effect::warning("MANOEUVRE_FAILED", e));
            self.pme = None;
        }
    }

    /// A lingering reactive half gives way to a newer message from its own
    /// controller. False when the vehicle stays busy.
    fn supersede(&mut self, now: Millis, world: &dyn WorldView, msg: &Message, out: &mut Vec<Effect>) -> bool {
        if let Some(r) = &self.reactive {
            if !r.is_concluded() {
                if r.accepts(&Event::Superseded) && r.controller() == Some(&msg.sender) {
                    self.drive_reactive(now, world, Event::Superseded, false, out);
                } else {
                    out.push(Effect::warning("BUSY", format!("{} ignored while running {}", msg.label(), r.action())));
                    return false;
                }
            }
        }
        true
    }

    fn on_order(&mut self, now: Millis, world: &dyn WorldView, msg: &Message, out: &mut Vec<Effect>) {
        if !self.supersede(now, world, msg, out) {
            return;
        }
        let Some((sub, role)) = self.library.reactive_role(&msg.action, MessageKind::Ord) else {
            out.push(Effect::warning("UNKNOWN_ACTION", format!("no reactive role for {}", msg.label())));
            return;
        };
        let entry = sub.doc.role(role).map(|r| r.entry_state);
        if entry != Some(self.core.idle) {
            out.push(Effect::warning(
                "ENTRY_MISMATCH",
                format!("{} needs {} but {} is {}", msg.label(), entry.map(|e| e.to_string()).unwrap_or_default(), self.core.id, self.core.idle),
            ));
            return;
        }
        self.core.timers.remove(&TimerKey::Superstate);
        let participants = BTreeMap::from([(sub.controlling.clone(), msg.sender.clone()), (role.to_string(), self.core.id.clone())]);
        let inst = SubMachineInstance::new(Arc::clone(&sub.doc), role, msg.correlation.clone(), participants, msg.payload.clone(), now);
        let event = inst.start_event();
        self.reactive = Some(inst);
        self.drive_reactive(now, world, event, false, out);
    }

    /// An ABT for an order that never arrived: replay the reactive half's
    /// idle changes so the vehicle ends where the controlling half assumes.
    fn on_orphan_abort(&mut self, now: Millis, world: &dyn WorldView, msg: &Message, out: &mut Vec<Effect>) {
        if !self.supersede(now, world, msg, out) {
            return;
        }
        if self.is_busy() {
            out.push(Effect::warning("STALE_MESSAGE", format!("{} while busy", msg.label())));
            return;
        }
        let Some((sub, role)) = self.library.reactive_role(&msg.action, MessageKind::Ord) else {
            out.push(Effect::warning("STALE_MESSAGE", format!("{} has no reactive role", msg.label())));
            return;
        };
        if sub.doc.role(role).map(|r| r.entry_state) != Some(self.core.idle) {
            out.push(Effect::warning("STALE_MESSAGE", format!("{} does not apply in {}", msg.label(), self.core.idle)));
            return;
        }
        out.push(Effect::trace(
            "replay",
            [("action", json!(msg.action.as_str())), ("correlation", json!(msg.correlation.as_str()))],
        ));
        self.core.timers.remove(&TimerKey::Superstate);
        let participants = BTreeMap::from([(sub.controlling.clone(), msg.sender.clone()), (role.to_string(), self.core.id.clone())]);
        let inst = SubMachineInstance::new(Arc::clone(&sub.doc), role, msg.correlation.clone(), participants, Payload::new(), now);
        let start = inst.start_event();
        self.reactive = Some(inst);
        self.drive_reactive(now, world, start, true, out);
        let abt = Event::Message {
            kind: MessageKind::Abt,
            action: msg.action.clone(),
        };
        if self.reactive.as_ref().is_some_and(|r| r.accepts(&abt)) {
            self.drive_reactive(now, world, abt, true, out);
        }
    }

    /// Regulation-layer events (`Arrived`, `Done`).
    pub fn on_physical(&mut self, now: Millis, world: &dyn WorldView, event: Event) -> Vec<Effect> {
        let mut out = Vec::new();
        if self.reactive.as_ref().is_some_and(|r| r.accepts(&event)) {
            self.drive_reactive(now, world, event, false, &mut out);
        } else if let Some(i) = self
            .pme
            .as_ref()
            .and_then(|p| p.step.children.iter().position(|c| c.accepts(&event)))
        {
            self.drive_child(now, world, i, event, &mut out);
        }
        out
    }

    pub fn due_timers(&self, now: Millis) -> Vec<TimerKey> {
        self.core
            .timers
            .iter()
            .filter(|(_, d)| **d <= now)
            .map(|(k, _)| k.clone())
            .collect()
    }

    /// Fire an armed timer, early if forced.
    pub fn fire_timer(&mut self, now: Millis, world: &dyn WorldView, key: &TimerKey) -> Vec<Effect> {
        let mut out = Vec::new();
        if self.core.timers.remove(key).is_none() {
            return out;
        }
        out.push(Effect::trace("timeout", [("timer", json!(timer_name(key)))]));
        match key {
            TimerKey::Superstate => {
                let idle = self.core.idle;
                if idle.is_waiting() {
                    self.core.execute(None, &Primitive::Usw, false, &mut out);
                    if self.core.idle != IdleState::Pf {
                        out.push(Effect::Target(None));
                    }
                } else if idle == IdleState::Tpl {
                    self.core.execute(None, &Primitive::Bpl, false, &mut out);
                }
            }
            TimerKey::Instance(c) => {
                if let Some(i) = self.child_index(c) {
                    self.drive_child(now, world, i, Event::Timeout, &mut out);
                } else if self.reactive.as_ref().is_some_and(|r| &r.correlation == c && !r.is_concluded()) {
                    self.drive_reactive(now, world, Event::Timeout, false, &mut out);
                }
            }
        }
        out
    }
}

pub fn timer_name(key: &TimerKey) -> String {
    match key {
        TimerKey::Instance(c) => c.to_string(),
        TimerKey::Superstate => "superstate".into(),
    }
}
