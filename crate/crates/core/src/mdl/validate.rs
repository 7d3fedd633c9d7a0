//! Structural checks on MDL documents: roles, transition completeness,
//! actor legality along every path, result coverage and manoeuvre wiring.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::document::*;
use super::registry::Registry;
use crate::diagnostic::{Diagnostic, Rule};
use crate::params::referenced_name;
use crate::types::{primitive_allowed, Headway, IdleState, MessageKind, Primitive, ResultLabel, Value};

/// Names every controlling half may reference besides its step params.
pub const CONTROLLING_BUILTINS: &[&str] = &["self", "manoeuvre"];
/// Names every reactive half may reference besides its trigger payload.
pub const REACTIVE_BUILTINS: &[&str] = &["self", "controller"];
/// Platoon-context names available to manoeuvre step params.
pub const CONTEXT_NAMES: &[&str] = &["d", "D", "lane", "tail", "leader"];

fn loc(doc: &MdlDocument, path: impl AsRef<str>) -> String {
    format!("{}:{}", doc.id, path.as_ref())
}

pub fn validate(doc: &MdlDocument, registry: &Registry) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    validate_roles(doc, &mut out);
    match &doc.body {
        Body::Sub(sub) => validate_sub(doc, sub, &mut out),
        Body::Manoeuvre(m) => {
            let exploration = explore_manoeuvre(doc, m, registry);
            out.extend(exploration.diagnostics);
        }
    }
    out.sort();
    out.dedup();
    out
}

fn validate_roles(doc: &MdlDocument, out: &mut Vec<Diagnostic>) {
    let mut seen = BTreeSet::new();
    for (i, r) in doc.roles.iter().enumerate() {
        if !seen.insert(r.name.as_str()) {
            out.push(Diagnostic::error(
                Rule::RoleDuplicate,
                loc(doc, format!("$.roles[{i}].name")),
                format!("role `{}` declared twice", r.name),
            ));
        }
    }
    let controlling: Vec<_> = doc
        .roles
        .iter()
        .filter(|r| r.part == Part::Controlling)
        .collect();
    if controlling.len() != 1 {
        out.push(Diagnostic::error(
            Rule::RoleControlling,
            loc(doc, "$.roles"),
            format!("expected exactly one controlling role, found {}", controlling.len()),
        ));
    }
    for (i, r) in doc.roles.iter().enumerate() {
        let path = format!("$.roles[{i}]");
        if r.part == Part::Controlling && r.entry_state != IdleState::Pl {
            out.push(Diagnostic::error(
                Rule::RoleControlling,
                loc(doc, format!("{path}.entry_state")),
                format!("controlling role `{}` must start as PL", r.name),
            ));
        }
        match doc.kind {
            DocKind::SubManoeuvre => match (r.part, r.trigger) {
                (Part::Controlling, None | Some(Trigger::Message(MessageKind::Req))) => {}
                (Part::Reactive, Some(Trigger::Lli)) => {}
                (Part::Reactive, Some(Trigger::Message(MessageKind::Ord | MessageKind::Req))) => {}
                (part, trigger) => out.push(Diagnostic::error(
                    Rule::RoleTrigger,
                    loc(doc, format!("{path}.trigger")),
                    format!("{} role `{}` has unusable trigger {trigger:?}", part.as_str(), r.name),
                )),
            },
            DocKind::Manoeuvre => match (&r.bind, r.part) {
                (Some(_), Part::Controlling) => out.push(Diagnostic::error(
                    Rule::RoleTrigger,
                    loc(doc, format!("{path}.bind")),
                    "the controlling role is always the leader and takes no binding",
                )),
                (Some(Binding::Behind(other) | Binding::Ahead(other)), _)
                    if doc.role(other).is_none() || other == &r.name =>
                {
                    out.push(Diagnostic::error(
                        Rule::RoleUnknown,
                        loc(doc, format!("{path}.bind")),
                        format!("binding refers to unknown role `{other}`"),
                    ))
                }
                _ => {}
            },
        }
    }
}

/// Idle states flowing through one role's sub-state machine.
#[derive(Debug, Clone, Default)]
pub struct RoleFlow {
    /// state id -> idle states with which the state can be entered
    pub reached: BTreeMap<String, BTreeSet<IdleState>>,
    /// result -> idle states in which the role concludes with it
    pub results: BTreeMap<ResultLabel, BTreeSet<IdleState>>,
}

/// Apply a state's primitives to `idle`, reporting illegal ones.
pub fn apply_primitives(
    primitives: &[Primitive],
    mut idle: IdleState,
    mut on_violation: impl FnMut(usize, &Primitive, IdleState),
) -> IdleState {
    for (i, p) in primitives.iter().enumerate() {
        if !primitive_allowed(p.op(), idle) {
            on_violation(i, p, idle);
            continue;
        }
        if let Some(next) = p.op().idle_effect(idle) {
            idle = next;
        }
    }
    idle
}

pub fn role_flow(doc: &MdlDocument, role: &RoleDef) -> (RoleFlow, Vec<Diagnostic>) {
    let mut flow = RoleFlow::default();
    let mut diags = Vec::new();
    let Some(machine) = doc.as_sub().and_then(|s| s.states.get(&role.name)) else {
        return (flow, diags);
    };
    let Some(start) = role.start.as_ref() else {
        return (flow, diags);
    };
    let mut queue = VecDeque::from([(start.clone(), role.entry_state)]);
    let mut visited = BTreeSet::new();
    while let Some((id, idle)) = queue.pop_front() {
        if !visited.insert((id.clone(), idle)) {
            continue;
        }
        let Some(state) = machine.get(&id) else {
            continue;
        };
        flow.reached.entry(id.clone()).or_default().insert(idle);
        let after = apply_primitives(&state.primitives, idle, |i, p, s| {
            diags.push(Diagnostic::error(
                Rule::PrimitiveActorViolation,
                loc(doc, format!("$.body.states.{}.{id}.primitives[{i}]", role.name)),
                format!("{} is not allowed for a vehicle in {s}", p.op()),
            ))
        });
        for t in &state.transitions {
            match &t.to {
                Target::State(next) => queue.push_back((next.clone(), after)),
                Target::Result(label) => {
                    flow.results.entry(label.clone()).or_default().insert(after);
                }
            }
        }
    }
    (flow, diags)
}

fn validate_sub(doc: &MdlDocument, sub: &SubManoeuvreDef, out: &mut Vec<Diagnostic>) {
    for role in sub.states.keys() {
        if doc.role(role).is_none() {
            out.push(Diagnostic::error(
                Rule::RoleUnknown,
                loc(doc, format!("$.body.states.{role}")),
                format!("states given for undeclared role `{role}`"),
            ));
        }
    }
    let declared: BTreeSet<&ResultLabel> = sub.results.iter().map(|r| &r.label).collect();
    if declared.len() != sub.results.len() {
        out.push(Diagnostic::error(
            Rule::UndeclaredResult,
            loc(doc, "$.body.results"),
            "result label declared twice",
        ));
    }
    if !declared.contains(&ResultLabel::Success) {
        out.push(Diagnostic::error(
            Rule::UndeclaredResult,
            loc(doc, "$.body.results"),
            "every sub-manoeuvre declares RS",
        ));
    }

    let mut flows = BTreeMap::new();
    for role in &doc.roles {
        let base = format!("$.body.states.{}", role.name);
        let Some(machine) = sub.states.get(&role.name) else {
            out.push(Diagnostic::error(
                Rule::RoleUnknown,
                loc(doc, &base),
                format!("role `{}` has no sub-state machine", role.name),
            ));
            continue;
        };
        let start = role.start.clone().unwrap_or_default();
        if !machine.contains_key(&start) {
            out.push(Diagnostic::error(
                Rule::StateUnknown,
                loc(doc, format!("$.roles.{}.start", role.name)),
                format!("start state `{start}` does not exist"),
            ));
        }
        for (id, state) in machine {
            check_state(doc, sub, role, machine, id, state, &declared, out);
        }
        check_dead_ends(doc, role, machine, out);
        let (flow, diags) = role_flow(doc, role);
        out.extend(diags);
        for id in machine.keys() {
            if !flow.reached.contains_key(id) {
                out.push(Diagnostic::warning(
                    Rule::StateUnreachable,
                    loc(doc, format!("{base}.{id}")),
                    "state is never entered",
                ));
            }
        }
        if role.part == Part::Reactive && matches!(role.trigger, Some(Trigger::Message(_))) {
            check_reactive_params(doc, sub, role, machine, out);
        }
        flows.insert(role.name.clone(), flow);
    }

    for (i, result) in sub.results.iter().enumerate() {
        let path = format!("$.body.results[{i}]");
        for role in result.finals.keys() {
            if doc.role(role).is_none() {
                out.push(Diagnostic::error(
                    Rule::RoleUnknown,
                    loc(doc, format!("{path}.final.{role}")),
                    format!("final state for undeclared role `{role}`"),
                ));
            }
        }
        for role in &doc.roles {
            let Some(declared_final) = result.finals.get(&role.name) else {
                out.push(Diagnostic::error(
                    Rule::FinalMissing,
                    loc(doc, format!("{path}.final")),
                    format!("{} declares no final state for role `{}`", result.label, role.name),
                ));
                continue;
            };
            let unstable = if result.label.is_success() {
                !(declared_final.is_stable() || declared_final.is_waiting())
            } else {
                !declared_final.is_stable()
            };
            if unstable {
                out.push(Diagnostic::error(
                    Rule::StabilityTerminalUnstable,
                    loc(doc, format!("{path}.final.{}", role.name)),
                    format!(
                        "{} leaves role `{}` in unstable {declared_final}",
                        result.label, role.name
                    ),
                ));
            }
            let Some(flow) = flows.get(&role.name) else {
                continue;
            };
            match flow.results.get(&result.label) {
                None => out.push(Diagnostic::error(
                    Rule::UnreachableResult,
                    loc(doc, format!("{path}.label")),
                    format!("no path of role `{}` concludes with {}", role.name, result.label),
                )),
                Some(states) if states.iter().any(|s| s != declared_final) => {
                    let got: Vec<_> = states.iter().map(|s| s.as_str()).collect();
                    out.push(Diagnostic::error(
                        Rule::FinalStateMismatch,
                        loc(doc, format!("{path}.final.{}", role.name)),
                        format!(
                            "role `{}` concludes {} in {{{}}}, declared {declared_final}",
                            role.name,
                            result.label,
                            got.join(",")
                        ),
                    ))
                }
                Some(_) => {}
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn check_state(
    doc: &MdlDocument,
    sub: &SubManoeuvreDef,
    role: &RoleDef,
    machine: &BTreeMap<String, StateDef>,
    id: &str,
    state: &StateDef,
    declared: &BTreeSet<&ResultLabel>,
    out: &mut Vec<Diagnostic>,
) {
    let path = format!("$.body.states.{}.{id}", role.name);
    for (i, p) in state.primitives.iter().enumerate() {
        if matches!(p, Primitive::W { .. }) && i + 1 != state.primitives.len() {
            out.push(Diagnostic::error(
                Rule::WaitNotLast,
                loc(doc, format!("{path}.primitives[{i}]")),
                "W must be the last primitive of a state",
            ));
        }
        if let Primitive::Snd(t) = p {
            if t.to == role.name || !sub.states.contains_key(&t.to) && doc.role(&t.to).is_none() {
                out.push(Diagnostic::error(
                    Rule::RoleUnknown,
                    loc(doc, format!("{path}.primitives[{i}].to")),
                    format!("SND addressed to `{}`, which is not another role", t.to),
                ));
            }
        }
    }
    if state.transitions.is_empty() {
        out.push(Diagnostic::error(
            Rule::DeadEnd,
            loc(doc, &path),
            "state has no outgoing transition",
        ));
    }
    let waits = state.waits();
    let immediate = state.transitions.iter().filter(|t| t.on.is_none()).count();
    let policies: BTreeSet<bool> = state
        .transitions
        .iter()
        .filter_map(|t| match t.on {
            Some(EventPattern::Policy(b)) => Some(b),
            _ => None,
        })
        .collect();
    let shape_ok = if waits {
        immediate == 0 && policies.is_empty()
    } else if !policies.is_empty() {
        policies.len() == 2 && state.transitions.len() == 2
    } else {
        immediate == 1 && state.transitions.len() == 1
    };
    if !state.transitions.is_empty() && !shape_ok {
        out.push(Diagnostic::error(
            Rule::TransitionIncomplete,
            loc(doc, format!("{path}.transitions")),
            if waits {
                "a waiting state takes only event transitions"
            } else {
                "a state without W needs one immediate transition or a policy true/false pair"
            },
        ));
    }
    if role.part == Part::Controlling && state.transitions.iter().any(|t| t.on == Some(EventPattern::Superseded)) {
        out.push(Diagnostic::error(
            Rule::TransitionIncomplete,
            loc(doc, format!("{path}.transitions")),
            "only reactive halves can be superseded",
        ));
    }
    for (i, t) in state.transitions.iter().enumerate() {
        let tp = format!("{path}.transitions[{i}]");
        match &t.to {
            Target::State(next) if !machine.contains_key(next) => out.push(Diagnostic::error(
                Rule::StateUnknown,
                loc(doc, format!("{tp}.to")),
                format!("transition to unknown state `{next}`"),
            )),
            Target::Result(label) if !declared.contains(label) => out.push(Diagnostic::error(
                Rule::UndeclaredResult,
                loc(doc, format!("{tp}.to")),
                format!("{label} is not a declared result"),
            )),
            _ => {}
        }
    }
}

fn check_dead_ends(
    doc: &MdlDocument,
    role: &RoleDef,
    machine: &BTreeMap<String, StateDef>,
    out: &mut Vec<Diagnostic>,
) {
    // backwards closure from states with a result transition
    let mut concludes: BTreeSet<&str> = machine
        .iter()
        .filter(|(_, s)| s.transitions.iter().any(|t| matches!(t.to, Target::Result(_))))
        .map(|(id, _)| id.as_str())
        .collect();
    loop {
        let before = concludes.len();
        for (id, s) in machine {
            if s.transitions.iter().any(|t| match &t.to {
                Target::State(n) => concludes.contains(n.as_str()),
                Target::Result(_) => false,
            }) {
                concludes.insert(id.as_str());
            }
        }
        if concludes.len() == before {
            break;
        }
    }
    for (id, s) in machine {
        if !s.transitions.is_empty() && !concludes.contains(id.as_str()) {
            out.push(Diagnostic::error(
                Rule::DeadEnd,
                loc(doc, format!("$.body.states.{}.{id}", role.name)),
                "no result is reachable from this state",
            ));
        }
    }
}

pub(crate) fn primitive_refs(p: &Primitive) -> Vec<String> {
    let values: Vec<&Value> = match p {
        Primitive::Mtp {
            target,
            offset,
            lane,
        } => [Some(target), Some(offset), lane.as_ref()].into_iter().flatten().collect(),
        Primitive::Sh(Headway::Time(v) | Headway::Space(v)) => vec![v],
        Primitive::Snd(t) => t.payload.values().collect(),
        _ => vec![],
    };
    let mut names: Vec<String> = values.into_iter().filter_map(referenced_name).collect();
    if let Primitive::Snd(t) = p {
        if let Some(a) = t.action.as_deref().and_then(|a| referenced_name(&Value::Str(a.into()))) {
            names.push(a);
        }
    }
    names
}

fn check_reactive_params(
    doc: &MdlDocument,
    sub: &SubManoeuvreDef,
    role: &RoleDef,
    machine: &BTreeMap<String, StateDef>,
    out: &mut Vec<Diagnostic>,
) {
    let mut available: BTreeSet<String> = REACTIVE_BUILTINS.iter().map(|s| s.to_string()).collect();
    for (other, states) in &sub.states {
        if other == &role.name {
            continue;
        }
        for s in states.values() {
            for p in &s.primitives {
                if let Primitive::Snd(t) = p {
                    if t.to == role.name && t.kind == MessageKind::Ord {
                        if t.forward_params {
                            return;
                        }
                        available.extend(t.payload.keys().cloned());
                    }
                }
            }
        }
    }
    for (id, s) in machine {
        for (i, p) in s.primitives.iter().enumerate() {
            for name in primitive_refs(p) {
                if !available.contains(&name) {
                    out.push(Diagnostic::error(
                        Rule::ParamUnresolved,
                        loc(doc, format!("$.body.states.{}.{id}.primitives[{i}]", role.name)),
                        format!("`${name}` is neither a builtin nor carried by any order"),
                    ));
                }
            }
        }
    }
}

/// Result of walking a manoeuvre's step graph with tracked idle states.
#[derive(Debug, Clone, Default)]
pub struct ManoeuvreExploration {
    /// (key that led to TERMINATE, idle state of every role)
    pub terminals: BTreeSet<(ResultKey, BTreeMap<String, IdleState>)>,
    pub diagnostics: Vec<Diagnostic>,
}

fn context_name_ok(doc: &MdlDocument, name: &str) -> bool {
    if CONTEXT_NAMES.contains(&name) {
        return true;
    }
    match name.split_once(':') {
        Some(("role" | "ahead" | "behind", r)) => doc.role(r).is_some(),
        _ => false,
    }
}

/// Declared results of a sub-manoeuvre and the final idle state per role.
pub fn sub_results(doc: &MdlDocument) -> Vec<(ResultLabel, BTreeMap<String, IdleState>)> {
    doc.as_sub()
        .map(|s| {
            s.results
                .iter()
                .map(|r| (r.label.clone(), r.finals.clone()))
                .collect()
        })
        .unwrap_or_default()
}

pub fn explore_manoeuvre(
    doc: &MdlDocument,
    m: &ManoeuvreDef,
    registry: &Registry,
) -> ManoeuvreExploration {
    let mut ex = ManoeuvreExploration::default();
    let out = &mut ex.diagnostics;
    let leader = doc
        .controlling_role()
        .map(|r| r.name.clone())
        .unwrap_or_default();

    if !m.steps.contains_key(&m.start) {
        out.push(Diagnostic::error(
            Rule::StepUnknown,
            loc(doc, "$.body.start"),
            format!("start step `{}` does not exist", m.start),
        ));
        return ex;
    }

    // static checks per step
    let mut resolved_ok = true;
    for (id, step) in &m.steps {
        let path = format!("$.body.steps.{id}");
        let invokes = step.invoke.invokes();
        if let Invocation::Sim(children) = &step.invoke {
            if children.len() < 2 {
                out.push(Diagnostic::error(
                    Rule::SimArity,
                    loc(doc, format!("{path}.sim")),
                    "a SIM wrapper needs at least two sub-manoeuvres",
                ));
            }
            let mut used: BTreeMap<&str, usize> = BTreeMap::new();
            for (ci, child) in children.iter().enumerate() {
                for role in child.participants.values() {
                    if let Some(prev) = used.insert(role.as_str(), ci) {
                        if prev != ci {
                            out.push(Diagnostic::error(
                                Rule::SimParticipantOverlap,
                                loc(doc, format!("{path}.sim[{ci}].participants")),
                                format!("role `{role}` participates in SIM children {prev} and {ci}"),
                            ));
                        }
                    }
                }
            }
        }
        for (ii, inv) in invokes.iter().enumerate() {
            let ipath = match step.invoke {
                Invocation::Single(_) => format!("{path}.invoke"),
                Invocation::Sim(_) => format!("{path}.sim[{ii}]"),
            };
            let Some(sub) = registry.get(inv.action.as_str()).filter(|d| d.kind == DocKind::SubManoeuvre) else {
                resolved_ok = false;
                out.push(Diagnostic::error(
                    Rule::UnresolvedReference,
                    loc(doc, format!("{ipath}.action")),
                    format!("`{}` is not a known sub-manoeuvre", inv.action),
                ));
                continue;
            };
            for r in &sub.roles {
                match (r.part, inv.participants.get(&r.name)) {
                    (Part::Controlling, Some(_)) => out.push(Diagnostic::error(
                        Rule::ParticipantUnbound,
                        loc(doc, format!("{ipath}.participants.{}", r.name)),
                        "the controlling role is played by the leader and is not bound",
                    )),
                    (Part::Reactive, None) => out.push(Diagnostic::error(
                        Rule::ParticipantUnbound,
                        loc(doc, format!("{ipath}.participants")),
                        format!("role `{}` of {} is not bound", r.name, sub.id),
                    )),
                    (Part::Reactive, Some(m_role)) => {
                        let ok = doc.role(m_role).is_some_and(|mr| mr.part == Part::Reactive);
                        if !ok {
                            out.push(Diagnostic::error(
                                Rule::ParticipantUnbound,
                                loc(doc, format!("{ipath}.participants.{}", r.name)),
                                format!("`{m_role}` is not a participant role of this manoeuvre"),
                            ));
                        }
                    }
                    _ => {}
                }
            }
            for k in inv.participants.keys() {
                if sub.role(k).is_none() {
                    out.push(Diagnostic::error(
                        Rule::ParticipantUnbound,
                        loc(doc, format!("{ipath}.participants.{k}")),
                        format!("{} has no role `{k}`", sub.id),
                    ));
                }
            }
            // params
            for (k, v) in &inv.params {
                if let Some(name) = referenced_name(v) {
                    if !context_name_ok(doc, &name) {
                        out.push(Diagnostic::error(
                            Rule::ParamUnresolved,
                            loc(doc, format!("{ipath}.params.{k}")),
                            format!("`${name}` is not available in the platoon context"),
                        ));
                    }
                }
            }
            if let (Some(ctrl), Some(s)) = (sub.controlling_role(), sub.as_sub()) {
                if let Some(states) = s.states.get(&ctrl.name) {
                    for (sid, st) in states {
                        for p in &st.primitives {
                            for name in primitive_refs(p) {
                                let known = inv.params.contains_key(&name)
                                    || CONTROLLING_BUILTINS.contains(&name.as_str());
                                if !known {
                                    out.push(Diagnostic::error(
                                        Rule::ParamUnresolved,
                                        loc(doc, format!("{ipath}.params")),
                                        format!("{}:{sid} needs `${name}`", sub.id),
                                    ));
                                }
                            }
                        }
                    }
                }
            }
            let req_triggered = sub
                .controlling_role()
                .is_some_and(|r| r.trigger == Some(Trigger::Message(MessageKind::Req)));
            if req_triggered && (id != &m.start || invokes.len() != 1) {
                out.push(Diagnostic::error(
                    Rule::RequestEntry,
                    loc(doc, format!("{ipath}.action")),
                    format!("{} answers a request and can only be the first step", sub.id),
                ));
            }
        }
        // next mapping
        for (ni, (key, to)) in step.next.iter().enumerate() {
            let npath = format!("{path}.next[{ni}]");
            if key.len() != invokes.len() {
                out.push(Diagnostic::error(
                    Rule::NextUndeclared,
                    loc(doc, format!("{npath}.on")),
                    format!("result key has {} labels for {} invocations", key.len(), invokes.len()),
                ));
            } else {
                for (label, inv) in key.iter().zip(invokes) {
                    if let Some(sub) = registry.get(inv.action.as_str()) {
                        if !sub.result_labels().contains(label) {
                            out.push(Diagnostic::error(
                                Rule::NextUndeclared,
                                loc(doc, format!("{npath}.on")),
                                format!("{} does not declare {label}", inv.action),
                            ));
                        }
                    }
                }
            }
            if let NextTarget::Step(s) = to {
                if !m.steps.contains_key(s) {
                    out.push(Diagnostic::error(
                        Rule::StepUnknown,
                        loc(doc, format!("{npath}.to")),
                        format!("next step `{s}` does not exist"),
                    ));
                }
            }
        }
        if resolved_ok {
            for key in result_product(invokes, registry) {
                if step.next_for(&key).is_none() {
                    let labels: Vec<_> = key.iter().map(|l| l.to_string()).collect();
                    out.push(Diagnostic::error(
                        Rule::MissingNext,
                        loc(doc, format!("{path}.next")),
                        format!("no next entry for result [{}]", labels.join(",")),
                    ));
                }
            }
        }
    }

    // request-initiated manoeuvres start by answering the request
    let requester = doc
        .roles
        .iter()
        .find(|r| r.bind == Some(Binding::Requester));
    if let Some(req_role) = requester {
        let first = &m.steps[&m.start];
        let ok = match &first.invoke {
            Invocation::Single(inv) => registry.get(inv.action.as_str()).is_some_and(|sub| {
                let answers = sub
                    .controlling_role()
                    .is_some_and(|r| r.trigger == Some(Trigger::Message(MessageKind::Req)));
                let asker = sub
                    .roles
                    .iter()
                    .find(|r| r.trigger == Some(Trigger::Lli))
                    .and_then(|r| inv.participants.get(&r.name));
                answers && asker == Some(&req_role.name)
            }),
            Invocation::Sim(_) => false,
        };
        if !ok {
            out.push(Diagnostic::error(
                Rule::RequestEntry,
                loc(doc, format!("$.body.steps.{}", m.start)),
                "a manoeuvre with a requester must start by answering the request",
            ));
        }
    }

    if !resolved_ok || !m.steps.values().all(|s| s.next.iter().all(|(_, t)| match t {
        NextTarget::Step(id) => m.steps.contains_key(id),
        NextTarget::Terminate => true,
    })) {
        return ex;
    }

    // role-state exploration
    let initial: BTreeMap<String, IdleState> = doc
        .roles
        .iter()
        .map(|r| (r.name.clone(), r.entry_state))
        .collect();
    let mut queue = VecDeque::from([(m.start.clone(), initial)]);
    let mut visited = BTreeSet::new();
    let mut mismatch_reported = BTreeSet::new();
    while let Some((step_id, states)) = queue.pop_front() {
        if !visited.insert((step_id.clone(), states.clone())) {
            continue;
        }
        let step = &m.steps[&step_id];
        let invokes = step.invoke.invokes();
        for (ii, inv) in invokes.iter().enumerate() {
            let sub = registry.get(inv.action.as_str()).expect("resolved above");
            for r in &sub.roles {
                let m_role = match r.part {
                    Part::Controlling => Some(&leader),
                    Part::Reactive => inv.participants.get(&r.name),
                };
                let Some(m_role) = m_role else { continue };
                let Some(current) = states.get(m_role) else { continue };
                if *current != r.entry_state && mismatch_reported.insert((step_id.clone(), ii, r.name.clone())) {
                    ex.diagnostics.push(Diagnostic::error(
                        Rule::RoleStateMismatch,
                        loc(doc, format!("$.body.steps.{step_id}")),
                        format!(
                            "`{m_role}` may be {current} here but {}:{} expects {}",
                            sub.id, r.name, r.entry_state
                        ),
                    ));
                }
            }
        }
        // successors over the Cartesian product of child results
        let per_child: Vec<Vec<(ResultLabel, BTreeMap<String, IdleState>)>> = invokes
            .iter()
            .map(|inv| sub_results(registry.get(inv.action.as_str()).expect("resolved")))
            .collect();
        for combo in cartesian(&per_child) {
            let key: ResultKey = combo.iter().map(|(l, _)| l.clone()).collect();
            let mut next_states = states.clone();
            for ((_, finals), inv) in combo.iter().zip(invokes) {
                let sub = registry.get(inv.action.as_str()).expect("resolved");
                for (sub_role, idle) in finals {
                    let m_role = match sub.role(sub_role).map(|r| r.part) {
                        Some(Part::Controlling) => Some(&leader),
                        _ => inv.participants.get(sub_role),
                    };
                    if let Some(m_role) = m_role {
                        next_states.insert(m_role.clone(), *idle);
                    }
                }
            }
            match step.next_for(&key) {
                Some(NextTarget::Step(s)) => queue.push_back((s.clone(), next_states)),
                Some(NextTarget::Terminate) => {
                    ex.terminals.insert((key, next_states));
                }
                None => {}
            }
        }
    }

    // reachability and exits over the step graph
    let reachable: BTreeSet<&str> = visited.iter().map(|(s, _)| s.as_str()).collect();
    for id in m.steps.keys() {
        if !reachable.contains(id.as_str()) {
            ex.diagnostics.push(Diagnostic::warning(
                Rule::StepUnreachable,
                loc(doc, format!("$.body.steps.{id}")),
                "step is never invoked",
            ));
        }
    }
    let mut exits: BTreeSet<&str> = m
        .steps
        .iter()
        .filter(|(_, s)| s.next.iter().any(|(_, t)| *t == NextTarget::Terminate))
        .map(|(id, _)| id.as_str())
        .collect();
    loop {
        let before = exits.len();
        for (id, s) in &m.steps {
            if s.next.iter().any(|(_, t)| matches!(t, NextTarget::Step(n) if exits.contains(n.as_str()))) {
                exits.insert(id.as_str());
            }
        }
        if exits.len() == before {
            break;
        }
    }
    for id in &reachable {
        if !exits.contains(id) {
            ex.diagnostics.push(Diagnostic::error(
                Rule::NoExit,
                loc(doc, format!("$.body.steps.{id}")),
                "TERMINATE is unreachable from this step",
            ));
        }
    }
    if has_cycle(m) && reachable.iter().all(|id| exits.contains(id)) {
        ex.diagnostics.push(Diagnostic::warning(
            Rule::CycleWithExit,
            loc(doc, "$.body.steps"),
            "the step graph is cyclic; every cycle has an exit",
        ));
    }
    ex
}

fn has_cycle(m: &ManoeuvreDef) -> bool {
    fn visit<'a>(m: &'a ManoeuvreDef, id: &'a str, stack: &mut Vec<&'a str>, done: &mut BTreeSet<&'a str>) -> bool {
        if stack.contains(&id) {
            return true;
        }
        if !done.insert(id) {
            return false;
        }
        stack.push(id);
        let found = m.steps.get(id).is_some_and(|s| {
            s.next.iter().any(|(_, t)| match t {
                NextTarget::Step(n) => visit(m, n, stack, done),
                NextTarget::Terminate => false,
            })
        });
        stack.pop();
        found
    }
    visit(m, &m.start, &mut Vec::new(), &mut BTreeSet::new())
}

pub(crate) fn cartesian<T: Clone>(sets: &[Vec<T>]) -> Vec<Vec<T>> {
    sets.iter().fold(vec![Vec::new()], |acc, set| {
        acc.into_iter()
            .flat_map(|prefix| {
                set.iter().map(move |item| {
                    let mut v = prefix.clone();
                    v.push(item.clone());
                    v
                })
            })
            .collect()
    })
}

fn result_product(invokes: &[Invoke], registry: &Registry) -> Vec<ResultKey> {
    let sets: Vec<Vec<ResultLabel>> = invokes
        .iter()
        .filter_map(|i| registry.get(i.action.as_str()))
        .map(|d| d.result_labels())
        .collect();
    cartesian(&sets)
}
