//! Stability, synchronisation and outcome enumeration over compiled
//! behaviours. Sub-manoeuvres are explored as the product of all halves
//! with lossless FIFO channels. Reactive timeouts fire only when nothing
//! is in flight; manoeuvres compose the enumerated outcomes
//! of their steps.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::Serialize;

use crate::diagnostic::{Diagnostic, Rule};
use crate::mdl::validate::cartesian;
use crate::mdl::{
    CompiledBehaviour, CompiledManoeuvre, CompiledSub, EventPattern, MdlDocument, NextTarget,
    Part, ResultKey, Trigger,
};
use crate::statemachine::{Event, Next, Position, SubMachineInstance};
use crate::types::{ActionId, CorrelationId, IdleState, MessageKind, Primitive, ResultLabel};

/// Upper bound on explored product states.
pub const STATE_BOUND: usize = 1_000_000;

/// One reachable ending: the result (a single label for a sub-manoeuvre,
/// the terminating key for a manoeuvre) and every role's idle state.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Outcome {
    pub result: Vec<String>,
    pub finals: BTreeMap<String, IdleState>,
}

impl Outcome {
    pub fn new(result: &[ResultLabel], finals: BTreeMap<String, IdleState>) -> Self {
        Outcome {
            result: result.iter().map(|l| l.to_string()).collect(),
            finals,
        }
    }
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let finals: Vec<String> = self.finals.iter().map(|(r, s)| format!("{r}={s}")).collect();
        write!(f, "({}: {})", self.result.join(","), finals.join(","))
    }
}

#[derive(Debug, Clone, Default)]
pub struct Enumeration {
    pub outcomes: BTreeSet<Outcome>,
    pub diagnostics: Vec<Diagnostic>,
    pub states_explored: usize,
}

fn loc(doc: &MdlDocument, path: impl AsRef<str>) -> String {
    format!("{}:{}", doc.id, path.as_ref())
}

pub fn check_stability(behaviour: &CompiledBehaviour) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    match behaviour {
        CompiledBehaviour::Sub(s) => {
            let sub = s.doc.as_sub().expect("sub");
            for (i, r) in sub.results.iter().enumerate() {
                for (role, state) in &r.finals {
                    let ok = state.is_stable() || (r.label.is_success() && state.is_waiting());
                    if !ok {
                        out.push(Diagnostic::error(
                            Rule::StabilityTerminalUnstable,
                            loc(&s.doc, format!("$.body.results[{i}].final.{role}")),
                            format!("{} leaves `{role}` in {state}", r.label),
                        ));
                    }
                }
            }
        }
        CompiledBehaviour::Manoeuvre(m) => {
            let en = enumerate_manoeuvre(m);
            for o in &en.outcomes {
                for (role, state) in &o.finals {
                    if !state.is_stable() {
                        out.push(Diagnostic::error(
                            Rule::StabilityTerminalUnstable,
                            loc(&m.doc, "$.body.steps"),
                            format!("TERMINATE after [{}] leaves `{role}` in {state}", o.result.join(",")),
                        ));
                    }
                }
            }
        }
    }
    out.sort();
    out.dedup();
    out
}

pub fn check_synchronisation(behaviour: &CompiledBehaviour) -> Vec<Diagnostic> {
    let mut out = match behaviour {
        CompiledBehaviour::Sub(s) => {
            let mut d = static_sync(s);
            d.extend(
                enumerate_sub(s)
                    .diagnostics
                    .into_iter()
                    .filter(|d| d.rule == Rule::DeadlockRisk),
            );
            d
        }
        CompiledBehaviour::Manoeuvre(m) => m
            .subs
            .values()
            .flat_map(|s| check_synchronisation(&CompiledBehaviour::Sub(s.clone())))
            .collect(),
    };
    out.sort();
    out.dedup();
    out
}

pub fn enumerate_outcomes(behaviour: &CompiledBehaviour) -> Enumeration {
    match behaviour {
        CompiledBehaviour::Sub(s) => enumerate_sub(s),
        CompiledBehaviour::Manoeuvre(m) => enumerate_manoeuvre(m),
    }
}

/// Every check at once, as the `verify` command runs them.
pub fn verify(behaviour: &CompiledBehaviour) -> Vec<Diagnostic> {
    let mut out = check_stability(behaviour);
    out.extend(check_synchronisation(behaviour));
    out.extend(
        enumerate_outcomes(behaviour)
            .diagnostics
            .into_iter()
            .filter(|d| d.rule != Rule::DeadlockRisk),
    );
    out.sort();
    out.dedup();
    out
}

/// Every awaited message must be sent by some other role, and every sent
/// message must be awaited or be a trigger of its addressee.
fn static_sync(s: &CompiledSub) -> Vec<Diagnostic> {
    let doc = &s.doc;
    let sub = doc.as_sub().expect("sub");
    let mut out = Vec::new();
    let mut sent: BTreeSet<(String, MessageKind)> = BTreeSet::new();
    for (role, states) in &sub.states {
        for (id, st) in states {
            for (i, p) in st.primitives.iter().enumerate() {
                let Primitive::Snd(t) = p else { continue };
                sent.insert((t.to.clone(), t.kind));
                let Some(states_to) = sub.states.get(&t.to) else { continue };
                let trigger = doc.role(&t.to).and_then(|r| r.trigger) == Some(Trigger::Message(t.kind));
                let awaited = states_to.values().any(|s| {
                    s.transitions
                        .iter()
                        .any(|tr| matches!(&tr.on, Some(EventPattern::Msg { kind, .. }) if *kind == t.kind))
                });
                if !trigger && !awaited {
                    out.push(Diagnostic::error(
                        Rule::DeadlockRisk,
                        loc(doc, format!("$.body.states.{role}.{id}.primitives[{i}]")),
                        format!("{} to `{}` is never awaited", t.kind, t.to),
                    ));
                }
            }
        }
    }
    for (role, states) in &sub.states {
        for (id, st) in states {
            for (i, tr) in st.transitions.iter().enumerate() {
                if let Some(EventPattern::Msg { kind, .. }) = &tr.on {
                    if !sent.contains(&(role.clone(), *kind)) {
                        out.push(Diagnostic::error(
                            Rule::DeadlockRisk,
                            loc(doc, format!("$.body.states.{role}.{id}.transitions[{i}]")),
                            format!("`{role}` waits for {kind}, which no role sends to it"),
                        ));
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Pos {
    Entry,
    At(String),
    Done(ResultLabel),
}

/// (kind, action); `None` stands for an action resolved at run time.
type Msg = (MessageKind, Option<String>);

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct ProductState {
    pos: Vec<Pos>,
    idle: Vec<IdleState>,
    chans: BTreeMap<(usize, usize), VecDeque<Msg>>,
}

struct Model<'a> {
    doc: &'a MdlDocument,
    roles: Vec<String>,
    templates: Vec<SubMachineInstance>,
}

impl<'a> Model<'a> {
    fn new(s: &'a CompiledSub) -> Self {
        let doc = s.doc.as_ref();
        let roles: Vec<String> = doc.roles.iter().map(|r| r.name.clone()).collect();
        let templates = roles
            .iter()
            .map(|r| {
                SubMachineInstance::new(
                    s.doc.clone(),
                    r.clone(),
                    CorrelationId::new("verify"),
                    BTreeMap::new(),
                    BTreeMap::new(),
                    0,
                )
            })
            .collect();
        Model { doc, roles, templates }
    }

    fn index(&self, role: &str) -> Option<usize> {
        self.roles.iter().position(|r| r == role)
    }

    fn event_of(&self, msg: &Msg) -> Event {
        Event::Message {
            kind: msg.0,
            action: ActionId::new(msg.1.clone().unwrap_or_else(|| self.doc.id.to_string())),
        }
    }

    fn instance(&self, i: usize, pos: &Pos) -> SubMachineInstance {
        let mut inst = self.templates[i].clone();
        inst.position = match pos {
            Pos::Entry => Position::Entry,
            Pos::At(s) => Position::At(s.clone()),
            Pos::Done(l) => Position::Concluded(l.clone()),
        };
        inst
    }

    /// Apply `event` to half `i`; `None` if it is not accepted.
    fn fire(&self, st: &ProductState, i: usize, event: &Event) -> Option<ProductState> {
        let mut inst = self.instance(i, &st.pos[i]);
        if !inst.accepts(event) {
            return None;
        }
        let outcome = inst.step(event).ok()?;
        let mut next = st.clone();
        for p in &outcome.primitives {
            if let Some(s) = p.op().idle_effect(next.idle[i]) {
                next.idle[i] = s;
            }
            if let Primitive::Snd(t) = p {
                if let Some(j) = self.index(&t.to) {
                    let action = match &t.action {
                        None => Some(self.doc.id.to_string()),
                        Some(a) if a.contains('$') => None,
                        Some(a) => Some(a.clone()),
                    };
                    next.chans.entry((i, j)).or_default().push_back((t.kind, action));
                }
            }
        }
        next.pos[i] = match outcome.next {
            Next::State { id, .. } => Pos::At(id),
            Next::Result { label, .. } => Pos::Done(label),
        };
        Some(next)
    }

    fn successors(&self, st: &ProductState) -> Vec<ProductState> {
        let mut out = Vec::new();
        // Reactive timers outlast any message in flight and any admission
        // decision; the leader may give up at any time.
        let deciding = (0..self.roles.len()).any(|i| match &st.pos[i] {
            Pos::At(id) => self.templates[i].def.as_sub().expect("sub").states[&self.roles[i]][id]
                .transitions
                .iter()
                .any(|t| matches!(t.on, Some(EventPattern::Policy(_)))),
            _ => false,
        });
        let quiet = st.chans.values().all(VecDeque::is_empty) && !deciding;
        for (&(from, to), queue) in &st.chans {
            let Some(msg) = queue.front() else { continue };
            let event = self.event_of(msg);
            let mut base = st.clone();
            let q = base.chans.get_mut(&(from, to)).expect("present");
            q.pop_front();
            if q.is_empty() {
                base.chans.remove(&(from, to));
            }
            // unexpected messages are discarded
            out.push(self.fire(&base, to, &event).unwrap_or(base));
        }
        for i in 0..self.roles.len() {
            let inst = self.instance(i, &st.pos[i]);
            let mut events = Vec::new();
            match &st.pos[i] {
                Pos::Entry => match inst.trigger() {
                    None | Some(Trigger::Lli) => events.push(inst.start_event()),
                    Some(Trigger::Message(_)) => {}
                },
                Pos::At(_) => {
                    events.extend([Event::Done, Event::Arrived, Event::Policy(true), Event::Policy(false)]);
                    if quiet || inst.part() == Part::Controlling {
                        events.push(Event::Timeout);
                    }
                }
                Pos::Done(_) => {}
            }
            for e in events {
                if let Some(n) = self.fire(st, i, &e) {
                    out.push(n);
                }
            }
        }
        out
    }
}

fn enumerate_sub(s: &CompiledSub) -> Enumeration {
    let model = Model::new(s);
    let doc = model.doc;
    let mut en = Enumeration::default();
    let initial = ProductState {
        pos: vec![Pos::Entry; model.roles.len()],
        idle: doc.roles.iter().map(|r| r.entry_state).collect(),
        chans: BTreeMap::new(),
    };
    let ctrl = doc
        .controlling_role()
        .and_then(|r| model.index(&r.name))
        .unwrap_or(0);
    let mut visited = BTreeSet::from([initial.clone()]);
    let mut queue = VecDeque::from([initial]);
    let mut stuck = BTreeSet::new();
    while let Some(st) = queue.pop_front() {
        if visited.len() > STATE_BOUND {
            en.diagnostics.push(Diagnostic::error(
                Rule::StateExplosion,
                loc(doc, "$"),
                format!("more than {STATE_BOUND} product states"),
            ));
            break;
        }
        let succ = model.successors(&st);
        if succ.is_empty() {
            let pending: Vec<usize> = (0..model.roles.len())
                .filter(|&i| matches!(st.pos[i], Pos::At(_)))
                .collect();
            if pending.is_empty() {
                if let Pos::Done(label) = &st.pos[ctrl] {
                    let finals = model.roles.iter().cloned().zip(st.idle.iter().copied()).collect();
                    en.outcomes.insert(Outcome::new(std::slice::from_ref(label), finals));
                }
            } else {
                for i in pending {
                    if let Pos::At(id) = &st.pos[i] {
                        stuck.insert((model.roles[i].clone(), id.clone()));
                    }
                }
            }
        }
        for n in succ {
            if visited.insert(n.clone()) {
                queue.push_back(n);
            }
        }
    }
    en.states_explored = visited.len();
    for (role, id) in stuck {
        en.diagnostics.push(Diagnostic::error(
            Rule::DeadlockRisk,
            loc(doc, format!("$.body.states.{role}.{id}")),
            format!("`{role}` can wait here forever once its counterpart has concluded"),
        ));
    }
    let reached: BTreeSet<&str> = en
        .outcomes
        .iter()
        .filter_map(|o| o.result.first().map(String::as_str))
        .collect();
    if let Some(sub) = doc.as_sub() {
        for (i, r) in sub.results.iter().enumerate() {
            if !reached.contains(r.label.to_string().as_str()) {
                en.diagnostics.push(Diagnostic::warning(
                    Rule::UnreachableResult,
                    loc(doc, format!("$.body.results[{i}]")),
                    format!("{} is declared but no execution reaches it", r.label),
                ));
            }
        }
    }
    en
}

fn enumerate_manoeuvre(m: &CompiledManoeuvre) -> Enumeration {
    let doc = m.doc.as_ref();
    let def = m.def();
    let mut en = Enumeration::default();
    let leader = doc
        .controlling_role()
        .map(|r| r.name.clone())
        .unwrap_or_default();
    let mut per_sub: BTreeMap<ActionId, BTreeSet<Outcome>> = BTreeMap::new();
    for (id, s) in &m.subs {
        let sub_en = enumerate_sub(s);
        en.states_explored += sub_en.states_explored;
        en.diagnostics.extend(
            sub_en
                .diagnostics
                .into_iter()
                .filter(|d| d.rule == Rule::StateExplosion),
        );
        per_sub.insert(id.clone(), sub_en.outcomes);
    }

    let initial: BTreeMap<String, IdleState> = doc
        .roles
        .iter()
        .map(|r| (r.name.clone(), r.entry_state))
        .collect();
    let mut visited = BTreeSet::new();
    let mut queue = VecDeque::from([(def.start.clone(), initial)]);
    while let Some((step_id, states)) = queue.pop_front() {
        if !visited.insert((step_id.clone(), states.clone())) {
            continue;
        }
        if visited.len() > STATE_BOUND {
            en.diagnostics.push(Diagnostic::error(
                Rule::StateExplosion,
                loc(doc, "$.body.steps"),
                format!("more than {STATE_BOUND} step configurations"),
            ));
            break;
        }
        let step = &def.steps[&step_id];
        let invokes = step.invoke.invokes();
        let choices: Vec<Vec<(ResultLabel, BTreeMap<String, IdleState>)>> = invokes
            .iter()
            .map(|inv| {
                let sub = &m.subs[&inv.action];
                per_sub[&inv.action]
                    .iter()
                    .map(|o| {
                        let label: ResultLabel = o.result[0].parse().expect("labels render canonically");
                        let mapped = o
                            .finals
                            .iter()
                            .filter_map(|(role, s)| {
                                let m_role = if *role == sub.controlling {
                                    Some(leader.clone())
                                } else {
                                    inv.participants.get(role).cloned()
                                };
                                m_role.map(|r| (r, *s))
                            })
                            .collect();
                        (label, mapped)
                    })
                    .collect()
            })
            .collect();
        for combo in cartesian(&choices) {
            let key: ResultKey = combo.iter().map(|(l, _)| l.clone()).collect();
            let mut next = states.clone();
            for (_, finals) in &combo {
                next.extend(finals.iter().map(|(k, v)| (k.clone(), *v)));
            }
            match step.next_for(&key) {
                Some(NextTarget::Step(s)) => queue.push_back((s.clone(), next)),
                Some(NextTarget::Terminate) => {
                    en.outcomes.insert(Outcome::new(&key, next));
                }
                None => en.diagnostics.push(Diagnostic::error(
                    Rule::MissingNext,
                    loc(doc, format!("$.body.steps.{step_id}.next")),
                    format!("reachable result {key:?} has no next entry"),
                )),
            }
        }
    }
    en.states_explored += visited.len();
    en
}
