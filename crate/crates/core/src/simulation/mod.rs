//! Deterministic discrete-event world: fixed-step clock, lossy V2V bus,
//! longitudinal kinematics realising MTP and SH, and the JSONL trace.
//!
//! Each tick at time `t` processes deliveries, then timers, then scripted
//! LLI commands, then arrival checks, and finally advances physics to
//! `t + dt`.

mod config;
mod trace;
mod world;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value as Json};

pub use config::{ConfigError, ObstacleSpec, PlatoonSpec, RequestSpec, Scenario, ScriptEntry, SimConfig, VehicleSpec};
pub use trace::{Trace, TraceRecord};
pub use world::{Body, PhysicalEvent, VehicleState, World};

use crate::mdl::{Binding, Library, Part};
use crate::runtime::{secs_to_millis, timer_name, Admission, AgentConfig, Effect, Millis, PhysicalTarget, TimerKey, VehicleAgent, WorldView};
use crate::statemachine::Event;
use crate::types::{ActionId, CorrelationId, IdleState, Message, VehicleId};
use crate::verification::Outcome;

/// Single injected fault, counted in order of occurrence from 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Faults {
    /// Drop the n-th sent message.
    pub drop_message: Option<usize>,
    /// Fire the n-th armed timer right away instead of at its deadline.
    pub force_timer: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub seed: u64,
    pub faults: Faults,
}

pub enum Delivery {
    Scheduled(Millis),
    Dropped,
}

/// V2V channel with constant latency and Bernoulli loss.
#[derive(Debug, Clone)]
pub struct Bus {
    rng: ChaCha8Rng,
    latency: Millis,
    drop_probability: f64,
    queue: BTreeMap<(Millis, u64), Message>,
    next: u64,
}

impl Bus {
    pub fn new(seed: u64, latency: f64, drop_probability: f64) -> Bus {
        Bus {
            rng: ChaCha8Rng::seed_from_u64(seed),
            latency: secs_to_millis(latency),
            drop_probability,
            queue: BTreeMap::new(),
            next: 0,
        }
    }

    /// Schedule `msg` at `now + latency` unless the channel loses it.
    pub fn deliver(&mut self, msg: Message, now: Millis) -> Delivery {
        let lost = match self.drop_probability {
            p if p <= 0.0 => false,
            p if p >= 1.0 => true,
            p => self.rng.gen::<f64>() < p,
        };
        if lost {
            return Delivery::Dropped;
        }
        let at = now + self.latency;
        self.queue.insert((at, self.next), msg);
        self.next += 1;
        Delivery::Scheduled(at)
    }

    pub fn pop_due(&mut self, now: Millis) -> Option<Message> {
        let key = *self.queue.keys().next().filter(|(at, _)| *at <= now)?;
        self.queue.remove(&key)
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }
}

/// Result and final idle states of one manoeuvre run, keyed by role.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Observation {
    pub manoeuvre: ActionId,
    pub outcome: Outcome,
    /// Only some roles could be observed (the request never reached a
    /// leader that started the manoeuvre).
    pub partial: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceSummary {
    pub manoeuvre: ActionId,
    pub leader: VehicleId,
    pub result: Vec<String>,
    pub success: bool,
    pub duration: f64,
    pub messages: usize,
    pub aborts: usize,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub trace: Trace,
    pub quiescent: bool,
    pub end_time: f64,
    pub finals: BTreeMap<VehicleId, IdleState>,
    pub violations: Vec<String>,
    pub observations: Vec<Observation>,
    pub summary: Vec<InstanceSummary>,
    pub messages_sent: usize,
    pub timers_armed: usize,
    pub min_gap: f64,
    pub world: World,
}

impl RunReport {
    pub fn all_stable(&self) -> bool {
        self.finals.values().all(|s| s.is_stable())
    }
}

fn detail<const N: usize>(pairs: [(&str, Json); N]) -> BTreeMap<String, Json> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn message_detail(m: &Message) -> BTreeMap<String, Json> {
    detail([
        ("kind", json!(m.kind.as_str())),
        ("action", json!(m.action.as_str())),
        ("to", json!(m.receivers)),
        ("correlation", json!(m.correlation.as_str())),
        ("payload", serde_json::to_value(&m.payload).expect("payload serializes")),
    ])
}

fn target_json(t: &Option<PhysicalTarget>) -> Json {
    match t {
        None => Json::Null,
        Some(PhysicalTarget::Position { target, offset, lane }) => {
            json!({"mtp": target.as_str(), "offset": offset, "lane": lane})
        }
        Some(PhysicalTarget::TimeHeadway(th)) => json!({"time_headway": th}),
        Some(PhysicalTarget::SpaceHeadway(g)) => json!({"space_headway": g}),
    }
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

struct Sim {
    world: World,
    agents: BTreeMap<VehicleId, VehicleAgent>,
    bus: Bus,
    trace: Trace,
    now: Millis,
    faults: Faults,
    sent: usize,
    armed: usize,
    forced: Option<(VehicleId, TimerKey, Millis)>,
}

impl Sim {
    fn apply(&mut self, v: &VehicleId, effects: Vec<Effect>) {
        for e in effects {
            match e {
                Effect::Send(m) => {
                    let index = self.sent;
                    self.sent += 1;
                    let mut d = message_detail(&m);
                    self.trace.push(self.now, v.as_str(), "msg-sent", d.clone());
                    if self.faults.drop_message == Some(index) {
                        d.insert("injected".into(), json!(true));
                        self.trace.push(self.now, v.as_str(), "msg-dropped", d);
                        continue;
                    }
                    if let Delivery::Dropped = self.bus.deliver(m, self.now) {
                        self.trace.push(self.now, v.as_str(), "msg-dropped", d);
                    }
                }
                Effect::Target(t) => {
                    self.trace.push(self.now, v.as_str(), "target", detail([("target", target_json(&t))]));
                    self.world.set_target(v, t);
                }
                Effect::SetLeader(l) => {
                    self.world.set_leader(v, l.clone());
                    self.trace.push(self.now, v.as_str(), "membership", detail([("leader", json!(l))]));
                }
                Effect::Split => {
                    let tentative: BTreeSet<VehicleId> = self
                        .agents
                        .iter()
                        .filter(|(id, a)| *id != v && a.idle() == IdleState::Tpl)
                        .map(|(id, _)| id.clone())
                        .collect();
                    self.world.split(v, &tentative);
                    let members = self.world.members(v);
                    self.trace.push(self.now, v.as_str(), "membership", detail([("split", json!(members))]));
                }
                Effect::Merge(l) => {
                    self.world.merge(v, &l);
                    self.trace.push(self.now, v.as_str(), "membership", detail([("leader", json!(l))]));
                }
                Effect::Upi => {
                    let members = self.world.publish(v);
                    self.trace.push(self.now, v.as_str(), "membership", detail([("published", json!(members))]));
                }
                Effect::TimerArmed { key, deadline } => {
                    if self.faults.force_timer == Some(self.armed) {
                        self.forced = Some((v.clone(), key.clone(), deadline));
                    }
                    self.armed += 1;
                    self.trace.push(
                        self.now,
                        v.as_str(),
                        "timer",
                        detail([("timer", json!(timer_name(&key))), ("deadline", json!(deadline as f64 / 1000.0))]),
                    );
                }
                Effect::Trace { kind, detail } => self.trace.push(self.now, v.as_str(), kind, detail),
            }
        }
    }

    fn with_agent(&mut self, v: &VehicleId, f: impl FnOnce(&mut VehicleAgent, &World) -> Vec<Effect>) {
        let Some(agent) = self.agents.get_mut(v) else { return };
        let effects = f(agent, &self.world);
        self.apply(v, effects);
    }

    fn deliveries(&mut self) {
        while let Some(m) = self.bus.pop_due(self.now) {
            for r in m.receivers.clone() {
                self.trace.push(self.now, r.as_str(), "msg-delivered", message_detail(&m));
                let now = self.now;
                self.with_agent(&r, |a, w| a.on_message(now, w, &m));
            }
        }
    }

    fn timers(&mut self) {
        if let Some((v, key, deadline)) = self.forced.take() {
            let armed = self.agents.get(&v).and_then(|a| a.timers().get(&key).copied());
            if armed == Some(deadline) {
                self.trace.push(self.now, v.as_str(), "fault", detail([("forced_timer", json!(timer_name(&key)))]));
                let now = self.now;
                self.with_agent(&v, |a, w| a.fire_timer(now, w, &key));
            }
        }
        loop {
            let due: Vec<(VehicleId, TimerKey)> = self
                .agents
                .iter()
                .flat_map(|(id, a)| a.due_timers(self.now).into_iter().map(move |k| (id.clone(), k)))
                .collect();
            if due.is_empty() {
                break;
            }
            for (v, key) in due {
                let now = self.now;
                self.with_agent(&v, |a, w| a.fire_timer(now, w, &key));
            }
        }
    }

    fn script(&mut self, entry: &ScriptEntry) {
        let now = self.now;
        let v = entry.vehicle.clone();
        let Some(agent) = self.agents.get_mut(&v) else { return };
        let result = match &entry.request {
            Some(r) => agent.request(now, &self.world, &entry.action, r.leader.clone(), r.fields.clone()),
            None => agent.initiate(now, &self.world, &entry.action, entry.bindings.clone(), entry.params.clone()),
        };
        match result {
            Ok(effects) => self.apply(&v, effects),
            Err(e) => self.trace.push(
                now,
                v.as_str(),
                "lli-rejected",
                detail([("action", json!(entry.action)), ("code", json!(e.code())), ("message", json!(e.to_string()))]),
            ),
        }
    }

    fn arrivals(&mut self) {
        let ids: Vec<VehicleId> = self.world.vehicles.keys().cloned().collect();
        for v in ids {
            if let Some(ev) = self.world.arrival_check(&v) {
                let (kind, event) = match ev {
                    PhysicalEvent::Arrived => ("arrived", Event::Arrived),
                    PhysicalEvent::Done => ("done", Event::Done),
                };
                self.trace.push(self.now, v.as_str(), kind, BTreeMap::new());
                let now = self.now;
                self.with_agent(&v, |a, w| a.on_physical(now, w, event));
            }
        }
    }

    fn sample(&mut self) {
        let rows: Vec<(VehicleId, Body)> = self
            .world
            .vehicles
            .iter()
            .map(|(id, s)| (id.clone(), s.body.clone()))
            .chain(self.world.obstacles.iter().map(|(id, b)| (id.clone(), b.clone())))
            .collect();
        for (id, b) in rows {
            self.trace.push(
                self.now,
                id.as_str(),
                "physics-sample",
                detail([("lane", json!(b.lane)), ("s", json!(round3(b.s))), ("v", json!(round3(b.v)))]),
            );
        }
    }

    fn quiescent(&self, script_done: bool) -> bool {
        script_done
            && self.forced.is_none()
            && self.bus.is_empty()
            && self.agents.values().all(|a| !a.is_active())
            && self.world.targets_settled()
    }
}

/// Build the world and agents of `scenario`.
fn setup(scenario: &Scenario, config: &SimConfig, library: &Arc<Library>) -> (World, BTreeMap<VehicleId, VehicleAgent>) {
    let mut world = World::new(config.clone());
    let mut agents = BTreeMap::new();
    for o in &scenario.obstacles {
        world.obstacles.insert(o.id.clone(), Body { lane: o.lane, s: o.s, v: o.v });
    }
    for v in &scenario.vehicles {
        let platoon = scenario
            .platoons
            .iter()
            .find(|p| p.leader == v.id || scenario.followers(p).any(|m| *m == v.id));
        let d = platoon.and_then(|p| p.d).unwrap_or(config.d);
        let big_d = platoon.and_then(|p| p.big_d).unwrap_or(config.big_d);
        world.add_vehicle(v.id.clone(), Body { lane: v.lane, s: v.s, v: v.v }, None);
        let cfg = AgentConfig {
            d,
            big_d,
            controlling_timeout: config.controlling_timeout,
            superstate_timeout: config.superstate_timeout,
            admission: Admission {
                max_platoon_size: config.max_platoon_size,
                accept: v.accept,
            },
        };
        agents.insert(v.id.clone(), VehicleAgent::new(v.id.clone(), v.role, Arc::clone(library), cfg));
    }
    for p in &scenario.platoons {
        for m in scenario.followers(p) {
            world.leader_of.insert(m.clone(), p.leader.clone());
        }
    }
    for p in &scenario.platoons {
        world.publish(&p.leader);
    }
    // Followers start by holding the gap they were placed at.
    for v in scenario.vehicles.iter().filter(|v| v.role == IdleState::Pf) {
        let gap = world.predecessor(&v.id).map(|p| p.s - v.s);
        world.set_target(&v.id, gap.map(PhysicalTarget::SpaceHeadway));
        if let Some(st) = world.vehicles.get_mut(&v.id) {
            st.reached = true;
        }
    }
    (world, agents)
}

/// Run `scenario` until quiescence or the horizon.
pub fn run(scenario: &Scenario, config: &SimConfig, library: &Arc<Library>, options: RunOptions) -> RunReport {
    let (world, agents) = setup(scenario, config, library);
    let mut sim = Sim {
        world,
        agents,
        bus: Bus::new(options.seed, config.latency, config.drop_probability),
        trace: Trace::default(),
        now: 0,
        faults: options.faults,
        sent: 0,
        armed: 0,
        forced: None,
    };
    let dt = secs_to_millis(config.dt).max(1);
    let t_max = secs_to_millis(scenario.t_max.unwrap_or(config.t_max));
    let sample = secs_to_millis(config.sample_interval);
    let mut script: Vec<(Millis, usize)> = scenario
        .script
        .iter()
        .enumerate()
        .map(|(i, e)| (secs_to_millis(e.t), i))
        .collect();
    script.sort();
    let mut script = script.into_iter().peekable();
    let mut next_sample = 0;
    let quiescent = loop {
        sim.deliveries();
        sim.timers();
        while let Some(&(at, i)) = script.peek() {
            if at > sim.now {
                break;
            }
            script.next();
            sim.script(&scenario.script[i]);
        }
        sim.arrivals();
        if sample > 0 && sim.now >= next_sample {
            sim.sample();
            next_sample += sample;
        }
        if sim.quiescent(script.peek().is_none()) {
            break true;
        }
        if sim.now >= t_max {
            break false;
        }
        sim.world.advance_physics(config.dt);
        sim.now += dt;
    };
    let finals: BTreeMap<VehicleId, IdleState> = sim.agents.iter().map(|(id, a)| (id.clone(), a.idle())).collect();
    let violations = sim.world.membership_violations(&finals);
    sim.trace.push(
        sim.now,
        "world",
        if quiescent { "quiescent" } else { "non-quiescent" },
        detail([
            ("finals", json!(finals)),
            ("violations", json!(violations)),
        ]),
    );
    let observations = observe(&sim, library, &finals);
    let summary = summarise(&sim);
    RunReport {
        end_time: sim.now as f64 / 1000.0,
        quiescent,
        finals,
        violations,
        observations,
        summary,
        messages_sent: sim.sent,
        timers_armed: sim.armed,
        min_gap: sim.world.min_gap_seen,
        trace: sim.trace,
        world: sim.world,
    }
}

fn observe(sim: &Sim, library: &Library, finals: &BTreeMap<VehicleId, IdleState>) -> Vec<Observation> {
    let mut out = BTreeSet::new();
    let mut served = BTreeSet::new();
    for agent in sim.agents.values() {
        for r in agent.manoeuvres() {
            if let Some(c) = &r.request {
                served.insert(c.clone());
            }
            let roles = r.bindings.iter().map(|(role, v)| (role.clone(), finals[v])).collect();
            out.insert(Observation {
                manoeuvre: r.manoeuvre.clone(),
                outcome: Outcome::new(&r.key, roles),
                partial: false,
            });
        }
    }
    for (id, agent) in &sim.agents {
        for r in agent.requests() {
            let (Some(label), Some(m)) = (&r.label, library.manoeuvre(&r.manoeuvre)) else { continue };
            if served.contains(&r.correlation) {
                continue;
            }
            let mut roles = BTreeMap::new();
            for role in &m.doc.roles {
                let v = match (role.part, &role.bind) {
                    (Part::Controlling, _) => &r.leader,
                    (_, Some(Binding::Requester)) => id,
                    _ => continue,
                };
                if let Some(s) = finals.get(v) {
                    roles.insert(role.name.clone(), *s);
                }
            }
            out.insert(Observation {
                manoeuvre: r.manoeuvre.clone(),
                outcome: Outcome::new(std::slice::from_ref(label), roles),
                partial: true,
            });
        }
    }
    out.into_iter().collect()
}

fn summarise(sim: &Sim) -> Vec<InstanceSummary> {
    let mut per_corr: BTreeMap<&str, usize> = BTreeMap::new();
    for r in sim.trace.of_kind("msg-sent") {
        if let Some(c) = r.str("correlation") {
            *per_corr.entry(c).or_default() += 1;
        }
    }
    let mut out = Vec::new();
    for (leader, agent) in &sim.agents {
        for r in agent.manoeuvres() {
            let labels = r.history.iter().flat_map(|(_, k)| k.iter());
            let aborts = labels.clone().filter(|l| !l.is_success()).count();
            out.push(InstanceSummary {
                manoeuvre: r.manoeuvre.clone(),
                leader: leader.clone(),
                result: r.key.iter().map(|l| l.to_string()).collect(),
                success: aborts == 0,
                duration: (r.finished_at - r.started_at) as f64 / 1000.0,
                messages: r.correlations.iter().map(|c| per_corr.get(c.as_str()).copied().unwrap_or(0)).sum(),
                aborts,
            });
        }
    }
    let served: BTreeSet<&CorrelationId> = sim.agents.values().flat_map(|a| a.manoeuvres()).filter_map(|r| r.request.as_ref()).collect();
    for agent in sim.agents.values() {
        for r in agent.requests().iter().filter(|r| !served.contains(&r.correlation)) {
            let label = r.label.as_ref().map(|l| l.to_string()).unwrap_or_else(|| "none".into());
            out.push(InstanceSummary {
                manoeuvre: r.manoeuvre.clone(),
                leader: r.leader.clone(),
                success: false,
                result: vec![label],
                duration: (r.answered_at.unwrap_or(sim.now) - r.requested_at) as f64 / 1000.0,
                messages: per_corr.get(r.correlation.as_str()).copied().unwrap_or(0),
                aborts: 1,
            });
        }
    }
    out
}

/// Does an enumerated outcome agree with `obs` on every observed role?
pub fn covered(obs: &Observation, outcomes: &BTreeSet<Outcome>) -> bool {
    if !obs.partial {
        return outcomes.contains(&obs.outcome);
    }
    outcomes.iter().any(|o| {
        o.result == obs.outcome.result && obs.outcome.finals.iter().all(|(r, s)| o.finals.get(r) == Some(s))
    })
}
