mod common;

use std::collections::BTreeMap;

use sead::runtime::{Admission, AgentConfig, Effect, VehicleAgent, WorldView};
use sead::types::{ActionId, CorrelationId, IdleState, Message, MessageKind, Payload, Value, VehicleId};

fn v(id: &str) -> VehicleId {
    VehicleId::new(id)
}

/// Platoons as fixed member lists, everything in lane 0.
struct Platoons(Vec<Vec<&'static str>>);

impl WorldView for Platoons {
    fn members(&self, leader: &VehicleId) -> Vec<VehicleId> {
        self.0
            .iter()
            .find(|p| p[0] == leader.as_str())
            .map(|p| p.iter().map(|m| v(m)).collect())
            .unwrap_or_else(|| vec![leader.clone()])
    }

    fn leader_of(&self, id: &VehicleId) -> Option<VehicleId> {
        self.0.iter().find(|p| p[1..].contains(&id.as_str())).map(|p| v(p[0]))
    }

    fn lane(&self, _: &VehicleId) -> Option<i64> {
        Some(0)
    }
}

fn world() -> Platoons {
    Platoons(vec![vec!["V1", "V2", "V3"]])
}

fn agent(id: &str, idle: IdleState) -> VehicleAgent {
    VehicleAgent::new(v(id), idle, common::library(), AgentConfig::default())
}

fn sent(effects: &[Effect]) -> Vec<(MessageKind, String)> {
    effects
        .iter()
        .filter_map(|e| match e {
            Effect::Send(m) => Some((m.kind, m.action.to_string())),
            _ => None,
        })
        .collect()
}

fn gapclose(agent: &mut VehicleAgent, b: &str) -> Result<Vec<Effect>, sead::runtime::InitError> {
    let params = Payload::from([("gap".to_string(), Value::Str("$d".into()))]);
    agent.initiate(0, &world(), "GAPCLOSE", BTreeMap::from([("B".to_string(), v(b))]), params)
}

fn join_request(to: &str) -> Message {
    Message {
        kind: MessageKind::Req,
        action: ActionId::new("JOIN_TAIL"),
        sender: v("V9"),
        receivers: vec![v(to)],
        correlation: CorrelationId::new("V9#1"),
        payload: Payload::from([("manoeuvre".to_string(), Value::Str("JOIN_TAIL".into()))]),
    }
}

#[test]
fn leader_initiates_and_sends_the_order() {
    let mut a = agent("V1", IdleState::Pl);
    let out = gapclose(&mut a, "V3").unwrap();
    assert_eq!(sent(&out), [(MessageKind::Ord, "GAPCLOSE".to_string())]);
    assert!(a.is_active());
    assert!(!a.timers().is_empty());
}

#[test]
fn followers_cannot_initiate() {
    let mut a = agent("V2", IdleState::Pf);
    assert_eq!(gapclose(&mut a, "V3").unwrap_err().code(), "NOT_LEADER");
}

#[test]
fn leader_cannot_order_a_stranger() {
    let mut a = agent("V1", IdleState::Pl);
    assert_eq!(gapclose(&mut a, "V7").unwrap_err().code(), "NON_FOLLOWER_DIRECT_INIT");
}

#[test]
fn requested_manoeuvres_cannot_be_initiated_by_the_leader() {
    let mut a = agent("V1", IdleState::Pl);
    let err = a
        .initiate(0, &world(), "JOIN_TAIL", BTreeMap::from([("J".to_string(), v("V9"))]), Payload::new())
        .unwrap_err();
    assert_eq!(err.code(), "NON_FOLLOWER_DIRECT_INIT");
}

#[test]
fn second_initiation_is_busy() {
    let mut a = agent("V1", IdleState::Pl);
    gapclose(&mut a, "V3").unwrap();
    assert_eq!(gapclose(&mut a, "V2").unwrap_err().code(), "BUSY");
}

#[test]
fn request_is_acknowledged_when_admitted() {
    let mut a = agent("V1", IdleState::Pl);
    let out = a.on_message(100, &world(), &join_request("V1"));
    assert_eq!(sent(&out)[0].0, MessageKind::Ack);
}

#[test]
fn request_while_busy_is_refused() {
    let mut a = agent("V1", IdleState::Pl);
    gapclose(&mut a, "V3").unwrap();
    let out = a.on_message(100, &world(), &join_request("V1"));
    assert_eq!(sent(&out), [(MessageKind::Nack, "JOIN_TAIL".to_string())]);
}

#[test]
fn request_to_a_full_platoon_is_refused() {
    let config = AgentConfig { admission: Admission { max_platoon_size: 3, accept: true }, ..AgentConfig::default() };
    let mut a = VehicleAgent::new(v("V1"), IdleState::Pl, common::library(), config);
    let out = a.on_message(100, &world(), &join_request("V1"));
    assert_eq!(sent(&out), [(MessageKind::Nack, "JOIN_TAIL".to_string())]);
}

#[test]
fn scripted_rejection_is_refused() {
    let config = AgentConfig { admission: Admission { max_platoon_size: 8, accept: false }, ..AgentConfig::default() };
    let mut a = VehicleAgent::new(v("V1"), IdleState::Pl, common::library(), config);
    let out = a.on_message(100, &world(), &join_request("V1"));
    assert_eq!(sent(&out), [(MessageKind::Nack, "JOIN_TAIL".to_string())]);
}

fn order(kind: MessageKind) -> Message {
    Message {
        kind,
        action: ActionId::new("GAPCLOSE"),
        sender: v("V1"),
        receivers: vec![v("V3")],
        correlation: CorrelationId::new("V1#1"),
        payload: Payload::from([("gap".to_string(), Value::Number(6.0))]),
    }
}

#[test]
fn forced_split_promotes_a_temporary_leader() {
    let mut b = agent("V3", IdleState::Pf);
    b.on_message(100, &world(), &order(MessageKind::Ord));
    assert_eq!(b.idle(), IdleState::Tpl);
    let out = b.on_message(200, &world(), &order(MessageKind::TmplSplit));
    assert!(out.contains(&Effect::Split));
    assert_eq!(b.idle(), IdleState::Pl);
    assert!(b.reactive().is_none());
}

#[test]
fn forced_split_is_ignored_outside_tpl() {
    let mut b = agent("V3", IdleState::Pf);
    let out = b.on_message(100, &world(), &order(MessageKind::TmplSplit));
    assert!(!out.contains(&Effect::Split));
    assert_eq!(b.idle(), IdleState::Pf);
}

#[test]
fn free_vehicle_request_waits_for_the_answer() {
    let mut j = agent("V9", IdleState::Fv);
    let out = j.request(0, &world(), "JOIN_TAIL", v("V1"), Payload::new()).unwrap();
    assert_eq!(sent(&out), [(MessageKind::Req, "JOIN_TAIL".to_string())]);
    assert_eq!(j.idle(), IdleState::Wfv);
    assert_eq!(j.requests().len(), 1);
}

#[test]
fn lli_is_gated_on_stable_states() {
    let mut j = agent("V9", IdleState::Fv);
    j.request(0, &world(), "JOIN_TAIL", v("V1"), Payload::new()).unwrap();
    let err = j.request(10, &world(), "JOIN_TAIL", v("V1"), Payload::new()).unwrap_err();
    assert!(matches!(err.code(), "BUSY" | "UNSTABLE"));
    let mut f = agent("V2", IdleState::Pf);
    let err = f.request(0, &world(), "JOIN_TAIL", v("V1"), Payload::new()).unwrap_err();
    assert_eq!(err.code(), "NON_FOLLOWER_DIRECT_INIT");
    let mut w = agent("V8", IdleState::Wfv);
    assert_eq!(w.request(0, &world(), "JOIN_TAIL", v("V1"), Payload::new()).unwrap_err().code(), "UNSTABLE");
}

#[test]
fn stale_abort_after_conclusion_is_ignored() {
    let mut b = agent("V3", IdleState::Pf);
    b.on_message(100, &world(), &order(MessageKind::Ord));
    b.on_message(200, &world(), &order(MessageKind::Abt));
    assert_eq!(b.idle(), IdleState::Pl);
    let out = b.on_message(300, &world(), &order(MessageKind::Abt));
    assert!(sent(&out).is_empty());
    assert!(!out.contains(&Effect::Split));
}
