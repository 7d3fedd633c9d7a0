use std::collections::BTreeMap;
use std::sync::Arc;

use sead::catalogue::builtin_registry;
use sead::mdl::{MdlDocument, Registry};
use sead::statemachine::{step, wrap_sim, Event, Next, NextAction, ManoeuvreInstance, SubMachineInstance};
use sead::types::{ActionId, CorrelationId, Headway, IdleState, MessageKind, Payload, Primitive, ResultLabel, Value, VehicleId};

fn doc(reg: &Registry, id: &str) -> Arc<MdlDocument> {
    Arc::clone(reg.get(id).unwrap())
}

fn half(reg: &Registry, id: &str, role: &str, corr: &str, pairs: &[(&str, &str)]) -> SubMachineInstance {
    let participants = pairs.iter().map(|(r, v)| (r.to_string(), VehicleId::new(*v))).collect();
    let params = Payload::from([("gap".to_string(), Value::Number(6.0))]);
    SubMachineInstance::new(doc(reg, id), role, CorrelationId::new(corr), participants, params, 0)
}

fn msg(kind: MessageKind, action: &str) -> Event {
    Event::Message { kind, action: ActionId::new(action) }
}

#[test]
fn gapclose_reactive_entry_becomes_temporary_leader() {
    let reg = builtin_registry();
    let mut b = half(&reg, "GAPCLOSE", "B", "V1#1", &[("A", "V1"), ("B", "V3")]);
    let out = step(&mut b, &msg(MessageKind::Ord, "GAPCLOSE")).unwrap();
    assert_eq!(out.primitives[0], Primitive::Btl);
    assert!(matches!(out.primitives[1], Primitive::Sh(Headway::Space(_))));
    assert_eq!(out.primitives.len(), 2);
    assert!(matches!(out.next, Next::State { ref id, .. } if id == "B2"));
}

#[test]
fn gapclose_reactive_abort_splits() {
    let reg = builtin_registry();
    let mut b = half(&reg, "GAPCLOSE", "B", "V1#1", &[("A", "V1"), ("B", "V3")]);
    step(&mut b, &msg(MessageKind::Ord, "GAPCLOSE")).unwrap();
    let out = step(&mut b, &msg(MessageKind::Abt, "GAPCLOSE")).unwrap();
    assert_eq!(out.primitives, vec![Primitive::Bpl]);
    assert_eq!(out.next, Next::Result { label: ResultLabel::Abort(1), final_state: IdleState::Pl });
}

#[test]
fn gapclose_controller_concludes_on_done() {
    let reg = builtin_registry();
    let mut a = half(&reg, "GAPCLOSE", "A", "V1#1", &[("A", "V1"), ("B", "V3")]);
    let start = step(&mut a, &Event::Start).unwrap();
    assert!(matches!(start.primitives[0], Primitive::Snd(ref t) if t.kind == MessageKind::Ord));
    let out = step(&mut a, &msg(MessageKind::Dn, "GAPCLOSE")).unwrap();
    assert_eq!(out.next, Next::Result { label: ResultLabel::Success, final_state: IdleState::Pl });
}

#[test]
fn unexpected_event_is_reported_not_fatal() {
    let reg = builtin_registry();
    let mut a = half(&reg, "GAPCLOSE", "A", "V1#1", &[("A", "V1"), ("B", "V3")]);
    step(&mut a, &Event::Start).unwrap();
    let err = step(&mut a, &Event::Arrived).unwrap_err();
    assert_eq!(err.code(), "UNEXPECTED_EVENT");
    // The instance is still usable.
    assert!(step(&mut a, &msg(MessageKind::Dn, "GAPCLOSE")).is_ok());
}

#[test]
fn sim_wrapper_outcomes_are_the_cartesian_product() {
    let reg = builtin_registry();
    let a = half(&reg, "GAPOPEN", "A", "V1#1", &[("A", "V1"), ("B", "V2")]);
    let b = half(&reg, "GAPOPEN", "A", "V1#2", &[("A", "V1"), ("B", "V4")]);
    let w = wrap_sim(vec![a, b]).unwrap();
    let set = w.outcome_set();
    assert_eq!(set.len(), 4);
    let rs = ResultLabel::Success;
    let ra = ResultLabel::Abort(1);
    for t in [[rs.clone(), rs.clone()], [rs.clone(), ra.clone()], [ra.clone(), rs.clone()], [ra.clone(), ra.clone()]] {
        assert!(set.contains(&t.to_vec()), "{t:?}");
    }
}

#[test]
fn sim_wrapper_rejects_shared_vehicle_and_single_child() {
    let reg = builtin_registry();
    let a = half(&reg, "GAPOPEN", "A", "V1#1", &[("A", "V1"), ("B", "V2")]);
    let b = half(&reg, "GAPOPEN", "A", "V1#2", &[("A", "V1"), ("B", "V2")]);
    assert_eq!(wrap_sim(vec![a.clone(), b]).unwrap_err().code(), "SIM_PARTICIPANT_OVERLAP");
    assert_eq!(wrap_sim(vec![a.clone()]).unwrap_err().code(), "SIM_ARITY");
    let other = half(&reg, "GAPOPEN", "A", "V7#1", &[("A", "V7"), ("B", "V8")]);
    assert_eq!(wrap_sim(vec![a, other]).unwrap_err().code(), "SIM_DIFFERENT_LEADER");
}

#[test]
fn sim_wrapper_completes_with_ordered_tuple() {
    let reg = builtin_registry();
    let a = half(&reg, "GAPOPEN", "A", "V1#1", &[("A", "V1"), ("B", "V2")]);
    let b = half(&reg, "GAPOPEN", "A", "V1#2", &[("A", "V1"), ("B", "V4")]);
    let mut w = wrap_sim(vec![a, b]).unwrap();
    w.record(1, ResultLabel::Success);
    assert!(w.outcome().is_none());
    w.record(0, ResultLabel::Abort(1));
    assert_eq!(w.outcome().unwrap(), vec![ResultLabel::Abort(1), ResultLabel::Success]);
}

fn join_tail() -> (Registry, ManoeuvreInstance) {
    let reg = builtin_registry();
    let bindings = BTreeMap::from([("P".to_string(), VehicleId::new("V1")), ("J".to_string(), VehicleId::new("V4"))]);
    let m = ManoeuvreInstance::new(doc(&reg, "JOIN_TAIL"), bindings);
    (reg, m)
}

#[test]
fn join_tail_chains_negotiate_movetopos_attach() {
    let (reg, mut m) = join_tail();
    let subs = |id: &ActionId| reg.get(id.as_str()).cloned();
    let first = m.invokes(&subs).unwrap();
    assert_eq!(first[0].action.as_str(), "NEGOTIATE");
    let next = m.advance_manoeuvre(&[ResultLabel::Success], &subs).unwrap();
    let NextAction::Invoke { invokes, .. } = next else { panic!("expected an invocation") };
    assert_eq!(invokes[0].action.as_str(), "MOVETOPOS");
    assert_eq!(invokes[0].participants["B"], VehicleId::new("V4"));
    assert_eq!(invokes[0].participants["A"], VehicleId::new("V1"));
    assert_eq!(invokes[0].params["target"], Value::Str("$tail".into()));
    assert_eq!(invokes[0].params["offset"], Value::Str("-$d".into()));
    let NextAction::Invoke { invokes, .. } = m.advance_manoeuvre(&[ResultLabel::Success], &subs).unwrap() else {
        panic!("expected ATTACH")
    };
    assert_eq!(invokes[0].action.as_str(), "ATTACH");
    assert_eq!(m.advance_manoeuvre(&[ResultLabel::Success], &subs).unwrap(), NextAction::Terminate);
    assert_eq!(m.history.len(), 3);
}

#[test]
fn join_tail_rejection_terminates_at_once() {
    let (reg, mut m) = join_tail();
    let subs = |id: &ActionId| reg.get(id.as_str()).cloned();
    let abort = ResultLabel::Abort(1);
    assert_eq!(m.advance_manoeuvre(&[abort], &subs).unwrap(), NextAction::Terminate);
    assert!(m.terminated);
    assert!(m.advance_manoeuvre(&[ResultLabel::Success], &subs).is_err());
}

#[test]
fn undeclared_result_is_an_error() {
    let (reg, mut m) = join_tail();
    let subs = |id: &ActionId| reg.get(id.as_str()).cloned();
    let ra7: ResultLabel = "RA7".parse().unwrap();
    let err = m.advance_manoeuvre(&[ra7], &subs).unwrap_err();
    assert!(err.to_string().starts_with("UNDECLARED_RESULT"));
}

#[test]
fn identical_event_sequences_give_identical_histories() {
    let reg = builtin_registry();
    let events = [Event::Start, msg(MessageKind::Abt, "GAPCLOSE"), Event::Timeout];
    let trace = || {
        let mut a = half(&reg, "GAPCLOSE", "A", "V1#1", &[("A", "V1"), ("B", "V3")]);
        events.iter().map(|e| step(&mut a, e).map(|o| (o.entered, o.next)).ok()).collect::<Vec<_>>()
    };
    assert_eq!(trace(), trace());
}
