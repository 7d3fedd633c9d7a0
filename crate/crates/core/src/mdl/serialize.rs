//! Canonical MDL rendering: sorted keys, two-space indent, trailing newline,
//! and a content digest so any later edit is detectable.

use serde_json::{json, Map, Value as Json};
use sha2::{Digest, Sha256};

use super::document::*;
use super::parse::{DIGEST_KEY, MDL_VERSION};
use crate::types::{Headway, Payload, Primitive, Value};

pub fn serialize(doc: &MdlDocument) -> Vec<u8> {
    let mut root = to_json(doc);
    root.as_object_mut()
        .expect("document is an object")
        .insert(DIGEST_KEY.to_string(), Json::String(digest(doc)));
    render(&root)
}

pub fn serialize_string(doc: &MdlDocument) -> String {
    String::from_utf8(serialize(doc)).expect("serde_json writes utf-8")
}

/// SHA-256 over the canonical rendering without the digest key.
pub fn digest(doc: &MdlDocument) -> String {
    let bytes = render(&to_json(doc));
    hex::encode(Sha256::digest(&bytes))
}

fn render(root: &Json) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(root).expect("json values always serialize");
    out.push(b'\n');
    out
}

pub(crate) fn number(n: f64) -> Json {
    if n.fract() == 0.0 && n.abs() < 1e15 {
        json!(n as i64)
    } else {
        json!(n)
    }
}

pub(crate) fn value(v: &Value) -> Json {
    match v {
        Value::Bool(b) => Json::Bool(*b),
        Value::Number(n) => number(*n),
        Value::Str(s) => Json::String(s.clone()),
        Value::Vehicles(ids) => Json::Array(ids.iter().map(|i| json!(i.as_str())).collect()),
    }
}

pub(crate) fn payload(p: &Payload) -> Json {
    Json::Object(p.iter().map(|(k, v)| (k.clone(), value(v))).collect())
}

fn to_json(doc: &MdlDocument) -> Json {
    let roles: Vec<Json> = doc.roles.iter().map(role).collect();
    let body = match &doc.body {
        Body::Sub(s) => sub_body(s),
        Body::Manoeuvre(m) => manoeuvre_body(m),
    };
    json!({
        "mdl-version": MDL_VERSION,
        "id": doc.id.as_str(),
        "kind": doc.kind.as_str(),
        "version": doc.version,
        "roles": roles,
        "body": body,
    })
}

fn role(r: &RoleDef) -> Json {
    let mut m = Map::new();
    m.insert("name".into(), json!(r.name));
    m.insert("entry_state".into(), json!(r.entry_state.as_str()));
    m.insert("part".into(), json!(r.part.as_str()));
    if let Some(start) = &r.start {
        m.insert("start".into(), json!(start));
    }
    match r.trigger {
        Some(Trigger::Lli) => {
            m.insert("trigger".into(), json!("lli"));
        }
        Some(Trigger::Message(k)) => {
            m.insert("trigger".into(), json!(k.as_str()));
        }
        None => {}
    }
    if let Some(b) = &r.bind {
        m.insert("bind".into(), json!(b.to_string()));
    }
    Json::Object(m)
}

fn sub_body(s: &SubManoeuvreDef) -> Json {
    let states: Map<String, Json> = s
        .states
        .iter()
        .map(|(role, machine)| {
            let defs = machine
                .iter()
                .map(|(id, st)| (id.clone(), state(st)))
                .collect::<Map<_, _>>();
            (role.clone(), Json::Object(defs))
        })
        .collect();
    let results: Vec<Json> = s
        .results
        .iter()
        .map(|r| {
            let finals: Map<String, Json> = r
                .finals
                .iter()
                .map(|(k, v)| (k.clone(), json!(v.as_str())))
                .collect();
            json!({ "label": r.label.to_string(), "final": finals })
        })
        .collect();
    json!({ "states": states, "results": results })
}

fn state(s: &StateDef) -> Json {
    let primitives: Vec<Json> = s.primitives.iter().map(primitive).collect();
    let transitions: Vec<Json> = s
        .transitions
        .iter()
        .map(|t| {
            let mut m = Map::new();
            if let Some(on) = &t.on {
                m.insert("on".into(), event(on));
            }
            m.insert("to".into(), json!(t.to.to_string()));
            Json::Object(m)
        })
        .collect();
    json!({ "primitives": primitives, "transitions": transitions })
}

pub(crate) fn primitive(p: &Primitive) -> Json {
    let mut m = Map::new();
    m.insert("op".into(), json!(p.op().as_str()));
    match p {
        Primitive::Mtp {
            target,
            offset,
            lane,
        } => {
            m.insert("target".into(), value(target));
            m.insert("offset".into(), value(offset));
            if let Some(l) = lane {
                m.insert("lane".into(), value(l));
            }
        }
        Primitive::Sh(Headway::Time(t)) => {
            m.insert("time".into(), value(t));
        }
        Primitive::Sh(Headway::Space(s)) => {
            m.insert("space".into(), value(s));
        }
        Primitive::W { timeout: Some(t) } => {
            m.insert("timeout".into(), number(*t));
        }
        Primitive::Snd(t) => {
            m.insert("kind".into(), json!(t.kind.as_str()));
            if let Some(a) = &t.action {
                m.insert("action".into(), json!(a));
            }
            m.insert("to".into(), json!(t.to));
            if !t.payload.is_empty() {
                m.insert("payload".into(), payload(&t.payload));
            }
            if t.forward_params {
                m.insert("forward_params".into(), json!(true));
            }
        }
        _ => {}
    }
    Json::Object(m)
}

fn event(e: &EventPattern) -> Json {
    match e {
        EventPattern::Msg { kind, action } => {
            let s = match action {
                Some(a) => format!("{kind}/{a}"),
                None => kind.to_string(),
            };
            json!({ "msg": s })
        }
        EventPattern::Timeout => json!({ "timeout": true }),
        EventPattern::Arrived => json!({ "arrived": true }),
        EventPattern::Done => json!({ "done": true }),
        EventPattern::Superseded => json!({ "superseded": true }),
        EventPattern::Policy(b) => json!({ "policy": b }),
    }
}

fn manoeuvre_body(m: &ManoeuvreDef) -> Json {
    let steps: Map<String, Json> = m
        .steps
        .iter()
        .map(|(id, s)| (id.clone(), step(s)))
        .collect();
    json!({ "start": m.start, "steps": steps })
}

fn step(s: &StepDef) -> Json {
    let mut m = Map::new();
    match &s.invoke {
        Invocation::Single(i) => {
            m.insert("invoke".into(), invoke(i));
        }
        Invocation::Sim(v) => {
            m.insert("sim".into(), Json::Array(v.iter().map(invoke).collect()));
        }
    }
    let single = matches!(s.invoke, Invocation::Single(_));
    let next: Vec<Json> = s
        .next
        .iter()
        .map(|(key, to)| {
            let on = if single && key.len() == 1 {
                json!(key[0].to_string())
            } else {
                Json::Array(key.iter().map(|l| json!(l.to_string())).collect())
            };
            json!({ "on": on, "to": to.to_string() })
        })
        .collect();
    m.insert("next".into(), Json::Array(next));
    Json::Object(m)
}

fn invoke(i: &Invoke) -> Json {
    let mut m = Map::new();
    m.insert("action".into(), json!(i.action.as_str()));
    m.insert(
        "participants".into(),
        Json::Object(
            i.participants
                .iter()
                .map(|(k, v)| (k.clone(), json!(v)))
                .collect(),
        ),
    );
    if !i.params.is_empty() {
        m.insert("params".into(), payload(&i.params));
    }
    Json::Object(m)
}
