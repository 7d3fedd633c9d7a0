//! Strict JSON decoding of MDL documents. Every error names the JSON path
//! of the offending value.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::{Map, Value as Json};
use thiserror::Error;

use super::document::*;
use crate::types::{
    ActionId, Headway, IdleState, MessageKind, MessageTemplate, Payload, Primitive, PrimitiveOp,
    ResultLabel, Value, VehicleId,
};

pub const MDL_VERSION: &str = "1";
pub const DIGEST_KEY: &str = "digest";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdlError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("unknown {what} `{name}` at {path}")]
    UnknownName {
        path: String,
        what: &'static str,
        name: String,
    },
    #[error("unsupported mdl-version `{0}`")]
    Version(String),
    #[error("digest mismatch: file says {stored}, content hashes to {computed}")]
    Digest { stored: String, computed: String },
}

impl MdlError {
    pub fn path(&self) -> Option<&str> {
        match self {
            MdlError::Schema { path, .. } | MdlError::UnknownName { path, .. } => Some(path),
            _ => None,
        }
    }
}

type Result<T> = std::result::Result<T, MdlError>;

fn schema(path: &str, message: impl Into<String>) -> MdlError {
    MdlError::Schema {
        path: path.to_string(),
        message: message.into(),
    }
}

/// A JSON object being consumed key by key; `finish` rejects leftovers.
struct Obj<'a> {
    map: &'a Map<String, Json>,
    path: String,
    seen: BTreeSet<&'a str>,
}

impl<'a> Obj<'a> {
    fn new(value: &'a Json, path: &str) -> Result<Self> {
        match value {
            Json::Object(map) => Ok(Obj {
                map,
                path: path.to_string(),
                seen: BTreeSet::new(),
            }),
            _ => Err(schema(path, "expected an object")),
        }
    }

    fn child(&self, key: &str) -> String {
        format!("{}.{}", self.path, key)
    }

    fn opt(&mut self, key: &'a str) -> Option<&'a Json> {
        let (k, v) = self.map.get_key_value(key)?;
        self.seen.insert(k.as_str());
        Some(v)
    }

    fn req(&mut self, key: &'a str) -> Result<&'a Json> {
        let path = self.child(key);
        self.opt(key)
            .ok_or_else(|| schema(&path, "required field is missing"))
    }

    fn req_str(&mut self, key: &'a str) -> Result<&'a str> {
        let path = self.child(key);
        as_str(self.req(key)?, &path)
    }

    fn opt_str(&mut self, key: &'a str) -> Result<Option<&'a str>> {
        let path = self.child(key);
        self.opt(key).map(|v| as_str(v, &path)).transpose()
    }

    fn opt_bool(&mut self, key: &'a str) -> Result<Option<bool>> {
        let path = self.child(key);
        match self.opt(key) {
            None => Ok(None),
            Some(Json::Bool(b)) => Ok(Some(*b)),
            Some(_) => Err(schema(&path, "expected a boolean")),
        }
    }

    fn finish(self) -> Result<()> {
        for key in self.map.keys() {
            if !self.seen.contains(key.as_str()) {
                return Err(schema(&self.child(key), "unknown field"));
            }
        }
        Ok(())
    }
}

fn as_str<'a>(v: &'a Json, path: &str) -> Result<&'a str> {
    v.as_str().ok_or_else(|| schema(path, "expected a string"))
}

fn as_array<'a>(v: &'a Json, path: &str) -> Result<&'a Vec<Json>> {
    v.as_array().ok_or_else(|| schema(path, "expected an array"))
}

fn as_map<'a>(v: &'a Json, path: &str) -> Result<&'a Map<String, Json>> {
    v.as_object().ok_or_else(|| schema(path, "expected an object"))
}

fn named<T: std::str::FromStr>(v: &Json, path: &str, what: &'static str) -> Result<T> {
    let s = as_str(v, path)?;
    s.parse().map_err(|_| MdlError::UnknownName {
        path: path.to_string(),
        what,
        name: s.to_string(),
    })
}

fn identifier(v: &Json, path: &str) -> Result<String> {
    let s = as_str(v, path)?;
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_') {
        return Err(schema(path, format!("`{s}` is not a valid identifier")));
    }
    Ok(s.to_string())
}

fn true_flag(v: &Json, path: &str) -> Result<()> {
    match v {
        Json::Bool(true) => Ok(()),
        _ => Err(schema(path, "expected `true`")),
    }
}

pub(crate) fn value(v: &Json, path: &str) -> Result<Value> {
    match v {
        Json::Bool(b) => Ok(Value::Bool(*b)),
        Json::Number(n) => n
            .as_f64()
            .filter(|f| f.is_finite())
            .map(Value::Number)
            .ok_or_else(|| schema(path, "number out of range")),
        Json::String(s) => Ok(Value::Str(s.clone())),
        Json::Array(items) => items
            .iter()
            .enumerate()
            .map(|(i, item)| as_str(item, &format!("{path}[{i}]")).map(VehicleId::new))
            .collect::<Result<Vec<_>>>()
            .map(Value::Vehicles),
        _ => Err(schema(path, "expected a scalar or a list of vehicle ids")),
    }
}

pub(crate) fn payload(v: &Json, path: &str) -> Result<Payload> {
    as_map(v, path)?
        .iter()
        .map(|(k, v)| Ok((k.clone(), value(v, &format!("{path}.{k}"))?)))
        .collect()
}

fn number_or_ref(v: &Json, path: &str) -> Result<Value> {
    match value(v, path)? {
        val @ (Value::Number(_) | Value::Str(_)) => Ok(val),
        _ => Err(schema(path, "expected a number or a `$` reference")),
    }
}

/// Parse an MDL document. The `digest` key, when present, must match the
/// canonical content.
pub fn parse(text: &[u8]) -> Result<MdlDocument> {
    let root: Json = serde_json::from_slice(text).map_err(|e| MdlError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let doc = document(&root)?;
    if let Some(stored) = root.get(DIGEST_KEY) {
        let stored = as_str(stored, "$.digest")?;
        let computed = super::serialize::digest(&doc);
        if stored != computed {
            return Err(MdlError::Digest {
                stored: stored.to_string(),
                computed,
            });
        }
    }
    Ok(doc)
}

pub fn parse_str(text: &str) -> Result<MdlDocument> {
    parse(text.as_bytes())
}

fn document(root: &Json) -> Result<MdlDocument> {
    let mut obj = Obj::new(root, "$")?;
    let version_path = obj.child("mdl-version");
    let mdl_version = as_str(obj.req("mdl-version")?, &version_path)?;
    if mdl_version.split('.').next() != Some(MDL_VERSION) {
        return Err(MdlError::Version(mdl_version.to_string()));
    }
    obj.opt(DIGEST_KEY);
    let id_path = obj.child("id");
    let id = ActionId::new(identifier(obj.req("id")?, &id_path)?);
    let kind = match obj.req_str("kind")? {
        "sub-manoeuvre" => DocKind::SubManoeuvre,
        "manoeuvre" => DocKind::Manoeuvre,
        other => {
            return Err(schema(
                "$.kind",
                format!("`{other}` is neither `sub-manoeuvre` nor `manoeuvre`"),
            ))
        }
    };
    let version = obj.req_str("version")?.to_string();
    let roles_path = obj.child("roles");
    let roles = as_array(obj.req("roles")?, &roles_path)?
        .iter()
        .enumerate()
        .map(|(i, r)| role(r, &format!("{roles_path}[{i}]"), kind))
        .collect::<Result<Vec<_>>>()?;
    let body_path = obj.child("body");
    let body_json = obj.req("body")?;
    let body = match kind {
        DocKind::SubManoeuvre => Body::Sub(sub_body(body_json, &body_path)?),
        DocKind::Manoeuvre => Body::Manoeuvre(manoeuvre_body(body_json, &body_path)?),
    };
    obj.finish()?;
    Ok(MdlDocument {
        id,
        kind,
        version,
        roles,
        body,
    })
}

fn role(v: &Json, path: &str, kind: DocKind) -> Result<RoleDef> {
    let mut obj = Obj::new(v, path)?;
    let name = identifier(obj.req("name")?, &obj.child("name"))?;
    let entry_path = obj.child("entry_state");
    let entry_state = named(obj.req("entry_state")?, &entry_path, "idle-state")?;
    let part = match obj.req_str("part")? {
        "controlling" => Part::Controlling,
        "reactive" => Part::Reactive,
        other => return Err(schema(&obj.child("part"), format!("unknown part `{other}`"))),
    };
    let (start, trigger, bind) = match kind {
        DocKind::SubManoeuvre => {
            let start_path = obj.child("start");
            let start = identifier(obj.req("start")?, &start_path)?;
            let trigger_path = obj.child("trigger");
            let trigger = match obj.opt_str("trigger")? {
                None => None,
                Some("lli") => Some(Trigger::Lli),
                Some(k) => Some(Trigger::Message(k.parse::<MessageKind>().map_err(|_| {
                    MdlError::UnknownName {
                        path: trigger_path,
                        what: "message-kind",
                        name: k.to_string(),
                    }
                })?)),
            };
            (Some(start), trigger, None)
        }
        DocKind::Manoeuvre => {
            let bind_path = obj.child("bind");
            let bind = obj.opt_str("bind")?.map(|b| binding(b, &bind_path)).transpose()?;
            (None, None, bind)
        }
    };
    obj.finish()?;
    Ok(RoleDef {
        name,
        entry_state,
        part,
        start,
        trigger,
        bind,
    })
}

fn binding(s: &str, path: &str) -> Result<Binding> {
    let bad = || schema(path, format!("unknown binding `{s}`"));
    if s == "requester" {
        return Ok(Binding::Requester);
    }
    let (head, arg) = s.split_once(':').ok_or_else(bad)?;
    if arg.is_empty() {
        return Err(bad());
    }
    match head {
        "request" => Ok(Binding::RequestField(arg.to_string())),
        "behind" => Ok(Binding::Behind(arg.to_string())),
        "ahead" => Ok(Binding::Ahead(arg.to_string())),
        _ => Err(bad()),
    }
}

fn sub_body(v: &Json, path: &str) -> Result<SubManoeuvreDef> {
    let mut obj = Obj::new(v, path)?;
    let states_path = obj.child("states");
    let mut states = BTreeMap::new();
    for (role, machine) in as_map(obj.req("states")?, &states_path)? {
        let role_path = format!("{states_path}.{role}");
        let mut defs = BTreeMap::new();
        for (id, state) in as_map(machine, &role_path)? {
            let state_path = format!("{role_path}.{id}");
            identifier(&Json::String(id.clone()), &state_path)?;
            defs.insert(id.clone(), state_def(state, &state_path)?);
        }
        states.insert(role.clone(), defs);
    }
    let results_path = obj.child("results");
    let results = as_array(obj.req("results")?, &results_path)?
        .iter()
        .enumerate()
        .map(|(i, r)| result_def(r, &format!("{results_path}[{i}]")))
        .collect::<Result<Vec<_>>>()?;
    obj.finish()?;
    Ok(SubManoeuvreDef { states, results })
}

fn state_def(v: &Json, path: &str) -> Result<StateDef> {
    let mut obj = Obj::new(v, path)?;
    let prim_path = obj.child("primitives");
    let primitives = as_array(obj.req("primitives")?, &prim_path)?
        .iter()
        .enumerate()
        .map(|(i, p)| primitive(p, &format!("{prim_path}[{i}]")))
        .collect::<Result<Vec<_>>>()?;
    let tr_path = obj.child("transitions");
    let transitions = as_array(obj.req("transitions")?, &tr_path)?
        .iter()
        .enumerate()
        .map(|(i, t)| transition(t, &format!("{tr_path}[{i}]")))
        .collect::<Result<Vec<_>>>()?;
    obj.finish()?;
    Ok(StateDef {
        primitives,
        transitions,
    })
}

fn primitive(v: &Json, path: &str) -> Result<Primitive> {
    let mut obj = Obj::new(v, path)?;
    let op_path = obj.child("op");
    let op: PrimitiveOp = named(obj.req("op")?, &op_path, "primitive")?;
    let p = match op {
        PrimitiveOp::Mtp => {
            let target_path = obj.child("target");
            let target = value(obj.req("target")?, &target_path)?;
            let offset_path = obj.child("offset");
            let offset = number_or_ref(obj.req("offset")?, &offset_path)?;
            let lane_path = obj.child("lane");
            let lane = obj
                .opt("lane")
                .map(|l| number_or_ref(l, &lane_path))
                .transpose()?;
            Primitive::Mtp {
                target,
                offset,
                lane,
            }
        }
        PrimitiveOp::Sh => {
            let time_path = obj.child("time");
            let space_path = obj.child("space");
            let time = obj.opt("time").map(|t| number_or_ref(t, &time_path)).transpose()?;
            let space = obj
                .opt("space")
                .map(|s| number_or_ref(s, &space_path))
                .transpose()?;
            match (time, space) {
                (Some(t), None) => Primitive::Sh(Headway::Time(t)),
                (None, Some(s)) => Primitive::Sh(Headway::Space(s)),
                _ => {
                    return Err(schema(
                        path,
                        "SH needs exactly one of `time` or `space` headway",
                    ))
                }
            }
        }
        PrimitiveOp::W => {
            let timeout_path = obj.child("timeout");
            let timeout = match obj.opt("timeout") {
                None => None,
                Some(t) => Some(
                    t.as_f64()
                        .filter(|t| *t > 0.0 && t.is_finite())
                        .ok_or_else(|| schema(&timeout_path, "expected a positive number"))?,
                ),
            };
            Primitive::W { timeout }
        }
        PrimitiveOp::Snd => {
            let kind_path = obj.child("kind");
            let kind = named(obj.req("kind")?, &kind_path, "message-kind")?;
            let action = obj.opt_str("action")?.map(str::to_string);
            let to_path = obj.child("to");
            let to = identifier(obj.req("to")?, &to_path)?;
            let payload_path = obj.child("payload");
            let payload = obj
                .opt("payload")
                .map(|p| payload(p, &payload_path))
                .transpose()?
                .unwrap_or_default();
            let forward_params = obj.opt_bool("forward_params")?.unwrap_or(false);
            Primitive::Snd(MessageTemplate {
                kind,
                action,
                to,
                payload,
                forward_params,
            })
        }
        PrimitiveOp::Bfv => Primitive::Bfv,
        PrimitiveOp::Bpl => Primitive::Bpl,
        PrimitiveOp::Bpf => Primitive::Bpf,
        PrimitiveOp::Btl => Primitive::Btl,
        PrimitiveOp::Sw => Primitive::Sw,
        PrimitiveOp::Usw => Primitive::Usw,
        PrimitiveOp::Upi => Primitive::Upi,
    };
    obj.finish()?;
    Ok(p)
}

fn transition(v: &Json, path: &str) -> Result<Transition> {
    let mut obj = Obj::new(v, path)?;
    let on_path = obj.child("on");
    let on = obj.opt("on").map(|e| event(e, &on_path)).transpose()?;
    let to_path = obj.child("to");
    let to = target(obj.req("to")?, &to_path)?;
    obj.finish()?;
    Ok(Transition { on, to })
}

fn target(v: &Json, path: &str) -> Result<Target> {
    let s = as_str(v, path)?;
    if let Ok(label) = s.parse::<ResultLabel>() {
        return Ok(Target::Result(label));
    }
    identifier(v, path).map(Target::State)
}

fn event(v: &Json, path: &str) -> Result<EventPattern> {
    let map = as_map(v, path)?;
    if map.len() != 1 {
        return Err(schema(path, "an event pattern has exactly one key"));
    }
    let (key, val) = map.iter().next().expect("one key");
    let child = format!("{path}.{key}");
    match key.as_str() {
        "msg" => {
            let s = as_str(val, &child)?;
            let (kind, action) = match s.split_once('/') {
                Some((k, a)) => (k, Some(a)),
                None => (s, None),
            };
            let kind = kind.parse::<MessageKind>().map_err(|_| MdlError::UnknownName {
                path: child.clone(),
                what: "message-kind",
                name: kind.to_string(),
            })?;
            let action = match action {
                Some(a) => Some(identifier(&Json::String(a.to_string()), &child)?),
                None => None,
            };
            Ok(EventPattern::Msg { kind, action })
        }
        "timeout" => true_flag(val, &child).map(|_| EventPattern::Timeout),
        "arrived" => true_flag(val, &child).map(|_| EventPattern::Arrived),
        "done" => true_flag(val, &child).map(|_| EventPattern::Done),
        "superseded" => true_flag(val, &child).map(|_| EventPattern::Superseded),
        "policy" => match val {
            Json::Bool(b) => Ok(EventPattern::Policy(*b)),
            _ => Err(schema(&child, "expected a boolean")),
        },
        _ => Err(schema(&child, "unknown event pattern")),
    }
}

fn result_def(v: &Json, path: &str) -> Result<ResultDef> {
    let mut obj = Obj::new(v, path)?;
    let label_path = obj.child("label");
    let label = named(obj.req("label")?, &label_path, "result-label")?;
    let final_path = obj.child("final");
    let finals = as_map(obj.req("final")?, &final_path)?
        .iter()
        .map(|(role, state)| {
            let p = format!("{final_path}.{role}");
            Ok((role.clone(), named::<IdleState>(state, &p, "idle-state")?))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    obj.finish()?;
    Ok(ResultDef { label, finals })
}

fn manoeuvre_body(v: &Json, path: &str) -> Result<ManoeuvreDef> {
    let mut obj = Obj::new(v, path)?;
    let start_path = obj.child("start");
    let start = identifier(obj.req("start")?, &start_path)?;
    let steps_path = obj.child("steps");
    let mut steps = BTreeMap::new();
    for (id, step) in as_map(obj.req("steps")?, &steps_path)? {
        let step_path = format!("{steps_path}.{id}");
        identifier(&Json::String(id.clone()), &step_path)?;
        if id == "TERMINATE" {
            return Err(schema(&step_path, "TERMINATE is reserved"));
        }
        steps.insert(id.clone(), step_def(step, &step_path)?);
    }
    obj.finish()?;
    Ok(ManoeuvreDef { start, steps })
}

fn step_def(v: &Json, path: &str) -> Result<StepDef> {
    let mut obj = Obj::new(v, path)?;
    let invoke_path = obj.child("invoke");
    let sim_path = obj.child("sim");
    let invoke = match (obj.opt("invoke"), obj.opt("sim")) {
        (Some(i), None) => Invocation::Single(invoke(i, &invoke_path)?),
        (None, Some(s)) => Invocation::Sim(
            as_array(s, &sim_path)?
                .iter()
                .enumerate()
                .map(|(i, v)| invoke(v, &format!("{sim_path}[{i}]")))
                .collect::<Result<Vec<_>>>()?,
        ),
        _ => return Err(schema(path, "a step has exactly one of `invoke` or `sim`")),
    };
    let next_path = obj.child("next");
    let next = as_array(obj.req("next")?, &next_path)?
        .iter()
        .enumerate()
        .map(|(i, n)| next_entry(n, &format!("{next_path}[{i}]")))
        .collect::<Result<Vec<_>>>()?;
    obj.finish()?;
    Ok(StepDef { invoke, next })
}

fn invoke(v: &Json, path: &str) -> Result<Invoke> {
    let mut obj = Obj::new(v, path)?;
    let action_path = obj.child("action");
    let action = ActionId::new(identifier(obj.req("action")?, &action_path)?);
    let part_path = obj.child("participants");
    let participants = as_map(obj.req("participants")?, &part_path)?
        .iter()
        .map(|(k, v)| Ok((k.clone(), identifier(v, &format!("{part_path}.{k}"))?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let params_path = obj.child("params");
    let params = obj
        .opt("params")
        .map(|p| payload(p, &params_path))
        .transpose()?
        .unwrap_or_default();
    obj.finish()?;
    Ok(Invoke {
        action,
        participants,
        params,
    })
}

fn next_entry(v: &Json, path: &str) -> Result<(ResultKey, NextTarget)> {
    let mut obj = Obj::new(v, path)?;
    let on_path = obj.child("on");
    let key = match obj.req("on")? {
        Json::Array(items) => items
            .iter()
            .enumerate()
            .map(|(i, l)| named(l, &format!("{on_path}[{i}]"), "result-label"))
            .collect::<Result<Vec<ResultLabel>>>()?,
        single => vec![named(single, &on_path, "result-label")?],
    };
    let to_path = obj.child("to");
    let to = match obj.req("to")? {
        Json::String(s) if s == "TERMINATE" => NextTarget::Terminate,
        other => NextTarget::Step(identifier(other, &to_path)?),
    };
    obj.finish()?;
    Ok((key, to))
}
