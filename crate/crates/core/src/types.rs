//! Shared vocabulary: idle states, message kinds, action primitives, result
//! labels and identifiers.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown {what} name `{name}`")]
pub struct UnknownName {
    pub what: &'static str,
    pub name: String,
}

macro_rules! named_enum {
    ($(#[$meta:meta])* $name:ident, $what:literal { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = UnknownName;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(UnknownName { what: $what, name: s.to_string() }),
                }
            }
        }

        impl Serialize for $name {
            fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(self.as_str())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

named_enum!(
    /// Role a vehicle holds between (stable) or during (unstable) manoeuvres.
    IdleState, "idle-state" {
        Fv => "FV",
        Pf => "PF",
        Pl => "PL",
        Wfv => "WFV",
        Wpf => "WPF",
        Wpl => "WPL",
        Tpl => "TPL",
    }
);

named_enum!(
    MessageKind, "message-kind" {
        Req => "REQ",
        Ord => "ORD",
        Ack => "ACK",
        Nack => "NACK",
        Dn => "DN",
        Abt => "ABT",
        TmplSplit => "TMPL_SPLIT",
    }
);

named_enum!(
    PrimitiveOp, "primitive" {
        Mtp => "MTP",
        Sh => "SH",
        Bfv => "BFV",
        Bpl => "BPL",
        Bpf => "BPF",
        Btl => "BTL",
        Sw => "SW",
        Usw => "USW",
        W => "W",
        Snd => "SND",
        Upi => "UPI",
    }
);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IdleError {
    #[error("{0} has no waiting counterpart")]
    NoWaitingCounterpart(IdleState),
    #[error("{0} is not a waiting state")]
    NotWaiting(IdleState),
}

impl IdleState {
    /// FV, PF and PL are stable; everything else is a mid-manoeuvre state.
    pub fn is_stable(self) -> bool {
        matches!(self, IdleState::Fv | IdleState::Pf | IdleState::Pl)
    }

    /// Target of SW: FV -> WFV, PF -> WPF, PL -> WPL.
    pub fn waiting_counterpart(self) -> Result<IdleState, IdleError> {
        match self {
            IdleState::Fv => Ok(IdleState::Wfv),
            IdleState::Pf => Ok(IdleState::Wpf),
            IdleState::Pl => Ok(IdleState::Wpl),
            other => Err(IdleError::NoWaitingCounterpart(other)),
        }
    }

    /// Target of USW, the inverse of [`IdleState::waiting_counterpart`].
    pub fn idling_counterpart(self) -> Result<IdleState, IdleError> {
        match self {
            IdleState::Wfv => Ok(IdleState::Fv),
            IdleState::Wpf => Ok(IdleState::Pf),
            IdleState::Wpl => Ok(IdleState::Pl),
            other => Err(IdleError::NotWaiting(other)),
        }
    }

    pub fn is_waiting(self) -> bool {
        matches!(self, IdleState::Wfv | IdleState::Wpf | IdleState::Wpl)
    }
}

pub fn is_stable(state: IdleState) -> bool {
    state.is_stable()
}

pub fn waiting_counterpart(state: IdleState) -> Result<IdleState, IdleError> {
    state.waiting_counterpart()
}

/// Actor column of the primitive table.
pub fn primitive_allowed(op: PrimitiveOp, state: IdleState) -> bool {
    use IdleState::*;
    match op {
        PrimitiveOp::Mtp => matches!(state, Fv | Pl | Tpl),
        PrimitiveOp::Sh => matches!(state, Pf | Tpl),
        PrimitiveOp::Bfv => state != Fv,
        PrimitiveOp::Bpl => state != Pl,
        PrimitiveOp::Bpf => state != Pf,
        PrimitiveOp::Btl => state != Tpl,
        PrimitiveOp::Sw => matches!(state, Fv | Pl | Pf),
        PrimitiveOp::Usw => matches!(state, Wfv | Wpl | Wpf),
        PrimitiveOp::W | PrimitiveOp::Snd => true,
        PrimitiveOp::Upi => state == Pl,
    }
}

impl PrimitiveOp {
    /// Idle state after executing a state primitive, `None` for primitives
    /// that leave the idle state untouched.
    pub fn idle_effect(self, state: IdleState) -> Option<IdleState> {
        match self {
            PrimitiveOp::Bfv => Some(IdleState::Fv),
            PrimitiveOp::Bpl => Some(IdleState::Pl),
            PrimitiveOp::Bpf => Some(IdleState::Pf),
            PrimitiveOp::Btl => Some(IdleState::Tpl),
            PrimitiveOp::Sw => state.waiting_counterpart().ok(),
            PrimitiveOp::Usw => state.idling_counterpart().ok(),
            _ => None,
        }
    }
}

impl MessageKind {
    pub fn carries_payload(self) -> bool {
        matches!(self, MessageKind::Req | MessageKind::Ord | MessageKind::Dn)
    }
}

/// Identifier of a sub-manoeuvre or manoeuvre, e.g. `GAPCLOSE`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionId(pub String);

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VehicleId(pub String);

/// Shared by every message of one sub-manoeuvre instance.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CorrelationId(pub String);

macro_rules! string_newtype {
    ($($name:ident),+) => {$(
        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                $name(s.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name(s.to_string())
            }
        }
    )+};
}

string_newtype!(ActionId, VehicleId, CorrelationId);

/// `RS` or `RA<n>`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ResultLabel {
    Success,
    Abort(u32),
}

impl ResultLabel {
    pub fn is_success(&self) -> bool {
        matches!(self, ResultLabel::Success)
    }
}

impl fmt::Display for ResultLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ResultLabel::Success => f.write_str("RS"),
            ResultLabel::Abort(n) => write!(f, "RA{n}"),
        }
    }
}

impl FromStr for ResultLabel {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || UnknownName {
            what: "result-label",
            name: s.to_string(),
        };
        if s == "RS" {
            return Ok(ResultLabel::Success);
        }
        let digits = s.strip_prefix("RA").ok_or_else(unknown)?;
        if digits.is_empty() || digits.starts_with('0') || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(unknown());
        }
        digits.parse().map(ResultLabel::Abort).map_err(|_| unknown())
    }
}

impl Serialize for ResultLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Scalar payload and parameter values. Strings starting with `$` are
/// references resolved when a primitive executes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Number(f64),
    Str(String),
    Vehicles(Vec<VehicleId>),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Number(n) => Some(*n),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_reference(&self) -> Option<&str> {
        self.as_str().filter(|s| s.contains('$'))
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Number(n) => write!(f, "{n}"),
            Value::Str(s) => f.write_str(s),
            Value::Vehicles(v) => {
                let ids: Vec<_> = v.iter().map(|v| v.as_str()).collect();
                write!(f, "[{}]", ids.join(","))
            }
        }
    }
}

pub type Payload = BTreeMap<String, Value>;

/// V2V envelope.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Message {
    pub kind: MessageKind,
    pub action: ActionId,
    pub sender: VehicleId,
    pub receivers: Vec<VehicleId>,
    pub correlation: CorrelationId,
    pub payload: Payload,
}

impl Message {
    /// Short `KIND/ACTION` form used in traces and diagnostics.
    pub fn label(&self) -> String {
        format!("{}/{}", self.kind, self.action)
    }
}

/// Time or space headway for SH; exactly one is set by construction.
#[derive(Debug, Clone, PartialEq)]
pub enum Headway {
    Time(Value),
    Space(Value),
}

/// Message produced by SND. `to` names a role of the sub-manoeuvre.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageTemplate {
    pub kind: MessageKind,
    /// Defaults to the enclosing sub-manoeuvre id.
    pub action: Option<String>,
    pub to: String,
    pub payload: Payload,
    /// Copy every instance parameter into the payload.
    pub forward_params: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    /// Move to `offset` metres relative to `target`, optionally in `lane`.
    Mtp {
        target: Value,
        offset: Value,
        lane: Option<Value>,
    },
    Sh(Headway),
    Bfv,
    Bpl,
    Bpf,
    Btl,
    Sw,
    Usw,
    /// Wait; the events are the state's transitions. A timeout of `None`
    /// on a state with a timeout transition means the runtime default.
    W { timeout: Option<f64> },
    Snd(MessageTemplate),
    Upi,
}

impl Primitive {
    pub fn op(&self) -> PrimitiveOp {
        match self {
            Primitive::Mtp { .. } => PrimitiveOp::Mtp,
            Primitive::Sh(_) => PrimitiveOp::Sh,
            Primitive::Bfv => PrimitiveOp::Bfv,
            Primitive::Bpl => PrimitiveOp::Bpl,
            Primitive::Bpf => PrimitiveOp::Bpf,
            Primitive::Btl => PrimitiveOp::Btl,
            Primitive::Sw => PrimitiveOp::Sw,
            Primitive::Usw => PrimitiveOp::Usw,
            Primitive::W { .. } => PrimitiveOp::W,
            Primitive::Snd(_) => PrimitiveOp::Snd,
            Primitive::Upi => PrimitiveOp::Upi,
        }
    }
}
