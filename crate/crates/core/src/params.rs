//! `$name` references inside primitive parameters and step params.
//!
//! Grammar: `[-][<k>*]$name[(+|-)<c>]`, e.g. `$gap`, `-$d`, `2*$d`,
//! `$lane+1`. Names may contain `:` (`role:J`, `behind:F`).

use std::collections::BTreeMap;

use crate::types::{Payload, Value};

#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub name: String,
    pub scale: f64,
    pub add: f64,
}

impl Reference {
    pub fn parse(s: &str) -> Option<Reference> {
        let (neg, rest) = match s.strip_prefix('-') {
            Some(r) => (true, r),
            None => (false, s),
        };
        let (scale, rest) = match rest.split_once("*$") {
            Some((k, r)) => (k.parse::<f64>().ok()?, r),
            None => (1.0, rest.strip_prefix('$')?),
        };
        let end = rest
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_' || c == ':'))
            .unwrap_or(rest.len());
        let (name, tail) = rest.split_at(end);
        if name.is_empty() {
            return None;
        }
        let add = match tail {
            "" => 0.0,
            t if t.starts_with('+') || t.starts_with('-') => t.parse::<f64>().ok()?,
            _ => return None,
        };
        Some(Reference {
            name: name.to_string(),
            scale: if neg { -scale } else { scale },
            add,
        })
    }

    fn is_plain(&self) -> bool {
        self.scale == 1.0 && self.add == 0.0
    }
}

/// Names referenced by a value, if it is a reference.
pub fn referenced_name(v: &Value) -> Option<String> {
    v.as_reference().and_then(Reference::parse).map(|r| r.name)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ResolveError {
    #[error("unresolved reference `${0}`")]
    Unknown(String),
    #[error("reference `{0}` does not name a number")]
    NotNumeric(String),
    #[error("malformed reference `{0}`")]
    Malformed(String),
}

/// Look up names; plain references may resolve to any value, scaled ones
/// must be numeric.
pub fn resolve(v: &Value, lookup: &dyn Fn(&str) -> Option<Value>) -> Result<Value, ResolveError> {
    let Some(text) = v.as_reference() else {
        return Ok(v.clone());
    };
    let r = Reference::parse(text).ok_or_else(|| ResolveError::Malformed(text.to_string()))?;
    let found = lookup(&r.name).ok_or_else(|| ResolveError::Unknown(r.name.clone()))?;
    if r.is_plain() {
        return Ok(found);
    }
    let n = found
        .as_f64()
        .ok_or_else(|| ResolveError::NotNumeric(text.to_string()))?;
    Ok(Value::Number(r.scale * n + r.add))
}

pub fn resolve_payload(
    p: &Payload,
    lookup: &dyn Fn(&str) -> Option<Value>,
) -> Result<Payload, ResolveError> {
    p.iter()
        .map(|(k, v)| Ok((k.clone(), resolve(v, lookup)?)))
        .collect::<Result<BTreeMap<_, _>, _>>()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lookup(name: &str) -> Option<Value> {
        match name {
            "d" => Some(Value::Number(6.0)),
            "tail" => Some(Value::Str("V3".into())),
            _ => None,
        }
    }

    #[test]
    fn forms() {
        assert_eq!(resolve(&Value::Str("$d".into()), &lookup), Ok(Value::Number(6.0)));
        assert_eq!(resolve(&Value::Str("-$d".into()), &lookup), Ok(Value::Number(-6.0)));
        assert_eq!(resolve(&Value::Str("2*$d".into()), &lookup), Ok(Value::Number(12.0)));
        assert_eq!(resolve(&Value::Str("$d+1.5".into()), &lookup), Ok(Value::Number(7.5)));
        assert_eq!(resolve(&Value::Str("$tail".into()), &lookup), Ok(Value::Str("V3".into())));
        assert_eq!(resolve(&Value::Number(3.0), &lookup), Ok(Value::Number(3.0)));
        assert_eq!(resolve(&Value::Str("plain".into()), &lookup), Ok(Value::Str("plain".into())));
    }

    #[test]
    fn failures() {
        assert_eq!(
            resolve(&Value::Str("$nope".into()), &lookup),
            Err(ResolveError::Unknown("nope".into()))
        );
        assert!(matches!(
            resolve(&Value::Str("2*$tail".into()), &lookup),
            Err(ResolveError::NotNumeric(_))
        ));
        assert!(Reference::parse("$").is_none());
        assert!(Reference::parse("$d?").is_none());
        assert_eq!(Reference::parse("$role:J").unwrap().name, "role:J");
    }
}
