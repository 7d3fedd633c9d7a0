use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use crate::runtime::Millis;

/// One line of the JSONL trace. Records are totally ordered by
/// `(t, seq)`; `seq` alone is already strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub seq: u64,
    /// Simulated time, s.
    pub t: f64,
    pub vehicle: String,
    pub kind: String,
    pub detail: BTreeMap<String, Json>,
}

impl TraceRecord {
    pub fn str(&self, key: &str) -> Option<&str> {
        self.detail.get(key).and_then(Json::as_str)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn push(&mut self, t: Millis, vehicle: &str, kind: &str, detail: BTreeMap<String, Json>) {
        self.records.push(TraceRecord {
            seq: self.records.len() as u64,
            t: t as f64 / 1000.0,
            vehicle: vehicle.to_string(),
            kind: kind.to_string(),
            detail,
        });
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let line = serde_json::to_string(r).expect("trace records serialize");
            let _ = writeln!(out, "{line}");
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Trace, serde_json::Error> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(Trace { records })
    }

    pub fn of_kind<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = &'a TraceRecord> + 'a {
        self.records.iter().filter(move |r| r.kind == kind)
    }

    /// `KIND/ACTION sender->receiver` for every sent message, in order.
    pub fn messages(&self) -> Vec<String> {
        self.of_kind("msg-sent")
            .map(|r| {
                let to: Vec<&str> = r
                    .detail
                    .get("to")
                    .and_then(Json::as_array)
                    .map(|a| a.iter().filter_map(Json::as_str).collect())
                    .unwrap_or_default();
                format!(
                    "{}/{} {}->{}",
                    r.str("kind").unwrap_or(""),
                    r.str("action").unwrap_or(""),
                    r.vehicle,
                    to.join(",")
                )
            })
            .collect()
    }

    /// Kinds of delivered and sent messages, in send order.
    pub fn message_kinds(&self) -> Vec<String> {
        self.of_kind("msg-sent")
            .filter_map(|r| r.str("kind").map(str::to_string))
            .collect()
    }
}
