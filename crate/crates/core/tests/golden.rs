//! Golden traces under catalogue/golden. Set UPDATE_GOLDEN=1 to rewrite
//! the `.jsonl` files; the `.expect.json` files are maintained by hand.

mod common;

use std::collections::BTreeMap;
use std::fs;

use serde::Deserialize;

use sead::runtime::WorldView;
use sead::simulation::{run, RunOptions, RunReport};
use sead::types::{IdleState, VehicleId};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Expect {
    messages: Vec<String>,
    results: Vec<ExpectResult>,
    finals: BTreeMap<String, IdleState>,
    membership: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct ExpectResult {
    manoeuvre: String,
    result: Vec<String>,
}

fn golden_run(name: &str) -> RunReport {
    run(&common::scenario(name), &common::quiet(), &common::library(), RunOptions::default())
}

fn expect(name: &str) -> Expect {
    let path = common::root().join(format!("catalogue/golden/{name}.expect.json"));
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn ids(list: &[VehicleId]) -> Vec<String> {
    list.iter().map(|v| v.to_string()).collect()
}

#[test]
fn traces_match_the_recorded_goldens() {
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    for name in common::SCENARIOS {
        let text = golden_run(name).trace.to_jsonl();
        let path = common::root().join(format!("catalogue/golden/{name}.jsonl"));
        if update {
            fs::write(&path, &text).unwrap();
            continue;
        }
        let recorded = fs::read_to_string(&path).unwrap_or_else(|_| panic!("{} missing; run with UPDATE_GOLDEN=1", path.display()));
        assert!(recorded == text, "{name}: trace differs from {}", path.display());
    }
}

#[test]
fn runs_meet_the_written_expectations() {
    for name in common::SCENARIOS {
        let want = expect(name);
        let r = golden_run(name);
        assert_eq!(r.trace.messages(), want.messages, "{name}: messages");
        let results: Vec<ExpectResult> = r
            .summary
            .iter()
            .map(|s| ExpectResult { manoeuvre: s.manoeuvre.to_string(), result: s.result.clone() })
            .collect();
        assert_eq!(results, want.results, "{name}: results");
        let finals: BTreeMap<String, IdleState> = r.finals.iter().map(|(v, s)| (v.to_string(), *s)).collect();
        assert_eq!(finals, want.finals, "{name}: finals");
        let leaders: Vec<&VehicleId> = r.finals.iter().filter(|(_, s)| **s == IdleState::Pl).map(|(v, _)| v).collect();
        let published: BTreeMap<String, Vec<String>> =
            leaders.iter().map(|l| (l.to_string(), ids(&r.world.published[*l]))).collect();
        assert_eq!(published, want.membership, "{name}: published membership");
        for l in leaders {
            assert_eq!(ids(&r.world.members(l)), want.membership[l.as_str()], "{name}: ground truth of {l}");
        }
    }
}

#[test]
fn abort_golden_shows_the_platoon_update() {
    let r = golden_run("gapclose_abort");
    let upi = r
        .trace
        .of_kind("primitive")
        .any(|p| p.vehicle == "V1" && p.str("op") == Some("UPI"));
    assert!(upi);
    let results: Vec<(String, String)> = r
        .trace
        .of_kind("result")
        .map(|p| (p.str("role").unwrap().to_string(), p.str("label").unwrap().to_string()))
        .collect();
    assert!(results.contains(&("A".into(), "RA1".into())));
    assert!(results.contains(&("B".into(), "RA1".into())));
}
