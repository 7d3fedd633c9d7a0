mod common;

use std::collections::{BTreeMap, BTreeSet};

use sead::mdl::{compile, parse_str, DocKind, Registry};
use sead::catalogue::builtin_registry;
use sead::diagnostic::has_errors;
use sead::types::{IdleState, ResultLabel};
use sead::verification::{check_stability, check_synchronisation, enumerate_outcomes, verify, Outcome};

fn finals(pairs: &[(&str, IdleState)]) -> BTreeMap<String, IdleState> {
    pairs.iter().map(|(r, s)| (r.to_string(), *s)).collect()
}

#[test]
fn gapclose_has_exactly_two_endings() {
    let lib = common::library();
    let got = enumerate_outcomes(lib.get("GAPCLOSE").unwrap()).outcomes;
    let want = BTreeSet::from([
        Outcome::new(&[ResultLabel::Success], finals(&[("A", IdleState::Pl), ("B", IdleState::Pf)])),
        Outcome::new(&[ResultLabel::Abort(1)], finals(&[("A", IdleState::Pl), ("B", IdleState::Pl)])),
    ]);
    assert_eq!(got, want);
}

#[test]
fn catalogue_verifies_clean() {
    let lib = common::library();
    let registry = builtin_registry();
    for doc in registry.iter() {
        let b = lib.get(doc.id.as_str()).unwrap();
        let diags = verify(b);
        assert!(!has_errors(&diags), "{}: {diags:?}", doc.id);
        let en = enumerate_outcomes(b);
        assert!(!en.outcomes.is_empty(), "{} has no outcomes", doc.id);
        if doc.kind != DocKind::Manoeuvre {
            continue;
        }
        for o in &en.outcomes {
            assert!(o.finals.values().all(|s| s.is_stable()), "{}: {o}", doc.id);
        }
    }
}

/// Two GAPOPENs run side by side under one leader.
const SIM_GAPOPEN: &str = r#"{
  "mdl-version": "1",
  "id": "TWIN_GAPOPEN",
  "kind": "manoeuvre",
  "version": "1",
  "roles": [
    {"name": "P", "entry_state": "PL", "part": "controlling"},
    {"name": "X", "entry_state": "PF", "part": "reactive"},
    {"name": "Y", "entry_state": "PF", "part": "reactive"}
  ],
  "body": {
    "start": "open",
    "steps": {
      "open": {
        "sim": [
          {"action": "GAPOPEN", "participants": {"B": "X"}, "params": {"gap": "$D"}},
          {"action": "GAPOPEN", "participants": {"B": "Y"}, "params": {"gap": "$D"}}
        ],
        "next": [
          {"on": ["RS", "RS"], "to": "TERMINATE"},
          {"on": ["RS", "RA1"], "to": "TERMINATE"},
          {"on": ["RA1", "RS"], "to": "TERMINATE"},
          {"on": ["RA1", "RA1"], "to": "TERMINATE"}
        ]
      }
    }
  }
}"#;

fn twin() -> (Registry, sead::mdl::MdlDocument) {
    let doc = parse_str(SIM_GAPOPEN).expect("twin parses");
    (builtin_registry().overlay([doc.clone()]), doc)
}

#[test]
fn sim_of_two_gapopens_enumerates_four_tuples() {
    let (registry, doc) = twin();
    let b = compile(&doc, &registry).expect("twin compiles");
    let results: BTreeSet<Vec<String>> = enumerate_outcomes(&b).outcomes.into_iter().map(|o| o.result).collect();
    let rs = "RS".to_string();
    let ra = "RA1".to_string();
    let want = BTreeSet::from([
        vec![rs.clone(), rs.clone()],
        vec![rs.clone(), ra.clone()],
        vec![ra.clone(), rs.clone()],
        vec![ra.clone(), ra.clone()],
    ]);
    assert_eq!(results, want);
}

#[test]
fn close_pair_enumerates_four_tuples() {
    let lib = common::library();
    let results: BTreeSet<Vec<String>> =
        enumerate_outcomes(lib.get("CLOSE_PAIR").unwrap()).outcomes.into_iter().map(|o| o.result).collect();
    assert_eq!(results.len(), 4, "{results:?}");
}

#[test]
fn each_mutant_is_rejected_by_its_rule_only() {
    for (name, rule) in common::MUTANTS {
        let rules = common::mutant_error_rules(name);
        assert_eq!(rules, BTreeSet::from([rule.to_string()]), "{name}");
    }
}

#[test]
fn missing_dn_is_a_synchronisation_finding() {
    let doc = sead::mdl::parse(&common::mutant("missing_dn")).unwrap();
    let registry = builtin_registry().overlay([doc.clone()]);
    let b = compile(&doc, &registry).unwrap();
    assert!(check_stability(&b).iter().all(|d| !d.is_error()));
    assert!(check_synchronisation(&b).iter().any(|d| d.rule.id() == "DEADLOCK_RISK"));
}

#[test]
fn enumeration_is_deterministic() {
    let lib = common::library();
    for id in ["GAPCLOSE", "JOIN_MIDDLE", "CLOSE_PAIR"] {
        let a = enumerate_outcomes(lib.get(id).unwrap());
        let b = enumerate_outcomes(lib.get(id).unwrap());
        assert_eq!(a.outcomes, b.outcomes);
        assert_eq!(a.states_explored, b.states_explored);
    }
}
