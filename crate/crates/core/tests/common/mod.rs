#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use sead::catalogue::builtin_registry;
use sead::mdl::Library;
use sead::simulation::{run, RunOptions, RunReport, Scenario, SimConfig};

pub fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn library() -> Arc<Library> {
    Arc::new(Library::build(&builtin_registry()).expect("catalogue compiles"))
}

pub fn scenario_path(name: &str) -> PathBuf {
    root().join("catalogue/scenario").join(format!("{name}.json"))
}

pub fn scenario(name: &str) -> Scenario {
    Scenario::load(&scenario_path(name)).expect("scenario loads")
}

pub fn quiet() -> SimConfig {
    SimConfig { sample_interval: 0.0, ..SimConfig::default() }
}

pub fn simulate(name: &str) -> RunReport {
    run(&scenario(name), &SimConfig::default(), &library(), RunOptions::default())
}

pub const SCENARIOS: &[&str] = &[
    "gapclose",
    "gapclose_abort",
    "join_tail",
    "join_tail_reject",
    "join_middle",
    "leave",
    "split",
    "close_pair",
];

pub fn mutant(name: &str) -> Vec<u8> {
    std::fs::read(root().join("catalogue/mutants").join(format!("{name}.mdl.json"))).expect("mutant exists")
}

pub const MUTANTS: &[(&str, &str)] = &[
    ("actor_violation", "PRIMITIVE_ACTOR_VIOLATION"),
    ("missing_dn", "DEADLOCK_RISK"),
    ("sim_overlap", "SIM_PARTICIPANT_OVERLAP"),
    ("unreachable_result", "UNREACHABLE_RESULT"),
    ("unstable_terminal", "STABILITY_TERMINAL_UNSTABLE"),
];

/// Error rule ids raised for a mutant by validation, then compilation and
/// verification when validation is clean.
pub fn mutant_error_rules(name: &str) -> std::collections::BTreeSet<String> {
    use sead::diagnostic::has_errors;
    use sead::mdl::{compile, parse, validate};
    let doc = parse(&mutant(name)).expect("mutant parses");
    let registry = builtin_registry().overlay([doc.clone()]);
    let mut diags = validate(&doc, &registry);
    if !has_errors(&diags) {
        let behaviour = compile(&doc, &registry).expect("validated mutant compiles");
        diags.extend(sead::verification::verify(&behaviour));
    }
    diags.iter().filter(|d| d.is_error()).map(|d| d.rule.id().to_string()).collect()
}
