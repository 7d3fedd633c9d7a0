mod common;

use std::fs;
use std::path::{Path, PathBuf};

use sead::cli::{main_with, CONFIG_ENV, EXIT_FINDINGS, EXIT_NON_QUIESCENT, EXIT_OK, EXIT_USAGE};
use sead::simulation::Trace;

struct Output {
    code: i32,
    out: String,
    err: String,
}

fn sead(args: &[&str], env_config: Option<&Path>) -> Output {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("sead").chain(args.iter().copied());
    let code = main_with(argv, env_config.map(PathBuf::from), &mut out, &mut err);
    Output { code, out: String::from_utf8(out).unwrap(), err: String::from_utf8(err).unwrap() }
}

fn path(rel: &str) -> String {
    common::root().join(rel).display().to_string()
}

fn mutant_path(name: &str) -> String {
    path(&format!("catalogue/mutants/{name}.mdl.json"))
}

#[test]
fn config_variable_name() {
    assert_eq!(CONFIG_ENV, "SEAD_CONFIG");
}

#[test]
fn catalogue_validates_and_verifies() {
    assert_eq!(sead(&["validate"], None).code, EXIT_OK);
    assert_eq!(sead(&["verify"], None).code, EXIT_OK);
    assert_eq!(sead(&["validate", &path("catalogue")], None).code, EXIT_OK);
}

#[test]
fn mutants_fail_with_their_rule() {
    for (name, rule) in common::MUTANTS {
        let o = sead(&["verify", &mutant_path(name)], None);
        assert_eq!(o.code, EXIT_FINDINGS, "{name}");
        assert!(o.err.contains(rule), "{name}: {}", o.err);
    }
}

#[test]
fn deadlock_needs_the_verifier() {
    assert_eq!(sead(&["validate", &mutant_path("missing_dn")], None).code, EXIT_OK);
    assert_eq!(sead(&["verify", &mutant_path("missing_dn")], None).code, EXIT_FINDINGS);
}

#[test]
fn json_diagnostics_go_to_stdout() {
    let o = sead(&["validate", "--json", &mutant_path("actor_violation")], None);
    assert_eq!(o.code, EXIT_FINDINGS);
    let diags: serde_json::Value = serde_json::from_str(&o.out).unwrap();
    let rules: Vec<&str> = diags.as_array().unwrap().iter().filter_map(|d| d["rule"].as_str()).collect();
    assert!(rules.contains(&"PRIMITIVE_ACTOR_VIOLATION"), "{rules:?}");
}

#[test]
fn enumeration_lists_gapclose_endings() {
    let o = sead(&["verify", "--enumerate", &path("catalogue/GAPCLOSE.mdl.json")], None);
    assert_eq!(o.code, EXIT_OK);
    assert_eq!(o.out, "GAPCLOSE\n  (RA1: A=PL,B=PL)\n  (RS: A=PL,B=PF)\n");
}

#[test]
fn usage_and_io_errors() {
    assert_eq!(sead(&["validate", "/nonexistent/x.mdl.json"], None).code, EXIT_USAGE);
    assert_eq!(sead(&["teleport"], None).code, EXIT_USAGE);
    assert_eq!(sead(&["run"], None).code, EXIT_USAGE);
}

#[test]
fn run_writes_a_jsonl_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("gapclose.jsonl");
    let o = sead(&["run", &common::scenario_path("gapclose").display().to_string(), "--trace", &trace.display().to_string()], None);
    assert_eq!(o.code, EXIT_OK, "{}", o.err);
    assert!(o.out.contains("GAPCLOSE") && o.out.contains("RS"));
    let parsed = Trace::from_jsonl(&fs::read_to_string(&trace).unwrap()).unwrap();
    assert_eq!(parsed.messages(), ["ORD/GAPCLOSE V1->V3", "DN/GAPCLOSE V3->V1"]);
}

fn scenario_args() -> Vec<String> {
    common::SCENARIOS.iter().map(|s| common::scenario_path(s).display().to_string()).collect()
}

#[test]
fn parallel_runs_match_sequential_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = scenario_args();
    let run = |dir: &Path, jobs: &str| {
        let mut v: Vec<String> = vec!["run".into()];
        v.extend(args.iter().cloned());
        v.extend(["--seed".into(), "42".into(), "--drop".into(), "0.2".into(), "--jobs".into(), jobs.into()]);
        v.extend(["--trace".into(), dir.display().to_string()]);
        let refs: Vec<&str> = v.iter().map(String::as_str).collect();
        sead(&refs, None)
    };
    let seq = run(a.path(), "1");
    let par = run(b.path(), "4");
    assert_eq!(seq.out, par.out);
    for s in common::SCENARIOS {
        let x = fs::read(a.path().join(format!("{s}.jsonl"))).unwrap();
        let y = fs::read(b.path().join(format!("{s}.jsonl"))).unwrap();
        assert_eq!(x, y, "{s}");
    }
}

#[test]
fn config_file_then_flags() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("lossy.json");
    fs::write(&config, r#"{"drop_probability": 1.0}"#).unwrap();
    let scenario = common::scenario_path("gapclose").display().to_string();
    let from_env = sead(&["run", &scenario], Some(&config));
    assert!(from_env.out.contains("RA1"), "{}", from_env.out);
    let overridden = sead(&["run", &scenario, "--drop", "0"], Some(&config));
    assert!(overridden.out.contains(" RS "), "{}", overridden.out);
    let explicit = sead(&["run", &scenario, "--config", &config.display().to_string()], None);
    assert!(explicit.out.contains("RA1"));
}

#[test]
fn short_horizon_is_not_quiescent() {
    let scenario = common::scenario_path("gapclose").display().to_string();
    assert_eq!(sead(&["run", &scenario, "--t-max", "10"], None).code, EXIT_NON_QUIESCENT);
}

#[test]
fn export_dot_by_id_and_file() {
    let o = sead(&["export-dot", "JOIN_TAIL"], None);
    assert_eq!(o.code, EXIT_OK);
    assert!(o.out.starts_with("digraph \"JOIN_TAIL\""));
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gapclose.dot");
    let o = sead(&["export-dot", &path("catalogue/GAPCLOSE.mdl.json"), "-o", &out.display().to_string()], None);
    assert_eq!(o.code, EXIT_OK);
    assert!(fs::read_to_string(out).unwrap().contains("cluster_B"));
    assert_eq!(sead(&["export-dot", "TELEPORT"], None).code, EXIT_USAGE);
}
