//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines always reach the console.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sead::catalogue::builtin_registry;
use sead::cli::main_with;
use sead::diagnostic::has_errors;
use sead::mdl::{parse, serialize, validate};
use sead::runtime::{PhysicalTarget, WorldView};
use sead::simulation::{covered, run, Body, Faults, Observation, PhysicalEvent, RunOptions, RunReport, SimConfig, World};
use sead::types::{IdleState, VehicleId};
use sead::verification::{enumerate_outcomes, Outcome};

/// Arrival tolerance for the headway criterion, m.
const GAP_TOLERANCE: f64 = 0.5;
/// Convergence deadline for the headway criterion, s.
const CONVERGE_WITHIN: f64 = 60.0;
const FUZZ_CASES: usize = 1000;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn v(id: &str) -> VehicleId {
    VehicleId::new(id)
}

fn nominal(name: &str) -> RunReport {
    run(&common::scenario(name), &common::quiet(), &common::library(), RunOptions::default())
}

fn members(r: &RunReport, leader: &str) -> Vec<String> {
    r.world.members(&v(leader)).iter().map(|m| m.to_string()).collect()
}

fn published(r: &RunReport, leader: &str) -> Vec<String> {
    r.world.published.get(&v(leader)).map(|l| l.iter().map(|m| m.to_string()).collect()).unwrap_or_default()
}

fn results_by_role(r: &RunReport) -> BTreeMap<String, String> {
    r.trace
        .of_kind("result")
        .map(|x| (x.str("role").unwrap_or("").to_string(), x.str("label").unwrap_or("").to_string()))
        .collect()
}

fn final_of(r: &RunReport, id: &str) -> Option<IdleState> {
    r.finals.get(&v(id)).copied()
}

fn gapclose_success() -> Check {
    let r = nominal("gapclose");
    let msgs = r.trace.messages();
    ensure(msgs == ["ORD/GAPCLOSE V1->V3", "DN/GAPCLOSE V3->V1"], format!("messages {msgs:?}"))?;
    ensure(final_of(&r, "V1") == Some(IdleState::Pl) && final_of(&r, "V3") == Some(IdleState::Pf), format!("finals {:?}", r.finals))?;
    let results = results_by_role(&r);
    ensure(results.get("A").map(String::as_str) == Some("RS") && results.get("B").map(String::as_str) == Some("RS"), format!("results {results:?}"))?;
    // ORD out, ORD in, B becomes TPL, B converges, DN out, DN in.
    let order: Vec<String> = r
        .trace
        .records
        .iter()
        .filter_map(|x| match x.kind.as_str() {
            "msg-sent" | "msg-delivered" => Some(format!("{} {}", x.kind, x.str("kind").unwrap_or(""))),
            "done" => Some("done".into()),
            "idle" => Some(format!("idle {}", x.str("to").unwrap_or(""))),
            _ => None,
        })
        .collect();
    let want = ["msg-sent ORD", "msg-delivered ORD", "idle TPL", "done", "msg-sent DN", "idle PF", "msg-delivered DN"];
    ensure(order == want, format!("kind order {order:?}"))?;
    Ok(msgs.join(", "))
}

fn gapclose_abort() -> Check {
    ensure(SimConfig::default().controlling_timeout == 30.0, "controlling timeout is not 30 s")?;
    let r = nominal("gapclose_abort");
    let kinds = r.trace.message_kinds();
    ensure(kinds == ["ORD", "ABT"], format!("messages {kinds:?}"))?;
    let upi = r.trace.of_kind("primitive").any(|p| p.vehicle == "V1" && p.str("op") == Some("UPI"));
    ensure(upi, "no UPI on A")?;
    ensure(final_of(&r, "V1") == Some(IdleState::Pl) && final_of(&r, "V3") == Some(IdleState::Pl), format!("finals {:?}", r.finals))?;
    ensure(members(&r, "V1") == ["V1", "V2"] && published(&r, "V1") == ["V1", "V2"], format!("A platoon {:?}", members(&r, "V1")))?;
    ensure(members(&r, "V3") == ["V3", "V4"], format!("B platoon {:?}", members(&r, "V3")))?;
    let results = results_by_role(&r);
    ensure(results.get("A").map(String::as_str) == Some("RA1") && results.get("B").map(String::as_str) == Some("RA1"), format!("results {results:?}"))?;
    Ok("ORD, ABT, UPI; V1 leads [V1, V2], V3 leads [V3, V4]".into())
}

fn join_tail() -> Check {
    let r = nominal("join_tail");
    let msgs: Vec<String> = r.trace.messages().iter().map(|m| m.split(' ').next().unwrap().to_string()).collect();
    let want = ["REQ/JOIN_TAIL", "ACK/JOIN_TAIL", "ORD/MOVETOPOS", "DN/MOVETOPOS", "ORD/ATTACH", "DN/ATTACH"];
    ensure(msgs == want, format!("messages {msgs:?}"))?;
    ensure(members(&r, "V1") == ["V1", "V2", "V3", "V4"] && published(&r, "V1") == ["V1", "V2", "V3", "V4"], format!("platoon {:?}", members(&r, "V1")))?;
    ensure(final_of(&r, "V4") == Some(IdleState::Pf), "joiner is not PF")?;

    let x = nominal("join_tail_reject");
    let kinds = x.trace.message_kinds();
    ensure(kinds == ["REQ", "NACK"], format!("rejection messages {kinds:?}"))?;
    ensure(final_of(&x, "V4") == Some(IdleState::Fv) && final_of(&x, "V1") == Some(IdleState::Pl), format!("rejection finals {:?}", x.finals))?;
    ensure(members(&x, "V1") == ["V1", "V2", "V3"], "rejection changed the platoon")?;
    ensure(x.all_stable() && x.violations.is_empty(), "rejection left an unstable vehicle")?;
    Ok("REQ ACK MOVETOPOS ATTACH; REQ NACK".into())
}

/// Every single-fault run: each sent message dropped, each armed timer
/// forced, in every scenario.
fn fault_matrix() -> Vec<(String, Faults, RunReport)> {
    let lib = common::library();
    let mut out = Vec::new();
    for name in common::SCENARIOS {
        let sc = common::scenario(name);
        let base = run(&sc, &common::quiet(), &lib, RunOptions::default());
        let drops = (0..base.messages_sent).map(|n| Faults { drop_message: Some(n), ..Faults::default() });
        let forces = (0..base.timers_armed).map(|n| Faults { force_timer: Some(n), ..Faults::default() });
        for faults in drops.chain(forces) {
            let r = run(&sc, &common::quiet(), &lib, RunOptions { seed: 0, faults });
            out.push((name.to_string(), faults, r));
        }
    }
    out
}

fn universal_stability(matrix: &[(String, Faults, RunReport)]) -> Check {
    let bad: Vec<String> = matrix
        .iter()
        .filter(|(_, _, r)| !(r.quiescent && r.all_stable() && r.violations.is_empty()))
        .map(|(n, f, r)| format!("{n} {f:?}: quiescent={} finals={:?} {:?}", r.quiescent, r.finals, r.violations))
        .collect();
    ensure(bad.is_empty(), format!("{} of {} runs: {}", bad.len(), matrix.len(), bad.join("; ")))?;
    Ok(format!("{} faulted runs, 0 violations", matrix.len()))
}

fn agreement(matrix: &[(String, Faults, RunReport)]) -> Check {
    let lib = common::library();
    let mut enumerated: BTreeMap<String, BTreeSet<Outcome>> = BTreeMap::new();
    let mut checked = 0;
    let mut uncovered = Vec::new();
    let nominals: Vec<RunReport> = common::SCENARIOS.iter().map(|s| nominal(s)).collect();
    let observations = matrix.iter().map(|(_, _, r)| r).chain(nominals.iter()).flat_map(|r| r.observations.iter());
    for o in observations {
        let set = enumerated
            .entry(o.manoeuvre.to_string())
            .or_insert_with(|| enumerate_outcomes(lib.get(o.manoeuvre.as_str()).unwrap()).outcomes);
        checked += 1;
        if !covered(o, set) {
            uncovered.push(format!("{} {}", o.manoeuvre, o.outcome));
        }
    }
    ensure(uncovered.is_empty(), format!("not enumerated: {uncovered:?}"))?;
    // The two endings criteria 1 and 2 observe, as the oracle for GAPCLOSE.
    let endings: BTreeSet<Outcome> = ["gapclose", "gapclose_abort"]
        .iter()
        .flat_map(|s| nominal(s).observations)
        .filter(|o: &Observation| o.manoeuvre.as_str() == "GAPCLOSE" && !o.partial)
        .map(|o| o.outcome)
        .collect();
    ensure(endings.len() == 2, format!("criteria 1/2 endings {endings:?}"))?;
    let gapclose = enumerate_outcomes(lib.get("GAPCLOSE").unwrap()).outcomes;
    ensure(gapclose == endings, format!("GAPCLOSE enumerates {gapclose:?}"))?;
    Ok(format!("{checked} observations covered; GAPCLOSE = {{{}}}", gapclose.iter().map(|o| o.to_string()).collect::<Vec<_>>().join(", ")))
}

fn sim_product(matrix: &[(String, Faults, RunReport)]) -> Check {
    let lib = common::library();
    let child: BTreeSet<String> = enumerate_outcomes(lib.get("GAPCLOSE").unwrap()).outcomes.into_iter().flat_map(|o| o.result).collect();
    ensure(child == BTreeSet::from(["RS".to_string(), "RA1".to_string()]), format!("child results {child:?}"))?;
    let product: BTreeSet<Vec<String>> = child.iter().flat_map(|a| child.iter().map(move |b| vec![a.clone(), b.clone()])).collect();
    let tuples: BTreeSet<Vec<String>> = enumerate_outcomes(lib.get("CLOSE_PAIR").unwrap()).outcomes.into_iter().map(|o| o.result).collect();
    ensure(tuples == product, format!("enumerated {tuples:?}"))?;
    let realized: BTreeSet<Vec<String>> = matrix
        .iter()
        .filter(|(n, _, _)| n == "close_pair")
        .flat_map(|(_, _, r)| r.observations.iter())
        .chain(nominal("close_pair").observations.iter())
        .filter(|o| o.manoeuvre.as_str() == "CLOSE_PAIR")
        .map(|o| o.outcome.result.clone())
        .collect();
    ensure(realized.len() >= 3, format!("realized only {realized:?}"))?;
    Ok(format!("4 tuples enumerated, {} realized", realized.len()))
}

fn mdl_files() -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = fs::read_dir(common::root().join("catalogue"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.to_string_lossy().ends_with(".mdl.json"))
        .collect();
    files.sort();
    files
}

fn round_trip_and_fuzz() -> Check {
    let files: Vec<(PathBuf, Vec<u8>)> = mdl_files().into_iter().map(|p| { let b = fs::read(&p).unwrap(); (p, b) }).collect();
    ensure(!files.is_empty(), "no catalogue files")?;
    for (p, bytes) in &files {
        let doc = parse(bytes).map_err(|e| format!("{}: {e}", p.display()))?;
        ensure(&serialize(&doc) == bytes, format!("{} is not byte-identical", p.display()))?;
    }
    let registry = builtin_registry();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let alphabet = b"0123456789abcdefRSPLAB{}[]:,\" .-_$\n";
    let mut counts = [0usize; 3];
    for case in 0..FUZZ_CASES {
        let (p, bytes) = &files[rng.gen_range(0..files.len())];
        let mut edited = bytes.clone();
        let at = rng.gen_range(0..edited.len());
        let ch = alphabet[rng.gen_range(0..alphabet.len())];
        match rng.gen_range(0..3) {
            0 => edited[at] = ch,
            1 => {
                edited.remove(at);
            }
            _ => edited.insert(at, ch),
        }
        let original = parse(bytes).unwrap();
        match parse(&edited) {
            Err(_) => counts[0] += 1,
            Ok(d) if d == original => counts[1] += 1,
            Ok(d) => {
                let reg = registry.overlay([d.clone()]);
                ensure(has_errors(&validate(&d, &reg)), format!("case {case} on {}: silent change", p.display()))?;
                counts[2] += 1;
            }
        }
    }
    Ok(format!("{} files byte-identical; fuzz {FUZZ_CASES}: {} rejected, {} equal, {} flagged", files.len(), counts[0], counts[1], counts[2]))
}

fn determinism() -> Check {
    let lib = common::library();
    let config = SimConfig { drop_probability: 0.3, ..SimConfig::default() };
    for name in common::SCENARIOS {
        let sc = common::scenario(name);
        let a = run(&sc, &config, &lib, RunOptions { seed: 42, ..RunOptions::default() }).trace.to_jsonl();
        let b = run(&sc, &config, &lib, RunOptions { seed: 42, ..RunOptions::default() }).trace.to_jsonl();
        ensure(a == b, format!("{name}: two runs differ"))?;
    }
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for (dir, jobs) in dirs.iter().zip(["1", "4"]) {
        let mut args: Vec<String> = vec!["sead".into(), "run".into()];
        args.extend(common::SCENARIOS.iter().map(|s| common::scenario_path(s).display().to_string()));
        args.extend(["--seed", "42", "--drop", "0.3", "--jobs", jobs, "--trace"].map(String::from));
        args.push(dir.path().display().to_string());
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = main_with(args, None, &mut out, &mut err);
        ensure(code != 2, format!("run failed: {}", String::from_utf8_lossy(&err)))?;
    }
    for name in common::SCENARIOS {
        let x = fs::read(dirs[0].path().join(format!("{name}.jsonl"))).map_err(|e| e.to_string())?;
        let y = fs::read(dirs[1].path().join(format!("{name}.jsonl"))).map_err(|e| e.to_string())?;
        ensure(x == y, format!("{name}: --jobs 1 and --jobs 4 differ"))?;
    }
    Ok(format!("{} scenarios identical across runs and --jobs", common::SCENARIOS.len()))
}

fn physics() -> Check {
    let pair = |target: PhysicalTarget| {
        let mut w = World::new(SimConfig::default());
        w.add_vehicle(v("V1"), Body { lane: 0, s: 100.0, v: 20.0 }, None);
        w.add_vehicle(v("V2"), Body { lane: 0, s: 60.0, v: 20.0 }, Some(target));
        w.leader_of.insert(v("V2"), v("V1"));
        w
    };
    let mut w = pair(PhysicalTarget::TimeHeadway(0.5));
    let dt = w.config.dt;
    let mut converged_at = None;
    for k in 1..=(CONVERGE_WITHIN / dt).round() as usize {
        w.advance_physics(dt);
        if w.arrival_check(&v("V2")) == Some(PhysicalEvent::Done) && converged_at.is_none() {
            converged_at = Some(k as f64 * dt);
        }
    }
    let gap = w.body(&v("V1")).unwrap().s - w.body(&v("V2")).unwrap().s;
    ensure(converged_at.is_some(), "SH never converged")?;
    ensure((gap - 10.0).abs() <= GAP_TOLERANCE, format!("gap {gap:.3} m"))?;

    let mut w = pair(PhysicalTarget::Position { target: v("V1"), offset: -20.0, lane: None });
    let mut arrivals = 0;
    for _ in 0..(120.0 / dt) as usize {
        w.advance_physics(dt);
        if w.arrival_check(&v("V2")) == Some(PhysicalEvent::Arrived) {
            arrivals += 1;
        }
    }
    ensure(arrivals == 1, format!("MTP arrived {arrivals} times"))?;

    let mut min_gap = f64::INFINITY;
    for name in common::SCENARIOS {
        let r = nominal(name);
        ensure(r.min_gap >= 0.0, format!("{name}: gap {:.3} m", r.min_gap))?;
        min_gap = min_gap.min(r.min_gap);
    }
    Ok(format!("gap {gap:.3} m after {:.1} s; 1 arrival; min nominal gap {min_gap:.3} m", converged_at.unwrap()))
}

fn mutants() -> Check {
    let mut seen = Vec::new();
    for (name, rule) in common::MUTANTS {
        let rules = common::mutant_error_rules(name);
        ensure(rules == BTreeSet::from([rule.to_string()]), format!("{name}: {rules:?}"))?;
        seen.push(format!("{name}={rule}"));
    }
    Ok(seen.join(" "))
}

fn main() {
    let matrix = fault_matrix();
    type Criterion<'a> = (&'static str, Box<dyn Fn() -> Check + 'a>);
    let criteria: Vec<Criterion> = vec![
        ("GAPCLOSE golden trace (success)", Box::new(gapclose_success)),
        ("GAPCLOSE golden trace (abort)", Box::new(gapclose_abort)),
        ("JOIN_TAIL protocol conformance", Box::new(join_tail)),
        ("universal stability under fault injection", Box::new(|| universal_stability(&matrix))),
        ("verifier/simulator agreement", Box::new(|| agreement(&matrix))),
        ("SIM wrapper product law", Box::new(|| sim_product(&matrix))),
        ("MDL round-trip and strictness", Box::new(round_trip_and_fuzz)),
        ("determinism", Box::new(determinism)),
        ("physics contract", Box::new(physics)),
        ("mutant detection", Box::new(mutants)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
