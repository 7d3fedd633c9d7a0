//! Two gap closures run side by side under one leader. The verifier
//! enumerates the product of their results; forcing timers realizes the
//! mixed endings in simulation.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use sead::catalogue::builtin_registry;
use sead::mdl::Library;
use sead::simulation::{run, Faults, RunOptions, Scenario, SimConfig};
use sead::verification::enumerate_outcomes;

fn main() {
    let library = Arc::new(Library::build(&builtin_registry()).expect("catalogue compiles"));
    println!("enumerated:");
    for o in &enumerate_outcomes(library.get("CLOSE_PAIR").expect("in catalogue")).outcomes {
        println!("  {o}");
    }
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("catalogue/scenario/close_pair.json");
    let scenario = Scenario::load(&path).expect("scenario loads");
    let config = SimConfig { sample_interval: 0.0, ..SimConfig::default() };
    let nominal = run(&scenario, &config, &library, RunOptions::default());
    let mut seen = BTreeSet::new();
    for force in std::iter::once(None).chain((0..nominal.timers_armed).map(Some)) {
        let faults = Faults { force_timer: force, ..Faults::default() };
        let report = run(&scenario, &config, &library, RunOptions { seed: 0, faults });
        for o in report.observations.iter().filter(|o| o.manoeuvre.as_str() == "CLOSE_PAIR") {
            if seen.insert(o.outcome.result.clone()) {
                println!("force timer {force:?}: {}", o.outcome);
            }
        }
    }
    println!("{} of 4 result tuples realized", seen.len());
}
