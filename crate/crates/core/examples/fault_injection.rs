//! Drop each message and force each timer of every scenario in turn and
//! check that the platoons always settle in stable, consistent states.

use std::path::Path;
use std::sync::Arc;

use sead::catalogue::builtin_registry;
use sead::mdl::Library;
use sead::simulation::{covered, run, Faults, RunOptions, Scenario, SimConfig};
use sead::verification::enumerate_outcomes;

fn main() {
    let library = Arc::new(Library::build(&builtin_registry()).expect("catalogue compiles"));
    let config = SimConfig { sample_interval: 0.0, ..SimConfig::default() };
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("catalogue/scenario");
    let mut paths: Vec<_> = std::fs::read_dir(&dir).expect("scenario dir").map(|e| e.expect("entry").path()).collect();
    paths.sort();
    let (mut runs, mut bad) = (0, 0);
    for path in paths {
        let scenario = Scenario::load(&path).expect("scenario loads");
        let nominal = run(&scenario, &config, &library, RunOptions::default());
        let drops = (0..nominal.messages_sent).map(|n| Faults { drop_message: Some(n), ..Faults::default() });
        let forces = (0..nominal.timers_armed).map(|n| Faults { force_timer: Some(n), ..Faults::default() });
        for faults in drops.chain(forces) {
            runs += 1;
            let r = run(&scenario, &config, &library, RunOptions { seed: 0, faults });
            let mut problems = r.violations.clone();
            if !r.quiescent {
                problems.push("not quiescent".into());
            }
            if !r.all_stable() {
                problems.push(format!("unstable finals {:?}", r.finals));
            }
            for o in &r.observations {
                let outcomes = enumerate_outcomes(library.get(o.manoeuvre.as_str()).expect("compiled")).outcomes;
                if !covered(o, &outcomes) {
                    problems.push(format!("{} {} not enumerated", o.manoeuvre, o.outcome));
                }
            }
            if !problems.is_empty() {
                bad += 1;
                println!("{} {faults:?}: {problems:?}", path.display());
            }
        }
    }
    println!("{runs} faulted runs, {bad} with problems");
}
