//! A free vehicle asks to join at the tail, once admitted and once
//! refused by the leader's policy.

use std::path::Path;
use std::sync::Arc;

use sead::catalogue::builtin_registry;
use sead::mdl::Library;
use sead::simulation::{run, RunOptions, Scenario, SimConfig};

fn main() {
    let library = Arc::new(Library::build(&builtin_registry()).expect("catalogue compiles"));
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("catalogue/scenario");
    for name in ["join_tail", "join_tail_reject"] {
        let scenario = Scenario::load(&dir.join(format!("{name}.json"))).expect("scenario loads");
        let config = SimConfig { sample_interval: 0.0, ..SimConfig::default() };
        let report = run(&scenario, &config, &library, RunOptions::default());
        println!("{name}: {}", report.trace.messages().join(" | "));
        for r in report.trace.of_kind("manoeuvre") {
            println!("  step {} -> {}", r.str("step").unwrap_or("?"), r.str("next").unwrap_or("?"));
        }
        let finals: Vec<String> = report.finals.iter().map(|(v, s)| format!("{v}={s}")).collect();
        println!("  finals {}", finals.join(" "));
    }
}
