//! Close a gap in a four-vehicle platoon, then the same with an obstacle
//! in the way so the controlling timeout aborts and splits the platoon.

use std::path::Path;
use std::sync::Arc;

use sead::catalogue::builtin_registry;
use sead::mdl::Library;
use sead::simulation::{run, RunOptions, Scenario, SimConfig};

fn main() {
    let library = Arc::new(Library::build(&builtin_registry()).expect("catalogue compiles"));
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("catalogue/scenario");
    for name in ["gapclose", "gapclose_abort"] {
        let scenario = Scenario::load(&dir.join(format!("{name}.json"))).expect("scenario loads");
        let report = run(&scenario, &SimConfig::default(), &library, RunOptions::default());
        println!("{name}");
        for m in report.trace.messages() {
            println!("  {m}");
        }
        for s in &report.summary {
            println!("  {} -> {} after {:.1} s", s.manoeuvre, s.result.join(","), s.duration);
        }
        let finals: Vec<String> = report.finals.iter().map(|(v, s)| format!("{v}={s}")).collect();
        println!("  finals {}", finals.join(" "));
        for (leader, members) in &report.world.published {
            let ids: Vec<String> = members.iter().map(|m| m.to_string()).collect();
            println!("  {leader} leads [{}]", ids.join(", "));
        }
    }
}
