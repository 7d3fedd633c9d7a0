//! Run the verifier over the catalogue and the shipped mutants.

use std::path::Path;

use sead::catalogue::builtin_registry;
use sead::diagnostic::has_errors;
use sead::mdl::{compile, parse, validate};
use sead::verification::{enumerate_outcomes, verify};

fn main() {
    let registry = builtin_registry();
    for doc in registry.manoeuvres() {
        let behaviour = compile(doc, &registry).expect("catalogue compiles");
        let en = enumerate_outcomes(&behaviour);
        println!("{} ({} product states)", doc.id, en.states_explored);
        for o in &en.outcomes {
            println!("  {o}");
        }
    }
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("catalogue/mutants");
    let mut paths: Vec<_> = std::fs::read_dir(&dir).expect("mutant dir").map(|e| e.expect("entry").path()).collect();
    paths.sort();
    for path in paths {
        let doc = parse(&std::fs::read(&path).expect("readable")).expect("mutant parses");
        let reg = registry.overlay([doc.clone()]);
        let mut diags = validate(&doc, &reg);
        if !has_errors(&diags) {
            diags.extend(verify(&compile(&doc, &reg).expect("valid mutant compiles")));
        }
        let rules: Vec<&str> = diags.iter().filter(|d| d.is_error()).map(|d| d.rule.id()).collect();
        println!("{}: {}", path.file_name().expect("file").to_string_lossy(), rules.join(", "));
    }
}
