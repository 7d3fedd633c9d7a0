//! Parse, validate and compile every built-in MDL document.

use sead::catalogue::builtin_registry;
use sead::diagnostic::has_errors;
use sead::mdl::{compile, validate, CompiledBehaviour};

fn main() {
    let registry = builtin_registry();
    let mut failed = false;
    for doc in registry.iter() {
        let diags = validate(doc, &registry);
        for d in &diags {
            println!("  {d}");
        }
        failed |= has_errors(&diags);
        let shape = match compile(doc, &registry) {
            Ok(CompiledBehaviour::Sub(s)) => format!("sub-manoeuvre, {} reactive role(s)", s.reactive.len()),
            Ok(CompiledBehaviour::Manoeuvre(m)) => format!("manoeuvre, {} step(s)", m.linked.len()),
            Err(e) => format!("does not compile: {e}"),
        };
        println!("{:<12} {shape}", doc.id.as_str());
    }
    if failed {
        std::process::exit(1);
    }
}
