//! Write the Graphviz graph of every catalogue entry into a directory,
//! default `target/dot`.

use std::path::PathBuf;

use sead::catalogue::builtin_registry;
use sead::dot::document_dot;

fn main() {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("target/dot"));
    std::fs::create_dir_all(&out).expect("output directory");
    for doc in builtin_registry().iter() {
        let path = out.join(format!("{}.dot", doc.id));
        std::fs::write(&path, document_dot(doc)).expect("writable");
        println!("{}", path.display());
    }
}
