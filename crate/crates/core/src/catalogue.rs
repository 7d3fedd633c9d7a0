//! The built-in manoeuvre catalogue, embedded at compile time.

use crate::mdl::{parse, MdlDocument, MdlError, Registry};

macro_rules! sources {
    ($($name:literal),+ $(,)?) => {
        /// (file name, canonical MDL text) of every shipped document.
        pub const SOURCES: &[(&str, &str)] = &[
            $(($name, include_str!(concat!("../catalogue/", $name)))),+
        ];
    };
}

sources! {
    "ATTACH.mdl.json",
    "GAPCLOSE.mdl.json",
    "GAPOPEN.mdl.json",
    "LC_BPF.mdl.json",
    "LEAVE_PREP.mdl.json",
    "MOVETOPOS.mdl.json",
    "NEGOTIATE.mdl.json",
    "RELEASE.mdl.json",
    "SPLIT_AT.mdl.json",
    "CLOSE_PAIR.mdl.json",
    "JOIN_MIDDLE.mdl.json",
    "JOIN_TAIL.mdl.json",
    "LEAVE.mdl.json",
    "SPLIT.mdl.json",
}

/// Manoeuvres whose first step answers a request from a free vehicle.
pub const REQUESTED: &[&str] = &["JOIN_TAIL", "JOIN_MIDDLE"];

pub fn documents() -> Result<Vec<MdlDocument>, (String, MdlError)> {
    SOURCES
        .iter()
        .map(|(name, text)| parse(text.as_bytes()).map_err(|e| (name.to_string(), e)))
        .collect()
}

/// Registry of the built-in catalogue. The shipped files are checked by the
/// test suite, so a failure here is a build defect.
pub fn builtin_registry() -> Registry {
    let docs = documents().unwrap_or_else(|(name, e)| panic!("catalogue/{name}: {e}"));
    Registry::new(docs).expect("catalogue ids are unique")
}
