//! The manoeuvre description language: document model, strict parser,
//! canonical serializer, registry and validator.

pub mod compile;
pub mod document;
pub mod parse;
pub mod registry;
pub mod serialize;
pub mod validate;

pub use compile::{compile, single_step_manoeuvre, CompileError, CompiledBehaviour, CompiledManoeuvre, CompiledSub, Library};
pub use document::*;
pub use parse::{parse, parse_str, MdlError};
pub use registry::{DuplicateId, Registry};
pub use serialize::{digest, serialize, serialize_string};
pub use validate::validate;
