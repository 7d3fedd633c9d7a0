pub mod catalogue;
pub mod cli;
pub mod diagnostic;
pub mod dot;
pub mod mdl;
pub mod params;
pub mod runtime;
pub mod simulation;
pub mod statemachine;
pub mod types;
pub mod verification;
