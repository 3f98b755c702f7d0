//! Chemical graphs with open valences, disconnection-rule terms, a normal-form
//! decision procedure, reaction rewriting via two pushout squares, a reaction
//! category with a sound and complete translation from terms, orientation-based
//! chirality detection and a bounded retrosynthetic step search.

pub mod bridge;
pub mod chirality;
pub mod dpo;
pub mod error;
pub mod graph;
pub mod morphism;
pub mod normal;
pub mod reaction;
pub mod retro;
pub mod samples;
pub mod term;
pub mod violation;

pub use error::Error;
pub use graph::{AtomLabel, BondLabel, ChemGraph, ValenceTable, VertexName};
pub use violation::Violation;

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;
