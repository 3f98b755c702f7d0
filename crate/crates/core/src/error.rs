//! Crate-wide error type. Violations (semantic findings about an object that
//! parsed fine) live in [`crate::violation`]; errors are for inputs that cannot
//! be processed at all or for broken internal invariants.

use crate::violation::Violation;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input text.
    #[error("parse error ({file}:{line}): {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },

    /// Bad configuration, e.g. an atom symbol missing from the valence table.
    #[error("configuration error: {0}")]
    Config(String),

    /// An operation was called on arguments outside its stated precondition.
    #[error("precondition failed: {0}")]
    Precondition(String),

    /// A generator in a term sequence is not applicable to the graph reached
    /// at its position.
    #[error("generator {index} not applicable: {msg}")]
    NotApplicable { index: usize, msg: String },

    /// A structured object (graph, morphism, reaction, ...) failed validation
    /// where a valid one was required.
    #[error("invalid {what}: {}", crate::error::render(.violations))]
    Invalid {
        what: &'static str,
        violations: Vec<Violation>,
    },

    /// Requested item does not exist (no pushout complement, no matching, ...).
    #[error("{0}")]
    NotFound(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// A bug: an invariant the code relies on did not hold.
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl Error {
    pub fn invalid(what: &'static str, violations: Vec<Violation>) -> Self {
        Error::Invalid { what, violations }
    }

    /// Exit code class used by the command-line interface.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } | Error::Config(..) | Error::Io(..) => 2,
            Error::Internal(..) => 3,
            _ => 1,
        }
    }
}

pub(crate) fn render(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
