//! Structured validation findings.
//!
//! Every semantic check that can fail on structurally well-formed input
//! reports the full list of findings rather than stopping at the first one.
//! Each finding names the clause that failed (a stable kebab-case identifier),
//! the vertices or edges involved, and a human-readable detail string.

use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Stable identifier for the failed clause, e.g. `"valence"`.
    pub clause: &'static str,
    /// The vertex names (or other object names) the finding is about.
    pub subjects: Vec<String>,
    /// Human-readable explanation with the observed values.
    pub detail: String,
}

impl Violation {
    pub fn new<S: Into<String>>(
        clause: &'static str,
        subjects: Vec<String>,
        detail: S,
    ) -> Self {
        Violation {
            clause,
            subjects,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}]", self.clause)?;
        if !self.subjects.is_empty() {
            write!(f, " {}", self.subjects.join(","))?;
        }
        write!(f, ": {}", self.detail)
    }
}
