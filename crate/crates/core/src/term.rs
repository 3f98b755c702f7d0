//! Elementary edit steps on chemical graphs and sequences of such steps.
//!
//! A [`Generator`] is one edit step: touching a vertex ([`Generator::Touch`]),
//! renaming a marker ([`Generator::Rename`]), or one of four bond/charge
//! edits together with their inverses ("barred" steps):
//!
//! * [`Generator::Release`] — `E(u|a,b)` — frees one unit of negative charge
//!   from an anionic element vertex `u` into an isolated charged marker `b`,
//!   adding a neutral marker `a` on the freed bonding slot.
//! * [`Generator::Ionize`] — `E(u,v)` — heterolytically shifts the bonding
//!   pair of a single bond `u–v` onto the marker `v`, leaving `u` one charge
//!   more positive and `v` an isolated charged marker.
//! * [`Generator::Separate`] — `I(u,v)` — deletes the ionic bond of an ion
//!   pair, keeping both charges.
//! * [`Generator::Cleave`] — `C(u,v|a,b)` — lowers the order of a covalent
//!   bond `u–v` by one and caps the freed slots with fresh neutral markers
//!   `a` (on `u`) and `b` (on `v`).
//!
//! Every step is a partial endofunction on chemical graphs: it is defined
//! exactly when its local side conditions hold *and* the edited graph is
//! again chemical. Barred steps are the set-theoretic inverses of their
//! unbarred counterparts, implemented by explicit inverse edits whose domain
//! is the image of the forward step.
//!
//! A [`Term`] is a finite sequence of generators, composed left to right
//! (`t;s` runs `t` first). Terms form a free monoid with an involution
//! [`Term::dagger`] that reverses the sequence and bars every step. The text
//! syntax is `id`, `S(u)`, `R(u>v)`, `E(u|a,b)`, `E(u,v)`, `I(u,v)`,
//! `C(u,v|a,b)`, with `~` prefixing a barred step and `;` for composition.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{render, Error};
use crate::graph::{AtomLabel, BondLabel, ChemGraph, ValenceTable, VertexName, MAX_COV};
use crate::Result;

/// One elementary edit step.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Generator {
    /// `id` — no edit.
    Id,
    /// `S(u)` — requires `u` to be present, edits nothing.
    Touch(VertexName),
    /// `R(u>v)` — renames marker `u` to `v` (`v` must be free or equal `u`).
    Rename(VertexName, VertexName),
    /// `E(u|a,b)` / `~E(u|a,b)` — frees a negative charge of `u` into an
    /// isolated marker `b`, capping the freed slot with marker `a`.
    Release {
        bar: bool,
        u: VertexName,
        a: VertexName,
        b: VertexName,
    },
    /// `E(u,v)` / `~E(u,v)` — shifts the bonding pair of the single bond
    /// `u–v` onto the marker `v`.
    Ionize {
        bar: bool,
        u: VertexName,
        v: VertexName,
    },
    /// `I(u,v)` / `~I(u,v)` — deletes (restores) the ionic bond of an ion
    /// pair, keeping charges.
    Separate {
        bar: bool,
        u: VertexName,
        v: VertexName,
    },
    /// `C(u,v|a,b)` / `~C(u,v|a,b)` — lowers (raises) the order of the
    /// covalent bond `u–v` by one, capping (consuming) markers `a` and `b`.
    Cleave {
        bar: bool,
        u: VertexName,
        v: VertexName,
        a: VertexName,
        b: VertexName,
    },
}

/// Classification of generators. The variant order is the block order of the
/// staged form produced by normalization, so sorting by `StepKind` groups a
/// staged term correctly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StepKind {
    Separate,
    Cleave,
    Release,
    Ionize,
    IonizeBar,
    ReleaseBar,
    CleaveBar,
    SeparateBar,
    Rename,
    Touch,
    Id,
}

impl StepKind {
    /// The kind of the inverse step.
    pub fn bar(self) -> StepKind {
        match self {
            StepKind::Separate => StepKind::SeparateBar,
            StepKind::Cleave => StepKind::CleaveBar,
            StepKind::Release => StepKind::ReleaseBar,
            StepKind::Ionize => StepKind::IonizeBar,
            StepKind::IonizeBar => StepKind::Ionize,
            StepKind::ReleaseBar => StepKind::Release,
            StepKind::CleaveBar => StepKind::Cleave,
            StepKind::SeparateBar => StepKind::Separate,
            other => other,
        }
    }

    /// True for the four unbarred edit rules.
    pub fn is_disconnection(self) -> bool {
        matches!(
            self,
            StepKind::Separate | StepKind::Cleave | StepKind::Release | StepKind::Ionize
        )
    }

    /// True for the four barred (inverse) edit rules.
    pub fn is_connection(self) -> bool {
        matches!(
            self,
            StepKind::SeparateBar | StepKind::CleaveBar | StepKind::ReleaseBar | StepKind::IonizeBar
        )
    }
}

impl Generator {
    pub fn kind(&self) -> StepKind {
        match self {
            Generator::Id => StepKind::Id,
            Generator::Touch(..) => StepKind::Touch,
            Generator::Rename(..) => StepKind::Rename,
            Generator::Release { bar: false, .. } => StepKind::Release,
            Generator::Release { bar: true, .. } => StepKind::ReleaseBar,
            Generator::Ionize { bar: false, .. } => StepKind::Ionize,
            Generator::Ionize { bar: true, .. } => StepKind::IonizeBar,
            Generator::Separate { bar: false, .. } => StepKind::Separate,
            Generator::Separate { bar: true, .. } => StepKind::SeparateBar,
            Generator::Cleave { bar: false, .. } => StepKind::Cleave,
            Generator::Cleave { bar: true, .. } => StepKind::CleaveBar,
        }
    }

    /// The inverse step: reverses the edit. `S`, `id` are self-inverse,
    /// `R(u>v)` inverts to `R(v>u)`, the four rules toggle their bar.
    pub fn bar(&self) -> Generator {
        match self {
            Generator::Id => Generator::Id,
            Generator::Touch(u) => Generator::Touch(u.clone()),
            Generator::Rename(u, v) => Generator::Rename(v.clone(), u.clone()),
            Generator::Release { bar, u, a, b } => Generator::Release {
                bar: !bar,
                u: u.clone(),
                a: a.clone(),
                b: b.clone(),
            },
            Generator::Ionize { bar, u, v } => Generator::Ionize {
                bar: !bar,
                u: u.clone(),
                v: v.clone(),
            },
            Generator::Separate { bar, u, v } => Generator::Separate {
                bar: !bar,
                u: u.clone(),
                v: v.clone(),
            },
            Generator::Cleave { bar, u, v, a, b } => Generator::Cleave {
                bar: !bar,
                u: u.clone(),
                v: v.clone(),
                a: a.clone(),
                b: b.clone(),
            },
        }
    }

    /// All vertex names mentioned by the step, in field order.
    pub fn names(&self) -> Vec<&VertexName> {
        match self {
            Generator::Id => vec![],
            Generator::Touch(u) => vec![u],
            Generator::Rename(u, v) => vec![u, v],
            Generator::Release { u, a, b, .. } => vec![u, a, b],
            Generator::Ionize { u, v, .. } => vec![u, v],
            Generator::Separate { u, v, .. } => vec![u, v],
            Generator::Cleave { u, v, a, b, .. } => vec![u, v, a, b],
        }
    }

    /// Names written as superscripts in the staged notation: the edited
    /// element vertices of a rule (`E(u,v)` and `I(u,v)` count both names).
    pub fn upper_names(&self) -> Vec<&VertexName> {
        match self {
            Generator::Release { u, .. } => vec![u],
            Generator::Ionize { u, v, .. } | Generator::Separate { u, v, .. } => vec![u, v],
            Generator::Cleave { u, v, .. } => vec![u, v],
            _ => vec![],
        }
    }

    /// Names written as subscripts in the staged notation: the marker names a
    /// rule introduces (unbarred) or consumes (barred).
    pub fn lower_names(&self) -> Vec<&VertexName> {
        match self {
            Generator::Release { a, b, .. } => vec![a, b],
            Generator::Cleave { a, b, .. } => vec![a, b],
            _ => vec![],
        }
    }

    pub fn mentions(&self, name: &str) -> bool {
        self.names().iter().any(|n| n.as_str() == name)
    }

    /// Renames every mentioned vertex through `map` simultaneously; names
    /// missing from the map stay as they are.
    pub fn rename_names(&self, map: &std::collections::BTreeMap<VertexName, VertexName>) -> Generator {
        let sub = |n: &VertexName| -> VertexName { map.get(n).cloned().unwrap_or_else(|| n.clone()) };
        match self {
            Generator::Id => Generator::Id,
            Generator::Touch(u) => Generator::Touch(sub(u)),
            Generator::Rename(u, v) => Generator::Rename(sub(u), sub(v)),
            Generator::Release { bar, u, a, b } => Generator::Release {
                bar: *bar,
                u: sub(u),
                a: sub(a),
                b: sub(b),
            },
            Generator::Ionize { bar, u, v } => Generator::Ionize {
                bar: *bar,
                u: sub(u),
                v: sub(v),
            },
            Generator::Separate { bar, u, v } => Generator::Separate {
                bar: *bar,
                u: sub(u),
                v: sub(v),
            },
            Generator::Cleave { bar, u, v, a, b } => Generator::Cleave {
                bar: *bar,
                u: sub(u),
                v: sub(v),
                a: sub(a),
                b: sub(b),
            },
        }
    }

    /// Replaces every occurrence of `old` among the step's names by `new`.
    pub fn substitute(&self, old: &str, new: &str) -> Generator {
        let sub = |n: &VertexName| -> VertexName {
            if n == old {
                new.to_string()
            } else {
                n.clone()
            }
        };
        match self {
            Generator::Id => Generator::Id,
            Generator::Touch(u) => Generator::Touch(sub(u)),
            Generator::Rename(u, v) => Generator::Rename(sub(u), sub(v)),
            Generator::Release { bar, u, a, b } => Generator::Release {
                bar: *bar,
                u: sub(u),
                a: sub(a),
                b: sub(b),
            },
            Generator::Ionize { bar, u, v } => Generator::Ionize {
                bar: *bar,
                u: sub(u),
                v: sub(v),
            },
            Generator::Separate { bar, u, v } => Generator::Separate {
                bar: *bar,
                u: sub(u),
                v: sub(v),
            },
            Generator::Cleave { bar, u, v, a, b } => Generator::Cleave {
                bar: *bar,
                u: sub(u),
                v: sub(v),
                a: sub(a),
                b: sub(b),
            },
        }
    }

    /// Checks the structural invariant: the names of one rule step must be
    /// pairwise distinct. (`R(u>u)` is allowed; it acts as a no-op rename.)
    pub fn validate(&self) -> Result<()> {
        let names = match self {
            Generator::Rename(..) => return Ok(()),
            other => other.names(),
        };
        let set: BTreeSet<&VertexName> = names.iter().copied().collect();
        if set.len() != names.len() {
            return Err(Error::Precondition(format!(
                "{self}: vertex names within one generator must be pairwise distinct"
            )));
        }
        Ok(())
    }

    /// Applies the step to a chemical graph. The input is assumed chemical;
    /// the step is undefined (error [`Error::NotApplicable`] with index 0)
    /// unless its side conditions hold and the edited graph is chemical again.
    pub fn apply(&self, g: &ChemGraph, valences: &ValenceTable) -> Result<ChemGraph> {
        self.validate().map_err(|_| self.undefined(
            "vertex names within one generator must be pairwise distinct".to_string(),
        ))?;
        match self {
            Generator::Id => Ok(g.clone()),
            Generator::Touch(u) => {
                self.need_vertex(g, u)?;
                Ok(g.clone())
            }
            Generator::Rename(u, v) => {
                self.need_vertex(g, u)?;
                if !g.is_alpha_vertex(u) {
                    return Err(self.undefined(format!("`{u}` is not a marker vertex")));
                }
                if v != u && g.has_vertex(v) {
                    return Err(self.undefined(format!("name `{v}` is already in use")));
                }
                g.rename_with(|n| Ok(if n == u { v.clone() } else { n.to_string() }))
            }
            Generator::Release { bar: false, u, a, b } => {
                self.need_element(g, u)?;
                if g.charge(u) >= 0 {
                    return Err(self.undefined(format!("`{u}` must carry negative charge")));
                }
                self.need_free_name(g, a)?;
                self.need_free_name(g, b)?;
                let mut out = g.clone();
                out.set_charge(u, g.charge(u) + 1)?;
                out.add_atom(a, AtomLabel::Alpha, 0)?;
                out.add_atom(b, AtomLabel::Alpha, -1)?;
                out.set_bond(u, a, BondLabel::Covalent(1))?;
                self.finish(out, valences)
            }
            Generator::Release { bar: true, u, a, b } => {
                self.need_element(g, u)?;
                if g.charge(u) > 0 {
                    return Err(self.undefined(format!("`{u}` must not carry positive charge")));
                }
                self.need_capping_marker(g, a, u)?;
                self.need_marker(g, b)?;
                if g.charge(b) != -1 || !g.nbrs(b).is_empty() {
                    return Err(self.undefined(format!(
                        "marker `{b}` must be isolated with charge -1"
                    )));
                }
                let mut out = g.clone();
                out.remove_vertex(a)?;
                out.remove_vertex(b)?;
                out.set_charge(u, g.charge(u) - 1)?;
                self.finish(out, valences)
            }
            Generator::Ionize { bar: false, u, v } => {
                self.need_element(g, u)?;
                self.need_marker(g, v)?;
                if g.charge(u) < 0 {
                    return Err(self.undefined(format!("`{u}` must not carry negative charge")));
                }
                if g.bond(u, v) != BondLabel::Covalent(1) {
                    return Err(self.undefined(format!(
                        "requires a single covalent bond between `{u}` and `{v}`"
                    )));
                }
                let mut out = g.clone();
                out.set_charge(u, g.charge(u) + 1)?;
                out.set_charge(v, -1)?;
                out.set_bond(u, v, BondLabel::NONE)?;
                self.finish(out, valences)
            }
            Generator::Ionize { bar: true, u, v } => {
                self.need_element(g, u)?;
                self.need_marker(g, v)?;
                if g.charge(u) <= 0 {
                    return Err(self.undefined(format!("`{u}` must carry positive charge")));
                }
                if g.charge(v) != -1 {
                    return Err(self.undefined(format!("`{v}` must carry charge -1")));
                }
                if !g.bond(u, v).is_none() {
                    return Err(self.undefined(format!(
                        "requires no bond between `{u}` and `{v}`"
                    )));
                }
                let mut out = g.clone();
                out.set_charge(u, g.charge(u) - 1)?;
                out.set_charge(v, 0)?;
                out.set_bond(u, v, BondLabel::Covalent(1))?;
                self.finish(out, valences)
            }
            Generator::Separate { bar: false, u, v } => {
                self.need_vertex(g, u)?;
                self.need_vertex(g, v)?;
                self.need_ion_pair(g, u, v)?;
                if !g.bond(u, v).is_ionic() {
                    return Err(self.undefined(format!(
                        "requires an ionic bond between `{u}` and `{v}`"
                    )));
                }
                let mut out = g.clone();
                out.set_bond(u, v, BondLabel::NONE)?;
                self.finish(out, valences)
            }
            Generator::Separate { bar: true, u, v } => {
                self.need_vertex(g, u)?;
                self.need_vertex(g, v)?;
                self.need_ion_pair(g, u, v)?;
                if !g.bond(u, v).is_none() {
                    return Err(self.undefined(format!(
                        "requires no bond between `{u}` and `{v}`"
                    )));
                }
                let mut out = g.clone();
                out.set_bond(u, v, BondLabel::Ionic)?;
                self.finish(out, valences)
            }
            Generator::Cleave { bar: false, u, v, a, b } => {
                self.need_element(g, u)?;
                self.need_element(g, v)?;
                let bond = g.bond(u, v);
                if bond.is_ionic() || bond.cov() == 0 {
                    return Err(self.undefined(format!(
                        "requires a covalent bond between `{u}` and `{v}`"
                    )));
                }
                self.need_free_name(g, a)?;
                self.need_free_name(g, b)?;
                let mut out = g.clone();
                out.set_bond(u, v, BondLabel::Covalent(bond.cov() - 1))?;
                out.add_atom(a, AtomLabel::Alpha, 0)?;
                out.add_atom(b, AtomLabel::Alpha, 0)?;
                out.set_bond(u, a, BondLabel::Covalent(1))?;
                out.set_bond(v, b, BondLabel::Covalent(1))?;
                self.finish(out, valences)
            }
            Generator::Cleave { bar: true, u, v, a, b } => {
                self.need_element(g, u)?;
                self.need_element(g, v)?;
                self.need_capping_marker(g, a, u)?;
                self.need_capping_marker(g, b, v)?;
                let bond = g.bond(u, v);
                if bond.is_ionic() || bond.cov() >= MAX_COV {
                    return Err(self.undefined(format!(
                        "the bond between `{u}` and `{v}` cannot grow by one order"
                    )));
                }
                let mut out = g.clone();
                out.remove_vertex(a)?;
                out.remove_vertex(b)?;
                out.set_bond(u, v, BondLabel::Covalent(bond.cov() + 1))?;
                self.finish(out, valences)
            }
        }
    }

    fn undefined(&self, clause: String) -> Error {
        Error::NotApplicable {
            index: 0,
            msg: format!("{self}: {clause}"),
        }
    }

    fn need_vertex(&self, g: &ChemGraph, x: &str) -> Result<()> {
        if !g.has_vertex(x) {
            return Err(self.undefined(format!("vertex `{x}` is not in the graph")));
        }
        Ok(())
    }

    fn need_element(&self, g: &ChemGraph, x: &str) -> Result<()> {
        self.need_vertex(g, x)?;
        if !g.is_chem_vertex(x) {
            return Err(self.undefined(format!("`{x}` is not an element vertex")));
        }
        Ok(())
    }

    fn need_marker(&self, g: &ChemGraph, x: &str) -> Result<()> {
        self.need_vertex(g, x)?;
        if !g.is_alpha_vertex(x) {
            return Err(self.undefined(format!("`{x}` is not a marker vertex")));
        }
        Ok(())
    }

    fn need_free_name(&self, g: &ChemGraph, x: &str) -> Result<()> {
        if g.has_vertex(x) {
            return Err(self.undefined(format!("name `{x}` is already in use")));
        }
        Ok(())
    }

    /// A neutral marker bonded to `u` by a single bond and to nothing else.
    fn need_capping_marker(&self, g: &ChemGraph, a: &str, u: &str) -> Result<()> {
        self.need_marker(g, a)?;
        let sole = g.nbrs(a).len() == 1
            && g.bond(a, u) == BondLabel::Covalent(1)
            && g.charge(a) == 0;
        if !sole {
            return Err(self.undefined(format!(
                "marker `{a}` must be neutral and bonded to `{u}` and nothing else"
            )));
        }
        Ok(())
    }

    fn need_ion_pair(&self, g: &ChemGraph, u: &str, v: &str) -> Result<()> {
        if g.charge(u) <= 0 {
            return Err(self.undefined(format!("`{u}` must carry positive charge")));
        }
        if g.charge(v) >= 0 {
            return Err(self.undefined(format!("`{v}` must carry negative charge")));
        }
        Ok(())
    }

    fn finish(&self, out: ChemGraph, valences: &ValenceTable) -> Result<ChemGraph> {
        let violations = out.chemical_violations(valences)?;
        if !violations.is_empty() {
            return Err(self.undefined(format!(
                "the resulting graph is not chemical ({})",
                render(&violations)
            )));
        }
        Ok(out)
    }
}

impl fmt::Display for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Generator::Id => write!(f, "id"),
            Generator::Touch(u) => write!(f, "S({u})"),
            Generator::Rename(u, v) => write!(f, "R({u}>{v})"),
            Generator::Release { bar, u, a, b } => {
                write!(f, "{}E({u}|{a},{b})", if *bar { "~" } else { "" })
            }
            Generator::Ionize { bar, u, v } => {
                write!(f, "{}E({u},{v})", if *bar { "~" } else { "" })
            }
            Generator::Separate { bar, u, v } => {
                write!(f, "{}I({u},{v})", if *bar { "~" } else { "" })
            }
            Generator::Cleave { bar, u, v, a, b } => {
                write!(f, "{}C({u},{v}|{a},{b})", if *bar { "~" } else { "" })
            }
        }
    }
}

/// Free-function form of [`Generator::apply`].
pub fn apply_generator(
    gen: &Generator,
    g: &ChemGraph,
    valences: &ValenceTable,
) -> Result<ChemGraph> {
    gen.apply(g, valences)
}

/// A finite sequence of edit steps, composed left to right.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Term {
    gens: Vec<Generator>,
}

impl Term {
    /// The empty sequence (prints as `id`).
    pub fn identity() -> Term {
        Term { gens: Vec::new() }
    }

    /// Builds a term, checking each step's structural invariant.
    pub fn new(gens: Vec<Generator>) -> Result<Term> {
        for gen in &gens {
            gen.validate()?;
        }
        Ok(Term { gens })
    }

    pub fn gens(&self) -> &[Generator] {
        &self.gens
    }

    pub fn len(&self) -> usize {
        self.gens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gens.is_empty()
    }

    /// Diagrammatic composition: `self` runs first, then `other`.
    pub fn compose(&self, other: &Term) -> Term {
        let mut gens = self.gens.clone();
        gens.extend(other.gens.iter().cloned());
        Term { gens }
    }

    /// The reversed sequence of inverse steps. An involution that flips
    /// evaluation: if `t` maps `g` to `h` then `t.dagger()` maps `h` to `g`.
    pub fn dagger(&self) -> Term {
        Term {
            gens: self.gens.iter().rev().map(Generator::bar).collect(),
        }
    }

    /// Runs the sequence on `g`. Fails with [`Error::NotApplicable`] naming
    /// the first step (0-based index) that is undefined on the graph reached
    /// at its position.
    pub fn eval(&self, g: &ChemGraph, valences: &ValenceTable) -> Result<ChemGraph> {
        let mut current = g.clone();
        for (i, gen) in self.gens.iter().enumerate() {
            current = gen.apply(&current, valences).map_err(|e| match e {
                Error::NotApplicable { msg, .. } => Error::NotApplicable { index: i, msg },
                other => other,
            })?;
        }
        Ok(current)
    }

    /// Like [`Term::eval`] but returns every intermediate graph; the result
    /// has one more entry than the term has steps.
    pub fn eval_trace(&self, g: &ChemGraph, valences: &ValenceTable) -> Result<Vec<ChemGraph>> {
        let mut trace = Vec::with_capacity(self.gens.len() + 1);
        trace.push(g.clone());
        for (i, gen) in self.gens.iter().enumerate() {
            let next = gen
                .apply(trace.last().expect("trace is never empty"), valences)
                .map_err(|e| match e {
                    Error::NotApplicable { msg, .. } => Error::NotApplicable { index: i, msg },
                    other => other,
                })?;
            trace.push(next);
        }
        Ok(trace)
    }

    /// Parses the text syntax. Whitespace is ignored everywhere between
    /// tokens; the empty sequence is written `id`.
    pub fn parse(text: &str) -> Result<Term> {
        Parser::new(text).term()
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.gens.is_empty() {
            return write!(f, "id");
        }
        let rendered: Vec<String> = self.gens.iter().map(|g| g.to_string()).collect();
        write!(f, "{}", rendered.join(";"))
    }
}

impl FromStr for Term {
    type Err = Error;

    fn from_str(s: &str) -> Result<Term> {
        Term::parse(s)
    }
}

struct Parser<'a> {
    text: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Parser<'a> {
        Parser {
            text,
            bytes: text.as_bytes(),
            pos: 0,
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        let line = self.text[..self.pos].bytes().filter(|&b| b == b'\n').count() + 1;
        Error::Parse {
            file: "<term>".to_string(),
            line,
            msg: format!("at offset {}: {}", self.pos, msg.into()),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.err(format!("expected `{}`", c as char)))
        }
    }

    fn ident(&mut self) -> Result<String> {
        self.skip_ws();
        let start = self.pos;
        while self
            .bytes
            .get(self.pos)
            .is_some_and(|b| b.is_ascii_alphanumeric() || *b == b'_')
        {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.err("expected a name"));
        }
        Ok(self.text[start..self.pos].to_string())
    }

    fn term(&mut self) -> Result<Term> {
        let mut gens = vec![self.generator()?];
        while self.eat(b';') {
            gens.push(self.generator()?);
        }
        self.skip_ws();
        if self.pos != self.bytes.len() {
            return Err(self.err("unexpected trailing input"));
        }
        Term::new(gens).map_err(|e| self.err(e.to_string()))
    }

    fn generator(&mut self) -> Result<Generator> {
        let bar = self.eat(b'~');
        let head = self.ident()?;
        let gen = match head.as_str() {
            "id" => Generator::Id,
            "S" => {
                self.expect(b'(')?;
                let u = self.ident()?;
                self.expect(b')')?;
                Generator::Touch(u)
            }
            "R" => {
                self.expect(b'(')?;
                let u = self.ident()?;
                self.expect(b'>')?;
                let v = self.ident()?;
                self.expect(b')')?;
                Generator::Rename(u, v)
            }
            "E" => {
                self.expect(b'(')?;
                let u = self.ident()?;
                if self.eat(b'|') {
                    let a = self.ident()?;
                    self.expect(b',')?;
                    let b = self.ident()?;
                    self.expect(b')')?;
                    Generator::Release { bar, u, a, b }
                } else {
                    self.expect(b',')?;
                    let v = self.ident()?;
                    self.expect(b')')?;
                    Generator::Ionize { bar, u, v }
                }
            }
            "I" => {
                self.expect(b'(')?;
                let u = self.ident()?;
                self.expect(b',')?;
                let v = self.ident()?;
                self.expect(b')')?;
                Generator::Separate { bar, u, v }
            }
            "C" => {
                self.expect(b'(')?;
                let u = self.ident()?;
                self.expect(b',')?;
                let v = self.ident()?;
                self.expect(b'|')?;
                let a = self.ident()?;
                self.expect(b',')?;
                let b = self.ident()?;
                self.expect(b')')?;
                Generator::Cleave { bar, u, v, a, b }
            }
            other => return Err(self.err(format!("unknown generator `{other}`"))),
        };
        // `~` on the self-inverse steps is accepted and resolved here.
        Ok(if bar { gen_after_bar(gen) } else { gen })
    }
}

fn gen_after_bar(gen: Generator) -> Generator {
    match gen {
        Generator::Id => Generator::Id,
        Generator::Touch(u) => Generator::Touch(u),
        Generator::Rename(u, v) => Generator::Rename(v, u),
        // The rule steps were built with `bar` already set by the caller.
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samples;

    fn vt() -> ValenceTable {
        ValenceTable::default()
    }

    fn gen(text: &str) -> Generator {
        let t = Term::parse(text).expect("generator parses");
        assert_eq!(t.len(), 1, "expected a single generator in `{text}`");
        t.gens()[0].clone()
    }

    const ESTER_STEPS: &str = "C(z,u|a,b);C(v,w|c,d);C(r,u|i,j);C(r,u|n,m);\
        E(v,c);E(w,d);E(z,a);E(u,b);E(r,i);E(u,j);E(r,n);E(u,m);\
        ~E(v,c);~E(w,d);~E(z,a);~E(u,b);~E(r,i);~E(u,j);~E(r,n);~E(u,m);\
        ~C(r,u|i,j);~C(r,u|n,m);~C(w,z|d,a);~C(u,v|b,c);\
        S(z);S(u);S(v);S(w);S(r)";

    #[test]
    fn parse_and_print_round_trip_canonical_strings() {
        let cases = [
            "id",
            "S(u)",
            "R(u>v)",
            "R(u>u)",
            "E(u|a,b)",
            "~E(u|a,b)",
            "E(u,v)",
            "~E(u,v)",
            "I(na,cl)",
            "~I(na,cl)",
            "C(u,v|a,b)",
            "~C(u,v|a,b)",
            "C(z,u|a,b);C(v,w|c,d);~C(w,z|d,a);~C(u,v|b,c);S(r)",
            "id;id",
            "S(_1);R(_d1>x_2)",
        ];
        for case in cases {
            let term = Term::parse(case).expect("parses");
            assert_eq!(term.to_string(), case, "round trip for `{case}`");
        }
    }

    #[test]
    fn parse_ignores_whitespace() {
        let term = Term::parse(" C ( z , u | a , b ) ;\n S ( r ) ").expect("parses");
        assert_eq!(term.to_string(), "C(z,u|a,b);S(r)");
    }

    #[test]
    fn parse_reports_malformed_input() {
        let bad = [
            "",
            "C(u|a)",
            "C(u,v|a)",
            "E()",
            "E(u)",
            "X(u)",
            "S(u);;S(v)",
            "S(u) extra",
            "R(u<v)",
            "~",
            "C(u,v|a,b);",
            "S u",
        ];
        for case in bad {
            let got = Term::parse(case);
            assert!(
                matches!(got, Err(Error::Parse { .. })),
                "expected parse error for `{case}`, got {got:?}"
            );
        }
    }

    #[test]
    fn parse_rejects_repeated_names_within_a_generator() {
        for case in ["C(u,u|a,b)", "C(u,v|a,a)", "C(u,v|u,b)", "E(u|a,a)", "I(u,u)", "E(u,u)"] {
            let got = Term::parse(case);
            assert!(got.is_err(), "expected rejection of `{case}`");
        }
        // A rename onto itself stays legal.
        assert!(Term::parse("R(u>u)").is_ok());
    }

    #[test]
    fn bar_on_self_inverse_steps_resolves_at_parse_time() {
        assert_eq!(Term::parse("~S(u)").unwrap().to_string(), "S(u)");
        assert_eq!(Term::parse("~R(u>v)").unwrap().to_string(), "R(v>u)");
        assert_eq!(Term::parse("~id").unwrap().to_string(), "id");
    }

    #[test]
    fn dagger_reverses_and_inverts() {
        let t = Term::parse("C(u,v|a,b);R(a>x);S(u)").unwrap();
        assert_eq!(t.dagger().to_string(), "S(u);R(x>a);~C(u,v|a,b)");
        assert_eq!(t.dagger().dagger(), t);
    }

    #[test]
    fn separate_splits_an_ion_pair_and_bar_restores_it() {
        let salt = samples::sodium_chloride();
        let split = gen("I(na,cl)").apply(&salt, &vt()).expect("defined");
        assert!(split.bond("na", "cl").is_none());
        assert_eq!(split.charge("na"), 1);
        assert_eq!(split.charge("cl"), -1);
        let back = gen("~I(na,cl)").apply(&split, &vt()).expect("defined");
        assert_eq!(back, salt);
    }

    #[test]
    fn cleave_caps_both_ends_with_markers() {
        let h2 = samples::hydrogen_molecule();
        let cut = gen("C(h1,h2|a1,a2)").apply(&h2, &vt()).expect("defined");
        assert_eq!(cut, samples::hydrogen_disconnected());
        let back = gen("~C(h1,h2|a1,a2)").apply(&cut, &vt()).expect("defined");
        assert_eq!(back, h2);
    }

    #[test]
    fn release_frees_one_negative_charge() {
        let hydroxide = samples::hydroxide();
        let freed = gen("E(o|x,y)").apply(&hydroxide, &vt()).expect("defined");
        assert_eq!(freed.charge("o"), 0);
        assert_eq!(freed.bond("o", "x"), BondLabel::Covalent(1));
        assert_eq!(freed.charge("x"), 0);
        assert_eq!(freed.charge("y"), -1);
        assert!(freed.nbrs("y").is_empty());
        let back = gen("~E(o|x,y)").apply(&freed, &vt()).expect("defined");
        assert_eq!(back, hydroxide);
    }

    #[test]
    fn ionize_shifts_a_bond_pair_onto_the_marker() {
        let synthon = samples::methyl_synthon();
        let ionized = gen("E(c,a)").apply(&synthon, &vt()).expect("defined");
        assert_eq!(ionized.charge("c"), 1);
        assert_eq!(ionized.charge("a"), -1);
        assert!(ionized.bond("c", "a").is_none());
        let back = gen("~E(c,a)").apply(&ionized, &vt()).expect("defined");
        assert_eq!(back, synthon);
    }

    #[test]
    fn ionize_is_undefined_on_a_negative_site() {
        let mut g = ChemGraph::new();
        g.add_atom("o", AtomLabel::element("O"), -1).unwrap();
        g.add_atom("a", AtomLabel::Alpha, 0).unwrap();
        g.set_bond("o", "a", BondLabel::Covalent(1)).unwrap();
        assert!(g.is_chemical(&vt()).unwrap());
        let got = gen("E(o,a)").apply(&g, &vt());
        match got {
            Err(Error::NotApplicable { msg, .. }) => {
                assert!(msg.contains("must not carry negative charge"), "{msg}");
            }
            other => panic!("expected NotApplicable, got {other:?}"),
        }
    }

    #[test]
    fn release_is_undefined_when_the_edit_breaks_an_ion_pair_shell() {
        // The chloride of an ion pair may not lose its charge: the partner's
        // shell would no longer balance.
        let salt = samples::sodium_chloride();
        let got = gen("E(cl|x,y)").apply(&salt, &vt());
        match got {
            Err(Error::NotApplicable { msg, .. }) => {
                assert!(msg.contains("resulting graph is not chemical"), "{msg}");
            }
            other => panic!("expected NotApplicable, got {other:?}"),
        }
    }

    #[test]
    fn rename_requires_a_marker_and_a_free_target() {
        let g = samples::hydrogen_disconnected();
        let renamed = gen("R(a1>x)").apply(&g, &vt()).expect("defined");
        assert!(renamed.has_vertex("x"));
        assert!(!renamed.has_vertex("a1"));
        assert_eq!(renamed.bond("h1", "x"), BondLabel::Covalent(1));

        assert!(gen("R(h1>x)").apply(&g, &vt()).is_err());
        assert!(gen("R(a1>h2)").apply(&g, &vt()).is_err());
        assert_eq!(gen("R(a1>a1)").apply(&g, &vt()).unwrap(), g);
    }

    #[test]
    fn touch_requires_presence() {
        let g = samples::water();
        assert_eq!(gen("S(o)").apply(&g, &vt()).unwrap(), g);
        assert!(gen("S(zz)").apply(&g, &vt()).is_err());
    }

    #[test]
    fn eval_reports_the_first_undefined_step() {
        let term = Term::parse("C(h1,h2|a,b);C(h1,h2|c,d)").unwrap();
        let got = term.eval(&samples::hydrogen_molecule(), &vt());
        match got {
            Err(Error::NotApplicable { index, msg }) => {
                assert_eq!(index, 1);
                assert!(msg.contains("covalent bond"), "{msg}");
            }
            other => panic!("expected NotApplicable at index 1, got {other:?}"),
        }
    }

    #[test]
    fn eval_trace_returns_every_intermediate_graph() {
        let term = Term::parse("C(h1,h2|a,b);R(a>x)").unwrap();
        let trace = term
            .eval_trace(&samples::hydrogen_molecule(), &vt())
            .expect("defined");
        assert_eq!(trace.len(), 3);
        assert_eq!(trace[0], samples::hydrogen_molecule());
        assert!(trace[1].has_vertex("a"));
        assert!(trace[2].has_vertex("x"));
    }

    #[test]
    fn ester_formation_steps_evaluate_and_reverse() {
        let start = samples::acyl_chloride_and_hydroxyl();
        let term = Term::parse(ESTER_STEPS).unwrap();
        let product = term.eval(&start, &vt()).expect("all 29 steps defined");
        // The ester bond and the by-product bond exist; every marker name
        // introduced along the way was consumed again.
        assert_eq!(product.bond("u", "v"), BondLabel::Covalent(1));
        assert_eq!(product.bond("w", "z"), BondLabel::Covalent(1));
        assert_eq!(product.bond("r", "u"), BondLabel::Covalent(2));
        assert!(product.bond("u", "z").is_none());
        assert!(product.bond("v", "w").is_none());
        assert_eq!(product.name_set().len(), 7);

        let back = term.dagger().eval(&product, &vt()).expect("reverse runs");
        assert_eq!(back, start);
    }

    #[test]
    fn identity_term_evaluates_to_the_input() {
        let g = samples::water();
        assert_eq!(Term::identity().eval(&g, &vt()).unwrap(), g);
        assert_eq!(Term::parse("id").unwrap().eval(&g, &vt()).unwrap(), g);
    }

    #[test]
    fn step_kind_order_matches_the_staged_block_order() {
        let staged = [
            "I(u,v)",
            "C(u,v|a,b)",
            "E(u|a,b)",
            "E(u,v)",
            "~E(u,v)",
            "~E(u|a,b)",
            "~C(u,v|a,b)",
            "~I(u,v)",
            "R(u>v)",
            "S(u)",
        ];
        let kinds: Vec<StepKind> = staged.iter().map(|s| gen(s).kind()).collect();
        let mut sorted = kinds.clone();
        sorted.sort();
        assert_eq!(kinds, sorted);
        assert_eq!(StepKind::Cleave.bar(), StepKind::CleaveBar);
        assert_eq!(StepKind::CleaveBar.bar(), StepKind::Cleave);
        assert!(StepKind::Release.is_disconnection());
        assert!(StepKind::ReleaseBar.is_connection());
    }

    #[test]
    fn substitute_touches_every_field() {
        let g = gen("C(u,v|a,b)");
        assert_eq!(g.substitute("a", "z"), gen("C(u,v|z,b)"));
        assert_eq!(g.substitute("u", "w"), gen("C(w,v|a,b)"));
        assert_eq!(g.substitute("q", "z"), g);
        assert_eq!(gen("R(u>v)").substitute("v", "w"), gen("R(u>w)"));
    }
}
