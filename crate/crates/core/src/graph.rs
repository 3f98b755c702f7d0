//! Chemically labelled graphs.
//!
//! A graph has named vertices, each labelled with an atom symbol — a concrete
//! element such as `C`, or the open-valence marker `alpha` — and an integer
//! charge. Bonds are symmetric, irreflexive and labelled either with a
//! covalent multiplicity `1..=4` or with the dedicated ionic label.
//!
//! The module also provides the valence table (how many units of bonding
//! capacity each element has) and the validation predicates that single out
//! the well-formed graphs: pre-chemical, chemical, molecular, and their
//! connected variants.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use crate::error::Error;
use crate::violation::Violation;
use crate::Result;

/// Vertices are identified by name throughout the crate.
pub type VertexName = String;

/// Largest covalent bond multiplicity.
pub const MAX_COV: u8 = 4;

// ---------------------------------------------------------------------------
// Atom labels
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AtomLabel {
    /// Open-valence marker: a placeholder carrying one unit of bonding
    /// capacity, used to leave part of a structure unspecified.
    Alpha,
    /// A concrete element symbol such as `C`, `O` or `Cl`.
    Element(String),
}

impl AtomLabel {
    pub fn element(sym: &str) -> AtomLabel {
        AtomLabel::Element(sym.to_string())
    }

    pub fn is_alpha(&self) -> bool {
        matches!(self, AtomLabel::Alpha)
    }

    /// True for concrete element labels (everything except `alpha`).
    pub fn is_chem(&self) -> bool {
        !self.is_alpha()
    }
}

impl fmt::Display for AtomLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AtomLabel::Alpha => write!(f, "alpha"),
            AtomLabel::Element(sym) => write!(f, "{sym}"),
        }
    }
}

impl FromStr for AtomLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "alpha" {
            return Ok(AtomLabel::Alpha);
        }
        let ok = !s.is_empty()
            && s.chars().next().is_some_and(|c| c.is_ascii_alphabetic())
            && s.chars().all(|c| c.is_ascii_alphanumeric());
        if ok {
            Ok(AtomLabel::Element(s.to_string()))
        } else {
            Err(format!("invalid atom symbol {s:?}"))
        }
    }
}

// ---------------------------------------------------------------------------
// Bond labels
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BondLabel {
    /// Covalent bond with a multiplicity; multiplicity 0 means "no bond".
    Covalent(u8),
    /// Ionic bond: holds two oppositely charged vertices together without
    /// consuming covalent bonding capacity.
    Ionic,
}

impl BondLabel {
    /// The absent bond.
    pub const NONE: BondLabel = BondLabel::Covalent(0);

    /// Covalent capacity consumed at each endpoint.
    pub fn cov(self) -> u8 {
        match self {
            BondLabel::Covalent(k) => k,
            BondLabel::Ionic => 0,
        }
    }

    pub fn is_ionic(self) -> bool {
        matches!(self, BondLabel::Ionic)
    }

    pub fn is_none(self) -> bool {
        self == BondLabel::NONE
    }

    /// Short code used inside fingerprints.
    fn code(self) -> String {
        match self {
            BondLabel::Covalent(k) => k.to_string(),
            BondLabel::Ionic => "ib".to_string(),
        }
    }
}

impl fmt::Display for BondLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BondLabel::Covalent(k) => write!(f, "{k}"),
            BondLabel::Ionic => write!(f, "ionic"),
        }
    }
}

impl FromStr for BondLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ionic" | "ib" => Ok(BondLabel::Ionic),
            _ => match s.parse::<u8>() {
                Ok(k) if k <= MAX_COV => Ok(BondLabel::Covalent(k)),
                _ => Err(format!(
                    "invalid bond label {s:?} (expected 0..={MAX_COV} or \"ionic\")"
                )),
            },
        }
    }
}

// ---------------------------------------------------------------------------
// Valence table
// ---------------------------------------------------------------------------

/// Bonding capacity per element symbol. The open-valence marker always has
/// capacity 1 and is not stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValenceTable {
    elements: BTreeMap<String, u32>,
}

impl Default for ValenceTable {
    fn default() -> Self {
        let pairs = [
            ("H", 1),
            ("C", 4),
            ("N", 3),
            ("O", 2),
            ("P", 5),
            ("S", 2),
            ("Cl", 1),
            ("Na", 1),
        ];
        ValenceTable {
            elements: pairs
                .iter()
                .map(|&(s, v)| (s.to_string(), v))
                .collect(),
        }
    }
}

impl ValenceTable {
    /// Build a table from (symbol, valence) pairs. At least two distinct
    /// element symbols are required; an `alpha` entry is only accepted with
    /// value 1 (its capacity is fixed).
    pub fn from_pairs<I, S>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, u32)>,
        S: AsRef<str>,
    {
        let mut elements = BTreeMap::new();
        for (sym, val) in pairs {
            let sym = sym.as_ref();
            if sym == "alpha" {
                if val != 1 {
                    return Err(Error::Config(format!(
                        "the open-valence marker has fixed capacity 1, got {val}"
                    )));
                }
                continue;
            }
            let label: AtomLabel = sym
                .parse()
                .map_err(|e: String| Error::Config(e))?;
            let AtomLabel::Element(sym) = label else {
                unreachable!()
            };
            if elements.insert(sym.clone(), val).is_some() {
                return Err(Error::Config(format!("duplicate valence entry for {sym}")));
            }
        }
        if elements.len() < 2 {
            return Err(Error::Config(
                "valence table needs at least two element symbols".to_string(),
            ));
        }
        Ok(ValenceTable { elements })
    }

    /// Parse a table from text: one `symbol=valence` entry per line, `#`
    /// starts a comment, blank lines are ignored.
    pub fn parse(text: &str, file: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |msg: String| Error::Parse {
                file: file.to_string(),
                line: idx + 1,
                msg,
            };
            let (sym, val) = line.split_once('=').ok_or_else(|| {
                parse_err(format!("expected symbol=valence, got {line:?}"))
            })?;
            let sym = sym.trim();
            let val: u32 = val
                .trim()
                .parse()
                .map_err(|_| parse_err(format!("invalid valence {:?}", val.trim())))?;
            pairs.push((sym.to_string(), val));
        }
        Self::from_pairs(pairs)
    }

    /// Capacity of an atom label. The open-valence marker has capacity 1; an
    /// element symbol missing from the table is a configuration error.
    pub fn valence_of(&self, label: &AtomLabel) -> Result<u32> {
        match label {
            AtomLabel::Alpha => Ok(1),
            AtomLabel::Element(sym) => self.elements.get(sym).copied().ok_or_else(|| {
                Error::Config(format!("element {sym} not in the valence table"))
            }),
        }
    }

    pub fn has(&self, sym: &str) -> bool {
        self.elements.contains_key(sym)
    }
}

// ---------------------------------------------------------------------------
// The graph
// ---------------------------------------------------------------------------

/// A chemically labelled graph. Vertex and bond storage is ordered, so every
/// iteration order (and therefore every algorithm built on top) is
/// deterministic.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChemGraph {
    vertices: BTreeMap<VertexName, (AtomLabel, i32)>,
    /// Each bond is stored once under the (lexicographically) ordered pair of
    /// endpoint names; absent entries mean "no bond".
    bonds: BTreeMap<(VertexName, VertexName), BondLabel>,
}

fn pair_key(u: &str, v: &str) -> (VertexName, VertexName) {
    if u <= v {
        (u.to_string(), v.to_string())
    } else {
        (v.to_string(), u.to_string())
    }
}

impl ChemGraph {
    pub fn new() -> ChemGraph {
        ChemGraph::default()
    }

    // -- construction -------------------------------------------------------

    pub fn add_atom(&mut self, name: &str, label: AtomLabel, charge: i32) -> Result<()> {
        if self.vertices.contains_key(name) {
            return Err(Error::Precondition(format!("vertex {name} already exists")));
        }
        self.vertices.insert(name.to_string(), (label, charge));
        Ok(())
    }

    /// Set the bond between two distinct existing vertices; `BondLabel::NONE`
    /// removes the bond.
    pub fn set_bond(&mut self, u: &str, v: &str, label: BondLabel) -> Result<()> {
        if u == v {
            return Err(Error::Precondition(format!("self-bond on {u}")));
        }
        for w in [u, v] {
            if !self.vertices.contains_key(w) {
                return Err(Error::Precondition(format!("no vertex {w}")));
            }
        }
        if let BondLabel::Covalent(k) = label {
            if k > MAX_COV {
                return Err(Error::Precondition(format!(
                    "bond multiplicity {k} exceeds {MAX_COV}"
                )));
            }
        }
        let key = pair_key(u, v);
        if label.is_none() {
            self.bonds.remove(&key);
        } else {
            self.bonds.insert(key, label);
        }
        Ok(())
    }

    pub fn set_charge(&mut self, v: &str, charge: i32) -> Result<()> {
        match self.vertices.get_mut(v) {
            Some(entry) => {
                entry.1 = charge;
                Ok(())
            }
            None => Err(Error::Precondition(format!("no vertex {v}"))),
        }
    }

    /// Remove a vertex together with its incident bonds.
    pub fn remove_vertex(&mut self, v: &str) -> Result<()> {
        if self.vertices.remove(v).is_none() {
            return Err(Error::Precondition(format!("no vertex {v}")));
        }
        self.bonds.retain(|(a, b), _| a != v && b != v);
        Ok(())
    }

    // -- queries ------------------------------------------------------------

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn has_vertex(&self, v: &str) -> bool {
        self.vertices.contains_key(v)
    }

    pub fn try_atom(&self, v: &str) -> Option<(&AtomLabel, i32)> {
        self.vertices.get(v).map(|(l, c)| (l, *c))
    }

    /// Atom label of an existing vertex (bug if absent).
    pub fn label(&self, v: &str) -> &AtomLabel {
        &self
            .vertices
            .get(v)
            .unwrap_or_else(|| panic!("no vertex {v}"))
            .0
    }

    /// Charge of an existing vertex (bug if absent).
    pub fn charge(&self, v: &str) -> i32 {
        self.vertices
            .get(v)
            .unwrap_or_else(|| panic!("no vertex {v}"))
            .1
    }

    pub fn is_chem_vertex(&self, v: &str) -> bool {
        self.label(v).is_chem()
    }

    pub fn is_alpha_vertex(&self, v: &str) -> bool {
        self.label(v).is_alpha()
    }

    /// Bond label between two existing vertices; `BondLabel::NONE` if unbonded.
    pub fn bond(&self, u: &str, v: &str) -> BondLabel {
        for w in [u, v] {
            if !self.vertices.contains_key(w) {
                panic!("no vertex {w}");
            }
        }
        if u == v {
            return BondLabel::NONE;
        }
        self.bonds
            .get(&pair_key(u, v))
            .copied()
            .unwrap_or(BondLabel::NONE)
    }

    /// Iterate over vertices as (name, label, charge) in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&VertexName, &AtomLabel, i32)> {
        self.vertices.iter().map(|(n, (l, c))| (n, l, *c))
    }

    pub fn names(&self) -> impl Iterator<Item = &VertexName> {
        self.vertices.keys()
    }

    pub fn name_set(&self) -> BTreeSet<VertexName> {
        self.vertices.keys().cloned().collect()
    }

    /// Iterate over present bonds as (u, v, label) with u < v, in key order.
    pub fn bonds(&self) -> impl Iterator<Item = (&VertexName, &VertexName, BondLabel)> {
        self.bonds.iter().map(|((u, v), l)| (u, v, *l))
    }

    /// All (neighbour, bond) pairs at a vertex, in neighbour-name order.
    pub fn adjacent(&self, v: &str) -> Vec<(VertexName, BondLabel)> {
        let mut out = Vec::new();
        for ((a, b), l) in &self.bonds {
            if a == v {
                out.push((b.clone(), *l));
            } else if b == v {
                out.push((a.clone(), *l));
            }
        }
        out.sort();
        out
    }

    /// Neighbours over any nonzero bond.
    pub fn nbrs(&self, v: &str) -> BTreeSet<VertexName> {
        self.adjacent(v).into_iter().map(|(w, _)| w).collect()
    }

    /// Neighbours over covalent bonds of multiplicity >= 1.
    pub fn covalent_nbrs(&self, v: &str) -> BTreeSet<VertexName> {
        self.adjacent(v)
            .into_iter()
            .filter(|(_, l)| l.cov() >= 1)
            .map(|(w, _)| w)
            .collect()
    }

    /// Neighbours over ionic bonds.
    pub fn ionic_nbrs(&self, v: &str) -> BTreeSet<VertexName> {
        self.adjacent(v)
            .into_iter()
            .filter(|(_, l)| l.is_ionic())
            .map(|(w, _)| w)
            .collect()
    }

    /// Total covalent multiplicity incident to a vertex.
    pub fn cov_sum(&self, v: &str) -> u32 {
        self.adjacent(v).iter().map(|(_, l)| l.cov() as u32).sum()
    }

    /// Names of vertices with element labels.
    pub fn chem_set(&self) -> BTreeSet<VertexName> {
        self.iter()
            .filter(|(_, l, _)| l.is_chem())
            .map(|(n, _, _)| n.clone())
            .collect()
    }

    /// Names of vertices labelled with the open-valence marker.
    pub fn alpha_set(&self) -> BTreeSet<VertexName> {
        self.iter()
            .filter(|(_, l, _)| l.is_alpha())
            .map(|(n, _, _)| n.clone())
            .collect()
    }

    /// Sum of all charges.
    pub fn net_charge(&self) -> i32 {
        self.iter().map(|(_, _, c)| c).sum()
    }

    /// Sum of charges over a set of vertex names (all must exist).
    pub fn net_charge_of<'a, I: IntoIterator<Item = &'a VertexName>>(&self, names: I) -> i32 {
        names.into_iter().map(|n| self.charge(n)).sum()
    }

    /// A name not used by any vertex: `base`, with `_` appended until fresh.
    pub fn fresh_name(&self, base: &str) -> String {
        let mut name = base.to_string();
        while self.vertices.contains_key(&name) {
            name.push('_');
        }
        name
    }

    // -- validation ---------------------------------------------------------

    /// Structural conditions that do not involve the valence table: sane
    /// open-valence markers and sane ionic neighbourhoods.
    pub fn prechemical_violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for (v, label, charge) in self.iter() {
            if !label.is_alpha() {
                continue;
            }
            if charge.abs() > 1 {
                out.push(Violation::new(
                    "alpha-charge",
                    vec![v.clone()],
                    format!("open-valence marker has charge {charge}, outside -1..=1"),
                ));
            }
            let adj = self.adjacent(v);
            if adj.len() > 1 {
                out.push(Violation::new(
                    "alpha-nbr-count",
                    vec![v.clone()],
                    format!("open-valence marker has {} neighbours", adj.len()),
                ));
            }
            for (w, l) in &adj {
                if l.cov() > 1 {
                    out.push(Violation::new(
                        "alpha-bond-label",
                        vec![v.clone(), w.clone()],
                        format!("open-valence marker carries a multiplicity-{} bond", l.cov()),
                    ));
                }
                if self.label(w).is_alpha() {
                    out.push(Violation::new(
                        "alpha-nbr-chem",
                        vec![v.clone(), w.clone()],
                        "open-valence marker bonded to another open-valence marker",
                    ));
                }
            }
        }
        // Ionic conditions are stated at the chemical endpoint of the bonds;
        // open-valence markers carry no obligation of their own here.
        for (v, label, charge) in self.iter() {
            if label.is_alpha() {
                continue;
            }
            let partners = self.ionic_nbrs(v);
            if partners.is_empty() {
                continue;
            }
            let single_chem = partners.len() == 1
                && partners.iter().all(|w| self.label(w).is_chem());
            let same_sign_alphas = partners.iter().all(|w| self.label(w).is_alpha()) && {
                let signs: BTreeSet<i32> =
                    partners.iter().map(|w| self.charge(w).signum()).collect();
                signs.len() == 1 && !signs.contains(&0)
            };
            if !(single_chem || same_sign_alphas) {
                out.push(Violation::new(
                    "ion-partner-mix",
                    vec![v.clone()],
                    format!(
                        "ionic partners {{{}}} are neither a single element vertex nor \
                         open-valence markers of one charge sign",
                        partners.iter().cloned().collect::<Vec<_>>().join(",")
                    ),
                ));
            }
            let net: i32 = partners.iter().map(|w| self.charge(w)).sum();
            if charge != -net || charge == 0 {
                out.push(Violation::new(
                    "ion-charge-balance",
                    vec![v.clone()],
                    format!(
                        "charge {charge} must be nonzero and balance the ionic partners \
                         (net {net})"
                    ),
                ));
            }
        }
        out
    }

    /// Chemical conditions: pre-chemical, plus the valence equation
    /// `|charge| + total covalent multiplicity = capacity` at every vertex,
    /// plus no positively charged open-valence marker.
    pub fn chemical_violations(&self, valences: &ValenceTable) -> Result<Vec<Violation>> {
        let mut out = self.prechemical_violations();
        for (v, label, charge) in self.iter() {
            let want = valences.valence_of(label)?;
            let have = charge.unsigned_abs() + self.cov_sum(v);
            if have != want {
                out.push(Violation::new(
                    "valence",
                    vec![v.clone()],
                    format!(
                        "|charge| + covalent multiplicity = {have}, but {label} has capacity {want}"
                    ),
                ));
            }
            if label.is_alpha() && charge > 0 {
                out.push(Violation::new(
                    "alpha-positive",
                    vec![v.clone()],
                    format!("open-valence marker has positive charge {charge}"),
                ));
            }
        }
        Ok(out)
    }

    /// Structural clauses plus the capacity equation, but allowing positively
    /// charged markers: the shape required of rewrite-rule boundaries.
    pub fn valence_complete_violations(&self, valences: &ValenceTable) -> Result<Vec<Violation>> {
        let mut out = self.prechemical_violations();
        for (v, label, charge) in self.iter() {
            let want = valences.valence_of(label)?;
            let have = charge.unsigned_abs() + self.cov_sum(v);
            if have != want {
                out.push(Violation::new(
                    "valence",
                    vec![v.clone()],
                    format!(
                        "|charge| + covalent multiplicity = {have}, but {label} has capacity {want}"
                    ),
                ));
            }
        }
        Ok(out)
    }

    /// Pre-chemical and satisfying the capacity equation everywhere.
    pub fn is_valence_complete(&self, valences: &ValenceTable) -> Result<bool> {
        Ok(self.valence_complete_violations(valences)?.is_empty())
    }

    /// Chemical, plus no open-valence markers at all.
    pub fn molecular_violations(&self, valences: &ValenceTable) -> Result<Vec<Violation>> {
        let mut out = self.chemical_violations(valences)?;
        for v in self.alpha_set() {
            out.push(Violation::new(
                "alpha-free",
                vec![v.clone()],
                "open-valence marker present in a graph required to have none",
            ));
        }
        Ok(out)
    }

    pub fn is_prechemical(&self) -> bool {
        self.prechemical_violations().is_empty()
    }

    pub fn is_chemical(&self, valences: &ValenceTable) -> Result<bool> {
        Ok(self.chemical_violations(valences)?.is_empty())
    }

    pub fn is_molecular(&self, valences: &ValenceTable) -> Result<bool> {
        Ok(self.molecular_violations(valences)?.is_empty())
    }

    /// Connected chemical graph with at least one vertex.
    pub fn is_synthon(&self, valences: &ValenceTable) -> Result<bool> {
        Ok(!self.is_empty() && self.is_connected() && self.is_chemical(valences)?)
    }

    /// Connected molecular graph with at least one vertex.
    pub fn is_molecular_entity(&self, valences: &ValenceTable) -> Result<bool> {
        Ok(!self.is_empty() && self.is_connected() && self.is_molecular(valences)?)
    }

    pub fn require_chemical(&self, valences: &ValenceTable, what: &'static str) -> Result<()> {
        let violations = self.chemical_violations(valences)?;
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(what, violations))
        }
    }

    // -- structure ----------------------------------------------------------

    /// Rename every vertex through a total injective map.
    pub fn rename(&self, map: &BTreeMap<VertexName, VertexName>) -> Result<ChemGraph> {
        self.rename_with(|v| {
            map.get(v)
                .cloned()
                .ok_or_else(|| Error::Precondition(format!("rename map misses vertex {v}")))
        })
    }

    /// Rename every vertex through a function; the images must be distinct.
    pub fn rename_with<F>(&self, mut f: F) -> Result<ChemGraph>
    where
        F: FnMut(&str) -> Result<VertexName>,
    {
        let mut new_names: BTreeMap<VertexName, VertexName> = BTreeMap::new();
        let mut seen: BTreeSet<VertexName> = BTreeSet::new();
        for v in self.vertices.keys() {
            let n = f(v)?;
            if !seen.insert(n.clone()) {
                return Err(Error::Precondition(format!(
                    "rename is not injective at image {n}"
                )));
            }
            new_names.insert(v.clone(), n);
        }
        let mut out = ChemGraph::new();
        for (v, label, charge) in self.iter() {
            out.add_atom(&new_names[v], label.clone(), charge)?;
        }
        for (u, v, l) in self.bonds() {
            out.set_bond(&new_names[u], &new_names[v], l)?;
        }
        Ok(out)
    }

    /// Rename by prefixing every vertex name.
    pub fn prefixed(&self, prefix: &str) -> ChemGraph {
        self.rename_with(|v| Ok(format!("{prefix}{v}")))
            .expect("prefixing preserves injectivity")
    }

    /// Disjoint union; the vertex name sets must not overlap.
    pub fn disjoint_union(&self, other: &ChemGraph) -> Result<ChemGraph> {
        let mut out = self.clone();
        for (v, label, charge) in other.iter() {
            if out.has_vertex(v) {
                return Err(Error::Precondition(format!(
                    "disjoint union: vertex name {v} occurs on both sides"
                )));
            }
            out.add_atom(v, label.clone(), charge)?;
        }
        for (u, v, l) in other.bonds() {
            out.set_bond(u, v, l)?;
        }
        Ok(out)
    }

    /// Subgraph induced by a subset of the vertices.
    pub fn induced(&self, keep: &BTreeSet<VertexName>) -> Result<ChemGraph> {
        let mut out = ChemGraph::new();
        for v in keep {
            let (label, charge) = self
                .try_atom(v)
                .ok_or_else(|| Error::Precondition(format!("no vertex {v}")))?;
            out.add_atom(v, label.clone(), charge)?;
        }
        for (u, v, l) in self.bonds() {
            if keep.contains(u) && keep.contains(v) {
                out.set_bond(u, v, l)?;
            }
        }
        Ok(out)
    }

    /// Vertex sets of the connected components (any nonzero bond connects).
    pub fn component_sets(&self) -> Vec<BTreeSet<VertexName>> {
        let mut seen: BTreeSet<VertexName> = BTreeSet::new();
        let mut out = Vec::new();
        for start in self.vertices.keys() {
            if seen.contains(start) {
                continue;
            }
            let mut comp = BTreeSet::new();
            let mut stack = vec![start.clone()];
            while let Some(v) = stack.pop() {
                if !comp.insert(v.clone()) {
                    continue;
                }
                for w in self.nbrs(&v) {
                    if !comp.contains(&w) {
                        stack.push(w);
                    }
                }
            }
            seen.extend(comp.iter().cloned());
            out.push(comp);
        }
        out
    }

    /// Connected components as graphs.
    pub fn components(&self) -> Vec<ChemGraph> {
        self.component_sets()
            .into_iter()
            .map(|set| self.induced(&set).expect("component vertices exist"))
            .collect()
    }

    pub fn is_connected(&self) -> bool {
        self.component_sets().len() <= 1
    }

    // -- canonical fingerprint ----------------------------------------------

    /// A canonical one-line serialization: two graphs have equal fingerprints
    /// exactly when they are isomorphic (with matching labels, charges and
    /// bonds). Computed by colour refinement with individualization, taking
    /// the lexicographically least serialization over the candidate orders;
    /// the fingerprint of a disconnected graph is the sorted join of its
    /// component fingerprints.
    pub fn canonical_fingerprint(&self) -> String {
        let comps = self.components();
        if comps.is_empty() {
            return "empty".to_string();
        }
        let mut parts: Vec<String> = comps
            .iter()
            .map(|c| c.canonical_component_serialization())
            .collect();
        parts.sort();
        parts.join(" + ")
    }

    pub fn isomorphic_to(&self, other: &ChemGraph) -> bool {
        self.canonical_fingerprint() == other.canonical_fingerprint()
    }

    fn canonical_component_serialization(&self) -> String {
        let names: Vec<&VertexName> = self.vertices.keys().collect();
        let n = names.len();
        let index: BTreeMap<&VertexName, usize> =
            names.iter().enumerate().map(|(i, v)| (*v, i)).collect();
        // Adjacency with bond codes for refinement (ionic sorts after 1..=4).
        let mut adj: Vec<Vec<(u8, usize)>> = vec![Vec::new(); n];
        for (u, v, l) in self.bonds() {
            let code = match l {
                BondLabel::Covalent(k) => k,
                BondLabel::Ionic => MAX_COV + 1,
            };
            let (iu, iv) = (index[u], index[v]);
            adj[iu].push((code, iv));
            adj[iv].push((code, iu));
        }
        // Initial colours from (label, charge).
        let keys: Vec<(&AtomLabel, i32)> = names
            .iter()
            .map(|v| {
                let (l, c) = self.try_atom(v).unwrap();
                (l, c)
            })
            .collect();
        let mut table: Vec<&(&AtomLabel, i32)> = keys.iter().collect();
        table.sort();
        table.dedup();
        let initial: Vec<usize> = keys
            .iter()
            .map(|k| table.binary_search(&k).unwrap())
            .collect();
        let refined = refine_colours(&adj, initial);
        let mut best: Option<String> = None;
        self.canon_search(&adj, refined, &mut best);
        best.expect("search visits at least one leaf")
    }

    fn canon_search(&self, adj: &[Vec<(u8, usize)>], colours: Vec<usize>, best: &mut Option<String>) {
        let n = colours.len();
        // Find the smallest colour shared by more than one vertex.
        let mut count = vec![0usize; n];
        for &c in &colours {
            count[c] += 1;
        }
        let target = (0..n).find(|&c| count[c] > 1);
        match target {
            None => {
                let s = self.serialize_in_order(&colours);
                if best.as_ref().is_none_or(|b| s < *b) {
                    *best = Some(s);
                }
            }
            Some(cell) => {
                for v in 0..n {
                    if colours[v] != cell {
                        continue;
                    }
                    // Individualize v: split it off below its old cell-mates.
                    let split: Vec<usize> = colours
                        .iter()
                        .enumerate()
                        .map(|(i, &c)| c * 2 + usize::from(i != v))
                        .collect();
                    let mut ranks = split.clone();
                    ranks.sort();
                    ranks.dedup();
                    let next: Vec<usize> = split
                        .iter()
                        .map(|k| ranks.binary_search(k).unwrap())
                        .collect();
                    self.canon_search(adj, refine_colours(adj, next), best);
                }
            }
        }
    }

    fn serialize_in_order(&self, colours: &[usize]) -> String {
        let names: Vec<&VertexName> = self.vertices.keys().collect();
        let n = names.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| colours[i]);
        let pos: BTreeMap<usize, usize> =
            order.iter().enumerate().map(|(p, &i)| (i, p)).collect();
        let atoms: Vec<String> = order
            .iter()
            .map(|&i| {
                let (l, c) = self.try_atom(names[i]).unwrap();
                format!("{l}({c})")
            })
            .collect();
        let index: BTreeMap<&VertexName, usize> =
            names.iter().enumerate().map(|(i, v)| (*v, i)).collect();
        let mut edges: Vec<(usize, usize, String)> = self
            .bonds()
            .map(|(u, v, l)| {
                let (a, b) = (pos[&index[u]], pos[&index[v]]);
                let (a, b) = if a < b { (a, b) } else { (b, a) };
                (a, b, l.code())
            })
            .collect();
        edges.sort();
        let bonds: Vec<String> = edges
            .into_iter()
            .map(|(a, b, c)| format!("{a}-{b}:{c}"))
            .collect();
        format!("{n}|{}|{}", atoms.join(","), bonds.join(","))
    }
}

/// Iterated colour refinement: each round a vertex's new colour is its old
/// colour together with the sorted multiset of (bond code, neighbour colour)
/// pairs; colours are compacted to ranks every round. Stops at a fixpoint.
fn refine_colours(adj: &[Vec<(u8, usize)>], mut colours: Vec<usize>) -> Vec<usize> {
    let n = colours.len();
    loop {
        let keys: Vec<(usize, Vec<(u8, usize)>)> = (0..n)
            .map(|i| {
                let mut nb: Vec<(u8, usize)> =
                    adj[i].iter().map(|&(code, j)| (code, colours[j])).collect();
                nb.sort();
                (colours[i], nb)
            })
            .collect();
        let mut table: Vec<&(usize, Vec<(u8, usize)>)> = keys.iter().collect();
        table.sort();
        table.dedup();
        let next: Vec<usize> = keys
            .iter()
            .map(|k| table.binary_search(&k).unwrap())
            .collect();
        if next == colours {
            return colours;
        }
        colours = next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samples;

    fn vt() -> ValenceTable {
        ValenceTable::default()
    }

    fn clauses(violations: &[Violation]) -> Vec<&'static str> {
        violations.iter().map(|v| v.clause).collect()
    }

    #[test]
    fn water_is_a_molecular_entity() {
        let w = samples::water();
        assert!(w.is_chemical(&vt()).unwrap());
        assert!(w.is_molecular(&vt()).unwrap());
        assert!(w.is_molecular_entity(&vt()).unwrap());
        assert_eq!(w.net_charge(), 0);
        assert_eq!(w.cov_sum("o"), 2);
    }

    #[test]
    fn hydroxide_counts_charge_toward_capacity() {
        let g = samples::hydroxide();
        assert!(g.is_molecular_entity(&vt()).unwrap());
        assert_eq!(g.net_charge(), -1);
        // Capacity 2 at o: |-1| + one single bond.
        assert_eq!(g.charge("o"), -1);
        assert_eq!(g.cov_sum("o"), 1);
    }

    #[test]
    fn carbonate_is_chemical_with_net_charge_minus_two() {
        let g = samples::carbonate();
        assert!(g.is_molecular_entity(&vt()).unwrap());
        assert_eq!(g.net_charge(), -2);
        assert_eq!(g.cov_sum("c"), 4);
    }

    #[test]
    fn sodium_chloride_passes_ionic_conditions() {
        let g = samples::sodium_chloride();
        assert!(g.is_molecular_entity(&vt()).unwrap());
        assert_eq!(g.ionic_nbrs("na"), BTreeSet::from(["cl".to_string()]));
        assert_eq!(g.cov_sum("na"), 0);
    }

    #[test]
    fn sodium_carbonate_balances_both_ion_pairs() {
        let g = samples::sodium_carbonate();
        assert!(g.is_molecular_entity(&vt()).unwrap());
        assert_eq!(g.net_charge(), 0);
    }

    #[test]
    fn unbalanced_ion_pair_is_reported() {
        let mut g = samples::sodium_chloride();
        g.set_charge("cl", 0).unwrap();
        let v = g.prechemical_violations();
        // Balance fails at both endpoints: na expects -(-1), cl expects -(+1).
        assert!(clauses(&v).contains(&"ion-charge-balance"));
        assert_eq!(
            v.iter().filter(|x| x.clause == "ion-charge-balance").count(),
            2
        );
    }

    #[test]
    fn mixed_ionic_partners_are_reported() {
        let mut g = samples::sodium_chloride();
        g.set_charge("na", 2).unwrap();
        g.add_atom("a", AtomLabel::Alpha, -1).unwrap();
        g.set_bond("na", "a", BondLabel::Ionic).unwrap();
        let v = g.prechemical_violations();
        assert!(clauses(&v).contains(&"ion-partner-mix"));
    }

    #[test]
    fn ionically_bonded_marker_pair_is_chemical() {
        // A cation held by a negatively charged marker: the balance condition
        // is stated at the chemical endpoint, the marker has no obligation.
        let mut g = ChemGraph::new();
        g.add_atom("na", AtomLabel::element("Na"), 1).unwrap();
        g.add_atom("a", AtomLabel::Alpha, -1).unwrap();
        g.set_bond("na", "a", BondLabel::Ionic).unwrap();
        assert!(g.is_chemical(&vt()).unwrap());

        // Doubly charged chemical endpoint needs two markers.
        let mut g = ChemGraph::new();
        g.add_atom("s", AtomLabel::element("S"), 2).unwrap();
        g.add_atom("a1", AtomLabel::Alpha, -1).unwrap();
        g.add_atom("a2", AtomLabel::Alpha, -1).unwrap();
        g.set_bond("s", "a1", BondLabel::Ionic).unwrap();
        g.set_bond("s", "a2", BondLabel::Ionic).unwrap();
        assert!(g.is_prechemical());
        // One marker alone leaves the balance off.
        g.remove_vertex("a2").unwrap();
        let v = g.prechemical_violations();
        assert_eq!(clauses(&v), vec!["ion-charge-balance"]);
        assert_eq!(v[0].subjects, vec!["s".to_string()]);
    }

    #[test]
    fn chemical_vertex_with_ionic_partners_must_be_charged() {
        let mut g = ChemGraph::new();
        g.add_atom("na", AtomLabel::element("Na"), 0).unwrap();
        g.add_atom("cl", AtomLabel::element("Cl"), 0).unwrap();
        g.set_bond("na", "cl", BondLabel::Ionic).unwrap();
        let v = g.prechemical_violations();
        assert_eq!(
            v.iter().filter(|x| x.clause == "ion-charge-balance").count(),
            2
        );
    }

    #[test]
    fn open_valence_marker_conditions() {
        let mut g = ChemGraph::new();
        g.add_atom("a", AtomLabel::Alpha, -2).unwrap();
        assert_eq!(clauses(&g.prechemical_violations()), vec!["alpha-charge"]);

        let mut g = ChemGraph::new();
        g.add_atom("c", AtomLabel::element("C"), 0).unwrap();
        g.add_atom("a", AtomLabel::Alpha, 0).unwrap();
        g.set_bond("c", "a", BondLabel::Covalent(2)).unwrap();
        assert_eq!(
            clauses(&g.prechemical_violations()),
            vec!["alpha-bond-label"]
        );

        let mut g = ChemGraph::new();
        g.add_atom("a", AtomLabel::Alpha, 0).unwrap();
        g.add_atom("b", AtomLabel::Alpha, 0).unwrap();
        g.set_bond("a", "b", BondLabel::Covalent(1)).unwrap();
        // Both markers report the chemical-neighbour clause.
        let v = g.prechemical_violations();
        assert_eq!(
            v.iter().filter(|x| x.clause == "alpha-nbr-chem").count(),
            2
        );

        let mut g = ChemGraph::new();
        g.add_atom("c", AtomLabel::element("C"), 0).unwrap();
        g.add_atom("o", AtomLabel::element("O"), 0).unwrap();
        g.add_atom("a", AtomLabel::Alpha, 0).unwrap();
        g.set_bond("a", "c", BondLabel::Covalent(1)).unwrap();
        g.set_bond("a", "o", BondLabel::Covalent(1)).unwrap();
        assert!(clauses(&g.prechemical_violations()).contains(&"alpha-nbr-count"));
    }

    #[test]
    fn positively_charged_marker_is_prechemical_but_not_chemical() {
        let mut g = ChemGraph::new();
        g.add_atom("a", AtomLabel::Alpha, 1).unwrap();
        assert!(g.is_prechemical());
        let v = g.chemical_violations(&vt()).unwrap();
        assert_eq!(clauses(&v), vec!["alpha-positive"]);
    }

    #[test]
    fn missing_hydrogen_breaks_the_valence_equation() {
        let mut g = samples::water();
        g.remove_vertex("h2").unwrap();
        let v = g.chemical_violations(&vt()).unwrap();
        assert_eq!(clauses(&v), vec!["valence"]);
        assert_eq!(v[0].subjects, vec!["o".to_string()]);
    }

    #[test]
    fn synthons_are_connected_chemical_graphs() {
        let g = samples::hydrogen_synthon();
        assert!(g.is_synthon(&vt()).unwrap());
        assert!(!g.is_molecular(&vt()).unwrap());
        let two = samples::acyl_chloride_and_hydroxyl();
        assert!(two.is_chemical(&vt()).unwrap());
        assert!(!two.is_synthon(&vt()).unwrap());
        assert_eq!(two.components().len(), 2);
        for comp in two.components() {
            assert!(comp.is_synthon(&vt()).unwrap());
        }
    }

    #[test]
    fn empty_graph_is_molecular_but_not_an_entity() {
        let g = ChemGraph::new();
        assert!(g.is_molecular(&vt()).unwrap());
        assert!(!g.is_molecular_entity(&vt()).unwrap());
        assert_eq!(g.canonical_fingerprint(), "empty");
    }

    #[test]
    fn fingerprint_invariant_under_renaming() {
        let w = samples::water();
        let renamed = w.prefixed("x_");
        assert_eq!(w.canonical_fingerprint(), renamed.canonical_fingerprint());
        assert_ne!(
            w.canonical_fingerprint(),
            samples::hydroxide().canonical_fingerprint()
        );
    }

    #[test]
    fn fingerprint_distinguishes_charge_and_bond_order() {
        let mut single = ChemGraph::new();
        single.add_atom("a", AtomLabel::element("O"), 0).unwrap();
        single.add_atom("b", AtomLabel::element("O"), 0).unwrap();
        single.set_bond("a", "b", BondLabel::Covalent(1)).unwrap();
        let mut double = ChemGraph::new();
        double.add_atom("a", AtomLabel::element("O"), 0).unwrap();
        double.add_atom("b", AtomLabel::element("O"), 0).unwrap();
        double.set_bond("a", "b", BondLabel::Covalent(2)).unwrap();
        assert_ne!(
            single.canonical_fingerprint(),
            double.canonical_fingerprint()
        );
    }

    #[test]
    fn fingerprint_handles_symmetric_rings() {
        // Six-ring with alternating multiplicities; rotating the construction
        // shifts which pairs are double bonds but yields an isomorphic graph.
        let ring = |offset: usize| {
            let mut g = ChemGraph::new();
            for i in 0..6 {
                g.add_atom(&format!("c{i}"), AtomLabel::element("C"), 0)
                    .unwrap();
                g.add_atom(&format!("h{i}"), AtomLabel::element("H"), 0)
                    .unwrap();
            }
            for i in 0..6 {
                let j = (i + 1) % 6;
                let mult = if (i + offset) % 2 == 0 { 2 } else { 1 };
                g.set_bond(&format!("c{i}"), &format!("c{j}"), BondLabel::Covalent(mult))
                    .unwrap();
                g.set_bond(&format!("c{i}"), &format!("h{i}"), BondLabel::Covalent(1))
                    .unwrap();
            }
            g
        };
        assert_eq!(
            ring(0).canonical_fingerprint(),
            ring(1).canonical_fingerprint()
        );
    }

    #[test]
    fn fingerprint_of_disjoint_unions_sorts_components() {
        let a = samples::water().prefixed("l_");
        let b = samples::methane().prefixed("r_");
        let ab = a.disjoint_union(&b).unwrap();
        let ba = b.disjoint_union(&a).unwrap();
        assert_eq!(ab.canonical_fingerprint(), ba.canonical_fingerprint());
        assert!(ab.canonical_fingerprint().contains(" + "));
    }

    #[test]
    fn duplicate_component_fingerprints_are_kept() {
        let two = samples::hydrogen_molecule()
            .prefixed("l_")
            .disjoint_union(&samples::hydrogen_molecule().prefixed("r_"))
            .unwrap();
        let one = samples::hydrogen_molecule();
        assert_ne!(two.canonical_fingerprint(), one.canonical_fingerprint());
    }

    #[test]
    fn construction_errors() {
        let mut g = samples::water();
        assert!(g.add_atom("o", AtomLabel::element("O"), 0).is_err());
        assert!(g.set_bond("o", "o", BondLabel::Covalent(1)).is_err());
        assert!(g.set_bond("o", "zz", BondLabel::Covalent(1)).is_err());
        assert!(g.set_bond("h1", "h2", BondLabel::Covalent(5)).is_err());
        assert!(samples::water()
            .disjoint_union(&samples::water())
            .is_err());
    }

    #[test]
    fn removing_a_vertex_drops_its_bonds() {
        let mut g = samples::water();
        g.remove_vertex("o").unwrap();
        assert_eq!(g.bonds().count(), 0);
        assert_eq!(g.len(), 2);
    }

    #[test]
    fn fresh_names_extend_until_unused() {
        let g = samples::water();
        assert_eq!(g.fresh_name("o"), "o_");
        assert_eq!(g.fresh_name("new"), "new");
    }

    #[test]
    fn valence_table_parsing_and_constraints() {
        let t = ValenceTable::parse("H=1\nC=4 # carbon\n\n# comment\n", "test.cfg").unwrap();
        assert_eq!(t.valence_of(&AtomLabel::element("C")).unwrap(), 4);
        assert_eq!(t.valence_of(&AtomLabel::Alpha).unwrap(), 1);
        assert!(t.valence_of(&AtomLabel::element("O")).is_err());

        assert!(ValenceTable::parse("H=1", "test.cfg").is_err());
        assert!(ValenceTable::parse("H=1\nC=4\nalpha=2", "test.cfg").is_err());
        let ok = ValenceTable::parse("H=1\nC=4\nalpha=1", "test.cfg").unwrap();
        assert!(ok.has("H"));
        assert!(ValenceTable::parse("H=x\nC=4", "test.cfg").is_err());
        assert!(ValenceTable::parse("H 1\nC=4", "test.cfg").is_err());
    }

    #[test]
    fn bond_and_atom_labels_round_trip_through_text() {
        for s in ["1", "2", "3", "4", "ionic"] {
            let b: BondLabel = s.parse().unwrap();
            assert_eq!(b.to_string(), s);
        }
        assert_eq!("ib".parse::<BondLabel>().unwrap(), BondLabel::Ionic);
        assert!("5".parse::<BondLabel>().is_err());
        assert_eq!("alpha".parse::<AtomLabel>().unwrap(), AtomLabel::Alpha);
        assert_eq!(
            "Cl".parse::<AtomLabel>().unwrap(),
            AtomLabel::element("Cl")
        );
        assert!("".parse::<AtomLabel>().is_err());
        assert!("1x".parse::<AtomLabel>().is_err());
    }
}
