//! Oriented chemical graphs and the chirality decision.
//!
//! A plain labelled graph carries no spatial information, so two mirror-image
//! molecules are indistinguishable as graphs.  This module adds the missing
//! data as two combinatorial relations over the vertex set:
//!
//! * a **triangle relation** `tri`: a set of unordered vertex triples with no
//!   repeated vertex (which triples of atoms span a plane);
//! * a **tetrahedron relation** `tet`: a set of ordered vertex quadruples
//!   closed under even permutations (which quadruples of atoms form a
//!   positively oriented tetrahedron).  Closure under the alternating group
//!   captures that a rigid rotation of four points does not change their
//!   handedness, while any odd permutation inverts it.
//!
//! The tetrahedron relation must be supported by the triangle relation: every
//! 3-element subset of a related quadruple must span a plane.
//!
//! Given two oriented graphs `M` and `N`, a label isomorphism `f` between the
//! underlying graphs
//!
//! * **preserves orientation** when `tri_M(A,B,C) ⟺ tri_N(fA,fB,fC)` and
//!   `tet_M(A,B,C,D) ⟺ tet_N(fA,fB,fC,fD)` for all vertex tuples, and
//! * **reflects orientation** when `tri_M(A,B,C) ⟺ tri_N(fA,fB,fC)` and
//!   `tet_M(A,B,C,D) ⟺ tet_N(fD,fA,fB,fC)` for all vertex tuples — the cyclic
//!   shift is an odd permutation, so a reflecting map inverts every
//!   handedness judgement.
//!
//! The pair `(M, N)` is **chiral** when some isomorphism reflects orientation
//! but no isomorphism preserves it: the two structures are mirror images that
//! cannot be superimposed.
//!
//! Both relations are stored by orbit representatives (sorted triple for
//! `tri`; lexicographically least even permutation for `tet`), so membership
//! under the group action is a single set lookup.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use crate::error::Error;
use crate::graph::{ChemGraph, VertexName};
use crate::violation::Violation;

type Result<T> = std::result::Result<T, Error>;

/// The twelve even permutations of four positions.
fn even_perms() -> &'static [[usize; 4]] {
    static PERMS: OnceLock<Vec<[usize; 4]>> = OnceLock::new();
    PERMS.get_or_init(|| {
        let mut out = Vec::new();
        let idx = [0usize, 1, 2, 3];
        // Enumerate all 24 arrangements and keep the even ones.
        for a in 0..4 {
            for b in 0..4 {
                if b == a {
                    continue;
                }
                for c in 0..4 {
                    if c == a || c == b {
                        continue;
                    }
                    let d = 6 - a - b - c;
                    let p = [idx[a], idx[b], idx[c], idx[d]];
                    let mut inversions = 0;
                    for i in 0..4 {
                        for j in (i + 1)..4 {
                            if p[i] > p[j] {
                                inversions += 1;
                            }
                        }
                    }
                    if inversions % 2 == 0 {
                        out.push(p);
                    }
                }
            }
        }
        out
    })
}

/// Apply a position permutation to a quadruple.
fn permute(t: &[VertexName; 4], p: &[usize; 4]) -> [VertexName; 4] {
    [
        t[p[0]].clone(),
        t[p[1]].clone(),
        t[p[2]].clone(),
        t[p[3]].clone(),
    ]
}

/// Canonical representative of the even-permutation orbit of a quadruple:
/// the lexicographically least of its twelve even rearrangements.
fn tet_rep(t: &[VertexName; 4]) -> [VertexName; 4] {
    even_perms()
        .iter()
        .map(|p| permute(t, p))
        .min()
        .expect("twelve even permutations")
}

/// Canonical representative of an unordered triple: the sorted triple.
fn tri_rep(t: &[VertexName; 3]) -> [VertexName; 3] {
    let mut s = t.clone();
    s.sort();
    s
}

fn all_distinct(names: &[&str]) -> bool {
    let set: BTreeSet<&str> = names.iter().copied().collect();
    set.len() == names.len()
}

/// A chemical graph together with triangle and tetrahedron relations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrientedGraph {
    base: ChemGraph,
    /// Unordered triples, stored sorted.
    tri: BTreeSet<[VertexName; 3]>,
    /// Ordered quadruples modulo even permutation, stored as least members.
    tet: BTreeSet<[VertexName; 4]>,
}

impl OrientedGraph {
    /// Wrap a graph with empty orientation relations.
    pub fn new(base: ChemGraph) -> OrientedGraph {
        OrientedGraph {
            base,
            tri: BTreeSet::new(),
            tet: BTreeSet::new(),
        }
    }

    pub fn base(&self) -> &ChemGraph {
        &self.base
    }

    /// Declare that three distinct vertices span a plane.  The triple is
    /// unordered; any ordering of the same three names denotes the same fact.
    pub fn add_tri(&mut self, a: &str, b: &str, c: &str) -> Result<()> {
        self.check_vertices(&[a, b, c])?;
        self.tri.insert(tri_rep(&[a.into(), b.into(), c.into()]));
        Ok(())
    }

    /// Declare a positively oriented quadruple.  All even rearrangements of
    /// the four names become related; odd rearrangements do not.
    pub fn add_tet(&mut self, a: &str, b: &str, c: &str, d: &str) -> Result<()> {
        self.check_vertices(&[a, b, c, d])?;
        self.tet
            .insert(tet_rep(&[a.into(), b.into(), c.into(), d.into()]));
        Ok(())
    }

    fn check_vertices(&self, names: &[&str]) -> Result<()> {
        if !all_distinct(names) {
            return Err(Error::Precondition(format!(
                "orientation tuple has a repeated vertex: {}",
                names.join(",")
            )));
        }
        for n in names {
            if !self.base.has_vertex(n) {
                return Err(Error::Precondition(format!(
                    "orientation tuple names unknown vertex {n}"
                )));
            }
        }
        Ok(())
    }

    /// Is the unordered triple related?  Repeated names are never related.
    pub fn has_tri(&self, a: &str, b: &str, c: &str) -> bool {
        all_distinct(&[a, b, c]) && self.tri.contains(&tri_rep(&[a.into(), b.into(), c.into()]))
    }

    /// Is the ordered quadruple related (up to even rearrangement)?
    pub fn has_tet(&self, a: &str, b: &str, c: &str, d: &str) -> bool {
        all_distinct(&[a, b, c, d])
            && self
                .tet
                .contains(&tet_rep(&[a.into(), b.into(), c.into(), d.into()]))
    }

    /// Stored triangle representatives, sorted.
    pub fn tri_triples(&self) -> impl Iterator<Item = &[VertexName; 3]> {
        self.tri.iter()
    }

    /// Stored tetrahedron orbit representatives.
    pub fn tet_tuples(&self) -> impl Iterator<Item = &[VertexName; 4]> {
        self.tet.iter()
    }
}

/// Check every stored relation entry against the definitions:
/// no repeated vertices, all names present in the base graph, and every
/// 3-element subset of a tetrahedron quadruple present in the triangle
/// relation.
pub fn validate_orientation(og: &OrientedGraph) -> Vec<Violation> {
    let mut out = Vec::new();
    for t in &og.tri {
        let names: Vec<&str> = t.iter().map(|s| s.as_str()).collect();
        if !all_distinct(&names) {
            out.push(Violation::new(
                "tri-repeat",
                t.to_vec(),
                "triangle relation entry repeats a vertex",
            ));
        }
        for n in t {
            if !og.base.has_vertex(n) {
                out.push(Violation::new(
                    "tri-unknown-vertex",
                    vec![n.clone()],
                    "triangle relation names a vertex absent from the graph",
                ));
            }
        }
    }
    for t in &og.tet {
        let names: Vec<&str> = t.iter().map(|s| s.as_str()).collect();
        if !all_distinct(&names) {
            out.push(Violation::new(
                "tet-repeat",
                t.to_vec(),
                "tetrahedron relation entry repeats a vertex",
            ));
            continue;
        }
        for n in t {
            if !og.base.has_vertex(n) {
                out.push(Violation::new(
                    "tet-unknown-vertex",
                    vec![n.clone()],
                    "tetrahedron relation names a vertex absent from the graph",
                ));
            }
        }
        // Every 3-element subset of a related quadruple must span a plane.
        for skip in 0..4 {
            let sub: Vec<&str> = (0..4).filter(|i| *i != skip).map(|i| names[i]).collect();
            if !og.has_tri(sub[0], sub[1], sub[2]) {
                out.push(Violation::new(
                    "tet-missing-tri",
                    sub.iter().map(|s| s.to_string()).collect(),
                    format!(
                        "tetrahedron {} relates a triple missing from the triangle relation",
                        names.join(",")
                    ),
                ));
            }
        }
    }
    out
}

/// All bijections between the vertex sets of `m` and `n` that preserve atom
/// labels, charges, and bond labels in both directions.
///
/// Plain backtracking: vertices of `m` are assigned in a fixed order, each to
/// a so-far-unused vertex of `n` with the same label and charge whose bonds
/// to all previously assigned vertices match exactly (including absent
/// bonds).  Because bond equality is checked against every assigned vertex,
/// a completed assignment preserves bonds in both directions.
pub fn label_isomorphisms(m: &ChemGraph, n: &ChemGraph) -> Vec<BTreeMap<VertexName, VertexName>> {
    let mut out = Vec::new();
    if m.len() != n.len() {
        return out;
    }

    // Candidate classes: same label, charge, and degree.
    let class = |g: &ChemGraph, v: &str| {
        (
            g.label(v).clone(),
            g.charge(v),
            g.nbrs(v).len(),
        )
    };
    let mut m_classes: BTreeMap<_, usize> = BTreeMap::new();
    let mut n_classes: BTreeMap<_, usize> = BTreeMap::new();
    for v in m.names() {
        *m_classes.entry(class(m, v)).or_default() += 1;
    }
    for v in n.names() {
        *n_classes.entry(class(n, v)).or_default() += 1;
    }
    if m_classes != n_classes {
        return out;
    }

    // Assign rarest classes first so mismatches fail early.
    let mut order: Vec<VertexName> = m.names().cloned().collect();
    order.sort_by_key(|v| (m_classes[&class(m, v)], v.clone()));

    let n_names: Vec<VertexName> = n.names().cloned().collect();
    let mut map: BTreeMap<VertexName, VertexName> = BTreeMap::new();
    let mut used: BTreeSet<VertexName> = BTreeSet::new();

    fn backtrack(
        m: &ChemGraph,
        n: &ChemGraph,
        order: &[VertexName],
        depth: usize,
        n_names: &[VertexName],
        map: &mut BTreeMap<VertexName, VertexName>,
        used: &mut BTreeSet<VertexName>,
        out: &mut Vec<BTreeMap<VertexName, VertexName>>,
    ) {
        if depth == order.len() {
            out.push(map.clone());
            return;
        }
        let v = &order[depth];
        for w in n_names {
            if used.contains(w)
                || m.label(v) != n.label(w)
                || m.charge(v) != n.charge(w)
                || m.nbrs(v).len() != n.nbrs(w).len()
            {
                continue;
            }
            let consistent = map.iter().all(|(mv, nv)| m.bond(v, mv) == n.bond(w, nv));
            if !consistent {
                continue;
            }
            map.insert(v.clone(), w.clone());
            used.insert(w.clone());
            backtrack(m, n, order, depth + 1, n_names, map, used, out);
            map.remove(v);
            used.remove(w);
        }
    }

    backtrack(m, n, &order, 0, &n_names, &mut map, &mut used, &mut out);
    out
}

fn apply(f: &BTreeMap<VertexName, VertexName>, v: &str) -> VertexName {
    f.get(v).cloned().unwrap_or_else(|| v.to_string())
}

fn invert(f: &BTreeMap<VertexName, VertexName>) -> BTreeMap<VertexName, VertexName> {
    f.iter().map(|(a, b)| (b.clone(), a.clone())).collect()
}

/// Does `f` satisfy the triangle biconditional in both directions?
fn tri_agrees(m: &OrientedGraph, n: &OrientedGraph, f: &BTreeMap<VertexName, VertexName>) -> bool {
    let g = invert(f);
    m.tri.iter().all(|[a, b, c]| {
        n.has_tri(&apply(f, a), &apply(f, b), &apply(f, c))
    }) && n.tri.iter().all(|[a, b, c]| {
        m.has_tri(&apply(&g, a), &apply(&g, b), &apply(&g, c))
    })
}

/// Does `f` satisfy `tet_M(A,B,C,D) ⟺ tet_N(fA,fB,fC,fD)` for all tuples?
///
/// Both relations are closed under even rearrangement and renaming along `f`
/// commutes with rearrangement, so it suffices to push each stored
/// representative of `M` forward and each representative of `N` backward.
fn tet_preserves(m: &OrientedGraph, n: &OrientedGraph, f: &BTreeMap<VertexName, VertexName>) -> bool {
    let g = invert(f);
    m.tet.iter().all(|[a, b, c, d]| {
        n.has_tet(&apply(f, a), &apply(f, b), &apply(f, c), &apply(f, d))
    }) && n.tet.iter().all(|[a, b, c, d]| {
        m.has_tet(&apply(&g, a), &apply(&g, b), &apply(&g, c), &apply(&g, d))
    })
}

/// Does `f` satisfy `tet_M(A,B,C,D) ⟺ tet_N(fD,fA,fB,fC)` for all tuples?
///
/// The cyclic shift is a fixed odd permutation; conjugating an even
/// rearrangement by it stays even, so orbit representatives again suffice.
/// The backward direction inverts the shift: a related `(P,Q,R,S)` in `N`
/// must come from `(g(Q), g(R), g(S), g(P))` related in `M`.
fn tet_reflects(m: &OrientedGraph, n: &OrientedGraph, f: &BTreeMap<VertexName, VertexName>) -> bool {
    let g = invert(f);
    m.tet.iter().all(|[a, b, c, d]| {
        n.has_tet(&apply(f, d), &apply(f, a), &apply(f, b), &apply(f, c))
    }) && n.tet.iter().all(|[p, q, r, s]| {
        m.has_tet(&apply(&g, q), &apply(&g, r), &apply(&g, s), &apply(&g, p))
    })
}

/// Is there a label isomorphism matching both relations exactly?
pub fn orientation_preserving_exists(m: &OrientedGraph, n: &OrientedGraph) -> bool {
    label_isomorphisms(&m.base, &n.base)
        .iter()
        .any(|f| tri_agrees(m, n, f) && tet_preserves(m, n, f))
}

/// Is there a label isomorphism matching the triangle relation exactly and
/// inverting every tetrahedron judgement?
pub fn orientation_reflecting_exists(m: &OrientedGraph, n: &OrientedGraph) -> bool {
    label_isomorphisms(&m.base, &n.base)
        .iter()
        .any(|f| tri_agrees(m, n, f) && tet_reflects(m, n, f))
}

/// Mirror images that cannot be superimposed: some isomorphism reflects
/// orientation and none preserves it.
pub fn are_chiral(m: &OrientedGraph, n: &OrientedGraph) -> bool {
    orientation_reflecting_exists(m, n) && !orientation_preserving_exists(m, n)
}

// ---------------------------------------------------------------------------
// Worked molecules.
// ---------------------------------------------------------------------------

/// 2-butanol: CH3–CH(OH)–CH2–CH3.  The second carbon carries four pairwise
/// distinct substituents (hydroxyl oxygen `o`, methyl carbon `c1`, methylene
/// carbon `c3`, hydrogen `hc`), so every self-isomorphism fixes all four.
fn butanol_graph() -> ChemGraph {
    let mut g = ChemGraph::new();
    for c in ["c1", "c2", "c3", "c4"] {
        g.add_atom(c, crate::graph::AtomLabel::element("C"), 0).unwrap();
    }
    g.add_atom("o", crate::graph::AtomLabel::element("O"), 0).unwrap();
    for h in ["ho", "hc", "h11", "h12", "h13", "h31", "h32", "h41", "h42", "h43"] {
        g.add_atom(h, crate::graph::AtomLabel::element("H"), 0).unwrap();
    }
    let one = crate::graph::BondLabel::Covalent(1);
    for (u, v) in [
        ("c1", "c2"),
        ("c2", "c3"),
        ("c3", "c4"),
        ("c2", "o"),
        ("o", "ho"),
        ("c2", "hc"),
        ("c1", "h11"),
        ("c1", "h12"),
        ("c1", "h13"),
        ("c3", "h31"),
        ("c3", "h32"),
        ("c4", "h41"),
        ("c4", "h42"),
        ("c4", "h43"),
    ] {
        g.set_bond(u, v, one).unwrap();
    }
    g
}

/// The two mirror arrangements of 2-butanol.  Both carry the same base graph
/// and the same triangle relation (every 3-subset of the four substituents of
/// the stereocenter); their tetrahedron relations differ by an odd
/// rearrangement, so the pair is chiral.
pub fn butanol_oriented_pair() -> (OrientedGraph, OrientedGraph) {
    let marked = ["o", "c1", "c3", "hc"];
    let mut m = OrientedGraph::new(butanol_graph());
    let mut n = OrientedGraph::new(butanol_graph());
    for og in [&mut m, &mut n] {
        for skip in 0..4 {
            let t: Vec<&str> = (0..4).filter(|i| *i != skip).map(|i| marked[i]).collect();
            og.add_tri(t[0], t[1], t[2]).unwrap();
        }
    }
    m.add_tet("o", "c1", "c3", "hc").unwrap();
    n.add_tet("hc", "o", "c1", "c3").unwrap();
    (m, n)
}

/// Isopentane: CH3–CH(CH3)–CH2–CH3, i.e. 2-butanol with the hydroxyl group
/// replaced by a second methyl group.  The two methyl substituents `c1` and
/// `cm` are interchangeable, which defeats chirality.
fn isopentane_graph() -> ChemGraph {
    let mut g = ChemGraph::new();
    for c in ["c1", "c2", "c3", "c4", "cm"] {
        g.add_atom(c, crate::graph::AtomLabel::element("C"), 0).unwrap();
    }
    for h in [
        "hc", "h11", "h12", "h13", "h31", "h32", "h41", "h42", "h43", "hm1", "hm2", "hm3",
    ] {
        g.add_atom(h, crate::graph::AtomLabel::element("H"), 0).unwrap();
    }
    let one = crate::graph::BondLabel::Covalent(1);
    for (u, v) in [
        ("c1", "c2"),
        ("c2", "c3"),
        ("c3", "c4"),
        ("c2", "cm"),
        ("c2", "hc"),
        ("c1", "h11"),
        ("c1", "h12"),
        ("c1", "h13"),
        ("c3", "h31"),
        ("c3", "h32"),
        ("c4", "h41"),
        ("c4", "h42"),
        ("c4", "h43"),
        ("cm", "hm1"),
        ("cm", "hm2"),
        ("cm", "hm3"),
    ] {
        g.set_bond(u, v, one).unwrap();
    }
    g
}

/// The same two mirror arrangements applied to isopentane.  Exchanging the
/// two methyl groups is a label isomorphism that undoes the mirror, so an
/// orientation-preserving map exists and the pair is not chiral.
pub fn isopentane_oriented_pair() -> (OrientedGraph, OrientedGraph) {
    let marked = ["hc", "c1", "c3", "cm"];
    let mut m = OrientedGraph::new(isopentane_graph());
    let mut n = OrientedGraph::new(isopentane_graph());
    for og in [&mut m, &mut n] {
        for skip in 0..4 {
            let t: Vec<&str> = (0..4).filter(|i| *i != skip).map(|i| marked[i]).collect();
            og.add_tri(t[0], t[1], t[2]).unwrap();
        }
    }
    m.add_tet("hc", "c1", "c3", "cm").unwrap();
    n.add_tet("cm", "hc", "c1", "c3").unwrap();
    (m, n)
}

/// 1,3-dichloroallene: ClHC=C=CHCl.  The two terminal substituent planes are
/// perpendicular, which makes the molecule chiral along its axis even though
/// no single atom has four distinct neighbours.
fn dichloroallene_graph() -> ChemGraph {
    let mut g = ChemGraph::new();
    for c in ["c1", "c2", "c3"] {
        g.add_atom(c, crate::graph::AtomLabel::element("C"), 0).unwrap();
    }
    for h in ["h1", "h3"] {
        g.add_atom(h, crate::graph::AtomLabel::element("H"), 0).unwrap();
    }
    for l in ["l1", "l3"] {
        g.add_atom(l, crate::graph::AtomLabel::element("Cl"), 0).unwrap();
    }
    let one = crate::graph::BondLabel::Covalent(1);
    let two = crate::graph::BondLabel::Covalent(2);
    g.set_bond("c1", "c2", two).unwrap();
    g.set_bond("c2", "c3", two).unwrap();
    g.set_bond("c1", "h1", one).unwrap();
    g.set_bond("c1", "l1", one).unwrap();
    g.set_bond("c3", "h3", one).unwrap();
    g.set_bond("c3", "l3", one).unwrap();
    g
}

/// The two mirror arrangements of 1,3-dichloroallene.  Each side relates two
/// quadruple orbits: the central carbon with the first plane's substituents
/// against each of the second plane's substituents in turn.  The mirror
/// image carries the odd rearrangements of the same quadruples.
pub fn dichloroallene_oriented_pair() -> (OrientedGraph, OrientedGraph) {
    let mut m = OrientedGraph::new(dichloroallene_graph());
    let mut n = OrientedGraph::new(dichloroallene_graph());
    for og in [&mut m, &mut n] {
        for (a, b, c) in [
            ("h1", "l1", "c2"),
            ("h1", "l1", "h3"),
            ("h1", "c2", "h3"),
            ("l1", "c2", "h3"),
            ("h1", "l1", "l3"),
            ("h1", "c2", "l3"),
            ("l1", "c2", "l3"),
        ] {
            og.add_tri(a, b, c).unwrap();
        }
    }
    m.add_tet("h1", "l1", "c2", "h3").unwrap();
    m.add_tet("l3", "h1", "l1", "c2").unwrap();
    n.add_tet("l1", "h1", "c2", "h3").unwrap();
    n.add_tet("h1", "l3", "l1", "c2").unwrap();
    (m, n)
}
