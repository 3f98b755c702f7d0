//! Double-pushout rewriting of chemically labelled graphs.
//!
//! A rewrite rule is a span of vertex embeddings `A ← K → B` between
//! valence-complete pattern graphs with equal net charge: `A` is what the
//! rule consumes, `B` is what it produces, and the shared interface `K`
//! survives the step. Applying the rule to a chemical graph `C` along a
//! matching `A → C` takes two gluing steps:
//!
//! 1. a *pushout complement* removes the matched copy of `A ∖ K` from `C`,
//!    leaving a context `D` that still carries the interface;
//! 2. a *pushout* glues the produced pattern `B` onto `D` over the
//!    interface, yielding the result `E`.
//!
//! Both squares are pushouts of a span made of one matching and one
//! embedding. This module constructs them explicitly, checks the results
//! against the graph conditions, and verifies complements by re-gluing and
//! comparing with the original graph through the canonical comparison map.
//! It also converts whole rewrite diagrams to and from the flat reaction
//! tuples of [`crate::reaction`], and builds the canonical (largest common
//! context) interface for a pair of patterns joined by an atom
//! correspondence.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{render, Error};
use crate::graph::{BondLabel, ChemGraph, ValenceTable, VertexName, MAX_COV};
use crate::morphism::{
    is_exact_iso, is_matchable_subset, matching_from_matchable, reserve_fresh, Morphism,
};
use crate::reaction::Reaction;
use crate::violation::Violation;
use crate::Result;

// ---------------------------------------------------------------------------
// Small helpers
// ---------------------------------------------------------------------------

fn require_embedding(f: &Morphism, what: &str) -> Result<()> {
    let vs = f.embedding_violations();
    if vs.is_empty() {
        Ok(())
    } else {
        Err(Error::Precondition(format!(
            "{what} is not a vertex embedding: {}",
            render(&vs)
        )))
    }
}

fn require_matching(m: &Morphism, what: &str) -> Result<()> {
    let vs = m.matching_violations();
    if vs.is_empty() {
        Ok(())
    } else {
        Err(Error::Precondition(format!(
            "{what} is not a matching: {}",
            render(&vs)
        )))
    }
}

fn agree_charge(a: i32, b: i32) -> i32 {
    if a == b {
        a
    } else {
        0
    }
}

fn agree_bond(a: BondLabel, b: BondLabel) -> BondLabel {
    if a == b {
        a
    } else {
        BondLabel::NONE
    }
}

/// Collapses the bonds seen by a fibre onto a single pair of vertices.
/// Covalent multiplicities add up; a mixture of ionic and covalent bonds,
/// more than one ionic bond, or a covalent total above the maximum has no
/// single-label sum.
fn sum_bonds<I: IntoIterator<Item = BondLabel>>(bonds: I) -> Option<BondLabel> {
    let mut cov: u32 = 0;
    let mut ionic = 0usize;
    for b in bonds {
        if b.is_ionic() {
            ionic += 1;
        } else {
            cov += u32::from(b.cov());
        }
    }
    match (ionic, cov) {
        (0, k) if k <= u32::from(MAX_COV) => Some(BondLabel::Covalent(k as u8)),
        (1, 0) => Some(BondLabel::Ionic),
        _ => None,
    }
}

/// Builds the comparison map out of a constructed pushout: the unique
/// vertex map `h` on `built` with `h ∘ p1 = q1` and `h ∘ p2 = q2`, if the
/// two requirements are consistent and cover every vertex.
fn mediating_map(
    p1: &Morphism,
    q1: &Morphism,
    p2: &Morphism,
    q2: &Morphism,
    built: &ChemGraph,
) -> Option<BTreeMap<VertexName, VertexName>> {
    let mut h: BTreeMap<VertexName, VertexName> = BTreeMap::new();
    for (x, y) in p1.map() {
        let t = q1.apply(x);
        if let Some(prev) = h.insert(y.clone(), t.clone()) {
            if prev != *t {
                return None;
            }
        }
    }
    for (x, y) in p2.map() {
        let t = q2.apply(x);
        if let Some(prev) = h.insert(y.clone(), t.clone()) {
            if prev != *t {
                return None;
            }
        }
    }
    if h.len() != built.len() {
        return None;
    }
    Some(h)
}

// ---------------------------------------------------------------------------
// Pullback along an embedding
// ---------------------------------------------------------------------------

/// Restricts a morphism `f: A → B` along a vertex embedding `e: C → B`
/// with the same codomain.
///
/// Returns the restriction graph `Z` — the part of `A` that lands inside
/// the embedded copy of `C` — together with the inclusion `Z → A` and the
/// corestriction `Z → C`. A charge or bond survives into `Z` only where
/// `A` and `C` agree, which makes both projections morphisms; since
/// embeddings reach every element vertex of their codomain, the inclusion
/// is itself an embedding, and the corestriction is a matching whenever
/// `f` is. The square commutes and is a pullback: any commuting cone
/// factors uniquely through `Z`.
pub fn pullback_along_embedding(
    f: &Morphism,
    e: &Morphism,
) -> Result<(ChemGraph, Morphism, Morphism)> {
    if f.cod() != e.cod() {
        return Err(Error::Precondition(
            "pullback legs must share their codomain".into(),
        ));
    }
    let fvs = f.violations();
    if !fvs.is_empty() {
        return Err(Error::Precondition(format!(
            "pullback leg is not a morphism: {}",
            render(&fvs)
        )));
    }
    require_embedding(e, "pullback leg")?;
    let a = f.dom();
    let c = e.dom();
    let e_inv: BTreeMap<&VertexName, &VertexName> =
        e.map().iter().map(|(v, w)| (w, v)).collect();
    let keep: Vec<&VertexName> = a
        .names()
        .filter(|v| e_inv.contains_key(f.apply(v)))
        .collect();
    let mut z = ChemGraph::new();
    for v in &keep {
        let cv = e_inv[f.apply(v)];
        z.add_atom(
            v,
            a.label(v).clone(),
            agree_charge(a.charge(v), c.charge(cv)),
        )?;
    }
    for (i, u) in keep.iter().enumerate() {
        for v in &keep[i + 1..] {
            let bond = agree_bond(
                a.bond(u, v),
                c.bond(e_inv[f.apply(u)], e_inv[f.apply(v)]),
            );
            if !bond.is_none() {
                z.set_bond(u, v, bond)?;
            }
        }
    }
    let into_dom = Morphism::inclusion(z.clone(), a.clone())?;
    let map = keep
        .iter()
        .map(|v| ((*v).clone(), e_inv[f.apply(v)].clone()))
        .collect();
    let restricted = Morphism::new(z.clone(), c.clone(), map)?;
    debug_assert!(into_dom.is_embedding());
    debug_assert!(restricted.is_morphism());
    Ok((z, into_dom, restricted))
}

// ---------------------------------------------------------------------------
// Pushout of a (matching, embedding) span
// ---------------------------------------------------------------------------

/// Pushout of a span `B ← A → C` whose left leg `m: A → B` is a matching
/// and whose right leg `e: A → C` is a vertex embedding.
///
/// The result `Y` consists of `B` together with a fresh copy of every
/// vertex of `C` outside the embedded copy of `A` (all of them
/// open-valence markers, since embeddings reach every element vertex).
/// On the matched image the charges are recomputed as fibre sums over
/// `C`, and every bond incident to the matched image is transported from
/// `C` across the span — collapsing fibres onto shared open-valence
/// images by summation. The legs are the inclusion `B → Y` and the glue
/// map `C → Y`; the square commutes and is a pushout: every commuting
/// cospan factors uniquely through `Y`.
///
/// The gluing may fail to be a graph again — a marker can end up with two
/// neighbours, a collapsed fibre may have no single-label bond sum, or a
/// leg may fall out of its class. In those cases the span has no pushout
/// and an invalidity error is returned.
pub fn pushout_em(m: &Morphism, e: &Morphism) -> Result<(ChemGraph, Morphism, Morphism)> {
    if m.dom() != e.dom() {
        return Err(Error::Precondition(
            "pushout legs must share their domain".into(),
        ));
    }
    require_matching(m, "pushout left leg")?;
    require_embedding(e, "pushout right leg")?;
    let a = m.dom();
    let b = m.cod();
    let c = e.cod();

    let e_inv: BTreeMap<&VertexName, &VertexName> =
        e.map().iter().map(|(v, w)| (w, v)).collect();
    let a_chems = a.chem_set();
    let a_alphas = a.alpha_set();
    let chem_img: BTreeSet<&VertexName> = a_chems.iter().map(|u| m.apply(u)).collect();
    let alpha_img: BTreeSet<&VertexName> = a_alphas.iter().map(|u| m.apply(u)).collect();
    // matchings are injective on element vertices, so element images have
    // unique preimages
    let chem_pre: BTreeMap<&VertexName, &VertexName> =
        a_chems.iter().map(|u| (m.apply(u), u)).collect();

    // fresh names for the patch vertices carried over from C
    let mut taken = b.name_set();
    let mut fresh: BTreeMap<&VertexName, VertexName> = BTreeMap::new();
    for v in c.names() {
        if !e_inv.contains_key(v) {
            fresh.insert(v, reserve_fresh(v.clone(), &mut taken));
        }
    }

    let mut y = ChemGraph::new();
    for (v, label, charge) in b.iter() {
        let crg = if chem_img.contains(v) || alpha_img.contains(v) {
            m.preimage(v).iter().map(|d| c.charge(e.apply(d))).sum()
        } else {
            charge
        };
        y.add_atom(v, label.clone(), crg)?;
    }
    for (cv, name) in &fresh {
        y.add_atom(name, c.label(cv).clone(), c.charge(cv))?;
    }

    let b_names: Vec<&VertexName> = b.names().collect();
    for (i, u) in b_names.iter().enumerate() {
        for v in &b_names[i + 1..] {
            let bond = if chem_img.contains(*u) && chem_img.contains(*v) {
                c.bond(e.apply(chem_pre[*u]), e.apply(chem_pre[*v]))
            } else if chem_img.contains(*u) && alpha_img.contains(*v) {
                let cu = e.apply(chem_pre[*u]);
                collapse(m, e, c, cu, v, u)?
            } else if alpha_img.contains(*u) && chem_img.contains(*v) {
                let cv = e.apply(chem_pre[*v]);
                collapse(m, e, c, cv, u, v)?
            } else {
                b.bond(u, v)
            };
            if !bond.is_none() {
                y.set_bond(u, v, bond)?;
            }
        }
    }
    for (cv, name) in &fresh {
        for u in &b_names {
            if chem_img.contains(*u) {
                let bond = c.bond(e.apply(chem_pre[*u]), cv);
                if !bond.is_none() {
                    y.set_bond(u, name, bond)?;
                }
            }
        }
    }
    let fresh_list: Vec<(&&VertexName, &VertexName)> = fresh.iter().collect();
    for (i, (cu, nu)) in fresh_list.iter().enumerate() {
        for (cv, nv) in &fresh_list[i + 1..] {
            let bond = c.bond(cu, cv);
            if !bond.is_none() {
                y.set_bond(nu, nv, bond)?;
            }
        }
    }

    let yvs = y.prechemical_violations();
    if !yvs.is_empty() {
        return Err(Error::invalid("pushout result", yvs));
    }

    let into_y = Morphism::inclusion(b.clone(), y.clone())?;
    let mut glue_map: BTreeMap<VertexName, VertexName> = BTreeMap::new();
    for v in c.names() {
        let target = match e_inv.get(v) {
            Some(av) => m.apply(av).clone(),
            None => fresh[v].clone(),
        };
        glue_map.insert(v.clone(), target);
    }
    let glue = Morphism::new(c.clone(), y.clone(), glue_map)?;

    // the legs must land back in their classes for the square to be usable
    let mut leg_vs = into_y.embedding_violations();
    leg_vs.extend(glue.matching_violations());
    if !leg_vs.is_empty() {
        return Err(Error::invalid("pushout result", leg_vs));
    }
    Ok((y, into_y, glue))
}

/// Bond of the pushout between an element image (at `cu` inside the patch
/// graph `c`) and the open-valence image `v`: the fibre over `v` is
/// collapsed by summing its bonds seen inside the patch.
fn collapse(
    m: &Morphism,
    e: &Morphism,
    c: &ChemGraph,
    cu: &VertexName,
    v: &VertexName,
    u: &VertexName,
) -> Result<BondLabel> {
    sum_bonds(m.preimage(v).iter().map(|d| c.bond(cu, e.apply(d)))).ok_or_else(|| {
        Error::invalid(
            "pushout result",
            vec![Violation::new(
                "bond-sum",
                vec![u.clone(), v.clone()],
                "collapsed bonds do not add up to a single bond label",
            )],
        )
    })
}

// ---------------------------------------------------------------------------
// Pushout complement
// ---------------------------------------------------------------------------

/// Inverts a gluing: given an embedding `e: B → A` and a matching
/// `m: A → C`, finds the context `Z` inside `C` such that pushing the
/// transported copy of `B` in `Z` back out along `e` reproduces `C`.
///
/// The construction deletes the matched image of `A ∖ e(B)` from `C`,
/// re-labels the transported image of `B` from `B` itself (fibre charge
/// sums; exact bonds between element images; collapsed covalent loads
/// towards open-valence images) and keeps `C`'s labels everywhere else.
/// Not every such span has a complement: a deleted vertex may coincide
/// with a kept one, the kept context may violate the graph conditions,
/// the transported copy may fail to be a matching or the context
/// inclusion an embedding, and re-gluing may fail to reproduce `C`. All
/// of these report a not-found error, which callers treat as "the rule is
/// not applicable at this matching".
pub fn pushout_complement(
    e: &Morphism,
    m: &Morphism,
) -> Result<(ChemGraph, Morphism, Morphism)> {
    if e.cod() != m.dom() {
        return Err(Error::Precondition(
            "complement needs the embedding's codomain to be the matching's domain".into(),
        ));
    }
    require_embedding(e, "complement embedding leg")?;
    require_matching(m, "complement matching leg")?;
    let bg = e.dom();
    let a = e.cod();
    let c = m.cod();

    let e_img = e.image();
    let removed: BTreeSet<VertexName> = a
        .names()
        .filter(|v| !e_img.contains(*v))
        .map(|v| m.apply(v).clone())
        .collect();

    let mut hat_map: BTreeMap<VertexName, VertexName> = BTreeMap::new();
    for v in bg.names() {
        let target = m.apply(e.apply(v)).clone();
        if removed.contains(&target) {
            return Err(Error::NotFound(format!(
                "no pushout complement: {target} is both kept and deleted"
            )));
        }
        hat_map.insert(v.clone(), target);
    }

    let keep: BTreeSet<VertexName> = c
        .names()
        .filter(|v| !removed.contains(*v))
        .cloned()
        .collect();

    let bg_chems = bg.chem_set();
    let chem_img: BTreeSet<&VertexName> = bg_chems.iter().map(|v| &hat_map[v]).collect();
    let chem_pre: BTreeMap<&VertexName, &VertexName> =
        bg_chems.iter().map(|v| (&hat_map[v], v)).collect();
    let mut fibre: BTreeMap<&VertexName, Vec<&VertexName>> = BTreeMap::new();
    for (v, w) in &hat_map {
        fibre.entry(w).or_default().push(v);
    }

    let mut z = ChemGraph::new();
    for v in &keep {
        let crg = match fibre.get(v) {
            Some(pre) => pre.iter().map(|b| bg.charge(b)).sum(),
            None => c.charge(v),
        };
        z.add_atom(v, c.label(v).clone(), crg)?;
    }
    let keep_list: Vec<&VertexName> = keep.iter().collect();
    for (i, u) in keep_list.iter().enumerate() {
        for v in &keep_list[i + 1..] {
            let bond = if chem_img.contains(*u) && chem_img.contains(*v) {
                bg.bond(chem_pre[*u], chem_pre[*v])
            } else if chem_img.contains(*u) && fibre.contains_key(*v) {
                restore(bg, &fibre[*v], chem_pre[*u], u, v)?
            } else if chem_img.contains(*v) && fibre.contains_key(*u) {
                restore(bg, &fibre[*u], chem_pre[*v], u, v)?
            } else {
                // pairs of open-valence images carry no information of
                // their own in B; they and all pairs touching the
                // unmatched remainder keep C's label
                c.bond(u, v)
            };
            if !bond.is_none() {
                z.set_bond(u, v, bond)?;
            }
        }
    }

    let zvs = z.prechemical_violations();
    if !zvs.is_empty() {
        return Err(Error::NotFound(format!(
            "no pushout complement: the kept context violates the graph conditions ({})",
            render(&zvs)
        )));
    }

    let hat = Morphism::new(bg.clone(), z.clone(), hat_map)?;
    let include = Morphism::inclusion(z.clone(), c.clone())?;
    let hvs = hat.matching_violations();
    if !hvs.is_empty() {
        return Err(Error::NotFound(format!(
            "no pushout complement: the transported copy is not a matching ({})",
            render(&hvs)
        )));
    }
    let ivs = include.embedding_violations();
    if !ivs.is_empty() {
        return Err(Error::NotFound(format!(
            "no pushout complement: the context does not embed back ({})",
            render(&ivs)
        )));
    }

    // verify by re-gluing: the pushout of (hat, e) must reproduce C
    let (rebuilt, re_into, re_glue) = pushout_em(&hat, e).map_err(|err| match err {
        Error::Invalid { .. } => Error::NotFound(
            "no pushout complement: re-gluing the candidate context is not a graph".into(),
        ),
        other => other,
    })?;
    let reproduced = match mediating_map(&re_into, &include, &re_glue, m, &rebuilt) {
        Some(h) => is_exact_iso(&rebuilt, c, &h),
        None => false,
    };
    if !reproduced {
        return Err(Error::NotFound(
            "no pushout complement: re-gluing the candidate context does not reproduce the target"
                .into(),
        ));
    }
    Ok((z, hat, include))
}

/// Bond of the complement between an element image `chem_pre → u` and an
/// open-valence image `v`: collapse the fibre's bonds seen inside the
/// inner pattern.
fn restore(
    bg: &ChemGraph,
    fib: &[&VertexName],
    pre_u: &VertexName,
    u: &VertexName,
    v: &VertexName,
) -> Result<BondLabel> {
    sum_bonds(fib.iter().map(|d| bg.bond(d, pre_u))).ok_or_else(|| {
        Error::NotFound(format!(
            "no pushout complement: bonds collapsing onto ({u}, {v}) do not form a single label"
        ))
    })
}

// ---------------------------------------------------------------------------
// Reaction schemes
// ---------------------------------------------------------------------------

/// A rewrite rule: a span of vertex embeddings out of a shared interface
/// into two valence-complete pattern graphs with equal net charge. The
/// left pattern is consumed, the right one is produced, and the interface
/// is what survives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReactionScheme {
    f: Morphism,
    g: Morphism,
}

impl ReactionScheme {
    /// Builds a scheme from its span, checking the structural conditions:
    /// both legs are embeddings out of the same interface and both
    /// patterns are valence-complete with equal net charge. The interface
    /// is *not* required to be canonical; see [`ReactionScheme::new`].
    pub fn from_span(f: Morphism, g: Morphism, valences: &ValenceTable) -> Result<ReactionScheme> {
        if f.dom() != g.dom() {
            return Err(Error::Precondition(
                "scheme legs must share their interface".into(),
            ));
        }
        require_embedding(&f, "scheme left leg")?;
        require_embedding(&g, "scheme right leg")?;
        for (side, gph) in [("left", f.cod()), ("right", g.cod())] {
            let vs = gph.valence_complete_violations(valences)?;
            if !vs.is_empty() {
                return Err(Error::Precondition(format!(
                    "scheme {side} pattern is not valence-complete: {}",
                    render(&vs)
                )));
            }
        }
        if f.cod().net_charge() != g.cod().net_charge() {
            return Err(Error::Precondition(format!(
                "scheme patterns carry different net charges ({} vs {})",
                f.cod().net_charge(),
                g.cod().net_charge()
            )));
        }
        Ok(ReactionScheme { f, g })
    }

    /// Like [`ReactionScheme::from_span`], but additionally requires the
    /// interface to be the canonical largest common context of the two
    /// patterns, so that a scheme is determined by its patterns and atom
    /// correspondence alone.
    pub fn new(f: Morphism, g: Morphism, valences: &ValenceTable) -> Result<ReactionScheme> {
        let scheme = ReactionScheme::from_span(f, g, valences)?;
        if !scheme.is_canonical(valences)? {
            return Err(Error::Precondition(
                "scheme interface is not the canonical common context of its patterns".into(),
            ));
        }
        Ok(scheme)
    }

    /// The consumed pattern.
    pub fn left(&self) -> &ChemGraph {
        self.f.cod()
    }

    /// The produced pattern.
    pub fn right(&self) -> &ChemGraph {
        self.g.cod()
    }

    /// The preserved interface.
    pub fn interface(&self) -> &ChemGraph {
        self.f.dom()
    }

    /// The embedding of the interface into the consumed pattern.
    pub fn into_left(&self) -> &Morphism {
        &self.f
    }

    /// The embedding of the interface into the produced pattern.
    pub fn into_right(&self) -> &Morphism {
        &self.g
    }

    /// The reverse rule: consumed and produced patterns swap roles.
    pub fn dagger(&self) -> ReactionScheme {
        ReactionScheme {
            f: self.g.clone(),
            g: self.f.clone(),
        }
    }

    /// The correspondence between the element vertices of the two
    /// patterns induced by the interface (which reaches all of them).
    pub fn atom_bijection(&self) -> BTreeMap<VertexName, VertexName> {
        self.f
            .dom()
            .chem_set()
            .iter()
            .map(|k| (self.f.apply(k).clone(), self.g.apply(k).clone()))
            .collect()
    }

    /// Whether the interface coincides with the canonical largest common
    /// context for the two patterns and this scheme's atom
    /// correspondence.
    pub fn is_canonical(&self, valences: &ValenceTable) -> Result<bool> {
        let canon = canonical_scheme(self.left(), self.right(), &self.atom_bijection(), valences)?;
        if self.f.image() != canon.f.image() {
            return Ok(false);
        }
        let mine: Vec<&VertexName> = self.f.dom().names().collect();
        for k in &mine {
            let fk = self.f.apply(k);
            if self.g.apply(k) != canon.g.apply(fk) {
                return Ok(false);
            }
            if self.interface().charge(k) != canon.interface().charge(fk) {
                return Ok(false);
            }
        }
        for (i, k) in mine.iter().enumerate() {
            for t in &mine[i + 1..] {
                let there = canon
                    .interface()
                    .bond(self.f.apply(k), self.f.apply(t));
                if self.interface().bond(k, t) != there {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }
}

/// Builds the canonical scheme for two valence-complete patterns and a
/// label-preserving bijection between their element vertices: the
/// interface keeps every element vertex and, per bonded or charged site,
/// the largest family of open-valence markers both sides can supply —
/// covalently carried markers pair at their carrier, ionically held ones
/// at their holder split by charge sign, isolated charged ones globally
/// split by charge sign, always in vertex-name order. Charges and bonds
/// survive into the interface only where the two patterns agree.
pub fn canonical_scheme(
    left: &ChemGraph,
    right: &ChemGraph,
    atoms: &BTreeMap<VertexName, VertexName>,
    valences: &ValenceTable,
) -> Result<ReactionScheme> {
    for (side, gph) in [("left", left), ("right", right)] {
        let vs = gph.valence_complete_violations(valences)?;
        if !vs.is_empty() {
            return Err(Error::Precondition(format!(
                "{side} pattern is not valence-complete: {}",
                render(&vs)
            )));
        }
    }
    if left.net_charge() != right.net_charge() {
        return Err(Error::Precondition(format!(
            "patterns carry different net charges ({} vs {})",
            left.net_charge(),
            right.net_charge()
        )));
    }
    let lc = left.chem_set();
    let rc = right.chem_set();
    let distinct_targets = atoms.values().collect::<BTreeSet<_>>().len();
    if atoms.len() != lc.len()
        || distinct_targets != rc.len()
        || !atoms.keys().all(|u| lc.contains(u))
        || !atoms.values().all(|v| rc.contains(v))
    {
        return Err(Error::Precondition(
            "atom correspondence is not a bijection between the element vertices".into(),
        ));
    }
    for (u, v) in atoms {
        if left.label(u) != right.label(v) {
            return Err(Error::Precondition(format!(
                "atom correspondence does not preserve the element label at {u}"
            )));
        }
    }

    let mut pair_map: BTreeMap<VertexName, VertexName> = atoms.clone();
    for (u, bu) in atoms {
        pair_least(
            &mut pair_map,
            covalent_markers(left, u),
            covalent_markers(right, bu),
        );
        for sign in [-1, 1] {
            pair_least(
                &mut pair_map,
                ionic_markers(left, u, sign),
                ionic_markers(right, bu, sign),
            );
        }
    }
    for sign in [-1, 1] {
        pair_least(
            &mut pair_map,
            isolated_markers(left, sign),
            isolated_markers(right, sign),
        );
    }

    let mut k = ChemGraph::new();
    for (v, w) in &pair_map {
        k.add_atom(
            v,
            left.label(v).clone(),
            agree_charge(left.charge(v), right.charge(w)),
        )?;
    }
    let knames: Vec<&VertexName> = pair_map.keys().collect();
    for (i, x) in knames.iter().enumerate() {
        for y in &knames[i + 1..] {
            let bond = agree_bond(left.bond(x, y), right.bond(&pair_map[*x], &pair_map[*y]));
            if !bond.is_none() {
                k.set_bond(x, y, bond)?;
            }
        }
    }
    let f = Morphism::inclusion(k.clone(), left.clone())?;
    let g = Morphism::new(k, right.clone(), pair_map)?;
    ReactionScheme::from_span(f, g, valences)
}

fn covalent_markers(g: &ChemGraph, u: &str) -> Vec<VertexName> {
    g.covalent_nbrs(u)
        .into_iter()
        .filter(|a| g.is_alpha_vertex(a))
        .collect()
}

fn ionic_markers(g: &ChemGraph, u: &str, sign: i32) -> Vec<VertexName> {
    g.ionic_nbrs(u)
        .into_iter()
        .filter(|a| g.is_alpha_vertex(a) && g.charge(a).signum() == sign)
        .collect()
}

fn isolated_markers(g: &ChemGraph, sign: i32) -> Vec<VertexName> {
    g.alpha_set()
        .into_iter()
        .filter(|a| g.nbrs(a).is_empty() && g.charge(a).signum() == sign)
        .collect()
}

fn pair_least(
    map: &mut BTreeMap<VertexName, VertexName>,
    xs: Vec<VertexName>,
    ys: Vec<VertexName>,
) {
    for (x, y) in xs.into_iter().zip(ys) {
        map.insert(x, y);
    }
}

// ---------------------------------------------------------------------------
// Reaction instances
// ---------------------------------------------------------------------------

/// One application of a scheme: the full double-pushout diagram around a
/// chemical source graph and its rewritten result.
///
/// ```text
///        left ←—— interface ——→ right
///         |            |            |
///     matching    context m.    result m.
///         ↓            ↓            ↓
///       source ←—— context ——→ result
/// ```
///
/// Both squares are pushouts; the bottom row consists of an embedding of
/// the context into the source and one into the result.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReactionInstance {
    scheme: ReactionScheme,
    source_match: Morphism,
    interface_match: Morphism,
    result_match: Morphism,
    context_into_source: Morphism,
    context_into_result: Morphism,
}

impl ReactionInstance {
    pub fn scheme(&self) -> &ReactionScheme {
        &self.scheme
    }

    /// The matching of the consumed pattern into the source graph.
    pub fn source_match(&self) -> &Morphism {
        &self.source_match
    }

    /// The matching of the interface into the preserved context.
    pub fn interface_match(&self) -> &Morphism {
        &self.interface_match
    }

    /// The matching of the produced pattern into the result graph.
    pub fn result_match(&self) -> &Morphism {
        &self.result_match
    }

    /// The embedding of the preserved context into the source graph.
    pub fn context_into_source(&self) -> &Morphism {
        &self.context_into_source
    }

    /// The embedding of the preserved context into the result graph.
    pub fn context_into_result(&self) -> &Morphism {
        &self.context_into_result
    }

    pub fn source(&self) -> &ChemGraph {
        self.source_match.cod()
    }

    pub fn context(&self) -> &ChemGraph {
        self.interface_match.cod()
    }

    pub fn result(&self) -> &ChemGraph {
        self.result_match.cod()
    }

    /// Re-checks the entire diagram: the scheme conditions, the classes
    /// of all six arrows, commutativity, chemicality of source and
    /// result, and the pushout property of both squares (by re-gluing
    /// and comparing through the canonical comparison map).
    pub fn violations(&self, valences: &ValenceTable) -> Result<Vec<Violation>> {
        let mut out = Vec::new();
        let shape_ok = self.source_match.dom() == self.scheme.left()
            && self.interface_match.dom() == self.scheme.interface()
            && self.result_match.dom() == self.scheme.right()
            && self.context_into_source.dom() == self.context()
            && self.context_into_result.dom() == self.context()
            && self.context_into_source.cod() == self.source()
            && self.context_into_result.cod() == self.result();
        if !shape_ok {
            out.push(Violation::new(
                "instance-shape",
                vec![],
                "the six arrows do not form the double-square diagram",
            ));
            return Ok(out);
        }
        if let Err(err) =
            ReactionScheme::from_span(self.scheme.f.clone(), self.scheme.g.clone(), valences)
        {
            out.push(Violation::new("instance-scheme", vec![], err.to_string()));
        }
        for (what, arrow) in [
            ("source matching", &self.source_match),
            ("interface matching", &self.interface_match),
            ("result matching", &self.result_match),
        ] {
            for v in arrow.matching_violations() {
                out.push(Violation::new(
                    "instance-matching",
                    vec![what.to_string()],
                    v.to_string(),
                ));
            }
        }
        for (what, arrow) in [
            ("context into source", &self.context_into_source),
            ("context into result", &self.context_into_result),
        ] {
            for v in arrow.embedding_violations() {
                out.push(Violation::new(
                    "instance-embedding",
                    vec![what.to_string()],
                    v.to_string(),
                ));
            }
        }
        for k in self.scheme.interface().names() {
            let via_top = self.source_match.apply(self.scheme.f.apply(k));
            let via_bottom = self.context_into_source.apply(self.interface_match.apply(k));
            if via_top != via_bottom {
                out.push(Violation::new(
                    "instance-commutes",
                    vec![k.clone()],
                    "left square does not commute",
                ));
            }
            let via_top = self.result_match.apply(self.scheme.g.apply(k));
            let via_bottom = self.context_into_result.apply(self.interface_match.apply(k));
            if via_top != via_bottom {
                out.push(Violation::new(
                    "instance-commutes",
                    vec![k.clone()],
                    "right square does not commute",
                ));
            }
        }
        for (what, gph) in [("source", self.source()), ("result", self.result())] {
            for v in gph.chemical_violations(valences)? {
                out.push(Violation::new(
                    "instance-object",
                    vec![what.to_string()],
                    v.to_string(),
                ));
            }
        }
        if !out.is_empty() {
            return Ok(out);
        }
        for (what, leg, glue, target) in [
            (
                "left",
                &self.scheme.f,
                &self.context_into_source,
                &self.source_match,
            ),
            (
                "right",
                &self.scheme.g,
                &self.context_into_result,
                &self.result_match,
            ),
        ] {
            let square_ok = match pushout_em(&self.interface_match, leg) {
                Ok((built, p1, p2)) => match mediating_map(&p1, glue, &p2, target, &built) {
                    Some(h) => is_exact_iso(&built, target.cod(), &h),
                    None => false,
                },
                Err(_) => false,
            };
            if !square_ok {
                out.push(Violation::new(
                    "instance-pushout",
                    vec![what.to_string()],
                    "square is not a pushout of its span",
                ));
            }
        }
        Ok(out)
    }

    pub fn is_valid(&self, valences: &ValenceTable) -> Result<bool> {
        Ok(self.violations(valences)?.is_empty())
    }
}

/// Applies a scheme to the chemical graph at the codomain of `m`, a
/// matching of the scheme's consumed pattern. Fails with a not-found
/// error when the matched copy cannot be carved out (the rule is not
/// applicable at this matching) and with an invalidity error when the
/// glued result is not a chemical graph.
pub fn apply_scheme(
    scheme: &ReactionScheme,
    m: &Morphism,
    valences: &ValenceTable,
) -> Result<ReactionInstance> {
    if m.dom() != scheme.left() {
        return Err(Error::Precondition(
            "matching must start at the scheme's consumed pattern".into(),
        ));
    }
    require_matching(m, "scheme matching")?;
    m.cod().require_chemical(valences, "rewrite source")?;
    let (_context, interface_match, context_into_source) =
        pushout_complement(scheme.into_left(), m)?;
    let (result, context_into_result, result_match) =
        pushout_em(&interface_match, scheme.into_right())?;
    let vs = result.chemical_violations(valences)?;
    if !vs.is_empty() {
        return Err(Error::invalid("rewrite result", vs));
    }
    Ok(ReactionInstance {
        scheme: scheme.clone(),
        source_match: m.clone(),
        interface_match,
        result_match,
        context_into_source,
        context_into_result,
    })
}

// ---------------------------------------------------------------------------
// Between diagrams and flat reaction tuples
// ---------------------------------------------------------------------------

/// Flattens a rewrite diagram to its reaction tuple: the changed subsets
/// are the matched copies of the two patterns, element vertices
/// correspond through the context, and the untouched remainder maps
/// across by the context isomorphism.
pub fn instance_to_tuple(inst: &ReactionInstance, valences: &ValenceTable) -> Result<Reaction> {
    let c = inst.source();
    let eg = inst.result();
    let changed_dom = inst.source_match.image();
    let changed_cod = inst.result_match.image();
    let hat_inv: BTreeMap<&VertexName, &VertexName> = inst
        .context_into_source
        .map()
        .iter()
        .map(|(d, cv)| (cv, d))
        .collect();
    let mut atom_map = BTreeMap::new();
    let mut context_map = BTreeMap::new();
    for v in c.names() {
        if changed_dom.contains(v) && !c.is_chem_vertex(v) {
            continue;
        }
        let d = hat_inv.get(v).ok_or_else(|| {
            Error::Internal(format!("vertex {v} is missing from the preserved context"))
        })?;
        let target = inst.context_into_result.apply(d).clone();
        if changed_dom.contains(v) {
            atom_map.insert(v.clone(), target);
        } else {
            context_map.insert(v.clone(), target);
        }
    }
    Reaction::new(
        c.clone(),
        eg.clone(),
        changed_dom,
        changed_cod,
        atom_map,
        context_map,
        valences,
    )
}

/// Rebuilds a rewrite diagram from a flat reaction tuple whose changed
/// subsets are matchable. The consumed and produced patterns are the
/// valence completions of the changed subsets; the interface keeps all
/// their element vertices and pairs completion markers site by site:
/// markers over a changed element vertex pair along the atom bijection
/// (neutral markers follow their covalent carrier, charged ones their
/// ionic holder, leftovers in name order), and markers standing for
/// changed open-valence vertices pair through the capped per-site
/// families of the originals. Charges and bonds survive into the
/// interface only where the completions agree.
pub fn tuple_to_instance(r: &Reaction, valences: &ValenceTable) -> Result<ReactionInstance> {
    let rvs = r.violations(valences)?;
    if !rvs.is_empty() {
        return Err(Error::invalid("reaction", rvs));
    }
    let c = r.dom();
    let eg = r.cod();
    for (what, gph, set) in [
        ("domain", c, r.changed_dom()),
        ("codomain", eg, r.changed_cod()),
    ] {
        if !is_matchable_subset(gph, set) {
            return Err(Error::Precondition(format!(
                "changed {what} subset is not matchable; extend it before lifting"
            )));
        }
    }
    let m = matching_from_matchable(c, r.changed_dom())?;
    let m_out = matching_from_matchable(eg, r.changed_cod())?;
    let a = m.dom().clone();
    let bg = m_out.dom().clone();

    // element vertices of the patterns are the interior atoms of the
    // changed subsets; the atom bijection restricts to them
    let mut k_map: BTreeMap<VertexName, VertexName> = BTreeMap::new();
    for u in a.chem_set() {
        let bu = r.atom_map().get(&u).ok_or_else(|| {
            Error::Internal(format!("interior atom {u} is missing from the atom bijection"))
        })?;
        if !bg.has_vertex(bu) {
            return Err(Error::Internal(format!(
                "atom bijection maps the interior atom {u} to the non-interior {bu}"
            )));
        }
        k_map.insert(u, bu.clone());
    }

    // markers over changed element vertices pair fibre by fibre
    let fibres_dom = marker_fibres(&m, c);
    let fibres_cod = marker_fibres(&m_out, eg);
    let atom_inv: BTreeMap<&VertexName, &VertexName> =
        r.atom_map().iter().map(|(u, v)| (v, u)).collect();
    for (bt, ems) in &fibres_cod {
        let t = atom_inv.get(bt).ok_or_else(|| {
            Error::Internal(format!("marked vertex {bt} is missing from the atom bijection"))
        })?;
        if fibres_dom.get(*t).map_or(0, Vec::len) != ems.len() {
            return Err(Error::Internal(format!(
                "marker fibres over {t} and {bt} differ in size"
            )));
        }
    }
    for (t, markers) in &fibres_dom {
        let bt = r.atom_map().get(t).ok_or_else(|| {
            Error::Internal(format!("marked vertex {t} is missing from the atom bijection"))
        })?;
        let empty = Vec::new();
        let emarkers = fibres_cod.get(bt).unwrap_or(&empty);
        if markers.len() != emarkers.len() {
            return Err(Error::Internal(format!(
                "marker fibres over {t} and {bt} differ in size"
            )));
        }
        let (n_src, c_src): (Vec<VertexName>, Vec<VertexName>) =
            markers.iter().cloned().partition(|v| a.charge(v) == 0);
        let (mut n_tgt, mut c_tgt): (Vec<VertexName>, Vec<VertexName>) =
            emarkers.iter().cloned().partition(|v| bg.charge(v) == 0);
        let mut rest_src: Vec<VertexName> = Vec::new();
        // neutral markers follow their covalent carrier when the carrier's
        // image still offers one
        for v in n_src {
            let carrier = a.covalent_nbrs(&v).into_iter().next().ok_or_else(|| {
                Error::Internal(format!("neutral marker {v} has no covalent carrier"))
            })?;
            let b_carrier = k_map.get(&carrier).cloned().ok_or_else(|| {
                Error::Internal(format!("carrier {carrier} is not an interior atom"))
            })?;
            match n_tgt
                .iter()
                .position(|w| bg.bond(w, &b_carrier).cov() > 0)
            {
                Some(idx) => {
                    k_map.insert(v, n_tgt.remove(idx));
                }
                None => rest_src.push(v),
            }
        }
        // charged markers follow their ionic holder and sign
        for v in c_src {
            let mut partners: BTreeSet<VertexName> = BTreeSet::new();
            for u in a.ionic_nbrs(&v) {
                partners.insert(k_map.get(&u).cloned().ok_or_else(|| {
                    Error::Internal(format!("ionic holder {u} is not an interior atom"))
                })?);
            }
            match c_tgt
                .iter()
                .position(|w| bg.charge(w) == a.charge(&v) && bg.ionic_nbrs(w) == partners)
            {
                Some(idx) => {
                    k_map.insert(v, c_tgt.remove(idx));
                }
                None => rest_src.push(v),
            }
        }
        // leftovers pair in name order
        rest_src.sort();
        let mut rest_tgt = n_tgt;
        rest_tgt.append(&mut c_tgt);
        rest_tgt.sort();
        for (v, w) in rest_src.into_iter().zip(rest_tgt) {
            k_map.insert(v, w);
        }
    }

    // changed open-valence vertices pair through capped per-site families
    // of the original graphs, then enter the interface via their markers
    let rep_dom = marker_reps(&m, c)?;
    let rep_cod = marker_reps(&m_out, eg)?;
    let alpha_dom: BTreeSet<VertexName> = r
        .changed_dom()
        .iter()
        .filter(|v| c.is_alpha_vertex(v))
        .cloned()
        .collect();
    let alpha_cod: BTreeSet<VertexName> = r
        .changed_cod()
        .iter()
        .filter(|v| eg.is_alpha_vertex(v))
        .cloned()
        .collect();
    let mut orig_pairs: Vec<(VertexName, VertexName)> = Vec::new();
    for (u, bu) in r.atom_map() {
        let inside = |xs: BTreeSet<VertexName>, set: &BTreeSet<VertexName>| {
            xs.into_iter().filter(|x| set.contains(x)).collect::<Vec<_>>()
        };
        let src = inside(c.covalent_nbrs(u), &alpha_dom);
        let tgt = inside(eg.covalent_nbrs(bu), &alpha_cod);
        orig_pairs.extend(src.into_iter().zip(tgt));
        for sign in [-1, 1] {
            let src = inside(c.ionic_nbrs(u), &alpha_dom)
                .into_iter()
                .filter(|x| c.charge(x).signum() == sign)
                .collect::<Vec<_>>();
            let tgt = inside(eg.ionic_nbrs(bu), &alpha_cod)
                .into_iter()
                .filter(|x| eg.charge(x).signum() == sign)
                .collect::<Vec<_>>();
            orig_pairs.extend(src.into_iter().zip(tgt));
        }
    }
    for sign in [-1, 1] {
        let src: Vec<VertexName> = alpha_dom
            .iter()
            .filter(|x| c.nbrs(x).is_empty() && c.charge(x).signum() == sign)
            .cloned()
            .collect();
        let tgt: Vec<VertexName> = alpha_cod
            .iter()
            .filter(|x| eg.nbrs(x).is_empty() && eg.charge(x).signum() == sign)
            .cloned()
            .collect();
        orig_pairs.extend(src.into_iter().zip(tgt));
    }
    for (orig, borig) in orig_pairs {
        let rep = rep_dom.get(&orig).ok_or_else(|| {
            Error::Internal(format!("changed open-valence vertex {orig} has no marker"))
        })?;
        let brep = rep_cod.get(&borig).ok_or_else(|| {
            Error::Internal(format!("changed open-valence vertex {borig} has no marker"))
        })?;
        k_map.insert(rep.clone(), brep.clone());
    }

    // the interface keeps a charge or bond only where the patterns agree
    let mut k = ChemGraph::new();
    for (v, w) in &k_map {
        k.add_atom(
            v,
            a.label(v).clone(),
            agree_charge(a.charge(v), bg.charge(w)),
        )?;
    }
    let knames: Vec<&VertexName> = k_map.keys().collect();
    for (i, x) in knames.iter().enumerate() {
        for y in &knames[i + 1..] {
            let bond = agree_bond(a.bond(x, y), bg.bond(&k_map[*x], &k_map[*y]));
            if !bond.is_none() {
                k.set_bond(x, y, bond)?;
            }
        }
    }
    let f = Morphism::inclusion(k.clone(), a.clone())?;
    let g = Morphism::new(k, bg.clone(), k_map.clone())?;
    let scheme = ReactionScheme::from_span(f, g, valences)?;

    let (_context, interface_match, context_into_source) =
        pushout_complement(scheme.into_left(), &m)?;

    // route the context into the given codomain and verify the right
    // square against it
    let d = interface_match.cod().clone();
    let mut ghat_map: BTreeMap<VertexName, VertexName> = BTreeMap::new();
    for dv in d.names() {
        let target = if let Some(t) = r.context_map().get(dv) {
            t.clone()
        } else if c.is_chem_vertex(dv) {
            r.atom_map()
                .get(dv)
                .cloned()
                .ok_or_else(|| Error::Internal(format!("changed atom {dv} has no image")))?
        } else {
            let rep = rep_dom.get(dv).ok_or_else(|| {
                Error::Internal(format!("kept open-valence vertex {dv} has no marker"))
            })?;
            let w = k_map.get(rep).ok_or_else(|| {
                Error::Internal(format!("kept open-valence vertex {dv} left the interface"))
            })?;
            m_out.apply(w).clone()
        };
        ghat_map.insert(dv.clone(), target);
    }
    let context_into_result = Morphism::new(d, eg.clone(), ghat_map)?;
    let (rebuilt, re_into, re_glue) = pushout_em(&interface_match, scheme.into_right())?;
    let reproduced = match mediating_map(&re_into, &context_into_result, &re_glue, &m_out, &rebuilt)
    {
        Some(h) => is_exact_iso(&rebuilt, eg, &h),
        None => false,
    };
    if !reproduced {
        return Err(Error::Internal(
            "lifted diagram does not reproduce the reaction codomain".into(),
        ));
    }
    Ok(ReactionInstance {
        scheme,
        source_match: m,
        interface_match,
        result_match: m_out,
        context_into_source,
        context_into_result,
    })
}

/// Groups the completion markers of a pattern by their matched vertex,
/// keeping only element targets.
fn marker_fibres(m: &Morphism, target: &ChemGraph) -> BTreeMap<VertexName, Vec<VertexName>> {
    let mut out: BTreeMap<VertexName, Vec<VertexName>> = BTreeMap::new();
    for v in m.dom().alpha_set() {
        let t = m.apply(&v);
        if target.is_chem_vertex(t) {
            out.entry(t.clone()).or_default().push(v);
        }
    }
    out
}

/// The unique completion marker standing for each matched open-valence
/// vertex of the target.
fn marker_reps(m: &Morphism, target: &ChemGraph) -> Result<BTreeMap<VertexName, VertexName>> {
    let mut out = BTreeMap::new();
    for v in m.dom().alpha_set() {
        let t = m.apply(&v);
        if target.is_alpha_vertex(t) && out.insert(t.clone(), v).is_some() {
            return Err(Error::Internal(format!(
                "open-valence vertex {t} has several completion markers"
            )));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::AtomLabel;
    use crate::samples;

    fn vt() -> ValenceTable {
        ValenceTable::default()
    }

    /// The bond-breaking rule for a two-atom single bond: consumed
    /// pattern H–H, produced pattern two hydrogen fragments with one
    /// marker each, interface two bare hydrogens.
    fn split_scheme() -> ReactionScheme {
        let mut k = ChemGraph::new();
        k.add_atom("h1", AtomLabel::element("H"), 0).unwrap();
        k.add_atom("h2", AtomLabel::element("H"), 0).unwrap();
        let f = Morphism::inclusion(k.clone(), samples::hydrogen_molecule()).unwrap();
        let g = Morphism::from_pairs(
            k,
            samples::hydrogen_disconnected(),
            &[("h1", "h1"), ("h2", "h2")],
        )
        .unwrap();
        ReactionScheme::new(f, g, &vt()).unwrap()
    }

    #[test]
    fn pushout_with_identity_embedding_reproduces_the_matched_graph() {
        let water = samples::water();
        let set: BTreeSet<VertexName> = ["o", "h1"].iter().map(|s| s.to_string()).collect();
        let m = matching_from_matchable(&water, &set).unwrap();
        let e = Morphism::identity(m.dom());
        let (y, into_y, glue) = pushout_em(&m, &e).unwrap();
        assert_eq!(y, water);
        assert_eq!(into_y.map(), Morphism::identity(&water).map());
        assert_eq!(glue.map(), m.map());
    }

    #[test]
    fn pushout_with_identity_matching_extends_by_the_patch() {
        let mut bare = ChemGraph::new();
        bare.add_atom("h", AtomLabel::element("H"), 0).unwrap();
        let m = Morphism::identity(&bare);
        let e = Morphism::inclusion(bare.clone(), samples::hydrogen_synthon()).unwrap();
        let (y, _, glue) = pushout_em(&m, &e).unwrap();
        assert_eq!(y, samples::hydrogen_synthon());
        assert_eq!(glue.map(), Morphism::identity(&samples::hydrogen_synthon()).map());
    }

    #[test]
    fn pushout_transports_bonds_across_the_span() {
        // interface: two bare hydrogens; matched into the disconnected
        // fragments; embedded into the bonded molecule
        let scheme = split_scheme();
        let frags = samples::hydrogen_disconnected();
        let m = Morphism::from_pairs(
            scheme.interface().clone(),
            frags.clone(),
            &[("h1", "h1"), ("h2", "h2")],
        )
        .unwrap();
        let (y, _, _) = pushout_em(&m, scheme.into_left()).unwrap();
        // the interface bond appears, the marker bonds stay
        assert_eq!(y.bond("h1", "h2"), BondLabel::Covalent(1));
        assert_eq!(y.bond("h1", "a1"), BondLabel::Covalent(1));
        assert_eq!(y.bond("h2", "a2"), BondLabel::Covalent(1));
    }

    #[test]
    fn pushout_rejects_overloaded_markers() {
        // two fragments glue their markers onto one shared marker: the
        // result would give that marker two neighbours
        let frags = samples::hydrogen_disconnected();
        let mut shared = ChemGraph::new();
        shared.add_atom("w1", AtomLabel::element("H"), 0).unwrap();
        shared.add_atom("w2", AtomLabel::element("H"), 0).unwrap();
        shared.add_atom("p", AtomLabel::Alpha, 0).unwrap();
        shared.set_bond("w1", "p", BondLabel::Covalent(1)).unwrap();
        shared.set_bond("w2", "p", BondLabel::Covalent(1)).unwrap();
        let m = Morphism::from_pairs(
            frags.clone(),
            shared,
            &[("h1", "w1"), ("h2", "w2"), ("a1", "p"), ("a2", "p")],
        )
        .unwrap();
        assert!(m.is_matching());
        let e = Morphism::identity(&frags);
        match pushout_em(&m, &e) {
            Err(Error::Invalid { what, .. }) => assert_eq!(what, "pushout result"),
            other => panic!("expected an invalid pushout, got {other:?}"),
        }
    }

    #[test]
    fn apply_scheme_breaks_and_dagger_restores_a_bond() {
        let scheme = split_scheme();
        let h2 = samples::hydrogen_molecule();
        let m = Morphism::identity(&h2);
        let inst = apply_scheme(&scheme, &m, &vt()).unwrap();
        assert_eq!(inst.result(), &samples::hydrogen_disconnected());
        assert!(inst.is_valid(&vt()).unwrap());
        // the context is the two bare hydrogens
        assert_eq!(inst.context().len(), 2);
        assert!(inst.context().bond("h1", "h2").is_none());
        // applying the reverse rule to the fragments restores the molecule
        let back = apply_scheme(
            &scheme.dagger(),
            &Morphism::identity(&samples::hydrogen_disconnected()),
            &vt(),
        )
        .unwrap();
        assert_eq!(back.result(), &h2);
        assert!(back.is_valid(&vt()).unwrap());
    }

    #[test]
    fn complement_of_a_pushout_recovers_the_context() {
        let scheme = split_scheme();
        let mut bare = ChemGraph::new();
        bare.add_atom("h1", AtomLabel::element("H"), 0).unwrap();
        bare.add_atom("h2", AtomLabel::element("H"), 0).unwrap();
        let m = Morphism::from_pairs(
            scheme.interface().clone(),
            bare.clone(),
            &[("h1", "h1"), ("h2", "h2")],
        )
        .unwrap();
        let (y, _, glue) = pushout_em(&m, scheme.into_left()).unwrap();
        assert_eq!(y, samples::hydrogen_molecule());
        let (z, hat, include) = pushout_complement(scheme.into_left(), &glue).unwrap();
        assert_eq!(z, bare);
        assert_eq!(hat.map(), m.map());
        assert!(include.is_embedding());
    }

    #[test]
    fn complement_rejects_deleting_an_atom_under_a_marker() {
        // the rule deletes its marker, but the matching sends the marker
        // onto a real atom of the target
        let synthon = samples::hydrogen_synthon();
        let mut bare = ChemGraph::new();
        bare.add_atom("h", AtomLabel::element("H"), 0).unwrap();
        let e = Morphism::inclusion(bare, synthon.clone()).unwrap();
        let m = Morphism::from_pairs(synthon, samples::water(), &[("h", "h1"), ("a", "o")])
            .unwrap();
        assert!(m.is_matching());
        match pushout_complement(&e, &m) {
            Err(Error::NotFound(_)) => {}
            other => panic!("expected no complement, got {other:?}"),
        }
    }

    #[test]
    fn complement_rejects_contexts_that_do_not_reglue() {
        // the interface holds two markers loose; the pattern bonds them to
        // the two atoms; the matching collapses both markers onto a single
        // marker of the target, which cannot be shared back out
        let mut k = ChemGraph::new();
        k.add_atom("h1", AtomLabel::element("H"), 0).unwrap();
        k.add_atom("h2", AtomLabel::element("H"), 0).unwrap();
        k.add_atom("a1", AtomLabel::Alpha, 0).unwrap();
        k.add_atom("a2", AtomLabel::Alpha, 0).unwrap();
        let e = Morphism::inclusion(k, samples::hydrogen_disconnected()).unwrap();
        let mut shared = ChemGraph::new();
        shared.add_atom("w1", AtomLabel::element("H"), 0).unwrap();
        shared.add_atom("w2", AtomLabel::element("H"), 0).unwrap();
        shared.add_atom("p", AtomLabel::Alpha, 0).unwrap();
        shared.set_bond("w1", "p", BondLabel::Covalent(1)).unwrap();
        shared.set_bond("w2", "p", BondLabel::Covalent(1)).unwrap();
        let m = Morphism::from_pairs(
            samples::hydrogen_disconnected(),
            shared,
            &[("h1", "w1"), ("h2", "w2"), ("a1", "p"), ("a2", "p")],
        )
        .unwrap();
        match pushout_complement(&e, &m) {
            Err(Error::NotFound(_)) => {}
            other => panic!("expected no complement, got {other:?}"),
        }
    }

    #[test]
    fn pullback_restricts_to_the_embedded_patch() {
        // restrict a matching of the hydrogen fragment along the
        // bond-free skeleton of water
        let mut skeleton = ChemGraph::new();
        skeleton.add_atom("o", AtomLabel::element("O"), 0).unwrap();
        skeleton.add_atom("h1", AtomLabel::element("H"), 0).unwrap();
        skeleton.add_atom("h2", AtomLabel::element("H"), 0).unwrap();
        let e = Morphism::inclusion(skeleton.clone(), samples::water()).unwrap();
        let f = Morphism::from_pairs(
            samples::hydrogen_synthon(),
            samples::water(),
            &[("h", "h1"), ("a", "o")],
        )
        .unwrap();
        assert!(f.is_matching());
        let (z, into_dom, restricted) = pullback_along_embedding(&f, &e).unwrap();
        // everything lands inside, but the bond holds only in one source
        assert_eq!(z.len(), 2);
        assert!(z.bond("h", "a").is_none());
        assert!(into_dom.is_embedding());
        assert!(restricted.is_matching());
        // a patch without one marker drops that marker's preimages
        let frags = samples::hydrogen_disconnected();
        let mut partial = ChemGraph::new();
        partial.add_atom("h1", AtomLabel::element("H"), 0).unwrap();
        partial.add_atom("h2", AtomLabel::element("H"), 0).unwrap();
        partial.add_atom("a1", AtomLabel::Alpha, 0).unwrap();
        partial.set_bond("h1", "a1", BondLabel::Covalent(1)).unwrap();
        let e2 = Morphism::inclusion(partial, frags.clone()).unwrap();
        let f2 = Morphism::identity(&frags);
        let (z2, _, _) = pullback_along_embedding(&f2, &e2).unwrap();
        assert_eq!(z2.len(), 3);
        assert!(!z2.has_vertex("a2"));
        assert_eq!(z2.bond("h1", "a1"), BondLabel::Covalent(1));
        assert!(z2.nbrs("h2").is_empty());
    }

    #[test]
    fn canonical_scheme_of_identity_data_keeps_everything() {
        let synthon = samples::hydrogen_synthon();
        let atoms: BTreeMap<VertexName, VertexName> =
            [("h".to_string(), "h".to_string())].into_iter().collect();
        let scheme = canonical_scheme(&synthon, &synthon, &atoms, &vt()).unwrap();
        assert_eq!(scheme.interface(), &synthon);
        assert!(scheme.is_canonical(&vt()).unwrap());
    }

    #[test]
    fn canonical_scheme_caps_marker_families() {
        let h2 = samples::hydrogen_molecule();
        let frags = samples::hydrogen_disconnected();
        let atoms: BTreeMap<VertexName, VertexName> =
            [("h1", "h1"), ("h2", "h2")]
                .into_iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect();
        let scheme = canonical_scheme(&h2, &frags, &atoms, &vt()).unwrap();
        // no marker family is available on both sides, and the bond
        // disagrees: the interface is the two bare atoms
        assert_eq!(scheme.interface().len(), 2);
        assert!(scheme.interface().alpha_set().is_empty());
        assert!(scheme.interface().bond("h1", "h2").is_none());
    }

    #[test]
    fn canonical_scheme_pairs_markers_in_name_order() {
        let mut left = ChemGraph::new();
        left.add_atom("c", AtomLabel::element("C"), 0).unwrap();
        for a in ["a1", "a2", "a3", "a4"] {
            left.add_atom(a, AtomLabel::Alpha, 0).unwrap();
            left.set_bond("c", a, BondLabel::Covalent(1)).unwrap();
        }
        let mut right = ChemGraph::new();
        right.add_atom("c", AtomLabel::element("C"), 0).unwrap();
        for b in ["b1", "b2", "b3", "b4"] {
            right.add_atom(b, AtomLabel::Alpha, 0).unwrap();
            right.set_bond("c", b, BondLabel::Covalent(1)).unwrap();
        }
        let atoms: BTreeMap<VertexName, VertexName> =
            [("c".to_string(), "c".to_string())].into_iter().collect();
        let scheme = canonical_scheme(&left, &right, &atoms, &vt()).unwrap();
        assert_eq!(scheme.interface().len(), 5);
        for (a, b) in [("a1", "b1"), ("a2", "b2"), ("a3", "b3"), ("a4", "b4")] {
            assert_eq!(scheme.into_right().apply(a), b);
        }
    }

    #[test]
    fn canonical_scheme_handles_asymmetric_ion_shells() {
        let mut left = ChemGraph::new();
        left.add_atom("s", AtomLabel::element("S"), 2).unwrap();
        left.add_atom("a1", AtomLabel::Alpha, -1).unwrap();
        left.add_atom("a2", AtomLabel::Alpha, -1).unwrap();
        left.set_bond("s", "a1", BondLabel::Ionic).unwrap();
        left.set_bond("s", "a2", BondLabel::Ionic).unwrap();
        let mut right = ChemGraph::new();
        right.add_atom("s", AtomLabel::element("S"), 1).unwrap();
        right.add_atom("b1", AtomLabel::Alpha, -1).unwrap();
        right.add_atom("b2", AtomLabel::Alpha, 0).unwrap();
        right.set_bond("s", "b1", BondLabel::Ionic).unwrap();
        right.set_bond("s", "b2", BondLabel::Covalent(1)).unwrap();
        let atoms: BTreeMap<VertexName, VertexName> =
            [("s".to_string(), "s".to_string())].into_iter().collect();
        let scheme = canonical_scheme(&left, &right, &atoms, &vt()).unwrap();
        // one ionic marker survives; the disagreeing charge drops to zero
        assert_eq!(scheme.interface().len(), 2);
        assert_eq!(scheme.interface().charge("s"), 0);
        assert_eq!(scheme.interface().bond("s", "a1"), BondLabel::Ionic);
        assert_eq!(scheme.into_right().apply("a1"), "b1");
    }

    #[test]
    fn scheme_construction_rejects_bad_spans() {
        // non-canonical interface: both patterns are the bonded molecule,
        // yet the interface forgets the bond
        let mut k = ChemGraph::new();
        k.add_atom("h1", AtomLabel::element("H"), 0).unwrap();
        k.add_atom("h2", AtomLabel::element("H"), 0).unwrap();
        let f = Morphism::inclusion(k.clone(), samples::hydrogen_molecule()).unwrap();
        let g = Morphism::inclusion(k.clone(), samples::hydrogen_molecule()).unwrap();
        assert!(ReactionScheme::from_span(f.clone(), g.clone(), &vt()).is_ok());
        match ReactionScheme::new(f, g, &vt()) {
            Err(Error::Precondition(msg)) => assert!(msg.contains("canonical")),
            other => panic!("expected a rejected interface, got {other:?}"),
        }
        // incomplete boundary
        let mut lone = ChemGraph::new();
        lone.add_atom("h", AtomLabel::element("H"), 0).unwrap();
        let f = Morphism::identity(&lone);
        match ReactionScheme::from_span(f.clone(), f.clone(), &vt()) {
            Err(Error::Precondition(msg)) => assert!(msg.contains("valence-complete")),
            other => panic!("expected a rejected pattern, got {other:?}"),
        }
        // unequal net charges
        let mut minus = ChemGraph::new();
        minus.add_atom("a", AtomLabel::Alpha, -1).unwrap();
        let mut plus = ChemGraph::new();
        plus.add_atom("a", AtomLabel::Alpha, 1).unwrap();
        let empty = ChemGraph::new();
        let f = Morphism::inclusion(empty.clone(), minus).unwrap();
        let g = Morphism::inclusion(empty, plus).unwrap();
        match ReactionScheme::from_span(f, g, &vt()) {
            Err(Error::Precondition(msg)) => assert!(msg.contains("net charges")),
            other => panic!("expected a rejected span, got {other:?}"),
        }
    }

    #[test]
    fn instance_round_trips_through_its_tuple() {
        let scheme = split_scheme();
        let m = Morphism::identity(&samples::hydrogen_molecule());
        let inst = apply_scheme(&scheme, &m, &vt()).unwrap();
        let tup = instance_to_tuple(&inst, &vt()).unwrap();
        let names = |xs: &[&str]| -> BTreeSet<VertexName> {
            xs.iter().map(|s| s.to_string()).collect()
        };
        assert_eq!(tup.changed_dom(), &names(&["h1", "h2"]));
        assert_eq!(tup.changed_cod(), &names(&["a1", "a2", "h1", "h2"]));
        assert!(tup.context_map().is_empty());
        assert_eq!(tup.atom_map().get("h1").map(String::as_str), Some("h1"));

        let inst2 = tuple_to_instance(&tup, &vt()).unwrap();
        assert!(inst2.is_valid(&vt()).unwrap());
        assert_eq!(inst2.source(), inst.source());
        assert_eq!(inst2.result(), inst.result());
        let tup2 = instance_to_tuple(&inst2, &vt()).unwrap();
        assert_eq!(tup2, tup);
    }

    #[test]
    fn tuple_lift_rebuilds_an_ionic_separation() {
        let salt = samples::sodium_chloride();
        let mut apart = salt.clone();
        apart.set_bond("na", "cl", BondLabel::NONE).unwrap();
        let all: BTreeSet<VertexName> = salt.name_set();
        let atoms: BTreeMap<VertexName, VertexName> = all
            .iter()
            .map(|v| (v.clone(), v.clone()))
            .collect();
        let r = Reaction::new(
            salt.clone(),
            apart.clone(),
            all.clone(),
            all,
            atoms,
            BTreeMap::new(),
            &vt(),
        )
        .unwrap();
        let inst = tuple_to_instance(&r, &vt()).unwrap();
        assert!(inst.is_valid(&vt()).unwrap());
        assert_eq!(inst.source(), &salt);
        assert_eq!(inst.result(), &apart);
        // the interface keeps both atoms and their charges, not the bond
        assert_eq!(inst.scheme().interface().charge("na"), 1);
        assert!(inst.scheme().interface().bond("na", "cl").is_none());
        let back = instance_to_tuple(&inst, &vt()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn tuple_lift_requires_matchable_subsets() {
        let methane = samples::methane();
        let one: BTreeSet<VertexName> = ["h1".to_string()].into_iter().collect();
        let atoms: BTreeMap<VertexName, VertexName> =
            [("h1".to_string(), "h1".to_string())].into_iter().collect();
        let context: BTreeMap<VertexName, VertexName> = methane
            .names()
            .filter(|v| v.as_str() != "h1")
            .map(|v| (v.clone(), v.clone()))
            .collect();
        let r = Reaction::new(
            methane.clone(),
            methane.clone(),
            one.clone(),
            one,
            atoms,
            context,
            &vt(),
        )
        .unwrap();
        match tuple_to_instance(&r, &vt()) {
            Err(Error::Precondition(msg)) => assert!(msg.contains("matchable")),
            other => panic!("expected a matchability failure, got {other:?}"),
        }
    }

    #[test]
    fn instance_validation_detects_tampering() {
        let scheme = split_scheme();
        let m = Morphism::identity(&samples::hydrogen_molecule());
        let inst = apply_scheme(&scheme, &m, &vt()).unwrap();
        assert!(inst.is_valid(&vt()).unwrap());
        // reroute the produced pattern so the right square stops commuting
        let mut tampered = inst.clone();
        tampered.result_match = Morphism::from_pairs(
            scheme.right().clone(),
            inst.result().clone(),
            &[("h1", "h2"), ("h2", "h1"), ("a1", "a2"), ("a2", "a1")],
        )
        .unwrap();
        let vs = tampered.violations(&vt()).unwrap();
        assert!(vs.iter().any(|v| v.to_string().contains("commute")));
    }

    #[test]
    fn applying_at_a_proper_submatch_keeps_the_remainder() {
        // break one O–H bond of hydrogen peroxide with the generic
        // hydroxyl-cleavage rule; the far O–H stays untouched
        let mut left = ChemGraph::new();
        left.add_atom("u", AtomLabel::element("H"), 0).unwrap();
        left.add_atom("v", AtomLabel::element("O"), 0).unwrap();
        left.add_atom("x", AtomLabel::Alpha, 0).unwrap();
        left.set_bond("u", "v", BondLabel::Covalent(1)).unwrap();
        left.set_bond("v", "x", BondLabel::Covalent(1)).unwrap();
        let mut right = ChemGraph::new();
        right.add_atom("u", AtomLabel::element("H"), 0).unwrap();
        right.add_atom("v", AtomLabel::element("O"), 0).unwrap();
        right.add_atom("x", AtomLabel::Alpha, 0).unwrap();
        right.add_atom("y", AtomLabel::Alpha, 0).unwrap();
        right.add_atom("z", AtomLabel::Alpha, 0).unwrap();
        right.set_bond("v", "x", BondLabel::Covalent(1)).unwrap();
        right.set_bond("u", "y", BondLabel::Covalent(1)).unwrap();
        right.set_bond("v", "z", BondLabel::Covalent(1)).unwrap();
        let atoms: BTreeMap<VertexName, VertexName> = [("u", "u"), ("v", "v")]
            .into_iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        let scheme = canonical_scheme(&left, &right, &atoms, &vt()).unwrap();
        assert_eq!(scheme.into_right().apply("x"), "x");

        let mut peroxide = ChemGraph::new();
        peroxide.add_atom("o1", AtomLabel::element("O"), 0).unwrap();
        peroxide.add_atom("o2", AtomLabel::element("O"), 0).unwrap();
        peroxide.add_atom("h1", AtomLabel::element("H"), 0).unwrap();
        peroxide.add_atom("h2", AtomLabel::element("H"), 0).unwrap();
        peroxide.set_bond("h1", "o1", BondLabel::Covalent(1)).unwrap();
        peroxide.set_bond("o1", "o2", BondLabel::Covalent(1)).unwrap();
        peroxide.set_bond("o2", "h2", BondLabel::Covalent(1)).unwrap();
        let m = Morphism::from_pairs(
            left,
            peroxide.clone(),
            &[("u", "h1"), ("v", "o1"), ("x", "o2")],
        )
        .unwrap();
        let inst = apply_scheme(&scheme, &m, &vt()).unwrap();
        assert!(inst.is_valid(&vt()).unwrap());
        let result = inst.result();
        // hydroperoxyl fragment plus hydrogen fragment; h2 untouched
        assert_eq!(result.len(), 6);
        assert_eq!(result.bond("o1", "o2"), BondLabel::Covalent(1));
        assert_eq!(result.bond("o2", "h2"), BondLabel::Covalent(1));
        assert!(result.bond("h1", "o1").is_none());
        assert_eq!(result.components().len(), 2);
        let tup = instance_to_tuple(&inst, &vt()).unwrap();
        assert_eq!(
            tup.context_map().get("h2").map(String::as_str),
            Some("h2")
        );
        assert_eq!(tup.atom_map().get("o2").map(String::as_str), Some("o2"));
        let inst2 = tuple_to_instance(&tup, &vt()).unwrap();
        assert_eq!(instance_to_tuple(&inst2, &vt()).unwrap(), tup);
    }
}
