//! Structure-preserving maps between chemically labelled graphs.
//!
//! A morphism preserves the matter present in its domain: element labels,
//! charge signs, nonzero fibre charges, ionic bonds, nonzero bonds between
//! element vertices, and nonzero covalent load collapsed onto shared
//! open-valence images. Two subclasses matter for rewriting:
//!
//! * **vertex embeddings** are injective, preserve every atom label and hit
//!   every element vertex of the codomain — they can only add charges, bonds
//!   or open-valence markers;
//! * **matchings** preserve charges and bonds exactly (no zero exceptions)
//!   and have ion-closed images — they identify the domain as a substructure
//!   of the codomain.
//!
//! The module also characterises the images of matchings (matchable subsets)
//! and constructs, for any matchable subset, a canonical matching onto it via
//! valence completion and charge decomposition.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::Error;
use crate::graph::{AtomLabel, BondLabel, ChemGraph, VertexName};
use crate::violation::Violation;
use crate::Result;

/// A total vertex map between two graphs. Constructing one only checks
/// totality; the semantic conditions are queried separately so that callers
/// can report every finding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Morphism {
    dom: ChemGraph,
    cod: ChemGraph,
    map: BTreeMap<VertexName, VertexName>,
}

impl Morphism {
    /// Build a morphism candidate; fails if the map is not total on the
    /// domain vertices or mentions missing vertices.
    pub fn new(
        dom: ChemGraph,
        cod: ChemGraph,
        map: BTreeMap<VertexName, VertexName>,
    ) -> Result<Morphism> {
        for v in map.keys() {
            if !dom.has_vertex(v) {
                return Err(Error::Precondition(format!(
                    "map mentions {v}, which is not a domain vertex"
                )));
            }
        }
        for v in dom.names() {
            match map.get(v) {
                None => {
                    return Err(Error::Precondition(format!(
                        "map is not defined on domain vertex {v}"
                    )))
                }
                Some(w) if !cod.has_vertex(w) => {
                    return Err(Error::Precondition(format!(
                        "map sends {v} to {w}, which is not a codomain vertex"
                    )))
                }
                _ => {}
            }
        }
        Ok(Morphism { dom, cod, map })
    }

    pub fn from_pairs(
        dom: ChemGraph,
        cod: ChemGraph,
        pairs: &[(&str, &str)],
    ) -> Result<Morphism> {
        let map = pairs
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        Morphism::new(dom, cod, map)
    }

    pub fn identity(g: &ChemGraph) -> Morphism {
        let map = g.names().map(|v| (v.clone(), v.clone())).collect();
        Morphism {
            dom: g.clone(),
            cod: g.clone(),
            map,
        }
    }

    /// The identity-on-names inclusion of a subgraph into a supergraph.
    pub fn inclusion(dom: ChemGraph, cod: ChemGraph) -> Result<Morphism> {
        let map = dom.names().map(|v| (v.clone(), v.clone())).collect();
        Morphism::new(dom, cod, map)
    }

    pub fn dom(&self) -> &ChemGraph {
        &self.dom
    }

    pub fn cod(&self) -> &ChemGraph {
        &self.cod
    }

    pub fn map(&self) -> &BTreeMap<VertexName, VertexName> {
        &self.map
    }

    /// Image of a domain vertex (bug if absent).
    pub fn apply(&self, v: &str) -> &VertexName {
        self.map
            .get(v)
            .unwrap_or_else(|| panic!("morphism is not defined on {v}"))
    }

    pub fn image(&self) -> BTreeSet<VertexName> {
        self.map.values().cloned().collect()
    }

    pub fn image_of<'a, I: IntoIterator<Item = &'a VertexName>>(
        &self,
        names: I,
    ) -> BTreeSet<VertexName> {
        names.into_iter().map(|v| self.apply(v).clone()).collect()
    }

    /// Fibre over a codomain vertex.
    pub fn preimage(&self, w: &str) -> BTreeSet<VertexName> {
        self.map
            .iter()
            .filter(|(_, img)| img.as_str() == w)
            .map(|(v, _)| v.clone())
            .collect()
    }

    pub fn is_injective(&self) -> bool {
        self.image().len() == self.map.len()
    }

    /// Composition: first this map, then `other` (codomain and domain must be
    /// literally equal graphs).
    pub fn then(&self, other: &Morphism) -> Result<Morphism> {
        if self.cod != other.dom {
            return Err(Error::Precondition(
                "composition requires the middle graphs to be equal".to_string(),
            ));
        }
        let map = self
            .map
            .iter()
            .map(|(v, w)| (v.clone(), other.apply(w).clone()))
            .collect();
        Morphism::new(self.dom.clone(), other.cod.clone(), map)
    }

    /// Inverse of a bijective vertex map (bug if not bijective).
    pub fn inverse(&self) -> Morphism {
        assert!(
            self.is_injective() && self.image().len() == self.cod.len(),
            "inverse of a non-bijective map"
        );
        let map = self.map.iter().map(|(v, w)| (w.clone(), v.clone())).collect();
        Morphism {
            dom: self.cod.clone(),
            cod: self.dom.clone(),
            map,
        }
    }

    // -- the morphism conditions ---------------------------------------------

    /// All findings against the morphism conditions.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let dom = &self.dom;
        let cod = &self.cod;
        let chem: Vec<&VertexName> = dom.names().filter(|v| dom.is_chem_vertex(v)).collect();

        // Injective on element vertices.
        let mut chem_images: BTreeMap<&VertexName, &VertexName> = BTreeMap::new();
        for v in &chem {
            let w = self.apply(v);
            if let Some(prev) = chem_images.insert(w, v) {
                out.push(Violation::new(
                    "morphism-chem-injective",
                    vec![prev.to_string(), v.to_string()],
                    format!("element vertices {prev} and {v} share the image {w}"),
                ));
            }
        }

        // Element images and marker images are disjoint.
        let chem_img: BTreeSet<&VertexName> = chem.iter().map(|v| self.apply(v)).collect();
        let alpha_img: BTreeSet<&VertexName> = dom
            .names()
            .filter(|v| dom.is_alpha_vertex(v))
            .map(|v| self.apply(v))
            .collect();
        for w in chem_img.intersection(&alpha_img) {
            out.push(Violation::new(
                "morphism-image-mix",
                vec![w.to_string()],
                "both an element vertex and an open-valence marker map here",
            ));
        }

        // Element labels are preserved.
        for v in &chem {
            let w = self.apply(v);
            if cod.label(w) != dom.label(v) {
                out.push(Violation::new(
                    "morphism-atom-label",
                    vec![v.to_string()],
                    format!("label {} becomes {}", dom.label(v), cod.label(w)),
                ));
            }
        }

        // Charge signs are preserved.
        for (v, _, charge) in dom.iter() {
            let w = self.apply(v);
            let target = cod.charge(w);
            if (charge > 0 && target <= 0) || (charge < 0 && target >= 0) {
                out.push(Violation::new(
                    "morphism-charge-sign",
                    vec![v.clone()],
                    format!("charge {charge} maps onto charge {target} at {w}"),
                ));
            }
        }

        // Nonzero fibre charges add up to the target charge.
        for w in self.image() {
            let net = dom.net_charge_of(&self.preimage(&w));
            if net != 0 && net != cod.charge(&w) {
                out.push(Violation::new(
                    "morphism-fibre-charge",
                    vec![w.clone()],
                    format!("fibre nets {net}, target carries {}", cod.charge(&w)),
                ));
            }
        }

        // Ionic bonds are preserved.
        for (u, v, l) in dom.bonds() {
            if l.is_ionic() && !cod.bond(self.apply(u), self.apply(v)).is_ionic() {
                out.push(Violation::new(
                    "morphism-ionic-bond",
                    vec![u.clone(), v.clone()],
                    "ionic bond not preserved",
                ));
            }
        }

        // Nonzero bonds between element vertices are preserved exactly.
        for (i, v) in chem.iter().enumerate() {
            for u in chem.iter().skip(i + 1) {
                let l = dom.bond(v, u);
                if !l.is_none() && cod.bond(self.apply(v), self.apply(u)) != l {
                    out.push(Violation::new(
                        "morphism-chem-bond",
                        vec![v.to_string(), u.to_string()],
                        format!(
                            "bond {l} becomes {}",
                            cod.bond(self.apply(v), self.apply(u))
                        ),
                    ));
                }
            }
        }

        // Nonzero covalent load collapsed onto a shared marker image matches
        // the target bond.
        for w in &alpha_img {
            let fibre = self.preimage(w);
            for b in &chem {
                let k: u32 = fibre
                    .iter()
                    .map(|a| dom.bond(a, b).cov() as u32)
                    .sum();
                let target = cod.bond(w, self.apply(b)).cov() as u32;
                if k != 0 && k != target {
                    out.push(Violation::new(
                        "morphism-alpha-bond",
                        vec![w.to_string(), b.to_string()],
                        format!("fibre covalent load {k}, target bond {target}"),
                    ));
                }
            }
        }

        out
    }

    pub fn is_morphism(&self) -> bool {
        self.violations().is_empty()
    }

    /// Findings against the vertex-embedding conditions (includes the plain
    /// morphism conditions).
    pub fn embedding_violations(&self) -> Vec<Violation> {
        let mut out = self.violations();
        if !self.is_injective() {
            let mut seen: BTreeMap<&VertexName, &VertexName> = BTreeMap::new();
            for (v, w) in &self.map {
                if let Some(prev) = seen.insert(w, v) {
                    out.push(Violation::new(
                        "embedding-injective",
                        vec![prev.to_string(), v.clone()],
                        format!("{prev} and {v} share the image {w}"),
                    ));
                }
            }
        }
        let chem_img: BTreeSet<&VertexName> = self
            .dom
            .names()
            .filter(|v| self.dom.is_chem_vertex(v))
            .map(|v| self.apply(v))
            .collect();
        for w in self.cod.chem_set() {
            if !chem_img.contains(&w) {
                out.push(Violation::new(
                    "embedding-chem-surjective",
                    vec![w.clone()],
                    "element vertex of the codomain is not hit",
                ));
            }
        }
        for v in self.dom.alpha_set() {
            let w = self.apply(&v);
            if !self.cod.label(w).is_alpha() {
                out.push(Violation::new(
                    "embedding-alpha-label",
                    vec![v.clone()],
                    format!("open-valence marker maps onto {}", self.cod.label(w)),
                ));
            }
        }
        out
    }

    pub fn is_embedding(&self) -> bool {
        self.embedding_violations().is_empty()
    }

    /// Findings against the matching conditions: the morphism conditions with
    /// exact fibre charges, exact element bonds and exact collapsed covalent
    /// load (no zero exceptions), plus an ion-closed image.
    pub fn matching_violations(&self) -> Vec<Violation> {
        let dom = &self.dom;
        let cod = &self.cod;
        // Keep the shared weak conditions, then tighten the three exact ones.
        let mut out: Vec<Violation> = self
            .violations()
            .into_iter()
            .filter(|v| {
                !matches!(
                    v.clause,
                    "morphism-fibre-charge" | "morphism-chem-bond" | "morphism-alpha-bond"
                )
            })
            .collect();

        for w in self.image() {
            let net = dom.net_charge_of(&self.preimage(&w));
            if net != cod.charge(&w) {
                out.push(Violation::new(
                    "matching-fibre-charge",
                    vec![w.clone()],
                    format!("fibre nets {net}, target carries {}", cod.charge(&w)),
                ));
            }
        }

        let chem: Vec<&VertexName> = dom.names().filter(|v| dom.is_chem_vertex(v)).collect();
        for (i, v) in chem.iter().enumerate() {
            for u in chem.iter().skip(i + 1) {
                let l = dom.bond(v, u);
                let target = cod.bond(self.apply(v), self.apply(u));
                if target != l {
                    out.push(Violation::new(
                        "matching-chem-bond",
                        vec![v.to_string(), u.to_string()],
                        format!("bond {l} becomes {target}"),
                    ));
                }
            }
        }

        let alpha_img: BTreeSet<&VertexName> = dom
            .names()
            .filter(|v| dom.is_alpha_vertex(v))
            .map(|v| self.apply(v))
            .collect();
        for w in &alpha_img {
            let fibre = self.preimage(w);
            for b in &chem {
                let k: u32 = fibre.iter().map(|a| dom.bond(a, b).cov() as u32).sum();
                let target = cod.bond(w, self.apply(b)).cov() as u32;
                if k != target {
                    out.push(Violation::new(
                        "matching-alpha-bond",
                        vec![w.to_string(), b.to_string()],
                        format!("fibre covalent load {k}, target bond {target}"),
                    ));
                }
            }
        }

        let image = self.image();
        if !is_ion_closed(cod, &image) {
            out.push(Violation::new(
                "matching-ion-closed",
                image.iter().cloned().collect(),
                "image has an ionic bond leaving it",
            ));
        }

        out
    }

    pub fn is_matching(&self) -> bool {
        self.matching_violations().is_empty()
    }
}

// ---------------------------------------------------------------------------
// Isomorphisms of labelled graphs
// ---------------------------------------------------------------------------

/// Check that a map is an exact labelled-graph isomorphism: a bijection
/// preserving labels, charges and every bond label.
pub fn is_exact_iso(a: &ChemGraph, b: &ChemGraph, map: &BTreeMap<VertexName, VertexName>) -> bool {
    if map.len() != a.len() || a.len() != b.len() {
        return false;
    }
    let mut hit: BTreeSet<&VertexName> = BTreeSet::new();
    for (v, w) in map {
        let (Some((lv, cv)), Some((lw, cw))) = (a.try_atom(v), b.try_atom(w)) else {
            return false;
        };
        if lv != lw || cv != cw || !hit.insert(w) {
            return false;
        }
    }
    let names: Vec<&VertexName> = a.names().collect();
    for (i, v) in names.iter().enumerate() {
        for u in names.iter().skip(i + 1) {
            if a.bond(v, u) != b.bond(&map[*v], &map[*u]) {
                return false;
            }
        }
    }
    true
}

/// Enumerate all exact labelled-graph isomorphisms between two graphs.
pub fn isomorphisms(a: &ChemGraph, b: &ChemGraph) -> Vec<BTreeMap<VertexName, VertexName>> {
    let mut out = Vec::new();
    if a.len() != b.len() {
        return out;
    }
    // Invariant per vertex: label, charge, and sorted incident bond labels.
    let signature = |g: &ChemGraph, v: &str| {
        let (l, c) = g.try_atom(v).unwrap();
        let mut inc: Vec<BondLabel> = g.adjacent(v).into_iter().map(|(_, b)| b).collect();
        inc.sort();
        (l.clone(), c, inc)
    };
    let a_names: Vec<VertexName> = a.names().cloned().collect();
    let b_names: Vec<VertexName> = b.names().cloned().collect();
    let a_sig: Vec<_> = a_names.iter().map(|v| signature(a, v)).collect();
    let b_sig: Vec<_> = b_names.iter().map(|v| signature(b, v)).collect();

    fn extend(
        a: &ChemGraph,
        b: &ChemGraph,
        a_names: &[VertexName],
        b_names: &[VertexName],
        a_sig: &[(AtomLabel, i32, Vec<BondLabel>)],
        b_sig: &[(AtomLabel, i32, Vec<BondLabel>)],
        depth: usize,
        assigned: &mut Vec<usize>,
        used: &mut Vec<bool>,
        out: &mut Vec<BTreeMap<VertexName, VertexName>>,
    ) {
        if depth == a_names.len() {
            out.push(
                assigned
                    .iter()
                    .enumerate()
                    .map(|(i, &j)| (a_names[i].clone(), b_names[j].clone()))
                    .collect(),
            );
            return;
        }
        let v = &a_names[depth];
        'cand: for j in 0..b_names.len() {
            if used[j] || a_sig[depth] != b_sig[j] {
                continue;
            }
            let w = &b_names[j];
            for (i, &k) in assigned.iter().enumerate() {
                if a.bond(v, &a_names[i]) != b.bond(w, &b_names[k]) {
                    continue 'cand;
                }
            }
            used[j] = true;
            assigned.push(j);
            extend(a, b, a_names, b_names, a_sig, b_sig, depth + 1, assigned, used, out);
            assigned.pop();
            used[j] = false;
        }
    }

    let mut assigned = Vec::new();
    let mut used = vec![false; b_names.len()];
    extend(
        a, b, &a_names, &b_names, &a_sig, &b_sig, 0, &mut assigned, &mut used, &mut out,
    );
    out
}

// ---------------------------------------------------------------------------
// Matchable subsets and the canonical matching onto them
// ---------------------------------------------------------------------------

/// No ionic bond leaves the subset.
pub fn is_ion_closed(g: &ChemGraph, set: &BTreeSet<VertexName>) -> bool {
    set.iter()
        .all(|v| g.ionic_nbrs(v).iter().all(|w| set.contains(w)))
}

fn is_interior_chem(g: &ChemGraph, set: &BTreeSet<VertexName>, v: &str) -> bool {
    set.contains(v)
        && g.is_chem_vertex(v)
        && g.nbrs(v).iter().all(|w| set.contains(w))
}

/// A subset is matchable when it is ion-closed and each of its vertices is an
/// interior element vertex (all neighbours inside), or charged, or adjacent
/// to an interior element vertex of the subset. Matchable subsets are exactly
/// the images of matchings out of valence-complete graphs.
pub fn is_matchable_subset(g: &ChemGraph, set: &BTreeSet<VertexName>) -> bool {
    if !set.iter().all(|v| g.has_vertex(v)) || !is_ion_closed(g, set) {
        return false;
    }
    set.iter().all(|u| {
        is_interior_chem(g, set, u)
            || g.charge(u) != 0
            || g.nbrs(u)
                .iter()
                .any(|v| set.contains(v) && is_interior_chem(g, set, v))
    })
}

/// Pick a fresh name based on `base`, avoiding `taken`, and reserve it.
pub(crate) fn reserve_fresh(base: String, taken: &mut BTreeSet<VertexName>) -> VertexName {
    let mut name = base;
    while taken.contains(&name) {
        name.push('_');
    }
    taken.insert(name.clone());
    name
}

/// Valence completion of a set `core` of element vertices: keep the induced
/// subgraph on `core` and replace every bond leaving it by open-valence
/// markers — one singly bonded neutral marker per unit of covalent
/// multiplicity, and one ionically bonded marker of charge plus or minus one
/// per unit of the outside partner's charge. Returns the completed graph and
/// the map sending each vertex to the original it stands for.
pub fn valence_completion(
    g: &ChemGraph,
    core: &BTreeSet<VertexName>,
) -> Result<(ChemGraph, BTreeMap<VertexName, VertexName>)> {
    for u in core {
        if !g.has_vertex(u) {
            return Err(Error::Precondition(format!("no vertex {u}")));
        }
        if !g.is_chem_vertex(u) {
            return Err(Error::Precondition(format!(
                "valence completion core must contain element vertices only, got {u}"
            )));
        }
    }
    let mut out = g.induced(core)?;
    let mut map: BTreeMap<VertexName, VertexName> =
        core.iter().map(|u| (u.clone(), u.clone())).collect();
    let mut taken: BTreeSet<VertexName> = g.name_set();
    for u in core {
        for (v, l) in g.adjacent(u) {
            if core.contains(&v) {
                continue;
            }
            match l {
                BondLabel::Covalent(k) => {
                    for j in 1..=k {
                        let name =
                            reserve_fresh(format!("{v}__{u}__{j}"), &mut taken);
                        out.add_atom(&name, AtomLabel::Alpha, 0)?;
                        out.set_bond(&name, u, BondLabel::Covalent(1))?;
                        map.insert(name, v.clone());
                    }
                }
                BondLabel::Ionic => {
                    let charge = g.charge(&v);
                    for j in 1..=charge.unsigned_abs() {
                        let name =
                            reserve_fresh(format!("{v}__{u}__ib__{j}"), &mut taken);
                        out.add_atom(&name, AtomLabel::Alpha, charge.signum())?;
                        out.set_bond(&name, u, BondLabel::Ionic)?;
                        map.insert(name, v.clone());
                    }
                }
            }
        }
    }
    Ok((out, map))
}

/// Charge decomposition of a set of charged vertices: one isolated
/// open-valence marker of charge plus or minus one per unit of charge.
/// Returns the marker graph and the map to the originals. Fresh names also
/// avoid `extra_taken`.
pub fn charge_decomposition(
    g: &ChemGraph,
    charged: &BTreeSet<VertexName>,
    extra_taken: &BTreeSet<VertexName>,
) -> Result<(ChemGraph, BTreeMap<VertexName, VertexName>)> {
    let mut out = ChemGraph::new();
    let mut map = BTreeMap::new();
    let mut taken: BTreeSet<VertexName> = g.name_set();
    taken.extend(extra_taken.iter().cloned());
    for b in charged {
        if !g.has_vertex(b) {
            return Err(Error::Precondition(format!("no vertex {b}")));
        }
        let charge = g.charge(b);
        if charge == 0 {
            return Err(Error::Precondition(format!(
                "charge decomposition applies to charged vertices, {b} is neutral"
            )));
        }
        let tag = if charge > 0 { "pos" } else { "neg" };
        for j in 1..=charge.unsigned_abs() {
            let name = reserve_fresh(format!("{b}__{tag}__{j}"), &mut taken);
            out.add_atom(&name, AtomLabel::Alpha, charge.signum())?;
            map.insert(name, b.clone());
        }
    }
    Ok((out, map))
}

/// The canonical matching whose image is a given matchable subset: take the
/// valence completion of the interior element vertices, add the charge
/// decomposition of every charged vertex that is neither interior nor an
/// ionic neighbour of the interior (those two kinds already carry their
/// charge), and map every piece to the original it stands for.
pub fn matching_from_matchable(g: &ChemGraph, set: &BTreeSet<VertexName>) -> Result<Morphism> {
    if !is_matchable_subset(g, set) {
        return Err(Error::Precondition(format!(
            "subset {{{}}} is not matchable",
            set.iter().cloned().collect::<Vec<_>>().join(",")
        )));
    }
    let interior: BTreeSet<VertexName> = set
        .iter()
        .filter(|u| is_interior_chem(g, set, u))
        .cloned()
        .collect();
    let (completed, mut map) = valence_completion(g, &interior)?;
    // Charges already represented: interior vertices keep their own charge,
    // and ionic neighbours of the interior are rendered as charged markers.
    // Everything else that is charged gets charge-decomposition markers, even
    // when covalent markers for it exist (those are neutral).
    let ionic_covered: BTreeSet<VertexName> = interior
        .iter()
        .flat_map(|u| g.ionic_nbrs(u))
        .collect();
    let decomposed: BTreeSet<VertexName> = set
        .iter()
        .filter(|v| {
            g.charge(v) != 0 && !interior.contains(*v) && !ionic_covered.contains(*v)
        })
        .cloned()
        .collect();
    let dom_names = completed.name_set();
    let (markers, marker_map) = charge_decomposition(g, &decomposed, &dom_names)?;
    let dom = completed.disjoint_union(&markers)?;
    map.extend(marker_map);
    Morphism::new(dom, g.clone(), map)
}
