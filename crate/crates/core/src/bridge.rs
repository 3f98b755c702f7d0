//! Between edit-step terms and reactions.
//!
//! [`translate`] maps a term, step by step, to a reaction: each generator
//! contributes the pair of changed subsets it touches (with identity atom and
//! context components), and the per-step reactions are folded with reaction
//! composition. Composition absorbs the intermediate marker bookkeeping, so
//! the result records exactly which vertices of the two end graphs take part.
//!
//! [`decompose`] inverts this up to renaming: a reaction `r: A → C` factors
//! as a term `t: A → B` (in staged block order) followed by a pure renaming
//! isomorphism `ι: B → C` with `translate(t);ι = r`. The term disconnects
//! everything inside the changed subset of `A` — ion pairs, covalent bonds,
//! negative charges, then every marker slot — and reconnects the mirrored
//! structure of `B`, finishing with renames and touches. Vertices whose
//! charge is pinned by an ionic partner outside the changed subset are left
//! charged (their partner's shell would break otherwise).

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{render, Error};
use crate::graph::{ChemGraph, ValenceTable, VertexName};
use crate::morphism::reserve_fresh;
use crate::reaction::Reaction;
use crate::term::{Generator, Term};
use crate::Result;

/// Maps a term to the reaction it performs on `dom`.
///
/// Fails when the term is not applicable to `dom` (ill-typed — the error
/// names the first failing step) or when `dom` is not chemical.
pub fn translate(t: &Term, dom: &ChemGraph, valences: &ValenceTable) -> Result<Reaction> {
    dom.require_chemical(valences, "translation domain")?;
    let trace = t.eval_trace(dom, valences)?;
    let mut acc = Reaction::identity(dom);
    for (i, gen) in t.gens().iter().enumerate() {
        let step = generator_reaction(gen, &trace[i], &trace[i + 1]);
        acc = acc.compose(&step)?;
    }
    Ok(acc)
}

/// The one-step reaction of a single generator between two consecutive
/// evaluation graphs. Valid by construction for a defined step.
fn generator_reaction(gen: &Generator, dom: &ChemGraph, cod: &ChemGraph) -> Reaction {
    let names = |xs: &[&VertexName]| -> BTreeSet<VertexName> {
        xs.iter().map(|x| (*x).clone()).collect()
    };
    let (ua, ub) = match gen {
        Generator::Id => (BTreeSet::new(), BTreeSet::new()),
        Generator::Touch(u) => (names(&[u]), names(&[u])),
        Generator::Rename(u, v) => (names(&[u]), names(&[v])),
        Generator::Release { bar: false, u, a, b } => (names(&[u]), names(&[u, a, b])),
        Generator::Release { bar: true, u, a, b } => (names(&[u, a, b]), names(&[u])),
        Generator::Ionize { u, v, .. } | Generator::Separate { u, v, .. } => {
            (names(&[u, v]), names(&[u, v]))
        }
        Generator::Cleave { bar: false, u, v, a, b } => (names(&[u, v]), names(&[u, v, a, b])),
        Generator::Cleave { bar: true, u, v, a, b } => (names(&[u, v, a, b]), names(&[u, v])),
    };
    let atom_map: BTreeMap<VertexName, VertexName> = ua
        .iter()
        .filter(|n| dom.is_chem_vertex(n))
        .map(|n| (n.clone(), n.clone()))
        .collect();
    let context_map: BTreeMap<VertexName, VertexName> = dom
        .names()
        .filter(|n| !ua.contains(*n))
        .map(|n| (n.clone(), n.clone()))
        .collect();
    Reaction::new_unchecked(dom.clone(), cod.clone(), ua, ub, atom_map, context_map)
}

/// True when the reaction is directly realizable by a term without a renaming
/// factor: both the atom bijection and the context isomorphism are identity
/// maps on vertex names.
pub fn image_check(r: &Reaction) -> bool {
    r.atom_map().iter().all(|(k, v)| k == v) && r.context_map().iter().all(|(k, v)| k == v)
}

/// Factors a reaction `r: A → C` as a staged term `t: A → B` plus a pure
/// renaming isomorphism `ι: B → C` with `translate(t);ι = r` (checked
/// exactly before returning).
///
/// Fails with a precondition error when `r` does not validate. The tuple
/// conditions force the two disconnected middle states to agree, so every
/// valid reaction factors; `NotFound` guards the staged construction
/// defensively should that reconciliation ever fail.
pub fn decompose(r: &Reaction, valences: &ValenceTable) -> Result<(Term, Reaction)> {
    let violations = r.violations(valences)?;
    if !violations.is_empty() {
        return Err(Error::Precondition(format!(
            "decompose requires a valid reaction: {}",
            render(&violations)
        )));
    }
    let (mid, ub, iota) = strict_factor(r, valences)?;
    let t = staged_term(r.dom(), r.changed_dom(), &mid, &ub, valences)?;

    let rt = translate(&t, r.dom(), valences)?;
    if rt.cod() != &mid
        || rt.changed_dom() != r.changed_dom()
        || rt.changed_cod() != &ub
        || !image_check(&rt)
    {
        return Err(Error::Internal(
            "staged term does not realize the identity-map factor of the reaction".into(),
        ));
    }
    let full = rt.compose(&iota)?;
    if &full != r {
        return Err(Error::Internal(
            "staged factorization does not recompose to the input reaction".into(),
        ));
    }
    Ok((t, iota))
}

/// Builds the middle graph `B` (the codomain renamed so that both maps of
/// the strict factor are identities), the changed subset of `B`, and the
/// renaming isomorphism `ι: B → C`.
fn strict_factor(
    r: &Reaction,
    valences: &ValenceTable,
) -> Result<(ChemGraph, BTreeSet<VertexName>, Reaction)> {
    let c = r.cod();
    let mut to_mid: BTreeMap<VertexName, VertexName> = BTreeMap::new();
    for (x, y) in r.atom_map() {
        to_mid.insert(y.clone(), x.clone());
    }
    for (x, y) in r.context_map() {
        to_mid.insert(y.clone(), x.clone());
    }
    // Markers of the changed codomain keep their names where possible.
    let mut taken: BTreeSet<VertexName> = to_mid.values().cloned().collect();
    for y in r.changed_cod() {
        if !to_mid.contains_key(y) {
            let name = reserve_fresh(y.clone(), &mut taken);
            to_mid.insert(y.clone(), name);
        }
    }

    let mut mid = ChemGraph::new();
    for (y, label, charge) in c.iter() {
        mid.add_atom(&to_mid[y], label.clone(), charge)?;
    }
    for (x, y, bond) in c.bonds() {
        mid.set_bond(&to_mid[x], &to_mid[y], bond)?;
    }
    let ub: BTreeSet<VertexName> = r.changed_cod().iter().map(|y| to_mid[y].clone()).collect();

    let iso: BTreeMap<VertexName, VertexName> =
        to_mid.iter().map(|(y, x)| (x.clone(), y.clone())).collect();
    let iota = Reaction::new(
        mid.clone(),
        c.clone(),
        BTreeSet::new(),
        BTreeSet::new(),
        BTreeMap::new(),
        iso,
        valences,
    )
    .map_err(|e| Error::Internal(format!("renaming factor failed to validate: {e}")))?;
    Ok((mid, ub, iota))
}

/// Deterministic fresh-name supply for the staged construction: `_d…` for
/// markers introduced by disconnections, `_r…` for parking renames.
struct NamePool {
    taken: BTreeSet<VertexName>,
    intro: usize,
    park: usize,
}

impl NamePool {
    fn new(graphs: [&ChemGraph; 2]) -> NamePool {
        let mut taken = BTreeSet::new();
        for g in graphs {
            taken.extend(g.names().cloned());
        }
        NamePool {
            taken,
            intro: 0,
            park: 0,
        }
    }

    fn intro_name(&mut self) -> VertexName {
        loop {
            self.intro += 1;
            let name = format!("_d{}", self.intro);
            if self.taken.insert(name.clone()) {
                return name;
            }
        }
    }

    fn park_name(&mut self) -> VertexName {
        loop {
            self.park += 1;
            let name = format!("_r{}", self.park);
            if self.taken.insert(name.clone()) {
                return name;
            }
        }
    }
}

/// The disconnection half of the staged construction for one side.
struct Phases {
    gens: Vec<Generator>,
    middle: ChemGraph,
    /// Markers owned by the changed zone at the middle: the zone's own
    /// markers plus everything introduced along the way.
    pool: BTreeSet<VertexName>,
}

fn apply_step(
    gens: &mut Vec<Generator>,
    cur: &mut ChemGraph,
    gen: Generator,
    valences: &ValenceTable,
) -> Result<()> {
    *cur = gen.apply(cur, valences).map_err(|e| {
        Error::NotFound(format!(
            "the reaction does not admit a staged factorization: {e}"
        ))
    })?;
    gens.push(gen);
    Ok(())
}

/// Disconnects everything inside `zone`: ion pairs, covalent bonds between
/// its element vertices, negative charges, then every covalently held marker
/// slot. Element vertices with an ionic partner outside the zone keep their
/// charge (the partner's shell pins it).
fn disconnect_phases(
    g: &ChemGraph,
    zone: &BTreeSet<VertexName>,
    names: &mut NamePool,
    valences: &ValenceTable,
) -> Result<Phases> {
    let mut gens = Vec::new();
    let mut cur = g.clone();
    let mut pool: BTreeSet<VertexName> = zone
        .iter()
        .filter(|v| g.is_alpha_vertex(v))
        .cloned()
        .collect();
    let pinned: BTreeSet<VertexName> = zone
        .iter()
        .filter(|u| {
            g.is_chem_vertex(u) && g.ionic_nbrs(u).iter().any(|w| !zone.contains(w))
        })
        .cloned()
        .collect();
    let chems: Vec<VertexName> = zone
        .iter()
        .filter(|u| g.is_chem_vertex(u))
        .cloned()
        .collect();

    // Ion pairs inside the zone.
    let mut ion_pairs: Vec<(VertexName, VertexName)> = g
        .bonds()
        .filter(|(u, v, b)| b.is_ionic() && zone.contains(*u) && zone.contains(*v))
        .map(|(u, v, _)| {
            if g.charge(u) > 0 {
                (u.clone(), v.clone())
            } else {
                (v.clone(), u.clone())
            }
        })
        .collect();
    ion_pairs.sort();
    for (u, v) in ion_pairs {
        apply_step(
            &mut gens,
            &mut cur,
            Generator::Separate { bar: false, u, v },
            valences,
        )?;
    }

    // Covalent bonds between element vertices inside the zone, one cleave
    // per bond order.
    let mut cov_pairs: Vec<(VertexName, VertexName, u8)> = g
        .bonds()
        .filter(|(u, v, b)| {
            !b.is_ionic()
                && b.cov() > 0
                && zone.contains(*u)
                && zone.contains(*v)
                && g.is_chem_vertex(u)
                && g.is_chem_vertex(v)
        })
        .map(|(u, v, b)| (u.clone(), v.clone(), b.cov()))
        .collect();
    cov_pairs.sort();
    for (u, v, k) in cov_pairs {
        for _ in 0..k {
            let a = names.intro_name();
            let b = names.intro_name();
            pool.insert(a.clone());
            pool.insert(b.clone());
            apply_step(
                &mut gens,
                &mut cur,
                Generator::Cleave {
                    bar: false,
                    u: u.clone(),
                    v: v.clone(),
                    a,
                    b,
                },
                valences,
            )?;
        }
    }

    // Negative charges of unpinned element vertices, one release per unit.
    for u in &chems {
        if pinned.contains(u) {
            continue;
        }
        for _ in 0..(-g.charge(u)).max(0) {
            let a = names.intro_name();
            let b = names.intro_name();
            pool.insert(a.clone());
            pool.insert(b.clone());
            apply_step(
                &mut gens,
                &mut cur,
                Generator::Release {
                    bar: false,
                    u: u.clone(),
                    a,
                    b,
                },
                valences,
            )?;
        }
    }

    // Every covalently held marker of an unpinned element vertex.
    for u in &chems {
        if pinned.contains(u) {
            continue;
        }
        let mut marks: Vec<VertexName> = cur
            .covalent_nbrs(u)
            .into_iter()
            .filter(|x| pool.contains(x))
            .collect();
        marks.sort();
        for x in marks {
            apply_step(
                &mut gens,
                &mut cur,
                Generator::Ionize {
                    bar: false,
                    u: u.clone(),
                    v: x,
                },
                valences,
            )?;
        }
    }

    Ok(Phases {
        gens,
        middle: cur,
        pool,
    })
}

/// Classification of a middle-state marker: its charge plus its bonding
/// situation (partner name, bond order, ionic flag), `None` when isolated.
type MarkerClass = (i32, Option<(VertexName, u8, bool)>);

fn marker_class(g: &ChemGraph, x: &VertexName) -> MarkerClass {
    let partner = g.nbrs(x).into_iter().next().map(|w| {
        let b = g.bond(x, &w);
        (w, b.cov(), b.is_ionic())
    });
    (g.charge(x), partner)
}

/// Pairs the two middle-state marker pools class by class (lexicographically
/// inside each class); fails when the pools do not match.
fn match_middles(left: &Phases, right: &Phases) -> Result<BTreeMap<VertexName, VertexName>> {
    let classify = |p: &Phases| -> BTreeMap<MarkerClass, Vec<VertexName>> {
        let mut classes: BTreeMap<MarkerClass, Vec<VertexName>> = BTreeMap::new();
        for x in &p.pool {
            classes
                .entry(marker_class(&p.middle, x))
                .or_default()
                .push(x.clone());
        }
        classes
    };
    let class_a = classify(left);
    let class_b = classify(right);
    let keys_a: BTreeSet<&MarkerClass> = class_a.keys().collect();
    let keys_b: BTreeSet<&MarkerClass> = class_b.keys().collect();
    if keys_a != keys_b
        || class_a
            .iter()
            .any(|(k, xs)| class_b.get(k).map(Vec::len) != Some(xs.len()))
    {
        return Err(Error::NotFound(
            "the reaction does not admit a staged factorization: \
             the disconnected marker pools of the two sides do not match"
                .into(),
        ));
    }
    let mut sigma = BTreeMap::new();
    for (key, xs) in &class_b {
        for (x, y) in xs.iter().zip(&class_a[key]) {
            sigma.insert(x.clone(), y.clone());
        }
    }
    Ok(sigma)
}

/// Builds the staged term `A → B` realizing the identity-map reaction
/// between the changed subsets `ua` of `a` and `ub` of `b`.
fn staged_term(
    a: &ChemGraph,
    ua: &BTreeSet<VertexName>,
    b: &ChemGraph,
    ub: &BTreeSet<VertexName>,
    valences: &ValenceTable,
) -> Result<Term> {
    let mut names = NamePool::new([a, b]);
    let left = disconnect_phases(a, ua, &mut names, valences)?;
    let right = disconnect_phases(b, ub, &mut names, valences)?;
    let sigma = match_middles(&left, &right)?;

    let renamed =
        right
            .middle
            .rename_with(|n| Ok(sigma.get(n).cloned().unwrap_or_else(|| n.to_string())))?;
    if renamed != left.middle {
        return Err(Error::NotFound(
            "the reaction does not admit a staged factorization: \
             the disconnected middles of the two sides differ"
                .into(),
        ));
    }

    let mut gens = left.gens;
    let mut cur = left.middle;

    // Reconnect: the reversed, inverted disconnection of the other side,
    // with its marker names routed through the pairing.
    for gen in right.gens.iter().rev() {
        let step = gen.bar().rename_names(&sigma);
        apply_step(&mut gens, &mut cur, step, valences)?;
    }

    // Park the zone's surviving original markers out of the way, then give
    // every marker of the target zone its final name.
    let mut park: BTreeMap<VertexName, VertexName> = BTreeMap::new();
    for x in ua {
        if cur.has_vertex(x) && cur.is_alpha_vertex(x) {
            let p = names.park_name();
            apply_step(
                &mut gens,
                &mut cur,
                Generator::Rename(x.clone(), p.clone()),
                valences,
            )?;
            park.insert(x.clone(), p);
        }
    }
    for y in ub {
        if !b.is_alpha_vertex(y) {
            continue;
        }
        let pre = sigma.get(y).ok_or_else(|| {
            Error::Internal("a changed-codomain marker is missing from the pairing".into())
        })?;
        let from = park.get(pre).cloned().unwrap_or_else(|| pre.clone());
        apply_step(
            &mut gens,
            &mut cur,
            Generator::Rename(from, y.clone()),
            valences,
        )?;
    }

    for u in ub {
        apply_step(&mut gens, &mut cur, Generator::Touch(u.clone()), valences)?;
    }

    if &cur != b {
        return Err(Error::Internal(
            "staged term evaluation does not reach the strict factor codomain".into(),
        ));
    }
    Term::new(gens)
}
