//! Environment-extended morphisms and bounded retrosynthetic-step search.
//!
//! A reaction rarely happens in isolation: solvents, reagents and catalysts
//! supply extra material. This module models that supply as an
//! [`Environment`] — a finite set of helper molecules available in unbounded
//! quantity — and extends the three process views (matchings, reactions,
//! rule terms) with bookkeeping for how many copies of each helper a given
//! morphism consumes:
//!
//! * [`ParaMatch`] — a matching into a larger graph together with an
//!   injection that covers the remainder with atoms of helper copies; the
//!   helper material may be rearranged freely, only its atom inventory
//!   counts. Open-valence markers of the domain must land on helper-provided
//!   atoms.
//! * [`ParaReact`] — a reaction whose domain contains a designated helper
//!   summand next to its payload.
//! * [`ParaDisc`] — an edit-rule term typed over a payload plus a helper
//!   summand.
//!
//! Composition adds helper multiplicities; [`embed_match`] turns an extended
//! matching into an extended reaction that keeps the matched skeleton intact
//! while rewiring marker sites to their helper-provided partners.
//!
//! On top of these sit [`RetroStep`] / [`RetroSequence`] — one-step and
//! multi-step retrosynthetic designs with full validation — and
//! [`search_step`], a bounded, deterministic search for single steps that
//! either instantiates declared reaction schemes by double-pushout rewriting
//! or consults a fingerprint lookup table of known conversions.

use std::collections::{BTreeMap, BTreeSet};

use crate::bridge::translate;
use crate::dpo::{apply_scheme, instance_to_tuple, ReactionScheme};
use crate::error::Error;
use crate::Result;
use crate::graph::{AtomLabel, BondLabel, ChemGraph, ValenceTable, VertexName};
use crate::morphism::{isomorphisms, Morphism};
use crate::reaction::Reaction;
use crate::samples;
use crate::term::{Generator, Term};
use crate::violation::Violation;

// ---------------------------------------------------------------------------
// Environments
// ---------------------------------------------------------------------------

/// A finite set of helper molecules (each a connected, marker-free chemical
/// graph) treated as available in unbounded supply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Environment {
    entities: Vec<ChemGraph>,
}

impl Environment {
    /// Builds an environment, checking that every entity is a connected
    /// molecular graph.
    pub fn new(entities: Vec<ChemGraph>, valences: &ValenceTable) -> Result<Environment> {
        for (i, g) in entities.iter().enumerate() {
            let vs = g.molecular_violations(valences)?;
            if !vs.is_empty() {
                return Err(Error::invalid("environment entity", vs));
            }
            if !g.is_connected() {
                return Err(Error::Precondition(format!(
                    "environment entity {i} is not connected"
                )));
            }
        }
        Ok(Environment { entities })
    }

    /// The environment with no helper molecules.
    pub fn empty() -> Environment {
        Environment {
            entities: Vec::new(),
        }
    }

    pub fn entities(&self) -> &[ChemGraph] {
        &self.entities
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    /// The canonical disjoint union of `counts[i]` copies of entity `i`,
    /// copy `j` of entity `i` carrying the vertex-name prefix `e{i}x{j}_`.
    pub fn summand(&self, counts: &[usize]) -> Result<ChemGraph> {
        self.summand_from(counts, &vec![0; self.entities.len()])
    }

    /// Like [`Environment::summand`], but copy indices for entity `i` start
    /// at `offsets[i]` instead of zero.
    pub fn summand_from(&self, counts: &[usize], offsets: &[usize]) -> Result<ChemGraph> {
        if counts.len() != self.entities.len() || offsets.len() != self.entities.len() {
            return Err(Error::Precondition(format!(
                "expected {} helper multiplicities, got {}",
                self.entities.len(),
                counts.len()
            )));
        }
        let mut out = ChemGraph::new();
        for (i, entity) in self.entities.iter().enumerate() {
            for j in 0..counts[i] {
                let copy = entity.prefixed(&copy_prefix(i, offsets[i] + j));
                out = out.disjoint_union(&copy)?;
            }
        }
        Ok(out)
    }
}

fn copy_prefix(entity: usize, copy: usize) -> String {
    format!("e{entity}x{copy}_")
}

/// The renaming that shifts the copy indices of a canonical helper summand
/// upwards by `offsets`, entity by entity.
fn renumber_map(
    env: &Environment,
    counts: &[usize],
    offsets: &[usize],
) -> BTreeMap<VertexName, VertexName> {
    let mut map = BTreeMap::new();
    for (i, entity) in env.entities().iter().enumerate() {
        for j in 0..counts[i] {
            let old = copy_prefix(i, j);
            let new = copy_prefix(i, offsets[i] + j);
            for v in entity.names() {
                map.insert(format!("{old}{v}"), format!("{new}{v}"));
            }
        }
    }
    map
}

// ---------------------------------------------------------------------------
// Extended matchings
// ---------------------------------------------------------------------------

/// A matching together with helper material covering what it misses.
///
/// The matching `m: A -> E` embeds the pattern; the injection sends the
/// canonical helper summand vertex-by-vertex onto atoms of `E`, preserving
/// atom labels but not charges or bonds (helper molecules may be torn up and
/// rewired). Together they must cover `E`, overlapping exactly on the images
/// of the pattern's open-valence markers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParaMatch {
    multiplicities: Vec<usize>,
    matching: Morphism,
    injection: Morphism,
}

impl ParaMatch {
    pub fn new(
        env: &Environment,
        multiplicities: Vec<usize>,
        matching: Morphism,
        injection: Morphism,
        valences: &ValenceTable,
    ) -> Result<ParaMatch> {
        let vs = para_match_violations(env, &multiplicities, &matching, &injection, valences)?;
        if vs.is_empty() {
            Ok(ParaMatch {
                multiplicities,
                matching,
                injection,
            })
        } else {
            Err(Error::invalid("extended matching", vs))
        }
    }

    /// The identity extended matching at `g`. This exists exactly when `g`
    /// has no open-valence markers: marker images must be covered by helper
    /// material, and the identity provides none.
    pub fn identity(env: &Environment, g: &ChemGraph, valences: &ValenceTable) -> Result<ParaMatch> {
        let injection = Morphism::new(ChemGraph::new(), g.clone(), BTreeMap::new())?;
        ParaMatch::new(
            env,
            vec![0; env.len()],
            Morphism::identity(g),
            injection,
            valences,
        )
    }

    pub fn multiplicities(&self) -> &[usize] {
        &self.multiplicities
    }

    pub fn matching(&self) -> &Morphism {
        &self.matching
    }

    pub fn injection(&self) -> &Morphism {
        &self.injection
    }

    /// Sequential composition: matchings compose, helper material of both
    /// factors is carried into the final codomain, and multiplicities add.
    /// The second factor's copies are renumbered past the first factor's so
    /// the combined summand is again canonical.
    pub fn compose(
        &self,
        other: &ParaMatch,
        env: &Environment,
        valences: &ValenceTable,
    ) -> Result<ParaMatch> {
        if self.matching.cod() != other.matching.dom() {
            return Err(Error::Precondition(
                "extended matchings do not meet: codomain differs from the next domain".into(),
            ));
        }
        let matching = self.matching.then(&other.matching)?;
        let total: Vec<usize> = self
            .multiplicities
            .iter()
            .zip(&other.multiplicities)
            .map(|(a, b)| a + b)
            .collect();
        let dom = env.summand(&total)?;
        let shift = renumber_map(env, &other.multiplicities, &self.multiplicities);
        let mut map: BTreeMap<VertexName, VertexName> = BTreeMap::new();
        for (v, w) in self.injection.map() {
            map.insert(v.clone(), other.matching.apply(w).clone());
        }
        for (v, w) in other.injection.map() {
            let moved = shift.get(v).cloned().unwrap_or_else(|| v.clone());
            map.insert(moved, w.clone());
        }
        let injection = Morphism::new(dom, other.matching.cod().clone(), map)?;
        ParaMatch::new(env, total, matching, injection, valences)
    }
}

/// Checks the bookkeeping of an extended matching. Clauses:
/// `para-multiplicity-shape`, `para-helper-shape`, `para-shared-codomain`,
/// `para-injection`, `para-cover`, `para-overlap`, plus the underlying
/// matching's own clauses.
pub fn para_match_violations(
    env: &Environment,
    multiplicities: &[usize],
    matching: &Morphism,
    injection: &Morphism,
    valences: &ValenceTable,
) -> Result<Vec<Violation>> {
    let mut vs = Vec::new();
    if multiplicities.len() != env.len() {
        vs.push(Violation::new(
            "para-multiplicity-shape",
            vec![],
            format!(
                "expected {} helper multiplicities, found {}",
                env.len(),
                multiplicities.len()
            ),
        ));
        return Ok(vs);
    }
    for (g, side) in [(matching.dom(), "domain"), (matching.cod(), "codomain")] {
        let found = g.chemical_violations(valences)?;
        if !found.is_empty() {
            vs.push(Violation::new(
                "para-objects",
                vec![side.to_string()],
                format!("the {side} is not a chemical graph ({} findings)", found.len()),
            ));
        }
    }
    let summand = env.summand(multiplicities)?;
    if injection.dom() != &summand {
        vs.push(Violation::new(
            "para-helper-shape",
            vec![],
            "the injection's domain is not the canonical helper summand",
        ));
    }
    if matching.cod() != injection.cod() {
        vs.push(Violation::new(
            "para-shared-codomain",
            vec![],
            "matching and injection end in different graphs",
        ));
        return Ok(vs);
    }
    vs.extend(matching.matching_violations());
    if !injection.is_injective() {
        vs.push(Violation::new(
            "para-injection",
            vec![],
            "helper atoms collide in the codomain",
        ));
    }
    for (v, w) in injection.map() {
        if injection.dom().label(v) != injection.cod().label(w) {
            vs.push(Violation::new(
                "para-injection",
                vec![v.clone(), w.clone()],
                "helper atom changes its element on the way in",
            ));
        }
    }
    let cod_names = matching.cod().name_set();
    let m_img = matching.image();
    let r_img = injection.image();
    let covered: BTreeSet<&VertexName> = m_img.union(&r_img).collect();
    if covered.len() != cod_names.len() {
        let missing: Vec<String> = cod_names
            .iter()
            .filter(|v| !covered.contains(v))
            .cloned()
            .collect();
        vs.push(Violation::new(
            "para-cover",
            missing,
            "pattern and helper material together must cover the codomain",
        ));
    }
    let overlap: BTreeSet<VertexName> = m_img.intersection(&r_img).cloned().collect();
    let alpha_img = matching.image_of(matching.dom().alpha_set().iter());
    if overlap != alpha_img {
        vs.push(Violation::new(
            "para-overlap",
            overlap.symmetric_difference(&alpha_img).cloned().collect(),
            "helper material must overlap the pattern exactly on marker images",
        ));
    }
    Ok(vs)
}

// ---------------------------------------------------------------------------
// Extended reactions
// ---------------------------------------------------------------------------

/// A reaction whose domain carries a designated canonical helper summand
/// beside its payload; no bonds cross between the two parts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParaReact {
    multiplicities: Vec<usize>,
    helper_names: BTreeSet<VertexName>,
    reaction: Reaction,
}

impl ParaReact {
    pub fn new(
        env: &Environment,
        multiplicities: Vec<usize>,
        helper_names: BTreeSet<VertexName>,
        reaction: Reaction,
        valences: &ValenceTable,
    ) -> Result<ParaReact> {
        let vs =
            para_react_violations(env, &multiplicities, &helper_names, &reaction, valences)?;
        if vs.is_empty() {
            Ok(ParaReact {
                multiplicities,
                helper_names,
                reaction,
            })
        } else {
            Err(Error::invalid("extended reaction", vs))
        }
    }

    /// The identity extended reaction at a chemical graph `g`.
    pub fn identity(env: &Environment, g: &ChemGraph, valences: &ValenceTable) -> Result<ParaReact> {
        ParaReact::new(
            env,
            vec![0; env.len()],
            BTreeSet::new(),
            Reaction::identity(g),
            valences,
        )
    }

    pub fn multiplicities(&self) -> &[usize] {
        &self.multiplicities
    }

    pub fn helper_names(&self) -> &BTreeSet<VertexName> {
        &self.helper_names
    }

    pub fn reaction(&self) -> &Reaction {
        &self.reaction
    }

    /// The payload part of the domain: everything except the helper summand.
    pub fn payload(&self) -> Result<ChemGraph> {
        let keep: BTreeSet<VertexName> = self
            .reaction
            .dom()
            .names()
            .filter(|v| !self.helper_names.contains(*v))
            .cloned()
            .collect();
        self.reaction.dom().induced(&keep)
    }

    /// Sequential composition: the first reaction is padded with the second
    /// factor's helper summand (renumbered past the first factor's copies),
    /// then the reactions compose; multiplicities add.
    pub fn compose(
        &self,
        other: &ParaReact,
        env: &Environment,
        valences: &ValenceTable,
    ) -> Result<ParaReact> {
        if self.reaction.cod() != &other.payload()? {
            return Err(Error::Precondition(
                "extended reactions do not meet: codomain differs from the next payload".into(),
            ));
        }
        let total: Vec<usize> = self
            .multiplicities
            .iter()
            .zip(&other.multiplicities)
            .map(|(a, b)| a + b)
            .collect();
        let shift = renumber_map(env, &other.multiplicities, &self.multiplicities);
        let sigma = env.summand_from(&other.multiplicities, &self.multiplicities)?;
        if sigma.names().any(|v| self.reaction.dom().has_vertex(v)) {
            return Err(Error::Precondition(
                "renumbered helper copies collide with the first factor's domain".into(),
            ));
        }
        // rename the second reaction's helper part to the shifted copies
        let mut dom2_map: BTreeMap<VertexName, VertexName> = BTreeMap::new();
        for v in other.reaction.dom().names() {
            let moved = shift.get(v).cloned().unwrap_or_else(|| v.clone());
            dom2_map.insert(moved, v.clone());
        }
        let dom2 = rename_graph(other.reaction.dom(), &invert_names(&dom2_map))?;
        let rho = pure_iso_reaction(dom2, other.reaction.dom().clone(), dom2_map);
        let second = rho.compose(&other.reaction)?;
        // pad the first reaction with the untouched shifted summand
        let ext_dom = self.reaction.dom().disjoint_union(&sigma)?;
        let ext_cod = self.reaction.cod().disjoint_union(&sigma)?;
        let mut context = self.reaction.context_map().clone();
        for v in sigma.names() {
            context.insert(v.clone(), v.clone());
        }
        let first = Reaction::new(
            ext_dom,
            ext_cod,
            self.reaction.changed_dom().clone(),
            self.reaction.changed_cod().clone(),
            self.reaction.atom_map().clone(),
            context,
            valences,
        )?;
        let reaction = first.compose(&second)?;
        let mut helper_names = self.helper_names.clone();
        helper_names.extend(sigma.name_set());
        ParaReact::new(env, total, helper_names, reaction, valences)
    }
}

/// Checks the bookkeeping of an extended reaction. Clauses:
/// `para-multiplicity-shape`, `para-helper-shape`, `para-helper-crossing`,
/// plus the underlying reaction's own clauses.
pub fn para_react_violations(
    env: &Environment,
    multiplicities: &[usize],
    helper_names: &BTreeSet<VertexName>,
    reaction: &Reaction,
    valences: &ValenceTable,
) -> Result<Vec<Violation>> {
    let mut vs = Vec::new();
    if multiplicities.len() != env.len() {
        vs.push(Violation::new(
            "para-multiplicity-shape",
            vec![],
            format!(
                "expected {} helper multiplicities, found {}",
                env.len(),
                multiplicities.len()
            ),
        ));
        return Ok(vs);
    }
    vs.extend(reaction.violations(valences)?);
    let dom = reaction.dom();
    if let Some(v) = helper_names.iter().find(|v| !dom.has_vertex(v)) {
        vs.push(Violation::new(
            "para-helper-shape",
            vec![v.clone()],
            "helper vertex is not part of the domain",
        ));
        return Ok(vs);
    }
    let summand = env.summand(multiplicities)?;
    let helper_part = dom.induced(helper_names)?;
    if helper_part != summand {
        vs.push(Violation::new(
            "para-helper-shape",
            vec![],
            "the helper part of the domain is not the canonical helper summand",
        ));
    }
    for u in helper_names {
        for v in dom.names() {
            if !helper_names.contains(v) && !dom.bond(u, v).is_none() {
                vs.push(Violation::new(
                    "para-helper-crossing",
                    vec![u.clone(), v.clone()],
                    "bond crosses between helper summand and payload",
                ));
            }
        }
    }
    Ok(vs)
}

// ---------------------------------------------------------------------------
// Extended rule terms
// ---------------------------------------------------------------------------

/// An edit-rule term typed over a payload extended with a canonical helper
/// summand.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParaDisc {
    multiplicities: Vec<usize>,
    helper_names: BTreeSet<VertexName>,
    typing: ChemGraph,
    term: Term,
}

impl ParaDisc {
    pub fn new(
        env: &Environment,
        multiplicities: Vec<usize>,
        helper_names: BTreeSet<VertexName>,
        typing: ChemGraph,
        term: Term,
        valences: &ValenceTable,
    ) -> Result<ParaDisc> {
        let vs = para_disc_violations(env, &multiplicities, &helper_names, &typing, &term, valences)?;
        if vs.is_empty() {
            Ok(ParaDisc {
                multiplicities,
                helper_names,
                typing,
                term,
            })
        } else {
            Err(Error::invalid("extended rule term", vs))
        }
    }

    /// The identity extended rule term at a chemical graph `g`.
    pub fn identity(env: &Environment, g: &ChemGraph, valences: &ValenceTable) -> Result<ParaDisc> {
        ParaDisc::new(
            env,
            vec![0; env.len()],
            BTreeSet::new(),
            g.clone(),
            Term::identity(),
            valences,
        )
    }

    pub fn multiplicities(&self) -> &[usize] {
        &self.multiplicities
    }

    pub fn helper_names(&self) -> &BTreeSet<VertexName> {
        &self.helper_names
    }

    pub fn typing(&self) -> &ChemGraph {
        &self.typing
    }

    pub fn term(&self) -> &Term {
        &self.term
    }

    /// The payload part of the typing graph.
    pub fn payload(&self) -> Result<ChemGraph> {
        let keep: BTreeSet<VertexName> = self
            .typing
            .names()
            .filter(|v| !self.helper_names.contains(*v))
            .cloned()
            .collect();
        self.typing.induced(&keep)
    }

    /// Evaluates the term on its typing graph.
    pub fn result(&self, valences: &ValenceTable) -> Result<ChemGraph> {
        self.term.eval(&self.typing, valences)
    }

    /// Sequential composition: term concatenation over the combined typing,
    /// with the second factor's helper copies renumbered past the first's.
    pub fn compose(
        &self,
        other: &ParaDisc,
        env: &Environment,
        valences: &ValenceTable,
    ) -> Result<ParaDisc> {
        if self.result(valences)? != other.payload()? {
            return Err(Error::Precondition(
                "extended rule terms do not meet: result differs from the next payload".into(),
            ));
        }
        let total: Vec<usize> = self
            .multiplicities
            .iter()
            .zip(&other.multiplicities)
            .map(|(a, b)| a + b)
            .collect();
        let shift = renumber_map(env, &other.multiplicities, &self.multiplicities);
        let sigma = env.summand_from(&other.multiplicities, &self.multiplicities)?;
        if sigma.names().any(|v| self.typing.has_vertex(v)) {
            return Err(Error::Precondition(
                "renumbered helper copies collide with the first factor's typing".into(),
            ));
        }
        let typing = self.typing.disjoint_union(&sigma)?;
        let mut gens: Vec<Generator> = self.term.gens().to_vec();
        for g in other.term.gens() {
            gens.push(rename_generator(g, &shift));
        }
        let term = Term::new(gens)?;
        let mut helper_names = self.helper_names.clone();
        helper_names.extend(sigma.name_set());
        ParaDisc::new(env, total, helper_names, typing, term, valences)
    }
}

/// Checks the bookkeeping of an extended rule term. Clauses:
/// `para-multiplicity-shape`, `para-helper-shape`, `para-helper-crossing`,
/// `para-typing`, `para-term-applies`.
pub fn para_disc_violations(
    env: &Environment,
    multiplicities: &[usize],
    helper_names: &BTreeSet<VertexName>,
    typing: &ChemGraph,
    term: &Term,
    valences: &ValenceTable,
) -> Result<Vec<Violation>> {
    let mut vs = Vec::new();
    if multiplicities.len() != env.len() {
        vs.push(Violation::new(
            "para-multiplicity-shape",
            vec![],
            format!(
                "expected {} helper multiplicities, found {}",
                env.len(),
                multiplicities.len()
            ),
        ));
        return Ok(vs);
    }
    let tv = typing.chemical_violations(valences)?;
    if !tv.is_empty() {
        vs.push(Violation::new(
            "para-typing",
            vec![],
            format!("the typing graph is not chemical ({} findings)", tv.len()),
        ));
    }
    if let Some(v) = helper_names.iter().find(|v| !typing.has_vertex(v)) {
        vs.push(Violation::new(
            "para-helper-shape",
            vec![v.clone()],
            "helper vertex is not part of the typing graph",
        ));
        return Ok(vs);
    }
    let summand = env.summand(multiplicities)?;
    if typing.induced(helper_names)? != summand {
        vs.push(Violation::new(
            "para-helper-shape",
            vec![],
            "the helper part of the typing is not the canonical helper summand",
        ));
    }
    for u in helper_names {
        for v in typing.names() {
            if !helper_names.contains(v) && !typing.bond(u, v).is_none() {
                vs.push(Violation::new(
                    "para-helper-crossing",
                    vec![u.clone(), v.clone()],
                    "bond crosses between helper summand and payload",
                ));
            }
        }
    }
    if let Err(e) = term.eval(typing, valences) {
        vs.push(Violation::new(
            "para-term-applies",
            vec![],
            format!("the term does not evaluate on the typing graph: {e}"),
        ));
    }
    Ok(vs)
}

// ---------------------------------------------------------------------------
// The combined morphism kind and its composition
// ---------------------------------------------------------------------------

/// One of the three environment-extended morphism kinds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParaMorphism {
    Match(ParaMatch),
    React(ParaReact),
    Disc(ParaDisc),
}

/// Composes two extended morphisms of the same kind; multiplicities add.
pub fn para_compose(
    env: &Environment,
    x: &ParaMorphism,
    y: &ParaMorphism,
    valences: &ValenceTable,
) -> Result<ParaMorphism> {
    match (x, y) {
        (ParaMorphism::Match(a), ParaMorphism::Match(b)) => {
            Ok(ParaMorphism::Match(a.compose(b, env, valences)?))
        }
        (ParaMorphism::React(a), ParaMorphism::React(b)) => {
            Ok(ParaMorphism::React(a.compose(b, env, valences)?))
        }
        (ParaMorphism::Disc(a), ParaMorphism::Disc(b)) => {
            Ok(ParaMorphism::Disc(a.compose(b, env, valences)?))
        }
        _ => Err(Error::Precondition(
            "cannot compose extended morphisms of different kinds".into(),
        )),
    }
}

// ---------------------------------------------------------------------------
// Embedding extended matchings as extended reactions
// ---------------------------------------------------------------------------

/// Turns an extended matching into the extended reaction that consumes the
/// pattern together with the helper summand and produces the codomain:
/// helper atoms travel along the injection, atoms at marker sites rewire to
/// their helper partners, and the rest of the pattern rides along unchanged.
pub fn embed_match(
    env: &Environment,
    x: &ParaMatch,
    valences: &ValenceTable,
) -> Result<ParaReact> {
    let pattern = x.matching().dom();
    let cod = x.matching().cod();
    let sigma = x.injection().dom();
    let dom = pattern.disjoint_union(sigma)?;

    let alphas = pattern.alpha_set();
    let mut attach: BTreeSet<VertexName> = BTreeSet::new();
    for a in &alphas {
        for n in pattern.nbrs(a) {
            if pattern.is_chem_vertex(&n) {
                attach.insert(n);
            }
        }
    }

    let mut changed_dom = sigma.name_set();
    changed_dom.extend(alphas.iter().cloned());
    changed_dom.extend(attach.iter().cloned());
    let mut changed_cod = x.injection().image();
    changed_cod.extend(x.matching().image_of(attach.iter()));

    let mut atom_map: BTreeMap<VertexName, VertexName> = BTreeMap::new();
    for v in sigma.names() {
        atom_map.insert(v.clone(), x.injection().apply(v).clone());
    }
    for v in &attach {
        atom_map.insert(v.clone(), x.matching().apply(v).clone());
    }
    let mut context_map: BTreeMap<VertexName, VertexName> = BTreeMap::new();
    for v in pattern.chem_set() {
        if !attach.contains(&v) {
            context_map.insert(v.clone(), x.matching().apply(&v).clone());
        }
    }

    let reaction = Reaction::new(
        dom,
        cod.clone(),
        changed_dom,
        changed_cod,
        atom_map,
        context_map,
        valences,
    )?;
    ParaReact::new(
        env,
        x.multiplicities().to_vec(),
        sigma.name_set(),
        reaction,
        valences,
    )
}

// ---------------------------------------------------------------------------
// Retrosynthetic steps and sequences
// ---------------------------------------------------------------------------

/// A single retrosynthetic design step: disconnect the target into synthons,
/// realise the synthons as synthetic equivalents using helper material, and
/// certify a forward reaction from the equivalents back to the target plus
/// a byproduct.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetroStep {
    /// The molecule to be synthesised.
    pub target: ChemGraph,
    /// Additional material produced alongside the target (may be empty).
    pub byproduct: ChemGraph,
    /// The helper molecules available in unbounded supply.
    pub environment: Environment,
    /// The edit-rule term that disconnects the target into the synthons.
    pub disconnection: Term,
    /// The disconnected fragments, one synthon per connected component.
    pub synthons: ChemGraph,
    /// How the synthons sit inside the synthetic equivalents.
    pub matching: ParaMatch,
    /// The forward reaction from the equivalents to target plus byproduct.
    pub reaction: ParaReact,
}

impl RetroStep {
    /// The synthetic equivalents: the graph the synthons are matched into.
    pub fn equivalents(&self) -> &ChemGraph {
        self.matching.matching().cod()
    }

    /// A deterministic summary string identifying the step up to renaming
    /// of the participating graphs.
    pub fn fingerprint(&self) -> String {
        format!(
            "{} <= {} | rule {} | helpers {:?} | byproduct {}",
            self.target.canonical_fingerprint(),
            self.equivalents().canonical_fingerprint(),
            self.disconnection,
            self.matching.multiplicities(),
            self.byproduct.canonical_fingerprint(),
        )
    }
}

/// Validates a retrosynthetic step end to end. Clauses:
/// `step-target-molecular`, `step-byproduct-molecular`,
/// `step-equivalents-molecular`, `step-synthons-chemical`,
/// `step-rule-applies`, `step-matching-domain`, `step-equivalents-chain`,
/// `step-products`, plus the extended matching's and reaction's own clauses.
pub fn validate_step(step: &RetroStep, valences: &ValenceTable) -> Result<Vec<Violation>> {
    let mut vs = Vec::new();
    let mut molecular = |g: &ChemGraph, clause: &'static str| -> Result<()> {
        let found = g.molecular_violations(valences)?;
        if !found.is_empty() {
            vs.push(Violation::new(
                clause,
                vec![],
                format!("not a molecular graph ({} findings)", found.len()),
            ));
        }
        Ok(())
    };
    molecular(&step.target, "step-target-molecular")?;
    molecular(&step.byproduct, "step-byproduct-molecular")?;
    molecular(step.equivalents(), "step-equivalents-molecular")?;

    let sv = step.synthons.chemical_violations(valences)?;
    if !sv.is_empty() {
        vs.push(Violation::new(
            "step-synthons-chemical",
            vec![],
            format!("not a chemical graph ({} findings)", sv.len()),
        ));
    }

    match step.disconnection.eval(&step.target, valences) {
        Err(e) => vs.push(Violation::new(
            "step-rule-applies",
            vec![],
            format!("the rule does not apply to the target: {e}"),
        )),
        Ok(result) => {
            if result != step.synthons {
                vs.push(Violation::new(
                    "step-rule-applies",
                    vec![],
                    "disconnecting the target does not give the stated synthons",
                ));
            }
        }
    }

    if step.matching.matching().dom() != &step.synthons {
        vs.push(Violation::new(
            "step-matching-domain",
            vec![],
            "the matching does not start at the synthons",
        ));
    }
    vs.extend(para_match_violations(
        &step.environment,
        step.matching.multiplicities(),
        step.matching.matching(),
        step.matching.injection(),
        valences,
    )?);
    vs.extend(para_react_violations(
        &step.environment,
        step.reaction.multiplicities(),
        step.reaction.helper_names(),
        step.reaction.reaction(),
        valences,
    )?);

    match step.reaction.payload() {
        Err(e) => vs.push(Violation::new(
            "step-equivalents-chain",
            vec![],
            format!("cannot isolate the reaction payload: {e}"),
        )),
        Ok(payload) => {
            if &payload != step.equivalents() {
                vs.push(Violation::new(
                    "step-equivalents-chain",
                    vec![],
                    "the forward reaction does not start at the synthetic equivalents",
                ));
            }
        }
    }
    match step.target.disjoint_union(&step.byproduct) {
        Err(e) => vs.push(Violation::new(
            "step-products",
            vec![],
            format!("target and byproduct share vertex names: {e}"),
        )),
        Ok(expected) => {
            if step.reaction.reaction().cod() != &expected {
                vs.push(Violation::new(
                    "step-products",
                    vec![],
                    "the forward reaction does not produce target plus byproduct",
                ));
            }
        }
    }
    Ok(vs)
}

/// A chain of forward stages leading to a target: the last-found stage
/// comes first, and each stage's products must contain the previous stage's
/// starting material (the target, for the first stage) next to a molecular
/// byproduct.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetroSequence {
    pub target: ChemGraph,
    pub stages: Vec<(Environment, ParaReact)>,
}

/// Validates a retrosynthetic sequence. Clauses: `sequence-target-molecular`,
/// `sequence-chain`, `sequence-byproduct-molecular`, plus each stage's
/// extended-reaction clauses.
pub fn validate_sequence(seq: &RetroSequence, valences: &ValenceTable) -> Result<Vec<Violation>> {
    let mut vs = Vec::new();
    let tv = seq.target.molecular_violations(valences)?;
    if !tv.is_empty() {
        vs.push(Violation::new(
            "sequence-target-molecular",
            vec![],
            format!("not a molecular graph ({} findings)", tv.len()),
        ));
    }
    let mut expected = seq.target.clone();
    for (idx, (env, stage)) in seq.stages.iter().enumerate() {
        let stage_name = format!("stage {}", idx + 1);
        vs.extend(para_react_violations(
            env,
            stage.multiplicities(),
            stage.helper_names(),
            stage.reaction(),
            valences,
        )?);
        match split_products(stage.reaction().cod(), &expected) {
            None => vs.push(Violation::new(
                "sequence-chain",
                vec![stage_name.clone()],
                "stage products do not contain the previous starting material",
            )),
            Some(byproduct) => {
                let bv = byproduct.molecular_violations(valences)?;
                if !bv.is_empty() {
                    vs.push(Violation::new(
                        "sequence-byproduct-molecular",
                        vec![stage_name.clone()],
                        format!("stage byproduct is not molecular ({} findings)", bv.len()),
                    ));
                }
            }
        }
        let payload = stage.payload()?;
        let pv = payload.molecular_violations(valences)?;
        if !pv.is_empty() {
            vs.push(Violation::new(
                "sequence-stage-molecular",
                vec![stage_name],
                format!(
                    "stage starting material is not molecular ({} findings)",
                    pv.len()
                ),
            ));
        }
        expected = payload;
    }
    Ok(vs)
}

/// Splits a product graph as `target + byproduct`: the target must appear
/// with its exact vertex names and bonds, with nothing crossing into the
/// rest. Returns the byproduct on success.
pub fn split_products(products: &ChemGraph, target: &ChemGraph) -> Option<ChemGraph> {
    let tnames = target.name_set();
    if !tnames.iter().all(|v| products.has_vertex(v)) {
        return None;
    }
    let part = products.induced(&tnames).ok()?;
    if &part != target {
        return None;
    }
    let rest: BTreeSet<VertexName> = products
        .names()
        .filter(|v| !tnames.contains(*v))
        .cloned()
        .collect();
    for u in &tnames {
        for v in &rest {
            if !products.bond(u, v).is_none() {
                return None;
            }
        }
    }
    products.induced(&rest).ok()
}

// ---------------------------------------------------------------------------
// Matching enumeration
// ---------------------------------------------------------------------------

/// Enumerates vertex-injective matchings of `pattern` into `host`, in a
/// deterministic order, stopping after `cap` results. Markers of the
/// pattern may land on host atoms. Returns the matchings found and whether
/// the cap cut the enumeration short. Matchings that identify distinct
/// pattern vertices are outside this enumeration's scope.
pub fn enumerate_matchings(
    pattern: &ChemGraph,
    host: &ChemGraph,
    cap: usize,
) -> (Vec<Morphism>, bool) {
    let mut order: Vec<VertexName> = pattern.chem_set().into_iter().collect();
    order.extend(pattern.alpha_set());
    let host_names: Vec<VertexName> = host.name_set().into_iter().collect();
    let mut out = Vec::new();
    let mut cur = BTreeMap::new();
    let mut used = BTreeSet::new();
    let truncated = match_rec(
        pattern,
        host,
        &order,
        &host_names,
        0,
        &mut cur,
        &mut used,
        &mut out,
        cap,
    );
    (out, truncated)
}

#[allow(clippy::too_many_arguments)]
fn match_rec(
    pattern: &ChemGraph,
    host: &ChemGraph,
    order: &[VertexName],
    host_names: &[VertexName],
    idx: usize,
    cur: &mut BTreeMap<VertexName, VertexName>,
    used: &mut BTreeSet<VertexName>,
    out: &mut Vec<Morphism>,
    cap: usize,
) -> bool {
    if idx == order.len() {
        if out.len() >= cap {
            return true;
        }
        if let Ok(m) = Morphism::new(pattern.clone(), host.clone(), cur.clone()) {
            if m.matching_violations().is_empty() {
                out.push(m);
            }
        }
        return false;
    }
    let v = &order[idx];
    for w in host_names {
        if used.contains(w) || host.charge(w) != pattern.charge(v) {
            continue;
        }
        if pattern.is_chem_vertex(v)
            && (!host.is_chem_vertex(w) || pattern.label(v) != host.label(w))
        {
            continue;
        }
        if cur.iter().any(|(pu, hw)| pattern.bond(v, pu) != host.bond(w, hw)) {
            continue;
        }
        cur.insert(v.clone(), w.clone());
        used.insert(w.clone());
        let truncated = match_rec(pattern, host, order, host_names, idx + 1, cur, used, out, cap);
        cur.remove(v);
        used.remove(w);
        if truncated {
            return true;
        }
    }
    false
}

// ---------------------------------------------------------------------------
// Bounded one-step search
// ---------------------------------------------------------------------------

/// Caps that keep the one-step search finite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchBounds {
    /// Rules longer than this many edit steps are skipped.
    pub max_rule_len: usize,
    /// At most this many copies of each helper molecule.
    pub max_copies: usize,
    /// At most this many accepted steps, and at most this many scheme
    /// matchings per host.
    pub max_candidates: usize,
}

/// The result of a bounded search: validated steps in a deterministic
/// order, and whether any bound cut the exploration short.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchOutcome {
    pub steps: Vec<RetroStep>,
    pub truncated: bool,
}

/// A lookup table of known conversions keyed by canonical fingerprints:
/// an entry `(from, to)` certifies that starting material with fingerprint
/// `from` converts to products with fingerprint `to`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProductOracle {
    table: BTreeMap<String, BTreeSet<String>>,
}

impl ProductOracle {
    pub fn new() -> ProductOracle {
        ProductOracle::default()
    }

    pub fn insert(&mut self, from: &str, to: &str) {
        self.table
            .entry(from.to_string())
            .or_default()
            .insert(to.to_string());
    }

    pub fn allows(&self, from: &str, to: &str) -> bool {
        self.table.get(from).is_some_and(|s| s.contains(to))
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&String, &String)> {
        self.table
            .iter()
            .flat_map(|(k, set)| set.iter().map(move |v| (k, v)))
    }
}

/// Searches for validated single retrosynthetic steps for `target`.
///
/// For every rule, the target is disconnected into synthons; helper copies
/// (up to the multiplicity bound) provide atoms for the synthons' marker
/// sites, which determines a candidate set of synthetic equivalents and the
/// extended matching into them. A forward reaction is then sought along two
/// routes: instantiating one of the declared `schemes` on the equivalents
/// by double-pushout rewriting, or - when a lookup `oracle` is supplied -
/// taking the plain reconstruction reaction (run the rule backwards and
/// return the helper material) and accepting it when the oracle endorses
/// its products. Steps are deduplicated and ordered by fingerprint.
///
/// Helper copies enter the equivalents whole minus the bonds at their
/// consumed atoms: a helper atom chosen for a marker site keeps its charge
/// and loses its previous bonds. Candidates whose spliced equivalents are
/// not chemical are dropped.
///
/// The target must be a chemical graph. When it is molecular, every
/// returned step validates with no violations at all. When it carries
/// open-valence markers - a search over an intermediate, synthon-level
/// goal - the returned steps validate in every clause except the target's
/// own molecularity, which is inherited from the input rather than
/// introduced by the search.
pub fn search_step(
    target: &ChemGraph,
    rules: &[Term],
    schemes: &[ReactionScheme],
    oracle: Option<&ProductOracle>,
    env: &Environment,
    bounds: &SearchBounds,
    valences: &ValenceTable,
) -> Result<SearchOutcome> {
    if rules.is_empty() {
        return Err(Error::Precondition(
            "at least one disconnection rule is required".into(),
        ));
    }
    let tv = target.chemical_violations(valences)?;
    if !tv.is_empty() {
        return Err(Error::invalid("search target", tv));
    }
    let lax = !target.molecular_violations(valences)?.is_empty();

    let mut steps: Vec<RetroStep> = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut truncated = false;

    'rules: for rule in rules {
        if rule.len() > bounds.max_rule_len {
            truncated = true;
            continue;
        }
        let synthons = match rule.eval(target, valences) {
            Ok(g) => g,
            Err(_) => continue,
        };
        let alphas: Vec<VertexName> = synthons.alpha_set().into_iter().collect();
        for counts in multiplicity_vectors(env.len(), bounds.max_copies) {
            let sigma = env.summand(&counts)?;
            if sigma.names().any(|v| synthons.has_vertex(v)) {
                continue;
            }
            let sigma_atoms: Vec<VertexName> = sigma.name_set().into_iter().collect();
            if alphas.len() > sigma_atoms.len() {
                continue;
            }
            for phi in injective_assignments(&alphas, &sigma_atoms, &synthons, &sigma) {
                let equivalents = match splice(&synthons, &sigma, &phi) {
                    Ok(g) => g,
                    Err(_) => continue,
                };
                if !equivalents.chemical_violations(valences)?.is_empty() {
                    continue;
                }
                let mut mmap: BTreeMap<VertexName, VertexName> = BTreeMap::new();
                for v in synthons.names() {
                    if synthons.is_chem_vertex(v) {
                        mmap.insert(v.clone(), v.clone());
                    } else {
                        mmap.insert(v.clone(), phi[v].clone());
                    }
                }
                let Ok(matching) = Morphism::new(synthons.clone(), equivalents.clone(), mmap)
                else {
                    continue;
                };
                let imap = sigma.names().map(|v| (v.clone(), v.clone())).collect();
                let Ok(injection) = Morphism::new(sigma.clone(), equivalents.clone(), imap) else {
                    continue;
                };
                let Ok(pm) =
                    ParaMatch::new(env, counts.clone(), matching, injection, valences)
                else {
                    continue;
                };

                // route one: instantiate a declared scheme on the equivalents
                for scheme in schemes {
                    let (matchings, cut) =
                        enumerate_matchings(scheme.left(), &equivalents, bounds.max_candidates);
                    truncated |= cut;
                    for mu in matchings {
                        let Ok(inst) = apply_scheme(scheme, &mu, valences) else {
                            continue;
                        };
                        let Ok(raw) = instance_to_tuple(&inst, valences) else {
                            continue;
                        };
                        let Some((reaction, byproduct)) = retarget(raw, target, valences) else {
                            continue;
                        };
                        if offer_step(
                            &mut steps,
                            &mut seen,
                            target,
                            byproduct,
                            env,
                            rule,
                            &synthons,
                            &pm,
                            reaction,
                            bounds,
                            lax,
                            valences,
                        )? {
                            truncated = true;
                            break 'rules;
                        }
                    }
                }

                // route two: the plain reconstruction, gated by the oracle
                if let Some(table) = oracle {
                    let Some((reaction, byproduct)) =
                        reconstruction(target, rule, &pm, &sigma, env, valences)
                    else {
                        continue;
                    };
                    let from = equivalents.canonical_fingerprint();
                    let to = reaction.cod().canonical_fingerprint();
                    if table.allows(&from, &to)
                        && offer_step(
                            &mut steps,
                            &mut seen,
                            target,
                            byproduct,
                            env,
                            rule,
                            &synthons,
                            &pm,
                            reaction,
                            bounds,
                            lax,
                            valences,
                        )?
                    {
                        truncated = true;
                        break 'rules;
                    }
                }
            }
        }
    }
    steps.sort_by_key(|s| s.fingerprint());
    Ok(SearchOutcome { steps, truncated })
}

/// Validates a candidate step, deduplicates it by fingerprint and appends
/// it. Returns `true` when the accepted-step cap is hit.
#[allow(clippy::too_many_arguments)]
fn offer_step(
    steps: &mut Vec<RetroStep>,
    seen: &mut BTreeSet<String>,
    target: &ChemGraph,
    byproduct: ChemGraph,
    env: &Environment,
    rule: &Term,
    synthons: &ChemGraph,
    pm: &ParaMatch,
    reaction: Reaction,
    bounds: &SearchBounds,
    lax: bool,
    valences: &ValenceTable,
) -> Result<bool> {
    let Ok(forward) = ParaReact::new(
        env,
        vec![0; env.len()],
        BTreeSet::new(),
        reaction,
        valences,
    ) else {
        return Ok(false);
    };
    let step = RetroStep {
        target: target.clone(),
        byproduct,
        environment: env.clone(),
        disconnection: rule.clone(),
        synthons: synthons.clone(),
        matching: pm.clone(),
        reaction: forward,
    };
    let violations = validate_step(&step, valences)?;
    let clean = if lax {
        violations
            .iter()
            .all(|v| v.clause == "step-target-molecular")
    } else {
        violations.is_empty()
    };
    if !clean {
        return Ok(false);
    }
    let fp = step.fingerprint();
    if !seen.insert(fp) {
        return Ok(false);
    }
    if steps.len() >= bounds.max_candidates {
        return Ok(true);
    }
    steps.push(step);
    Ok(false)
}

/// The plain reconstruction reaction for the oracle route: run the rule
/// backwards (target to synthons, inverted), splice in the helper summand
/// unchanged, and follow the embedded matching; the result maps the
/// equivalents to the target next to the untouched helper copies, which
/// become the byproduct.
fn reconstruction(
    target: &ChemGraph,
    rule: &Term,
    pm: &ParaMatch,
    sigma: &ChemGraph,
    env: &Environment,
    valences: &ValenceTable,
) -> Option<(Reaction, ChemGraph)> {
    let disconnect = translate(rule, target, valences).ok()?;
    let embedded = embed_match(env, pm, valences).ok()?;
    let ext_dom = target.disjoint_union(sigma).ok()?;
    let ext_cod = disconnect.cod().disjoint_union(sigma).ok()?;
    let mut context = disconnect.context_map().clone();
    for v in sigma.names() {
        context.insert(v.clone(), v.clone());
    }
    let first = Reaction::new(
        ext_dom,
        ext_cod,
        disconnect.changed_dom().clone(),
        disconnect.changed_cod().clone(),
        disconnect.atom_map().clone(),
        context,
        valences,
    )
    .ok()?;
    let forward = first.compose(embedded.reaction()).ok()?;
    let reaction = forward.dagger();
    let byproduct = split_products(reaction.cod(), target)?;
    Some((reaction, byproduct))
}

/// Rewrites the products of `raw` so the target appears with its exact
/// names, when the products contain components forming an isomorphic copy
/// of the target; returns the adjusted reaction and the byproduct.
fn retarget(
    raw: Reaction,
    target: &ChemGraph,
    _valences: &ValenceTable,
) -> Option<(Reaction, ChemGraph)> {
    if let Some(byproduct) = split_products(raw.cod(), target) {
        return Some((raw, byproduct));
    }
    // canonical choice: for each target component fingerprint, take the
    // lexicographically first product components of that fingerprint
    let mut pool: BTreeMap<String, Vec<BTreeSet<VertexName>>> = BTreeMap::new();
    for comp in raw.cod().component_sets() {
        let fp = raw.cod().induced(&comp).ok()?.canonical_fingerprint();
        pool.entry(fp).or_default().push(comp);
    }
    let mut chosen: BTreeSet<VertexName> = BTreeSet::new();
    let mut need: BTreeMap<String, usize> = BTreeMap::new();
    for comp in target.component_sets() {
        let fp = target.induced(&comp).ok()?.canonical_fingerprint();
        *need.entry(fp).or_default() += 1;
    }
    for (fp, count) in need {
        let comps = pool.get(&fp)?;
        if comps.len() < count {
            return None;
        }
        for comp in comps.iter().take(count) {
            chosen.extend(comp.iter().cloned());
        }
    }
    let part = raw.cod().induced(&chosen).ok()?;
    let iso = isomorphisms(&part, target).into_iter().next()?;
    let mut map = iso;
    let mut taken = target.name_set();
    for v in raw.cod().names() {
        if chosen.contains(v) {
            continue;
        }
        let mut cand = v.clone();
        while taken.contains(&cand) {
            cand.push('x');
        }
        taken.insert(cand.clone());
        map.insert(v.clone(), cand);
    }
    let cod2 = rename_graph(raw.cod(), &map).ok()?;
    let rho = pure_iso_reaction(raw.cod().clone(), cod2, map);
    let adjusted = raw.compose(&rho).ok()?;
    let byproduct = split_products(adjusted.cod(), target)?;
    Some((adjusted, byproduct))
}

// ---------------------------------------------------------------------------
// Search helpers
// ---------------------------------------------------------------------------

/// All multiplicity vectors of length `k` with entries up to `max`, in
/// lexicographic order.
fn multiplicity_vectors(k: usize, max: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let rest = multiplicity_vectors(k - 1, max);
    let mut out = Vec::new();
    for head in 0..=max {
        for tail in &rest {
            let mut v = Vec::with_capacity(k);
            v.push(head);
            v.extend_from_slice(tail);
            out.push(v);
        }
    }
    out
}

/// All injective assignments of the synthons' markers to helper atoms with
/// matching charges, in a deterministic order.
fn injective_assignments(
    alphas: &[VertexName],
    hosts: &[VertexName],
    synthons: &ChemGraph,
    sigma: &ChemGraph,
) -> Vec<BTreeMap<VertexName, VertexName>> {
    let mut out = Vec::new();
    let mut cur = BTreeMap::new();
    let mut used = BTreeSet::new();
    assign_rec(alphas, hosts, synthons, sigma, 0, &mut cur, &mut used, &mut out);
    out
}

#[allow(clippy::too_many_arguments)]
fn assign_rec(
    alphas: &[VertexName],
    hosts: &[VertexName],
    synthons: &ChemGraph,
    sigma: &ChemGraph,
    idx: usize,
    cur: &mut BTreeMap<VertexName, VertexName>,
    used: &mut BTreeSet<VertexName>,
    out: &mut Vec<BTreeMap<VertexName, VertexName>>,
) {
    if idx == alphas.len() {
        out.push(cur.clone());
        return;
    }
    let a = &alphas[idx];
    for w in hosts {
        if used.contains(w) || sigma.charge(w) != synthons.charge(a) {
            continue;
        }
        cur.insert(a.clone(), w.clone());
        used.insert(w.clone());
        assign_rec(alphas, hosts, synthons, sigma, idx + 1, cur, used, out);
        cur.remove(a);
        used.remove(w);
    }
}

/// Builds candidate synthetic equivalents: the synthons' atoms keep their
/// bonds, every marker is replaced by its assigned helper atom, and helper
/// atoms keep their internal bonds only where neither endpoint was
/// consumed by a marker.
fn splice(
    synthons: &ChemGraph,
    sigma: &ChemGraph,
    phi: &BTreeMap<VertexName, VertexName>,
) -> Result<ChemGraph> {
    let hit: BTreeSet<&VertexName> = phi.values().collect();
    let mut out = ChemGraph::new();
    for (v, label, charge) in synthons.iter() {
        if synthons.is_chem_vertex(v) {
            out.add_atom(v, label.clone(), charge)?;
        }
    }
    for (v, label, charge) in sigma.iter() {
        out.add_atom(v, label.clone(), charge)?;
    }
    let sigma_names: Vec<VertexName> = sigma.name_set().into_iter().collect();
    for (i, u) in sigma_names.iter().enumerate() {
        for v in &sigma_names[i + 1..] {
            if hit.contains(u) || hit.contains(v) {
                continue;
            }
            let b = sigma.bond(u, v);
            if !b.is_none() {
                out.set_bond(u, v, b)?;
            }
        }
    }
    let syn_names: Vec<VertexName> = synthons.name_set().into_iter().collect();
    let place = |v: &VertexName| -> VertexName {
        if synthons.is_chem_vertex(v) {
            v.clone()
        } else {
            phi[v].clone()
        }
    };
    for (i, u) in syn_names.iter().enumerate() {
        for v in &syn_names[i + 1..] {
            let b = synthons.bond(u, v);
            if !b.is_none() {
                out.set_bond(&place(u), &place(v), b)?;
            }
        }
    }
    Ok(out)
}

/// Renames every vertex of `g` through `map` (total on the vertex set).
fn rename_graph(g: &ChemGraph, map: &BTreeMap<VertexName, VertexName>) -> Result<ChemGraph> {
    let mut out = ChemGraph::new();
    for (v, label, charge) in g.iter() {
        out.add_atom(&map[v], label.clone(), charge)?;
    }
    let names: Vec<VertexName> = g.name_set().into_iter().collect();
    for (i, u) in names.iter().enumerate() {
        for v in &names[i + 1..] {
            let b = g.bond(u, v);
            if !b.is_none() {
                out.set_bond(&map[u], &map[v], b)?;
            }
        }
    }
    Ok(out)
}

fn invert_names(map: &BTreeMap<VertexName, VertexName>) -> BTreeMap<VertexName, VertexName> {
    map.iter().map(|(k, v)| (v.clone(), k.clone())).collect()
}

/// Rewrites every vertex reference of a generator through `map`, leaving
/// names outside the map untouched.
fn rename_generator(g: &Generator, map: &BTreeMap<VertexName, VertexName>) -> Generator {
    let r = |s: &VertexName| map.get(s).cloned().unwrap_or_else(|| s.clone());
    match g {
        Generator::Id => Generator::Id,
        Generator::Touch(u) => Generator::Touch(r(u)),
        Generator::Rename(u, v) => Generator::Rename(r(u), r(v)),
        Generator::Release { bar, u, a, b } => Generator::Release {
            bar: *bar,
            u: r(u),
            a: r(a),
            b: r(b),
        },
        Generator::Ionize { bar, u, v } => Generator::Ionize {
            bar: *bar,
            u: r(u),
            v: r(v),
        },
        Generator::Separate { bar, u, v } => Generator::Separate {
            bar: *bar,
            u: r(u),
            v: r(v),
        },
        Generator::Cleave { bar, u, v, a, b } => Generator::Cleave {
            bar: *bar,
            u: r(u),
            v: r(v),
            a: r(a),
            b: r(b),
        },
    }
}

/// A reaction that only renames: empty changed sets, the whole domain
/// carried by the context isomorphism.
fn pure_iso_reaction(
    dom: ChemGraph,
    cod: ChemGraph,
    context: BTreeMap<VertexName, VertexName>,
) -> Reaction {
    Reaction::new_unchecked(
        dom,
        cod,
        BTreeSet::new(),
        BTreeSet::new(),
        BTreeMap::new(),
        context,
    )
}

// ---------------------------------------------------------------------------
// Worked examples
// ---------------------------------------------------------------------------

/// A methyl synthon and a chloride synthon realised as methane and a
/// chlorine molecule, with one hydrogen chloride from the environment
/// supplying the extra hydrogen and chlorine atoms.
pub fn radical_abstraction_match(valences: &ValenceTable) -> Result<(Environment, ParaMatch)> {
    let mut chloride = ChemGraph::new();
    chloride.add_atom("cl", AtomLabel::Element("Cl".into()), 0)?;
    chloride.add_atom("b", AtomLabel::Alpha, 0)?;
    chloride.set_bond("cl", "b", BondLabel::Covalent(1))?;
    let synthons = samples::methyl_synthon().disjoint_union(&chloride)?;

    let mut equivalents = ChemGraph::new();
    equivalents.add_atom("mc", AtomLabel::Element("C".into()), 0)?;
    for i in 1..=4 {
        let h = format!("mh{i}");
        equivalents.add_atom(&h, AtomLabel::Element("H".into()), 0)?;
        equivalents.set_bond("mc", &h, BondLabel::Covalent(1))?;
    }
    equivalents.add_atom("ka", AtomLabel::Element("Cl".into()), 0)?;
    equivalents.add_atom("kb", AtomLabel::Element("Cl".into()), 0)?;
    equivalents.set_bond("ka", "kb", BondLabel::Covalent(1))?;

    let env = Environment::new(vec![samples::hydrogen_chloride()], valences)?;
    let matching = Morphism::from_pairs(
        synthons,
        equivalents.clone(),
        &[
            ("c", "mc"),
            ("h1", "mh1"),
            ("h2", "mh2"),
            ("h3", "mh3"),
            ("a", "mh4"),
            ("cl", "ka"),
            ("b", "kb"),
        ],
    )?;
    let injection = Morphism::from_pairs(
        env.summand(&[1])?,
        equivalents,
        &[("e0x0_h", "mh4"), ("e0x0_cl", "kb")],
    )?;
    let pm = ParaMatch::new(&env, vec![1], matching, injection, valences)?;
    Ok((env, pm))
}

/// A bare oxygen synthon with two marker sites realised as water, the two
/// hydrogens coming from one environment hydrogen molecule.
pub fn water_formation_match(valences: &ValenceTable) -> Result<(Environment, ParaMatch)> {
    let mut synthons = ChemGraph::new();
    synthons.add_atom("o", AtomLabel::Element("O".into()), 0)?;
    synthons.add_atom("a1", AtomLabel::Alpha, 0)?;
    synthons.add_atom("a2", AtomLabel::Alpha, 0)?;
    synthons.set_bond("o", "a1", BondLabel::Covalent(1))?;
    synthons.set_bond("o", "a2", BondLabel::Covalent(1))?;

    let env = Environment::new(vec![samples::hydrogen_molecule()], valences)?;
    let matching = Morphism::from_pairs(
        synthons,
        samples::water(),
        &[("o", "o"), ("a1", "h1"), ("a2", "h2")],
    )?;
    let injection = Morphism::from_pairs(
        env.summand(&[1])?,
        samples::water(),
        &[("e0x0_h1", "h1"), ("e0x0_h2", "h2")],
    )?;
    let pm = ParaMatch::new(&env, vec![1], matching, injection, valences)?;
    Ok((env, pm))
}

/// The rewrite template that breaks the bond of a hydrogen molecule:
/// consumed pattern `H-H`, interface two bare hydrogens, produced pattern
/// two marker-capped hydrogens.
pub fn hydrogen_bond_break_scheme(valences: &ValenceTable) -> Result<ReactionScheme> {
    let mut interface = ChemGraph::new();
    interface.add_atom("ha", AtomLabel::Element("H".into()), 0)?;
    interface.add_atom("hb", AtomLabel::Element("H".into()), 0)?;

    let mut left = interface.clone();
    left.set_bond("ha", "hb", BondLabel::Covalent(1))?;

    let mut right = interface.clone();
    right.add_atom("pa", AtomLabel::Alpha, 0)?;
    right.add_atom("pb", AtomLabel::Alpha, 0)?;
    right.set_bond("ha", "pa", BondLabel::Covalent(1))?;
    right.set_bond("hb", "pb", BondLabel::Covalent(1))?;

    let f = Morphism::inclusion(interface.clone(), left)?;
    let g = Morphism::inclusion(interface, right)?;
    ReactionScheme::from_span(f, g, valences)
}

/// Inputs for the one-step search whose target is a pair of marker-capped
/// hydrogens: the single reconnection rule rebuilds a hydrogen molecule,
/// and the bond-break template certifies the forward reaction from that
/// molecule back to the capped pair. The environment is empty.
pub fn hydrogen_toy_inputs(
    valences: &ValenceTable,
) -> Result<(ChemGraph, Vec<Term>, Vec<ReactionScheme>, Environment)> {
    let target = samples::hydrogen_disconnected();
    let rules = vec![Term::parse("~C(h1,h2|a1,a2)")?];
    let schemes = vec![hydrogen_bond_break_scheme(valences)?];
    Ok((target, rules, schemes, Environment::empty()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::ValenceTable;

    fn vt() -> ValenceTable {
        ValenceTable::default()
    }

    fn clause_set(vs: &[Violation]) -> BTreeSet<&'static str> {
        vs.iter().map(|v| v.clause).collect()
    }

    #[test]
    fn environment_summand_builds_disjoint_prefixed_copies() {
        let env = Environment::new(
            vec![samples::hydrogen_molecule(), samples::water()],
            &vt(),
        )
        .unwrap();
        let s = env.summand(&[2, 1]).unwrap();
        assert_eq!(s.name_set().len(), 2 * 2 + 3);
        assert!(s.has_vertex("e0x0_h1"));
        assert!(s.has_vertex("e0x1_h2"));
        assert!(s.has_vertex("e1x0_o"));
        assert_eq!(s.bond("e0x0_h1", "e0x0_h2"), BondLabel::Covalent(1));
        assert_eq!(s.bond("e0x0_h1", "e0x1_h1"), BondLabel::Covalent(0));
        assert_eq!(
            s.canonical_fingerprint(),
            samples::hydrogen_molecule()
                .disjoint_union(&samples::hydrogen_molecule().prefixed("q_"))
                .unwrap()
                .disjoint_union(&samples::water().prefixed("w_"))
                .unwrap()
                .canonical_fingerprint()
        );
        assert!(env.summand(&[0, 0]).unwrap().name_set().is_empty());
        assert!(env.summand(&[1]).is_err());
    }

    #[test]
    fn environment_rejects_entities_that_are_not_molecular() {
        assert!(Environment::new(vec![samples::hydrogen_synthon()], &vt()).is_err());
        assert!(Environment::new(vec![samples::hydrogen_disconnected()], &vt()).is_err());
        assert!(Environment::new(vec![samples::water()], &vt()).is_ok());
    }

    #[test]
    fn radical_abstraction_example_is_a_valid_extended_matching() {
        let (env, pm) = radical_abstraction_match(&vt()).unwrap();
        let vs = para_match_violations(
            &env,
            pm.multiplicities(),
            pm.matching(),
            pm.injection(),
            &vt(),
        )
        .unwrap();
        assert!(vs.is_empty(), "unexpected: {vs:?}");
        assert_eq!(pm.multiplicities(), &[1]);
    }

    #[test]
    fn extended_matching_rejects_broken_bookkeeping() {
        let (env, pm) = radical_abstraction_match(&vt()).unwrap();

        let vs = para_match_violations(&env, &[1, 1], pm.matching(), pm.injection(), &vt())
            .unwrap();
        assert!(clause_set(&vs).contains("para-multiplicity-shape"));

        // send the helper hydrogen onto a chlorine: label broken
        let bad_inj = Morphism::from_pairs(
            env.summand(&[1]).unwrap(),
            pm.matching().cod().clone(),
            &[("e0x0_h", "ka"), ("e0x0_cl", "kb")],
        )
        .unwrap();
        let vs = para_match_violations(&env, &[1], pm.matching(), &bad_inj, &vt()).unwrap();
        let cs = clause_set(&vs);
        assert!(cs.contains("para-injection"));
        // mh4 is a marker image no longer covered by helper material
        assert!(cs.contains("para-cover") || cs.contains("para-overlap"));

        // cover an atom that is not a marker image: overlap breaks
        let bad_inj = Morphism::from_pairs(
            env.summand(&[1]).unwrap(),
            pm.matching().cod().clone(),
            &[("e0x0_h", "mh3"), ("e0x0_cl", "kb")],
        )
        .unwrap();
        let vs = para_match_violations(&env, &[1], pm.matching(), &bad_inj, &vt()).unwrap();
        let cs = clause_set(&vs);
        assert!(cs.contains("para-overlap"));
        assert!(cs.contains("para-cover"));

        // wrong helper summand shape
        let bad_dom = samples::hydrogen_chloride();
        let bad_inj = Morphism::from_pairs(
            bad_dom,
            pm.matching().cod().clone(),
            &[("h", "mh4"), ("cl", "kb")],
        )
        .unwrap();
        let vs = para_match_violations(&env, &[1], pm.matching(), &bad_inj, &vt()).unwrap();
        assert!(clause_set(&vs).contains("para-helper-shape"));
    }

    #[test]
    fn water_completion_example_validates_and_embeds_with_empty_context() {
        let (env, pm) = water_formation_match(&vt()).unwrap();
        let embedded = embed_match(&env, &pm, &vt()).unwrap();
        let r = embedded.reaction();
        assert!(r.context_map().is_empty());
        assert_eq!(r.changed_dom(), &r.dom().name_set());
        assert_eq!(r.changed_cod(), &r.cod().name_set());
        assert_eq!(r.atom_map()["o"], "o");
        assert_eq!(r.atom_map()["e0x0_h1"], "h1");
        assert_eq!(r.cod(), &samples::water());
    }

    #[test]
    fn identity_extended_matching_exists_only_without_open_markers() {
        let env = Environment::new(vec![samples::hydrogen_molecule()], &vt()).unwrap();
        let id = ParaMatch::identity(&env, &samples::water(), &vt()).unwrap();
        assert_eq!(id.multiplicities(), &[0]);

        let err = ParaMatch::identity(&env, &samples::methyl_synthon(), &vt());
        match err {
            Err(Error::Invalid { violations, .. }) => {
                assert!(violations.iter().any(|v| v.clause == "para-overlap"));
            }
            other => panic!("expected an overlap failure, got {other:?}"),
        }
    }

    /// A second extended matching that freely adds a salt pair from the
    /// environment next to an untouched water molecule.
    fn salt_extension(env: &Environment, valences: &ValenceTable) -> ParaMatch {
        let cod = samples::water()
            .disjoint_union(&samples::sodium_chloride().prefixed("k_"))
            .unwrap();
        let matching = Morphism::inclusion(samples::water(), cod.clone()).unwrap();
        let mut imap = BTreeMap::new();
        for v in samples::sodium_chloride().names() {
            imap.insert(format!("e1x0_{v}"), format!("k_{v}"));
        }
        let injection = Morphism::new(env.summand(&[0, 1]).unwrap(), cod, imap).unwrap();
        ParaMatch::new(env, vec![0, 1], matching, injection, valences).unwrap()
    }

    fn water_match_over(env: &Environment, valences: &ValenceTable) -> ParaMatch {
        let (_, base) = water_formation_match(valences).unwrap();
        ParaMatch::new(
            env,
            vec![1, 0],
            base.matching().clone(),
            Morphism::new(
                env.summand(&[1, 0]).unwrap(),
                base.matching().cod().clone(),
                base.injection().map().clone(),
            )
            .unwrap(),
            valences,
        )
        .unwrap()
    }

    #[test]
    fn extended_matching_composition_adds_helper_copies() {
        let env = Environment::new(
            vec![samples::hydrogen_molecule(), samples::sodium_chloride()],
            &vt(),
        )
        .unwrap();
        let x = water_match_over(&env, &vt());
        let y = salt_extension(&env, &vt());
        let xy = x.compose(&y, &env, &vt()).unwrap();
        assert_eq!(xy.multiplicities(), &[1, 1]);
        assert_eq!(xy.injection().dom(), &env.summand(&[1, 1]).unwrap());
        assert_eq!(xy.injection().apply("e0x0_h1"), "h1");
        assert_eq!(xy.injection().apply("e1x0_na"), "k_na");

        // composing with the identity on the codomain changes nothing
        let idc = ParaMatch::identity(&env, y.matching().cod(), &vt()).unwrap();
        let same = xy.compose(&idc, &env, &vt()).unwrap();
        assert_eq!(same, xy);
    }

    #[test]
    fn extended_reaction_composition_chains_and_renumbers() {
        let env = Environment::new(vec![samples::hydrogen_molecule()], &vt()).unwrap();
        let (_, pm) = water_formation_match(&vt()).unwrap();
        let x = embed_match(&env, &pm, &vt()).unwrap();

        // second stage: disconnect a fresh helper hydrogen next to the water
        let sigma = env.summand(&[1]).unwrap();
        let dom = samples::water().disjoint_union(&sigma).unwrap();
        let rule = Term::parse("C(e0x0_h1,e0x0_h2|p,q)").unwrap();
        let reaction = translate(&rule, &dom, &vt()).unwrap();
        let y = ParaReact::new(&env, vec![1], sigma.name_set(), reaction, &vt()).unwrap();

        let xy = x.compose(&y, &env, &vt()).unwrap();
        assert_eq!(xy.multiplicities(), &[2]);
        assert!(xy.reaction().dom().has_vertex("e0x0_h1"));
        assert!(xy.reaction().dom().has_vertex("e0x1_h1"));
        assert_eq!(
            xy.helper_names().len(),
            4,
            "two helper copies of two atoms each"
        );
        // the first stage's copy became the water's hydrogens, while the
        // second stage's copy (renumbered in the domain) was split apart
        assert_eq!(xy.reaction().atom_map()["e0x0_h1"], "h1");
        assert_eq!(xy.reaction().atom_map()["e0x1_h1"], "e0x0_h1");
        assert_eq!(
            xy.reaction().cod().bond("e0x0_h1", "e0x0_h2"),
            BondLabel::Covalent(0)
        );
        assert!(xy.reaction().cod().has_vertex("p"));

        let bad = y.compose(&y, &env, &vt());
        assert!(bad.is_err());
    }

    #[test]
    fn extended_rule_terms_compose_with_fresh_copies() {
        let env = Environment::new(vec![samples::hydrogen_molecule()], &vt()).unwrap();
        // first factor: no helpers, open the water's first O-H bond
        let x = ParaDisc::new(
            &env,
            vec![0],
            BTreeSet::new(),
            samples::water(),
            Term::parse("C(o,h1|p,q)").unwrap(),
            &vt(),
        )
        .unwrap();
        let after = x.result(&vt()).unwrap();
        // second factor: one helper copy next to the first factor's result
        let sigma = env.summand(&[1]).unwrap();
        let y = ParaDisc::new(
            &env,
            vec![1],
            sigma.name_set(),
            after.disjoint_union(&sigma).unwrap(),
            Term::parse("C(e0x0_h1,e0x0_h2|r,s)").unwrap(),
            &vt(),
        )
        .unwrap();
        let xy = x.compose(&y, &env, &vt()).unwrap();
        assert_eq!(xy.multiplicities(), &[1]);
        assert!(xy.typing().has_vertex("e0x0_h1"));
        assert_eq!(xy.term().to_string(), "C(o,h1|p,q);C(e0x0_h1,e0x0_h2|r,s)");
        assert!(xy.result(&vt()).is_ok());

        // once a factor owns helper copies, its result keeps their names,
        // so composing it with itself cannot line up: composition is partial
        assert!(y.compose(&y, &env, &vt()).is_err());
    }

    #[test]
    fn mixed_kinds_do_not_compose() {
        let env = Environment::new(vec![samples::hydrogen_molecule()], &vt()).unwrap();
        let m = ParaMorphism::Match(ParaMatch::identity(&env, &samples::water(), &vt()).unwrap());
        let r = ParaMorphism::React(ParaReact::identity(&env, &samples::water(), &vt()).unwrap());
        assert!(para_compose(&env, &m, &r, &vt()).is_err());
        assert!(matches!(
            para_compose(&env, &m, &m, &vt()),
            Ok(ParaMorphism::Match(_))
        ));
    }

    #[test]
    fn embedding_the_radical_abstraction_matching_gives_the_expected_reaction() {
        let (env, pm) = radical_abstraction_match(&vt()).unwrap();
        let embedded = embed_match(&env, &pm, &vt()).unwrap();
        let r = embedded.reaction();
        assert_eq!(r.atom_map()["c"], "mc");
        assert_eq!(r.atom_map()["cl"], "ka");
        assert_eq!(r.atom_map()["e0x0_h"], "mh4");
        assert_eq!(r.atom_map()["e0x0_cl"], "kb");
        let ctx: Vec<&str> = r.context_map().keys().map(|s| s.as_str()).collect();
        assert_eq!(ctx, vec!["h1", "h2", "h3"]);
        assert_eq!(embedded.multiplicities(), &[1]);
        assert_eq!(embedded.helper_names().len(), 2);
    }

    #[test]
    fn embedding_respects_identities_and_inverses() {
        let env = Environment::new(vec![samples::hydrogen_molecule()], &vt()).unwrap();
        let id = ParaMatch::identity(&env, &samples::water(), &vt()).unwrap();
        let embedded = embed_match(&env, &id, &vt()).unwrap();
        assert!(embedded.reaction().is_identity());

        let (env, pm) = radical_abstraction_match(&vt()).unwrap();
        let r = embed_match(&env, &pm, &vt()).unwrap();
        let round = r.reaction().compose(&r.reaction().dagger()).unwrap();
        assert_eq!(round.dom(), round.cod());
        for v in round.dom().names() {
            let image = round
                .atom_map()
                .get(v)
                .or_else(|| round.context_map().get(v))
                .unwrap();
            assert_eq!(image, v, "round trip moved {v}");
        }
    }

    #[test]
    fn embedding_respects_composition() {
        let env = Environment::new(
            vec![samples::hydrogen_molecule(), samples::sodium_chloride()],
            &vt(),
        )
        .unwrap();
        let x = water_match_over(&env, &vt());
        let y = salt_extension(&env, &vt());
        let xy = x.compose(&y, &env, &vt()).unwrap();

        let ex = embed_match(&env, &x, &vt()).unwrap();
        let ey = embed_match(&env, &y, &vt()).unwrap();
        let exy = embed_match(&env, &xy, &vt()).unwrap();
        let composed = ex.compose(&ey, &env, &vt()).unwrap();
        assert_eq!(exy, composed);
    }

    #[test]
    fn matching_enumeration_finds_all_embeddings_of_a_diatomic() {
        let host = samples::hydrogen_molecule()
            .disjoint_union(&samples::hydrogen_molecule().prefixed("q_"))
            .unwrap();
        let (ms, cut) = enumerate_matchings(&samples::hydrogen_molecule(), &host, 100);
        assert_eq!(ms.len(), 4);
        assert!(!cut);

        let scheme = hydrogen_bond_break_scheme(&vt()).unwrap();
        let (ms, cut) = enumerate_matchings(scheme.left(), &host, 100);
        assert_eq!(ms.len(), 4, "two bonded pairs, two orders");
        assert!(!cut);

        let (ms, cut) = enumerate_matchings(scheme.left(), &host, 3);
        assert_eq!(ms.len(), 3);
        assert!(cut);
    }

    #[test]
    fn matching_enumeration_lets_markers_land_on_atoms() {
        let (ms, _) = enumerate_matchings(&samples::hydrogen_synthon(), &samples::methane(), 100);
        assert_eq!(ms.len(), 4, "the marker must land on the carbon");
        for m in &ms {
            assert_eq!(m.apply("a"), "c");
        }
        let (ms, _) =
            enumerate_matchings(&samples::hydrogen_synthon(), &samples::hydrogen_molecule(), 100);
        assert_eq!(ms.len(), 2);
    }

    #[test]
    fn empty_rule_set_is_a_domain_error() {
        let (target, _, schemes, env) = hydrogen_toy_inputs(&vt()).unwrap();
        let bounds = SearchBounds {
            max_rule_len: 4,
            max_copies: 1,
            max_candidates: 64,
        };
        let err = search_step(&target, &[], &schemes, None, &env, &bounds, &vt());
        assert!(matches!(err, Err(Error::Precondition(_))));
    }

    #[test]
    fn search_finds_exactly_the_hydrogen_reconstruction_step() {
        let (target, rules, schemes, env) = hydrogen_toy_inputs(&vt()).unwrap();
        let bounds = SearchBounds {
            max_rule_len: 1,
            max_copies: 1,
            max_candidates: 64,
        };
        let out = search_step(&target, &rules, &schemes, None, &env, &bounds, &vt()).unwrap();
        assert_eq!(out.steps.len(), 1, "expected exactly one step");
        assert!(!out.truncated);
        let step = &out.steps[0];

        // the only finding is the input target's own open markers
        let vs = validate_step(step, &vt()).unwrap();
        assert_eq!(vs.len(), 1, "unexpected: {vs:?}");
        assert_eq!(vs[0].clause, "step-target-molecular");

        assert!(step.byproduct.name_set().is_empty());
        assert!(step.matching.multiplicities().is_empty());
        assert_eq!(
            step.equivalents().canonical_fingerprint(),
            samples::hydrogen_molecule().canonical_fingerprint()
        );
        assert_eq!(step.reaction.reaction().dom(), step.equivalents());
        assert_eq!(step.reaction.reaction().cod(), &target);

        // determinism: the same inputs give the same outcome
        let again = search_step(&target, &rules, &schemes, None, &env, &bounds, &vt()).unwrap();
        assert_eq!(again, out);
    }

    #[test]
    fn search_honours_bounds() {
        let (target, rules, schemes, _) = hydrogen_toy_inputs(&vt()).unwrap();
        let env = Environment::new(vec![samples::hydrogen_molecule()], &vt()).unwrap();

        let tight = SearchBounds {
            max_rule_len: 0,
            max_copies: 1,
            max_candidates: 64,
        };
        let out = search_step(&target, &rules, &schemes, None, &env, &tight, &vt()).unwrap();
        assert!(out.steps.is_empty());
        assert!(out.truncated, "a rule was skipped for its length");

        // the helper bound separates the bare route from the one that
        // carries a spectator hydrogen molecule through the reaction
        let no_copies = SearchBounds {
            max_rule_len: 1,
            max_copies: 0,
            max_candidates: 64,
        };
        let out = search_step(&target, &rules, &schemes, None, &env, &no_copies, &vt()).unwrap();
        assert_eq!(out.steps.len(), 1);
        let one_copy = SearchBounds {
            max_rule_len: 1,
            max_copies: 1,
            max_candidates: 64,
        };
        let out = search_step(&target, &rules, &schemes, None, &env, &one_copy, &vt()).unwrap();
        assert_eq!(out.steps.len(), 2);

        let one_step = SearchBounds {
            max_rule_len: 1,
            max_copies: 1,
            max_candidates: 1,
        };
        let out = search_step(&target, &rules, &schemes, None, &env, &one_step, &vt()).unwrap();
        assert_eq!(out.steps.len(), 1);
        assert!(out.truncated, "the accepted-step cap was hit");

        let no_steps = SearchBounds {
            max_rule_len: 1,
            max_copies: 1,
            max_candidates: 0,
        };
        let out = search_step(&target, &rules, &schemes, None, &env, &no_steps, &vt()).unwrap();
        assert!(out.steps.is_empty());
        assert!(out.truncated, "the accepted-step cap was hit");
    }

    #[test]
    fn search_oracle_route_agrees_with_the_scheme_route() {
        let (target, rules, schemes, env) = hydrogen_toy_inputs(&vt()).unwrap();
        let bounds = SearchBounds {
            max_rule_len: 1,
            max_copies: 1,
            max_candidates: 64,
        };
        let by_scheme =
            search_step(&target, &rules, &schemes, None, &env, &bounds, &vt()).unwrap();
        assert_eq!(by_scheme.steps.len(), 1);

        let mut oracle = ProductOracle::new();
        oracle.insert(
            &samples::hydrogen_molecule().canonical_fingerprint(),
            &target.canonical_fingerprint(),
        );
        let by_oracle =
            search_step(&target, &rules, &[], Some(&oracle), &env, &bounds, &vt()).unwrap();
        assert_eq!(by_oracle.steps.len(), 1);
        assert_eq!(
            by_oracle.steps[0].fingerprint(),
            by_scheme.steps[0].fingerprint()
        );

        // both routes together still yield the single deduplicated step
        let both = search_step(
            &target,
            &rules,
            &schemes,
            Some(&oracle),
            &env,
            &bounds,
            &vt(),
        )
        .unwrap();
        assert_eq!(both.steps.len(), 1);

        // an oracle that endorses nothing finds nothing
        let empty = ProductOracle::new();
        let none =
            search_step(&target, &rules, &[], Some(&empty), &env, &bounds, &vt()).unwrap();
        assert!(none.steps.is_empty());
    }

    #[test]
    fn search_results_replay_through_validation() {
        let (target, rules, schemes, _) = hydrogen_toy_inputs(&vt()).unwrap();
        let env = Environment::new(vec![samples::hydrogen_molecule()], &vt()).unwrap();
        let bounds = SearchBounds {
            max_rule_len: 1,
            max_copies: 1,
            max_candidates: 32,
        };
        let out = search_step(&target, &rules, &schemes, None, &env, &bounds, &vt()).unwrap();
        assert_eq!(
            out.steps.len(),
            2,
            "a bare route and a spectator-carrying route"
        );
        for step in &out.steps {
            let vs = validate_step(step, &vt()).unwrap();
            assert!(
                vs.iter().all(|v| v.clause == "step-target-molecular"),
                "search introduced a fresh violation: {vs:?}"
            );
        }
        let mults: BTreeSet<&[usize]> = out
            .steps
            .iter()
            .map(|s| s.matching.multiplicities())
            .collect();
        assert!(mults.contains(&[0][..]));
        assert!(mults.contains(&[1][..]));

        let again = search_step(&target, &rules, &schemes, None, &env, &bounds, &vt()).unwrap();
        assert_eq!(again, out);
    }

    #[test]
    fn hydrogen_toy_step_validates_and_flags_perturbations() {
        let (target, rules, schemes, env) = hydrogen_toy_inputs(&vt()).unwrap();
        let bounds = SearchBounds {
            max_rule_len: 1,
            max_copies: 1,
            max_candidates: 64,
        };
        let out = search_step(&target, &rules, &schemes, None, &env, &bounds, &vt()).unwrap();
        let step = out.steps[0].clone();
        let vs = validate_step(&step, &vt()).unwrap();
        assert_eq!(clause_set(&vs), BTreeSet::from(["step-target-molecular"]));

        // a molecular target: the marker clause clears, but the rule no
        // longer applies and the products no longer line up
        let mut broken = step.clone();
        broken.target = samples::hydrogen_molecule();
        let cs: BTreeSet<&str> = validate_step(&broken, &vt())
            .unwrap()
            .iter()
            .map(|v| v.clause)
            .collect();
        assert!(!cs.contains("step-target-molecular"));
        assert!(cs.contains("step-rule-applies"));
        assert!(cs.contains("step-products"));

        let mut broken = step.clone();
        broken.disconnection = Term::parse("S(h1)").unwrap();
        let cs: BTreeSet<&str> = validate_step(&broken, &vt())
            .unwrap()
            .iter()
            .map(|v| v.clause)
            .collect();
        assert!(cs.contains("step-rule-applies"));

        let mut broken = step.clone();
        broken.byproduct = samples::hydrogen_molecule().prefixed("zz_");
        let cs: BTreeSet<&str> = validate_step(&broken, &vt())
            .unwrap()
            .iter()
            .map(|v| v.clause)
            .collect();
        assert!(cs.contains("step-products"));

        let mut broken = step;
        broken.synthons = samples::hydrogen_disconnected().prefixed("s_");
        let cs: BTreeSet<&str> = validate_step(&broken, &vt())
            .unwrap()
            .iter()
            .map(|v| v.clause)
            .collect();
        assert!(cs.contains("step-rule-applies"));
        assert!(cs.contains("step-matching-domain"));
    }

    #[test]
    fn sequences_chain_stage_products_to_stage_payloads() {
        let (target, rules, schemes, env) = hydrogen_toy_inputs(&vt()).unwrap();
        let bounds = SearchBounds {
            max_rule_len: 4,
            max_copies: 1,
            max_candidates: 64,
        };
        let out = search_step(&target, &rules, &schemes, None, &env, &bounds, &vt()).unwrap();
        let step = &out.steps[0];

        // a second stage whose products are exactly the first stage's
        // starting material, with no byproduct
        let second = ParaReact::identity(&env, step.equivalents(), &vt()).unwrap();
        let seq = RetroSequence {
            target: target.clone(),
            stages: vec![
                (env.clone(), step.reaction.clone()),
                (env.clone(), second.clone()),
            ],
        };
        let vs = validate_sequence(&seq, &vt()).unwrap();
        assert!(vs.is_empty(), "unexpected: {vs:?}");

        // breaking the chain: the second stage no longer produces the
        // first stage's starting material
        let other = ParaReact::identity(&env, &samples::water(), &vt()).unwrap();
        let seq = RetroSequence {
            target,
            stages: vec![(env.clone(), step.reaction.clone()), (env.clone(), other)],
        };
        let vs = validate_sequence(&seq, &vt()).unwrap();
        assert!(vs.iter().any(|v| v.clause == "sequence-chain"));
    }

    #[test]
    fn split_products_requires_exact_names_and_no_crossing_bonds() {
        let t = samples::hydrogen_molecule();
        let whole = t
            .disjoint_union(&samples::water().prefixed("w_"))
            .unwrap();
        let b = split_products(&whole, &t).unwrap();
        assert_eq!(
            b.canonical_fingerprint(),
            samples::water().canonical_fingerprint()
        );
        assert!(split_products(&whole, &samples::water()).is_none());
        assert!(split_products(&t, &t).unwrap().name_set().is_empty());

        let mut crossing = whole.clone();
        crossing.set_bond("h1", "w_o", BondLabel::Ionic).unwrap();
        assert!(split_products(&crossing, &t).is_none());
    }
}
