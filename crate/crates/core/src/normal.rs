//! Normalization of edit-step terms.
//!
//! Terms are rewritten into a *staged form*: separations, cleavages,
//! releases, ionizations, then the four inverse kinds mirrored, then renames,
//! then touches. On top of the staged form sit the rename discipline
//! ([`RenamingForm`]), a set of cleanliness conditions ([`check_normal_form`])
//! that forbid redundant touches, stray dummy names, and do/undo pairs, plus
//! a canonical representative used to compare normal forms syntactically.
//!
//! Every rewrite is applied to the live typed term and gated on evaluation;
//! rewrites are drawn from the pairwise commutation tables of the step
//! calculus. The checked entry points additionally verify after every single
//! rewrite that the term's reaction is unchanged.

use std::collections::{BTreeMap, BTreeSet};

use crate::bridge::translate;
use crate::error::Error;
use crate::graph::{ChemGraph, ValenceTable, VertexName};
use crate::reaction::Reaction;
use crate::term::{Generator, StepKind, Term};
use crate::Result;

/// Packs steps into a term; the steps come from validated rewrites, so the
/// structural check cannot fail.
fn term_of(gens: Vec<Generator>) -> Term {
    Term::new(gens).expect("rewritten steps remain structurally valid")
}

/// A term split into its staged blocks, one per generator kind.
#[derive(Debug, Clone, Default)]
pub struct IceForm {
    pub separations: Vec<Generator>,
    pub cleavages: Vec<Generator>,
    pub releases: Vec<Generator>,
    pub ionizations: Vec<Generator>,
    pub ionization_inverses: Vec<Generator>,
    pub release_inverses: Vec<Generator>,
    pub cleavage_inverses: Vec<Generator>,
    pub separation_inverses: Vec<Generator>,
    pub renames: Vec<Generator>,
    pub touches: Vec<Generator>,
}

impl IceForm {
    /// Splits a term into blocks; `None` when the kinds are not in staged
    /// block order.
    pub fn of(t: &Term) -> Option<IceForm> {
        let mut form = IceForm::default();
        let mut last: Option<StepKind> = None;
        for g in t.gens() {
            let kind = g.kind();
            if kind == StepKind::Id {
                return None;
            }
            if let Some(prev) = last {
                if kind < prev {
                    return None;
                }
            }
            last = Some(kind);
            form.block_mut(kind).push(g.clone());
        }
        Some(form)
    }

    fn block_mut(&mut self, kind: StepKind) -> &mut Vec<Generator> {
        match kind {
            StepKind::Separate => &mut self.separations,
            StepKind::Cleave => &mut self.cleavages,
            StepKind::Release => &mut self.releases,
            StepKind::Ionize => &mut self.ionizations,
            StepKind::IonizeBar => &mut self.ionization_inverses,
            StepKind::ReleaseBar => &mut self.release_inverses,
            StepKind::CleaveBar => &mut self.cleavage_inverses,
            StepKind::SeparateBar => &mut self.separation_inverses,
            StepKind::Rename => &mut self.renames,
            StepKind::Touch => &mut self.touches,
            StepKind::Id => unreachable!("identity steps are stripped"),
        }
    }

    fn blocks(&self) -> [&Vec<Generator>; 10] {
        [
            &self.separations,
            &self.cleavages,
            &self.releases,
            &self.ionizations,
            &self.ionization_inverses,
            &self.release_inverses,
            &self.cleavage_inverses,
            &self.separation_inverses,
            &self.renames,
            &self.touches,
        ]
    }

    /// The concatenated term.
    pub fn to_term(&self) -> Term {
        let gens: Vec<Generator> = self.blocks().into_iter().flatten().cloned().collect();
        term_of(gens)
    }

    /// Names appearing in disconnection or connection upper positions.
    pub fn active_names(&self) -> BTreeSet<VertexName> {
        let mut set = BTreeSet::new();
        for g in self.blocks().into_iter().flatten() {
            if g.kind().is_disconnection() || g.kind().is_connection() {
                for n in g.upper_names() {
                    set.insert(n.clone());
                }
            }
        }
        set
    }

    /// Names introduced by disconnection lower positions.
    pub fn introduced_names(&self) -> BTreeSet<VertexName> {
        let mut set = BTreeSet::new();
        for g in self.blocks().into_iter().flatten() {
            if g.kind().is_disconnection() {
                for n in g.lower_names() {
                    set.insert(n.clone());
                }
            }
        }
        set
    }

    /// Names consumed by connection lower positions.
    pub fn consumed_names(&self) -> BTreeSet<VertexName> {
        let mut set = BTreeSet::new();
        for g in self.blocks().into_iter().flatten() {
            if g.kind().is_connection() {
                for n in g.lower_names() {
                    set.insert(n.clone());
                }
            }
        }
        set
    }
}

/// A sequence of renames split into a primary block (pairwise independent
/// renames) and a secondary block that reuses names freed by the primary one.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RenamingForm {
    pub primary: Vec<(VertexName, VertexName)>,
    pub secondary: Vec<(VertexName, VertexName)>,
}

impl RenamingForm {
    pub fn sources(&self) -> BTreeSet<VertexName> {
        self.primary.iter().map(|(a, _)| a.clone()).collect()
    }
    pub fn targets(&self) -> BTreeSet<VertexName> {
        self.primary.iter().map(|(_, b)| b.clone()).collect()
    }
    pub fn dummy_sources(&self) -> BTreeSet<VertexName> {
        self.secondary.iter().map(|(c, _)| c.clone()).collect()
    }
    pub fn final_targets(&self) -> BTreeSet<VertexName> {
        self.secondary.iter().map(|(_, d)| d.clone()).collect()
    }

    pub fn to_gens(&self) -> Vec<Generator> {
        self.primary
            .iter()
            .chain(self.secondary.iter())
            .map(|(a, b)| Generator::Rename(a.clone(), b.clone()))
            .collect()
    }

    /// Structural conditions: the blocks are disjoint in the required ways
    /// and no dummy stands for a vertex interchangeable with its final
    /// replacement (`h` is the graph the renames start from).
    pub fn violations(&self, h: &ChemGraph) -> Vec<String> {
        let mut out = Vec::new();
        let (a, b) = (self.sources(), self.targets());
        let (c, d) = (self.dummy_sources(), self.final_targets());
        if a.len() != self.primary.len() || b.len() != self.primary.len() {
            out.push("primary renames repeat a source or target".into());
        }
        if !a.is_disjoint(&b) {
            out.push("a primary rename target reuses a primary source".into());
        }
        if !c.is_subset(&b) {
            out.push("a deferred rename starts from a name not produced by the primary block".into());
        }
        if !d.is_subset(&a) {
            out.push("a deferred rename targets a name not freed by the primary block".into());
        }
        for (ci, di) in &self.secondary {
            if let Some((aj, _)) = self.primary.iter().find(|(_, bj)| bj == ci) {
                if vertex_signature(h, aj) == vertex_signature(h, di) {
                    out.push(format!(
                        "deferred rename through {ci} connects interchangeable vertices {aj} and {di}"
                    ));
                }
            }
        }
        out
    }
}

/// A term in normal form, decomposed into its staged blocks and rename
/// discipline, with the derived name sets.
#[derive(Debug, Clone)]
pub struct NormalForm {
    pub ice: IceForm,
    pub renaming: RenamingForm,
    pub introduced: BTreeSet<VertexName>,
    pub consumed: BTreeSet<VertexName>,
    pub active: BTreeSet<VertexName>,
    pub touched: BTreeSet<VertexName>,
}

fn vertex_signature(g: &ChemGraph, v: &VertexName) -> Option<(String, i32, Vec<(VertexName, String)>)> {
    if !g.has_vertex(v) {
        return None;
    }
    let mut nbrs: Vec<(VertexName, String)> = g
        .nbrs(v)
        .into_iter()
        .map(|w| {
            let b = g.bond(v, &w);
            (w, format!("{b:?}"))
        })
        .collect();
    nbrs.sort();
    Some((format!("{:?}", g.label(v)), g.charge(v), nbrs))
}

/// Deterministic fresh-name supply for rewriting.
struct FreshNames {
    taken: BTreeSet<VertexName>,
    counter: usize,
}

impl FreshNames {
    fn new(dom: &ChemGraph, gens: &[Generator]) -> FreshNames {
        let mut taken: BTreeSet<VertexName> = dom.names().cloned().collect();
        for g in gens {
            for n in g.names() {
                taken.insert(n.clone());
            }
        }
        FreshNames { taken, counter: 0 }
    }

    fn next(&mut self) -> VertexName {
        loop {
            self.counter += 1;
            let name = format!("_t{}", self.counter);
            if self.taken.insert(name.clone()) {
                return name;
            }
        }
    }
}

fn rename(a: &VertexName, b: &VertexName) -> Generator {
    Generator::Rename(a.clone(), b.clone())
}

fn touch(u: &VertexName) -> Generator {
    Generator::Touch(u.clone())
}

/// The pairwise rewrite table: the replacement for `left;target` that moves
/// `target` (a generator of a strictly earlier staged block than `left`) to
/// the left, possibly cancelling the pair or emitting trailing renames.
/// `None` marks pairs outside the table's domain.
fn pass_rewrite(
    left: &Generator,
    target: &Generator,
    fresh: &mut FreshNames,
) -> Option<Vec<Generator>> {
    use Generator::*;
    let swap = || Some(vec![target.clone(), left.clone()]);
    // A touch moves right across anything; a step that already involves the
    // touched vertex absorbs the touch outright.
    if let Touch(w) = left {
        return match target {
            Id | Touch(_) => None,
            Rename(src, _) if src == w => Some(vec![target.clone()]),
            Rename(..) => swap(),
            _ if target.mentions(w) => Some(vec![target.clone()]),
            _ => swap(),
        };
    }
    match target {
        Touch(x) => {
            // Moving a touch left across `left`: absorbed if `left` already
            // involves the vertex.
            if left.mentions(x) {
                Some(vec![left.clone()])
            } else {
                swap()
            }
        }
        Separate { bar: false, u, v } => match left {
            Rename(w, z) if z == v => Some(vec![
                Separate { bar: false, u: u.clone(), v: w.clone() },
                left.clone(),
            ]),
            Rename(..) => swap(),
            Separate { bar: true, u: w, v: z } if w == u && z == v => {
                Some(vec![touch(u), touch(v)])
            }
            _ => swap(),
        },
        Cleave { bar: false, u, v, a, b } => match left {
            Rename(w, z) if w == a => {
                let k = fresh.next();
                Some(vec![
                    Cleave { bar: false, u: u.clone(), v: v.clone(), a: k.clone(), b: b.clone() },
                    rename(a, z),
                    rename(&k, a),
                ])
            }
            Rename(w, z) if w == b => {
                let k = fresh.next();
                Some(vec![
                    Cleave { bar: false, u: u.clone(), v: v.clone(), a: a.clone(), b: k.clone() },
                    rename(b, z),
                    rename(&k, b),
                ])
            }
            Rename(..) => swap(),
            Release { bar: true, .. } => {
                let (i, j) = (fresh.next(), fresh.next());
                Some(vec![
                    Cleave { bar: false, u: u.clone(), v: v.clone(), a: i.clone(), b: j.clone() },
                    left.clone(),
                    rename(&i, a),
                    rename(&j, b),
                ])
            }
            Cleave { bar: true, u: w, v: z, a: c, b: d } => {
                if w == u && z == v {
                    let j = fresh.next();
                    Some(vec![touch(w), touch(z), rename(c, &j), rename(d, b), rename(&j, a)])
                } else if w == v && z == u {
                    let j = fresh.next();
                    Some(vec![touch(w), touch(z), rename(c, &j), rename(d, a), rename(&j, b)])
                } else {
                    let (i, j) = (fresh.next(), fresh.next());
                    Some(vec![
                        Cleave { bar: false, u: u.clone(), v: v.clone(), a: i.clone(), b: j.clone() },
                        left.clone(),
                        rename(&i, a),
                        rename(&j, b),
                    ])
                }
            }
            _ => swap(),
        },
        Release { bar: false, u, a, b } => match left {
            Rename(w, z) if w == a => {
                let k = fresh.next();
                Some(vec![
                    Release { bar: false, u: u.clone(), a: k.clone(), b: b.clone() },
                    rename(a, z),
                    rename(&k, a),
                ])
            }
            Rename(w, z) if w == b => {
                let k = fresh.next();
                Some(vec![
                    Release { bar: false, u: u.clone(), a: a.clone(), b: k.clone() },
                    rename(b, z),
                    rename(&k, b),
                ])
            }
            Rename(..) => swap(),
            Release { bar: true, u: w, a: c, b: d } => {
                if w == u {
                    let j = fresh.next();
                    Some(vec![touch(u), rename(c, &j), rename(d, b), rename(&j, a)])
                } else {
                    let (i, j) = (fresh.next(), fresh.next());
                    Some(vec![
                        Release { bar: false, u: u.clone(), a: i.clone(), b: j.clone() },
                        left.clone(),
                        rename(&i, a),
                        rename(&j, b),
                    ])
                }
            }
            Cleave { bar: true, .. } => {
                let (i, j) = (fresh.next(), fresh.next());
                Some(vec![
                    Release { bar: false, u: u.clone(), a: i.clone(), b: j.clone() },
                    left.clone(),
                    rename(&i, a),
                    rename(&j, b),
                ])
            }
            _ => swap(),
        },
        Ionize { bar: false, u, v } => match left {
            Rename(w, z) if z == v => Some(vec![
                Ionize { bar: false, u: u.clone(), v: w.clone() },
                rename(w, v),
            ]),
            Rename(..) => swap(),
            Ionize { bar: true, u: w, v: z } => {
                if w == u && z == v {
                    Some(vec![touch(u), touch(v)])
                } else if w == u {
                    // Undoing a different slot of the same vertex: the pair
                    // amounts to exchanging the two markers by renaming.
                    let k = fresh.next();
                    Some(vec![touch(u), rename(z, &k), rename(v, z), rename(&k, v)])
                } else {
                    swap()
                }
            }
            _ => swap(),
        },
        Ionize { bar: true, u, v } => match left {
            Rename(w, z) if z == v => Some(vec![
                Ionize { bar: true, u: u.clone(), v: w.clone() },
                rename(w, v),
            ]),
            _ => swap(),
        },
        Release { bar: true, u, a, b } => match left {
            Rename(w, z) if z == a => Some(vec![Release {
                bar: true,
                u: u.clone(),
                a: w.clone(),
                b: b.clone(),
            }]),
            Rename(w, z) if z == b => Some(vec![Release {
                bar: true,
                u: u.clone(),
                a: a.clone(),
                b: w.clone(),
            }]),
            _ => swap(),
        },
        Cleave { bar: true, u, v, a, b } => match left {
            Rename(w, z) if z == a => Some(vec![Cleave {
                bar: true,
                u: u.clone(),
                v: v.clone(),
                a: w.clone(),
                b: b.clone(),
            }]),
            Rename(w, z) if z == b => Some(vec![Cleave {
                bar: true,
                u: u.clone(),
                v: v.clone(),
                a: a.clone(),
                b: w.clone(),
            }]),
            _ => swap(),
        },
        Separate { bar: true, u, v } => match left {
            Rename(w, z) if z == v => Some(vec![
                Separate { bar: true, u: u.clone(), v: w.clone() },
                left.clone(),
            ]),
            _ => swap(),
        },
        _ => None,
    }
}

/// Plain commutation of two generators of the same staged block (used when
/// bringing a do/undo pair together).
fn same_block_swap(left: &Generator, right: &Generator) -> Vec<Generator> {
    vec![right.clone(), left.clone()]
}

/// The live rewriting state: the generator list, the evaluation trace, and
/// the optional per-rewrite reaction oracle.
struct Rewriter<'a> {
    vt: &'a ValenceTable,
    gens: Vec<Generator>,
    trace: Vec<ChemGraph>,
    fresh: FreshNames,
    baseline: Option<Reaction>,
}

impl<'a> Rewriter<'a> {
    fn new(t: &Term, dom: &ChemGraph, vt: &'a ValenceTable, checked: bool) -> Result<Rewriter<'a>> {
        let gens: Vec<Generator> = t
            .gens()
            .iter()
            .filter(|g| !matches!(g, Generator::Id))
            .cloned()
            .collect();
        let stripped = term_of(gens.clone());
        let trace = stripped.eval_trace(dom, vt)?;
        let fresh = FreshNames::new(dom, &gens);
        let baseline = if checked {
            Some(translate(&stripped, dom, vt)?)
        } else {
            None
        };
        Ok(Rewriter { vt, gens, trace, fresh, baseline })
    }

    fn term(&self) -> Term {
        term_of(self.gens.clone())
    }

    fn dom(&self) -> &ChemGraph {
        &self.trace[0]
    }

    /// Replaces `gens[start..end]` with `replacement` if the suffix still
    /// evaluates; commits and returns true, or leaves the term untouched.
    fn try_replace(
        &mut self,
        start: usize,
        end: usize,
        replacement: Vec<Generator>,
    ) -> Result<bool> {
        let mut new_gens = self.gens[..start].to_vec();
        new_gens.extend(replacement);
        new_gens.extend_from_slice(&self.gens[end..]);
        let mut new_trace = self.trace[..=start].to_vec();
        let mut cur = self.trace[start].clone();
        for g in &new_gens[start..] {
            match g.apply(&cur, self.vt) {
                Ok(next) => {
                    cur = next;
                    new_trace.push(cur.clone());
                }
                Err(Error::NotApplicable { .. }) => return Ok(false),
                Err(e) => return Err(e),
            }
        }
        for g in &new_gens[start..] {
            for n in g.names() {
                self.fresh.taken.insert(n.clone());
            }
        }
        self.gens = new_gens;
        self.trace = new_trace;
        if let Some(baseline) = &self.baseline {
            let now = translate(&self.term(), self.dom(), self.vt)?;
            if &now != baseline {
                return Err(Error::Internal(
                    "a rewrite changed the term's reaction".into(),
                ));
            }
        }
        Ok(true)
    }

    /// One staged pass: every generator of `kind` bubbles left past all
    /// later-block generators.
    fn bubble_pass(&mut self, kind: StepKind) -> Result<()> {
        loop {
            let before = self.out_of_place(kind);
            if before == 0 {
                return Ok(());
            }
            let Some(mut j) = self.first_blocked(kind) else {
                return Ok(());
            };
            // Move the target at j leftward until settled or cancelled.
            loop {
                if j == 0 {
                    break;
                }
                let lk = self.gens[j - 1].kind();
                if lk == kind || lk < kind {
                    break;
                }
                let row = pass_rewrite(&self.gens[j - 1], &self.gens[j], &mut self.fresh)
                    .ok_or_else(|| {
                        Error::Internal(format!(
                            "no rewrite for {} before {}",
                            self.gens[j - 1],
                            self.gens[j]
                        ))
                    })?;
                let still_target = row.first().map(|g| g.kind()) == Some(kind);
                if !self.try_replace(j - 1, j + 1, row)? {
                    return Err(Error::Internal(format!(
                        "rewrite of {} before {} does not evaluate",
                        self.gens[j - 1],
                        self.gens[j]
                    )));
                }
                if !still_target {
                    break; // cancelled into touches/renames
                }
                j -= 1;
            }
            let after = self.out_of_place(kind);
            if after >= before {
                return Err(Error::Internal(
                    "staged pass failed to make progress".into(),
                ));
            }
        }
    }

    /// Number of `kind`-generators with a later-block generator before them.
    fn out_of_place(&self, kind: StepKind) -> usize {
        let mut blocked = 0;
        let mut seen_later = false;
        for g in &self.gens {
            let k = g.kind();
            if k == kind {
                if seen_later {
                    blocked += 1;
                }
            } else if k > kind {
                seen_later = true;
            }
        }
        blocked
    }

    fn first_blocked(&self, kind: StepKind) -> Option<usize> {
        for j in 1..self.gens.len() {
            if self.gens[j].kind() == kind && self.gens[j - 1].kind() > kind {
                return Some(j);
            }
        }
        None
    }

    /// Moves touches right past renames, absorbing touches on rename sources.
    fn tidy_tail(&mut self) -> Result<()> {
        loop {
            let mut changed = false;
            for i in 0..self.gens.len().saturating_sub(1) {
                let (l, r) = (&self.gens[i], &self.gens[i + 1]);
                if let (Generator::Touch(u), Generator::Rename(w, _)) = (l, r) {
                    let row = if u == w {
                        vec![r.clone()]
                    } else {
                        vec![r.clone(), l.clone()]
                    };
                    if !self.try_replace(i, i + 2, row)? {
                        return Err(Error::Internal("touch could not cross a rename".into()));
                    }
                    changed = true;
                    break;
                }
            }
            if !changed {
                return Ok(());
            }
        }
    }

    fn run_passes(&mut self) -> Result<()> {
        for kind in [
            StepKind::Separate,
            StepKind::Cleave,
            StepKind::Release,
            StepKind::Ionize,
            StepKind::IonizeBar,
            StepKind::ReleaseBar,
            StepKind::CleaveBar,
            StepKind::SeparateBar,
        ] {
            self.bubble_pass(kind)?;
        }
        self.tidy_tail()?;
        if IceForm::of(&self.term()).is_none() {
            return Err(Error::Internal("staged passes did not reach block order".into()));
        }
        Ok(())
    }

    /// Index ranges of the rename and touch segments (the term must be in
    /// staged block order).
    fn rename_segment(&self) -> (usize, usize) {
        let start = self
            .gens
            .iter()
            .position(|g| g.kind() >= StepKind::Rename)
            .unwrap_or(self.gens.len());
        let end = self
            .gens
            .iter()
            .position(|g| g.kind() == StepKind::Touch)
            .unwrap_or(self.gens.len());
        (start, end)
    }

    /// Renames every introduced marker lifetime to a globally fresh name,
    /// so that dummy names never collide with anything else; lifetimes that
    /// survive to the end get a trailing rename back to their original name.
    fn dummy_hygiene(&mut self) -> Result<bool> {
        let mut changed = false;
        'outer: loop {
            let used_elsewhere = self.name_usage();
            for i in 0..self.gens.len() {
                if !self.gens[i].kind().is_disconnection() {
                    continue;
                }
                for born in self.gens[i].lower_names().into_iter().cloned().collect::<Vec<_>>() {
                    let (death, survives) = self.lifetime_end(i, &born);
                    let needs = used_elsewhere.get(&born).copied().unwrap_or(0) > 1
                        || self.rename_targets().contains(&born)
                        || (survives && !self.renamed_sources().contains(&born));
                    if !needs {
                        continue;
                    }
                    let fresh = self.fresh.next();
                    let mut new_gens = self.gens.clone();
                    // Steps past the back-rename see the original name again,
                    // so the substitution stops there.
                    let insert_at = {
                        let (rs, _) = self.rename_segment();
                        new_gens[rs..]
                            .iter()
                            .position(|g| g.kind() == StepKind::Touch)
                            .map(|p| rs + p)
                            .unwrap_or(new_gens.len())
                    };
                    let stop = death.unwrap_or(insert_at);
                    let map: BTreeMap<VertexName, VertexName> =
                        [(born.clone(), fresh.clone())].into_iter().collect();
                    for g in new_gens[i..stop].iter_mut() {
                        *g = g.rename_names(&map);
                    }
                    if let Some(d) = death {
                        if let Generator::Rename(_, tgt) = new_gens[d].clone() {
                            new_gens[d] = rename(&fresh, &tgt);
                        } else {
                            new_gens[d] = new_gens[d].rename_names(&map);
                        }
                    } else if survives {
                        new_gens.insert(insert_at, rename(&fresh, &born));
                    }
                    if !self.try_replace(0, self.gens.len(), new_gens)? {
                        return Err(Error::Internal("dummy renaming does not evaluate".into()));
                    }
                    changed = true;
                    continue 'outer;
                }
            }
            return Ok(changed);
        }
    }

    /// How many distinct lifetimes use each name (birth by disconnection or
    /// rename target, plus the domain).
    fn name_usage(&self) -> BTreeMap<VertexName, usize> {
        let mut counts: BTreeMap<VertexName, usize> = BTreeMap::new();
        for n in self.trace[0].names() {
            *counts.entry(n.clone()).or_default() += 1;
        }
        for g in &self.gens {
            if g.kind().is_disconnection() {
                for n in g.lower_names() {
                    *counts.entry(n.clone()).or_default() += 1;
                }
            }
            if let Generator::Rename(_, b) = g {
                *counts.entry(b.clone()).or_default() += 1;
            }
        }
        counts
    }

    fn rename_targets(&self) -> BTreeSet<VertexName> {
        self.gens
            .iter()
            .filter_map(|g| match g {
                Generator::Rename(_, b) => Some(b.clone()),
                _ => None,
            })
            .collect()
    }

    fn renamed_sources(&self) -> BTreeSet<VertexName> {
        self.gens
            .iter()
            .filter_map(|g| match g {
                Generator::Rename(a, _) => Some(a.clone()),
                _ => None,
            })
            .collect()
    }

    /// Where the lifetime of the name born at `birth` ends: the index of the
    /// generator consuming or renaming it, or `None` with a survival flag.
    fn lifetime_end(&self, birth: usize, name: &VertexName) -> (Option<usize>, bool) {
        for (k, g) in self.gens.iter().enumerate().skip(birth + 1) {
            match g {
                Generator::Rename(a, _) if a == name => return (Some(k), false),
                g if g.kind().is_connection() && g.lower_names().iter().any(|n| *n == name) => {
                    return (Some(k), false)
                }
                _ => {}
            }
        }
        (None, true)
    }

    /// Cancels do/undo pairs: same-vertex ionize against its inverse, then
    /// same-pair cleaves and releases, then inert ion separations against
    /// their inverses. Returns true when a pair was removed.
    fn cancel_pairs(&mut self) -> Result<bool> {
        // Ionize / its inverse on the same vertex.
        if let Some((i, j)) = self.find_pair(|d, c| {
            matches!((d, c), (
                Generator::Ionize { bar: false, u, .. },
                Generator::Ionize { bar: true, u: w, .. },
            ) if u == w)
        }) {
            self.cancel_at(i, j)?;
            return Ok(true);
        }
        // Release / its inverse on the same vertex.
        if let Some((i, j)) = self.find_pair(|d, c| {
            matches!((d, c), (
                Generator::Release { bar: false, u, .. },
                Generator::Release { bar: true, u: w, .. },
            ) if u == w)
        }) {
            self.cancel_at(i, j)?;
            return Ok(true);
        }
        // Cleave / its inverse on the same vertex pair (either orientation).
        if let Some((i, j)) = self.find_pair(|d, c| {
            matches!((d, c), (
                Generator::Cleave { bar: false, u, v, .. },
                Generator::Cleave { bar: true, u: w, v: z, .. },
            ) if (w == u && z == v) || (w == v && z == u))
        }) {
            self.cancel_at(i, j)?;
            return Ok(true);
        }
        // Separate / its inverse on the same pair, when no charge activity
        // touches the pair.
        let charged: BTreeSet<VertexName> = self
            .gens
            .iter()
            .filter_map(|g| match g {
                Generator::Release { u, .. } | Generator::Ionize { u, .. } => Some(u.clone()),
                _ => None,
            })
            .collect();
        if let Some((i, j)) = self.find_pair(|d, c| {
            matches!((d, c), (
                Generator::Separate { bar: false, u, v },
                Generator::Separate { bar: true, u: w, v: z },
            ) if w == u && z == v && !charged.contains(v))
        }) {
            self.cancel_at(i, j)?;
            return Ok(true);
        }
        Ok(false)
    }

    fn find_pair<F>(&self, matches: F) -> Option<(usize, usize)>
    where
        F: Fn(&Generator, &Generator) -> bool,
    {
        for i in 0..self.gens.len() {
            if !self.gens[i].kind().is_disconnection() {
                continue;
            }
            for j in (i + 1)..self.gens.len() {
                if self.gens[j].kind().is_connection() && matches(&self.gens[i], &self.gens[j]) {
                    return Some((i, j));
                }
            }
        }
        None
    }

    /// Brings the disconnection at `i` adjacent to the connection at `j` and
    /// replaces the pair by its touch-and-rename residue.
    fn cancel_at(&mut self, i: usize, j: usize) -> Result<()> {
        let mut i = i;
        let mut j = j;
        let mut budget = (self.gens.len() + 2) * (self.gens.len() + 2);
        while i + 1 < j {
            if budget == 0 {
                return Err(Error::Internal("pair cancellation did not converge".into()));
            }
            budget -= 1;
            // Try to move the disconnection right across its neighbour.
            let l = self.gens[i].clone();
            let t = self.gens[i + 1].clone();
            let row = if t.kind() == l.kind() {
                Some(same_block_swap(&l, &t))
            } else {
                pass_rewrite(&l, &t, &mut self.fresh)
            };
            let moved = match row {
                Some(row) => {
                    let shift = row.len() as isize - 2;
                    let new_i = row.iter().position(|g| *g == l);
                    if self.try_replace(i, i + 2, row)? {
                        let Some(p) = new_i else {
                            return Ok(()); // the pair vanished on its own
                        };
                        i += p;
                        j = (j as isize + shift) as usize;
                        true
                    } else {
                        false
                    }
                }
                None => false,
            };
            if moved {
                continue;
            }
            // The neighbour blocks the move: push the neighbour itself right,
            // past the connection.
            let mut k = i + 1;
            let mut pushed = false;
            while k + 1 <= j {
                let l2 = self.gens[k].clone();
                let t2 = self.gens[k + 1].clone();
                let row2 = if t2.kind() == l2.kind() {
                    Some(same_block_swap(&l2, &t2))
                } else {
                    pass_rewrite(&l2, &t2, &mut self.fresh)
                };
                let Some(row2) = row2 else { break };
                let was_connection = k + 1 == j;
                let shift = row2.len() as isize - 2;
                let obstacle_at = row2.iter().position(|g| *g == l2);
                if !self.try_replace(k, k + 2, row2)? {
                    break;
                }
                pushed = true;
                if was_connection {
                    j = k; // the connection moved left across the obstacle
                    break;
                }
                j = (j as isize + shift) as usize;
                match obstacle_at {
                    Some(p) if p > 0 => k += p,
                    // The obstacle was absorbed or transformed away; retry
                    // moving the disconnection.
                    _ => break,
                }
            }
            if !pushed {
                return Err(Error::Internal(
                    "a do/undo pair could not be brought together".into(),
                ));
            }
        }
        let residue = self.cancel_row(&self.gens[i].clone(), &self.gens[j].clone())?;
        if !self.try_replace(i, j + 1, residue)? {
            return Err(Error::Internal("pair cancellation does not evaluate".into()));
        }
        Ok(())
    }

    /// The touch-and-rename residue of an adjacent do/undo pair.
    fn cancel_row(&mut self, d: &Generator, c: &Generator) -> Result<Vec<Generator>> {
        use Generator::*;
        Ok(match (d, c) {
            (Separate { bar: false, u, v }, Separate { bar: true, .. }) => {
                vec![touch(u), touch(v)]
            }
            (Ionize { bar: false, u, v }, Ionize { bar: true, v: z, .. }) => {
                if v == z {
                    vec![touch(u), touch(v)]
                } else {
                    let k = self.fresh.next();
                    vec![touch(u), rename(v, &k), rename(z, v), rename(&k, z)]
                }
            }
            (Release { bar: false, u, a, b }, Release { bar: true, a: c2, b: d2, .. }) => {
                self.subscript_residue(vec![touch(u)], (a, b), (c2, d2))
            }
            (Cleave { bar: false, u, v, a, b }, Cleave { bar: true, u: w, a: c2, b: d2, .. }) => {
                let (c2, d2) = if w == u { (c2, d2) } else { (d2, c2) };
                self.subscript_residue(vec![touch(u), touch(v)], (a, b), (c2, d2))
            }
            _ => {
                return Err(Error::Internal(format!(
                    "no cancellation residue for {d} against {c}"
                )))
            }
        })
    }

    fn subscript_residue(
        &mut self,
        mut out: Vec<Generator>,
        born: (&VertexName, &VertexName),
        used: (&VertexName, &VertexName),
    ) -> Vec<Generator> {
        let (a, b) = born;
        let (c, d) = used;
        if c == a && d == b {
            // nothing to rename
        } else if d == b {
            out.push(rename(c, a));
        } else if c == a {
            out.push(rename(d, b));
        } else {
            let j = self.fresh.next();
            out.push(rename(c, &j));
            out.push(rename(d, b));
            out.push(rename(&j, a));
        }
        out
    }

    /// Enforces the no-capture condition between connections and later
    /// renames: when a later rename recreates a name consumed by a
    /// connection and the two vertices are interchangeable at the
    /// connection, the connection absorbs the rename.
    fn absorb_capturing_renames(&mut self) -> Result<bool> {
        for i in 0..self.gens.len() {
            if !self.gens[i].kind().is_connection() {
                continue;
            }
            let lows: Vec<VertexName> =
                self.gens[i].lower_names().into_iter().cloned().collect();
            for x in &lows {
                for j in (i + 1)..self.gens.len() {
                    let Generator::Rename(z, tgt) = &self.gens[j] else { continue };
                    if tgt != x {
                        continue;
                    }
                    let (z, _tgt) = (z.clone(), tgt.clone());
                    let map: BTreeMap<VertexName, VertexName> =
                        [(x.clone(), z.clone())].into_iter().collect();
                    let substituted = self.gens[i].rename_names(&map);
                    if substituted.apply(&self.trace[i], self.vt).is_err() {
                        continue; // not interchangeable: condition already holds
                    }
                    let back: BTreeMap<VertexName, VertexName> =
                        [(z.clone(), x.clone())].into_iter().collect();
                    let mut replacement = vec![substituted];
                    for g in &self.gens[i + 1..j] {
                        replacement.push(g.rename_names(&back));
                    }
                    if self.try_replace(i, j + 1, replacement)? {
                        return Ok(true);
                    }
                }
            }
        }
        Ok(false)
    }

    /// Rewrites the rename segment into renaming form and re-sorts emitted
    /// touches into the touch segment.
    fn apply_renaming_form(&mut self) -> Result<()> {
        let (start, end) = self.rename_segment();
        let pairs: Vec<(VertexName, VertexName)> = self.gens[start..end]
            .iter()
            .map(|g| match g {
                Generator::Rename(a, b) => (a.clone(), b.clone()),
                _ => unreachable!("rename segment holds renames"),
            })
            .collect();
        if pairs.is_empty() {
            return Ok(());
        }
        let h = self.trace[start].clone();
        let (form, touched) = renaming_form_of(&pairs, &h, &mut self.fresh)?;
        let mut replacement = form.to_gens();
        replacement.extend(touched.iter().map(|u| Generator::Touch(u.clone())));
        if !self.try_replace(start, end, replacement)? {
            return Err(Error::Internal("renaming form does not evaluate".into()));
        }
        // Emitted touches sit before the touch block; move them right.
        self.tidy_touch_order()
    }

    /// Restores the rename-then-touch segment order after insertions.
    fn tidy_touch_order(&mut self) -> Result<()> {
        loop {
            let mut changed = false;
            for i in 0..self.gens.len().saturating_sub(1) {
                if self.gens[i].kind() == StepKind::Touch
                    && self.gens[i + 1].kind() == StepKind::Rename
                {
                    let row = match (&self.gens[i], &self.gens[i + 1]) {
                        (Generator::Touch(u), Generator::Rename(w, _)) if u == w => {
                            vec![self.gens[i + 1].clone()]
                        }
                        _ => vec![self.gens[i + 1].clone(), self.gens[i].clone()],
                    };
                    if !self.try_replace(i, i + 2, row)? {
                        return Err(Error::Internal("touch could not cross a rename".into()));
                    }
                    changed = true;
                    break;
                }
            }
            if !changed {
                return Ok(());
            }
        }
    }

    /// Deduplicates touches and absorbs touches of names that occur in
    /// disconnections, connections, or renames.
    fn absorb_touches(&mut self) -> Result<bool> {
        let ice = IceForm::of(&self.term())
            .ok_or_else(|| Error::Internal("term left staged order".into()))?;
        let mut absorbing: BTreeSet<VertexName> = ice.active_names();
        absorbing.extend(ice.introduced_names());
        absorbing.extend(ice.consumed_names());
        for g in ice.renames.iter() {
            if let Generator::Rename(_, b) = g {
                absorbing.insert(b.clone());
            }
        }
        let mut seen: BTreeSet<VertexName> = BTreeSet::new();
        let mut changed = false;
        let mut i = 0;
        while i < self.gens.len() {
            if let Generator::Touch(u) = &self.gens[i] {
                let u = u.clone();
                if absorbing.contains(&u) || !seen.insert(u) {
                    if !self.try_replace(i, i + 1, vec![])? {
                        return Err(Error::Internal("touch absorption does not evaluate".into()));
                    }
                    changed = true;
                    continue;
                }
            }
            i += 1;
        }
        Ok(changed)
    }

    fn normalize(&mut self) -> Result<()> {
        self.run_passes()?;
        let mut rounds = 4 * self.gens.len() + 8;
        loop {
            if rounds == 0 {
                return Err(Error::Internal("normalization did not converge".into()));
            }
            rounds -= 1;
            let mut changed = false;
            changed |= self.cancel_pairs()?;
            if changed {
                self.run_passes()?;
            }
            changed |= self.dummy_hygiene()?;
            self.apply_renaming_form()?;
            changed |= self.absorb_touches()?;
            changed |= self.absorb_capturing_renames()?;
            if changed {
                self.run_passes()?;
            } else {
                return Ok(());
            }
        }
    }
}

/// Splits a well-typed sequence of renames into renaming form plus the
/// touches it sheds. `h` is the graph the sequence starts from.
fn renaming_form_of(
    pairs: &[(VertexName, VertexName)],
    h: &ChemGraph,
    fresh: &mut FreshNames,
) -> Result<(RenamingForm, Vec<VertexName>)> {
    let mut pending: Vec<(VertexName, VertexName)> = pairs.to_vec();
    let mut touched: BTreeSet<VertexName> = BTreeSet::new();
    let mut budget = (pairs.len() + 2) * (pairs.len() + 2);
    'restart: loop {
        if budget == 0 {
            return Err(Error::Internal("renaming form did not converge".into()));
        }
        budget -= 1;
        let mut primary: Vec<(VertexName, VertexName)> = Vec::new();
        let mut secondary: Vec<(VertexName, VertexName)> = Vec::new();
        for (idx, (a, b)) in pending.iter().enumerate() {
            let (a, b) = (a.clone(), b.clone());
            if a == b {
                touched.insert(a.clone());
                pending.remove(idx);
                continue 'restart;
            }
            // A touch on the source is absorbed by the rename itself.
            touched.remove(&a);
            let in_a = |x: &VertexName, p: &[(VertexName, VertexName)]| {
                p.iter().any(|(s, _)| s == x)
            };
            let in_b = |x: &VertexName, p: &[(VertexName, VertexName)]| {
                p.iter().any(|(_, t)| t == x)
            };
            // If b is a dummy already in use, refresh that dummy first.
            if secondary.iter().any(|(c, _)| *c == b) {
                let nb = fresh.next();
                for (_, t) in primary.iter_mut() {
                    if *t == b {
                        *t = nb.clone();
                    }
                }
                for (s, _) in secondary.iter_mut() {
                    if *s == b {
                        *s = nb.clone();
                    }
                }
                let mut rebuilt: Vec<(VertexName, VertexName)> = primary;
                rebuilt.extend(secondary);
                rebuilt.extend(pending[idx..].iter().cloned());
                pending = rebuilt;
                continue 'restart;
            }
            let a_in_primary_src = in_a(&a, &primary);
            let a_in_primary_tgt = in_b(&a, &primary);
            if !a_in_primary_src && !a_in_primary_tgt && !in_a(&a, &secondary) {
                if !in_a(&b, &primary) {
                    primary.push((a, b));
                    continue;
                }
                // b is a primary source: either defer through a dummy or
                // fold by symmetry when the vertices are interchangeable.
                let (src, tgt) = primary
                    .iter()
                    .find(|(s, _)| *s == b)
                    .cloned()
                    .expect("source b located");
                if vertex_signature(h, &a) == vertex_signature(h, &b) {
                    // b's rename becomes a's rename; b stays put.
                    let mut rebuilt: Vec<(VertexName, VertexName)> = Vec::new();
                    for p in &primary {
                        if *p == (src.clone(), tgt.clone()) {
                            rebuilt.push((a.clone(), tgt.clone()));
                        } else {
                            rebuilt.push(p.clone());
                        }
                    }
                    touched.insert(b.clone());
                    rebuilt.extend(secondary);
                    rebuilt.extend(pending[idx + 1..].iter().cloned());
                    pending = rebuilt;
                    continue 'restart;
                }
                let c = fresh.next();
                primary.push((a, c.clone()));
                secondary.push((c, b));
                continue;
            }
            if a_in_primary_tgt || in_b(&a, &secondary) {
                // a is a current dummy or target: merge into its producer.
                let mut rebuilt: Vec<(VertexName, VertexName)> = Vec::new();
                let mut merged = false;
                for p in primary.iter().chain(secondary.iter()) {
                    if !merged && p.1 == a {
                        rebuilt.push((p.0.clone(), b.clone()));
                        merged = true;
                    } else {
                        rebuilt.push(p.clone());
                    }
                }
                rebuilt.extend(pending[idx + 1..].iter().cloned());
                pending = rebuilt;
                continue 'restart;
            }
            // a is a primary source already: its vertex is gone, so the term
            // was ill-typed.
            return Err(Error::Internal("rename source reused after removal".into()));
        }
        // Drop self-renames introduced by merging.
        if let Some(pos) = primary.iter().position(|(s, t)| s == t) {
            touched.insert(primary[pos].0.clone());
            let mut rebuilt = primary;
            rebuilt.remove(pos);
            rebuilt.extend(secondary);
            pending = rebuilt;
            continue 'restart;
        }
        let form = RenamingForm { primary, secondary };
        return Ok((form, touched.into_iter().collect()));
    }
}

/// Rewrites a term into staged block order. The result performs the same
/// reaction as the input.
pub fn to_ice_form(t: &Term, dom: &ChemGraph, vt: &ValenceTable) -> Result<Term> {
    let mut rw = Rewriter::new(t, dom, vt, false)?;
    rw.run_passes()?;
    Ok(rw.term())
}

/// As [`to_ice_form`], verifying after every rewrite that the reaction is
/// unchanged.
pub fn to_ice_form_checked(t: &Term, dom: &ChemGraph, vt: &ValenceTable) -> Result<Term> {
    let mut rw = Rewriter::new(t, dom, vt, true)?;
    rw.run_passes()?;
    Ok(rw.term())
}

/// Splits a well-typed sequence of renames into renaming form and the
/// touches it sheds.
pub fn to_renaming_form(
    renames: &[Generator],
    dom: &ChemGraph,
    vt: &ValenceTable,
) -> Result<(RenamingForm, Vec<VertexName>)> {
    let mut pairs = Vec::new();
    for g in renames {
        match g {
            Generator::Rename(a, b) => pairs.push((a.clone(), b.clone())),
            other => {
                return Err(Error::Precondition(format!(
                    "renaming form takes renames only, found {other}"
                )))
            }
        }
    }
    term_of(renames.to_vec()).eval(dom, vt)?;
    let mut fresh = FreshNames::new(dom, renames);
    renaming_form_of(&pairs, dom, &mut fresh)
}

/// Rewrites a term into its canonical normal form.
pub fn to_normal_form(t: &Term, dom: &ChemGraph, vt: &ValenceTable) -> Result<Term> {
    normal_form_inner(t, dom, vt, false)
}

/// As [`to_normal_form`], verifying every rewrite against the reaction.
pub fn to_normal_form_checked(t: &Term, dom: &ChemGraph, vt: &ValenceTable) -> Result<Term> {
    normal_form_inner(t, dom, vt, true)
}

fn normal_form_inner(
    t: &Term,
    dom: &ChemGraph,
    vt: &ValenceTable,
    checked: bool,
) -> Result<Term> {
    let mut rw = Rewriter::new(t, dom, vt, checked)?;
    rw.normalize()?;
    let out = canonicalize(&rw.term(), dom, vt)?;
    let failures = check_normal_form(&out, dom, vt)?;
    if !failures.is_empty() {
        return Err(Error::Internal(format!(
            "normalization left conditions unmet: {}",
            failures.join("; ")
        )));
    }
    Ok(out)
}

/// Analyzes a term as a normal form, returning its decomposition, without
/// checking the cleanliness conditions.
pub fn analyze(t: &Term, dom: &ChemGraph, vt: &ValenceTable) -> Result<NormalForm> {
    t.eval(dom, vt)?;
    let ice = IceForm::of(t).ok_or_else(|| {
        Error::Precondition("term is not in staged block order".into())
    })?;
    let pairs: Vec<(VertexName, VertexName)> = ice
        .renames
        .iter()
        .map(|g| match g {
            Generator::Rename(a, b) => (a.clone(), b.clone()),
            _ => unreachable!(),
        })
        .collect();
    // Secondary renames start at the first pair whose source is an earlier
    // target (a dummy freed by the primary block).
    let mut split = pairs.len();
    let mut targets: BTreeSet<&VertexName> = BTreeSet::new();
    for (i, (a, _)) in pairs.iter().enumerate() {
        if targets.contains(a) {
            split = i;
            break;
        }
        targets.insert(&pairs[i].1);
    }
    let renaming = RenamingForm {
        primary: pairs[..split].to_vec(),
        secondary: pairs[split..].to_vec(),
    };
    let touched = ice
        .touches
        .iter()
        .filter_map(|g| match g {
            Generator::Touch(u) => Some(u.clone()),
            _ => None,
        })
        .collect();
    Ok(NormalForm {
        introduced: ice.introduced_names(),
        consumed: ice.consumed_names(),
        active: ice.active_names(),
        touched,
        renaming,
        ice,
    })
}

/// Checks the normal-form conditions, returning a description of every
/// failure (empty means the term is in normal form).
pub fn check_normal_form(t: &Term, dom: &ChemGraph, vt: &ValenceTable) -> Result<Vec<String>> {
    let trace = t.eval_trace(dom, vt)?;
    let mut out = Vec::new();
    let Some(ice) = IceForm::of(t) else {
        return Ok(vec!["generators are not in staged block order".into()]);
    };
    let nf = analyze(t, dom, vt)?;

    // Renaming-form structure.
    let rename_start = t
        .gens()
        .iter()
        .position(|g| g.kind() == StepKind::Rename)
        .unwrap_or(t.gens().len());
    out.extend(nf.renaming.violations(&trace[rename_start]));

    // Touches are unique and inert.
    let mut count = BTreeMap::new();
    for g in &ice.touches {
        if let Generator::Touch(u) = g {
            *count.entry(u.clone()).or_insert(0usize) += 1;
        }
    }
    for (u, c) in count {
        if c > 1 {
            out.push(format!("vertex {u} is touched more than once"));
        }
    }
    let mut busy: BTreeSet<VertexName> = nf.active.clone();
    busy.extend(nf.renaming.sources());
    busy.extend(nf.renaming.targets());
    busy.extend(nf.renaming.dummy_sources());
    busy.extend(nf.renaming.final_targets());
    busy.extend(nf.introduced.iter().cloned());
    busy.extend(nf.consumed.iter().cloned());
    for u in &nf.touched {
        if busy.contains(u) {
            out.push(format!("touched vertex {u} also takes part in another step"));
        }
    }

    // Dummy discipline: introduced-but-not-consumed names are renamed away,
    // and no rename target reuses an introduced name.
    let surviving: BTreeSet<_> = nf.introduced.difference(&nf.consumed).cloned().collect();
    let primary_sources = nf.renaming.sources();
    let final_targets = nf.renaming.final_targets();
    for a in &surviving {
        if !primary_sources.contains(a) || final_targets.contains(a) {
            out.push(format!("introduced marker {a} keeps its birth name"));
        }
    }
    let mut all_targets = nf.renaming.targets();
    all_targets.extend(nf.renaming.final_targets());
    for a in &nf.introduced {
        if all_targets.contains(a) {
            out.push(format!("a rename recreates the introduced marker name {a}"));
        }
    }

    // No connection may be interchangeable with a later rename's source.
    for (i, g) in t.gens().iter().enumerate() {
        if !g.kind().is_connection() {
            continue;
        }
        for x in g.lower_names() {
            for later in &t.gens()[i + 1..] {
                let Generator::Rename(z, tgt) = later else { continue };
                if tgt != x {
                    continue;
                }
                let map: BTreeMap<VertexName, VertexName> =
                    [(x.clone(), z.clone())].into_iter().collect();
                if g.rename_names(&map).apply(&trace[i], vt).is_ok() {
                    out.push(format!(
                        "connection {g} could absorb the later rename of {z}"
                    ));
                }
            }
        }
    }

    // No do/undo pairs.
    for d in &ice.cleavages {
        if let Generator::Cleave { u, v, .. } = d {
            for c in &ice.cleavage_inverses {
                if let Generator::Cleave { u: w, v: z, .. } = c {
                    if (w == u && z == v) || (w == v && z == u) {
                        out.push(format!("{d} is undone by {c}"));
                    }
                }
            }
        }
    }
    for d in &ice.releases {
        if let Generator::Release { u, .. } = d {
            for c in &ice.release_inverses {
                if let Generator::Release { u: w, .. } = c {
                    if w == u {
                        out.push(format!("{d} is undone by {c}"));
                    }
                }
            }
        }
    }
    for d in &ice.ionizations {
        if let Generator::Ionize { u, .. } = d {
            for c in &ice.ionization_inverses {
                if let Generator::Ionize { u: w, .. } = c {
                    if w == u {
                        out.push(format!("{d} is undone by {c}"));
                    }
                }
            }
        }
    }
    for d in &ice.separations {
        if let Generator::Separate { u, v, .. } = d {
            for c in &ice.separation_inverses {
                if let Generator::Separate { u: w, v: z, .. } = c {
                    if w == u && z == v {
                        let active = t.gens().iter().any(|g| match g {
                            Generator::Release { u: x, .. } | Generator::Ionize { u: x, .. } => {
                                x == v
                            }
                            _ => false,
                        });
                        if !active {
                            out.push(format!(
                                "{d} is undone by {c} without charge activity"
                            ));
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// The names treated as dummies for canonical renumbering: introduced marker
/// names plus deferred rename names.
fn dummy_names(nf: &NormalForm) -> BTreeSet<VertexName> {
    let mut set = nf.introduced.clone();
    set.extend(nf.renaming.dummy_sources());
    set
}


/// Canonical representative of a normal form: cleave orientation fixed,
/// per-vertex groups re-paired in sorted order, blocks sorted, and dummy
/// names renumbered in first-occurrence order.
pub fn canonicalize(t: &Term, dom: &ChemGraph, vt: &ValenceTable) -> Result<Term> {
    let nf = analyze(t, dom, vt)?;
    let mut ice = nf.ice.clone();

    // Orient cleaves with the lexicographically smaller vertex first.
    for block in [&mut ice.cleavages, &mut ice.cleavage_inverses] {
        for g in block.iter_mut() {
            if let Generator::Cleave { bar, u, v, a, b } = g {
                if u > v {
                    *g = Generator::Cleave {
                        bar: *bar,
                        u: v.clone(),
                        v: u.clone(),
                        a: b.clone(),
                        b: a.clone(),
                    };
                }
            }
        }
    }

    // Re-pair subscript groups: for generators of the same kind on the same
    // vertices, the introduced/consumed pairs may be redistributed; sort
    // both columns and zip.
    regroup_cleave(&mut ice.cleavages);
    regroup_cleave(&mut ice.cleavage_inverses);
    regroup_release(&mut ice.releases);
    regroup_release(&mut ice.release_inverses);

    // Re-pair primary renames whose sources are interchangeable.
    let rename_start_graph = {
        let trace = t.eval_trace(dom, vt)?;
        let pos = t
            .gens()
            .iter()
            .position(|g| g.kind() == StepKind::Rename)
            .unwrap_or(t.gens().len());
        trace[pos].clone()
    };
    let mut renaming = nf.renaming.clone();
    {
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, (a, _)) in renaming.primary.iter().enumerate() {
            let key = format!("{:?}", vertex_signature(&rename_start_graph, a));
            groups.entry(key).or_default().push(i);
        }
        for idxs in groups.values() {
            let mut sources: Vec<VertexName> =
                idxs.iter().map(|&i| renaming.primary[i].0.clone()).collect();
            let mut targets: Vec<VertexName> =
                idxs.iter().map(|&i| renaming.primary[i].1.clone()).collect();
            sources.sort();
            targets.sort();
            for (k, &i) in idxs.iter().enumerate() {
                renaming.primary[i] = (sources[k].clone(), targets[k].clone());
            }
        }
        renaming.primary.sort();
        renaming.secondary.sort();
    }
    // Dummy renumbering targets must not collide with any fixed name.
    let dummies = dummy_names(&nf);
    let mut reserved: BTreeSet<VertexName> = dom.names().cloned().collect();
    for g in t.gens() {
        for n in g.names() {
            if !dummies.contains(n) {
                reserved.insert(n.clone());
            }
        }
    }

    fn sort_blocks(ice: &mut IceForm) {
        for block in [
            &mut ice.separations,
            &mut ice.cleavages,
            &mut ice.releases,
            &mut ice.ionizations,
            &mut ice.ionization_inverses,
            &mut ice.release_inverses,
            &mut ice.cleavage_inverses,
            &mut ice.separation_inverses,
        ] {
            block.sort_by_key(|g| g.to_string());
        }
    }

    // Sort every block, renumber dummies in first-occurrence order, and
    // repeat to a fixed point; a cycle is broken by taking the smallest form
    // seen. The initial sort uses the incoming dummy names, so distinct
    // numberings of the input can steer ties distinctly.
    let mut primary = renaming.primary.clone();
    let mut secondary = renaming.secondary.clone();
    let mut cur_dummies = dummies;
    let mut best: Option<(String, Term)> = None;
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for _ in 0..8 {
        sort_blocks(&mut ice);
        primary.sort();
        secondary.sort();
        ice.renames = RenamingForm {
            primary: primary.clone(),
            secondary: secondary.clone(),
        }
        .to_gens();
        ice.touches.sort_by_key(|g| g.to_string());
        let ordered = ice.to_term();
        let mut numbering: BTreeMap<VertexName, VertexName> = BTreeMap::new();
        let mut next = 1usize;
        for g in ordered.gens() {
            for n in g.names() {
                if cur_dummies.contains(n) && !numbering.contains_key(n) {
                    loop {
                        let cand = format!("_{next}");
                        next += 1;
                        if !reserved.contains(&cand) {
                            numbering.insert(n.clone(), cand);
                            break;
                        }
                    }
                }
            }
        }
        let renumbered: Vec<Generator> = ordered
            .gens()
            .iter()
            .map(|g| g.rename_names(&numbering))
            .collect();
        let candidate = term_of(renumbered);
        let key = candidate.to_string();
        ice = IceForm::of(&candidate)
            .ok_or_else(|| Error::Internal("canonical ordering left staged order".into()))?;
        let remap = |n: &VertexName| numbering.get(n).cloned().unwrap_or_else(|| n.clone());
        primary = primary.iter().map(|(x, y)| (remap(x), remap(y))).collect();
        secondary = secondary.iter().map(|(x, y)| (remap(x), remap(y))).collect();
        cur_dummies = cur_dummies.iter().map(|d| remap(d)).collect();
        if best.as_ref().is_none_or(|(bk, _)| key < *bk) {
            best = Some((key.clone(), candidate));
        }
        if !seen.insert(key) {
            break;
        }
    }
    let (_, out) = best.expect("at least one canonical candidate");
    out.eval(dom, vt)?;
    Ok(out)
}

fn regroup_cleave(block: &mut [Generator]) {
    let mut groups: BTreeMap<(bool, VertexName, VertexName), Vec<usize>> = BTreeMap::new();
    for (i, g) in block.iter().enumerate() {
        if let Generator::Cleave { bar, u, v, .. } = g {
            groups.entry((*bar, u.clone(), v.clone())).or_default().push(i);
        }
    }
    for idxs in groups.values() {
        let mut firsts = Vec::new();
        let mut seconds = Vec::new();
        for &i in idxs {
            if let Generator::Cleave { a, b, .. } = &block[i] {
                firsts.push(a.clone());
                seconds.push(b.clone());
            }
        }
        firsts.sort();
        seconds.sort();
        for (k, &i) in idxs.iter().enumerate() {
            if let Generator::Cleave { bar, u, v, .. } = &block[i] {
                block[i] = Generator::Cleave {
                    bar: *bar,
                    u: u.clone(),
                    v: v.clone(),
                    a: firsts[k].clone(),
                    b: seconds[k].clone(),
                };
            }
        }
    }
}

fn regroup_release(block: &mut [Generator]) {
    let mut groups: BTreeMap<(bool, VertexName), Vec<usize>> = BTreeMap::new();
    for (i, g) in block.iter().enumerate() {
        if let Generator::Release { bar, u, .. } = g {
            groups.entry((*bar, u.clone())).or_default().push(i);
        }
    }
    for idxs in groups.values() {
        let mut firsts = Vec::new();
        let mut seconds = Vec::new();
        for &i in idxs {
            if let Generator::Release { a, b, .. } = &block[i] {
                firsts.push(a.clone());
                seconds.push(b.clone());
            }
        }
        firsts.sort();
        seconds.sort();
        for (k, &i) in idxs.iter().enumerate() {
            if let Generator::Release { bar, u, .. } = &block[i] {
                block[i] = Generator::Release {
                    bar: *bar,
                    u: u.clone(),
                    a: firsts[k].clone(),
                    b: seconds[k].clone(),
                };
            }
        }
    }
}

/// Syntactic equivalence of two normal forms: canonical representatives
/// compared directly, with a bounded search over dummy numberings as a
/// fallback when the reactions agree but the greedy canonical forms differ.
pub fn nf_equivalent(t: &Term, s: &Term, dom: &ChemGraph, vt: &ValenceTable) -> Result<bool> {
    let ct = canonicalize(t, dom, vt)?;
    let cs = canonicalize(s, dom, vt)?;
    if ct == cs {
        return Ok(true);
    }
    if translate(t, dom, vt)? != translate(s, dom, vt)? {
        return Ok(false);
    }
    // Bounded fallback: enumerate dummy numberings on both sides and look
    // for a common representative.
    let variants = |term: &Term| -> Result<BTreeSet<String>> {
        let nf = analyze(term, dom, vt)?;
        let dummies: Vec<VertexName> = dummy_names(&nf).into_iter().collect();
        let mut out = BTreeSet::new();
        if dummies.len() > 6 {
            let c = canonicalize(term, dom, vt)?;
            out.insert(c.to_string());
            return Ok(out);
        }
        let mut order: Vec<usize> = (0..dummies.len()).collect();
        permute(&mut order, 0, &mut |perm| {
            let mapping: BTreeMap<VertexName, VertexName> = perm
                .iter()
                .enumerate()
                .map(|(slot, &d)| (dummies[d].clone(), format!("_{}", slot + 1)))
                .collect();
            let renamed: Vec<Generator> = term
                .gens()
                .iter()
                .map(|g| g.rename_names(&mapping))
                .collect();
            if let Ok(c) = canonicalize(&term_of(renamed), dom, vt) {
                out.insert(c.to_string());
            }
        });
        Ok(out)
    };
    let vt_set = variants(t)?;
    let vs_set = variants(s)?;
    Ok(!vt_set.is_disjoint(&vs_set))
}

fn permute<F: FnMut(&[usize])>(order: &mut Vec<usize>, k: usize, f: &mut F) {
    if k == order.len() {
        f(order);
        return;
    }
    for i in k..order.len() {
        order.swap(k, i);
        permute(order, k + 1, f);
        order.swap(k, i);
    }
}

/// Decides equality of two terms of the same type: primarily by comparing
/// their reactions, cross-checked by normalizing both and comparing the
/// normal forms syntactically. The two routes must agree.
pub fn decide_equiv(t: &Term, s: &Term, dom: &ChemGraph, vt: &ValenceTable) -> Result<bool> {
    let rt = translate(t, dom, vt)?;
    let rs = translate(s, dom, vt)?;
    let primary = rt == rs;
    let nt = to_normal_form(t, dom, vt)?;
    let ns = to_normal_form(s, dom, vt)?;
    let secondary = nf_equivalent(&nt, &ns, dom, vt)?;
    if primary != secondary {
        return Err(Error::Internal(format!(
            "equality decision paths disagree on `{t}` vs `{s}`: reactions say {primary}, normal forms say {secondary}"
        )));
    }
    Ok(primary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::AtomLabel;
    use crate::samples;

    fn vt() -> ValenceTable {
        ValenceTable::default()
    }

    fn term(text: &str) -> Term {
        Term::parse(text).expect("term parses")
    }

    const ESTER_STEPS: &str = "C(z,u|a,b);C(v,w|c,d);C(r,u|i,j);C(r,u|n,m);\
        E(v,c);E(w,d);E(z,a);E(u,b);E(r,i);E(u,j);E(r,n);E(u,m);\
        ~E(v,c);~E(w,d);~E(z,a);~E(u,b);~E(r,i);~E(u,j);~E(r,n);~E(u,m);\
        ~C(r,u|i,j);~C(r,u|n,m);~C(w,z|d,a);~C(u,v|b,c);\
        S(z);S(u);S(v);S(w);S(r)";

    const ESTER_NF: &str = "C(z,u|a,b);C(v,w|c,d);~C(w,z|d,a);~C(u,v|b,c);S(r)";

    #[test]
    fn staged_form_is_a_fixed_point_on_sorted_terms() {
        let g = samples::acyl_chloride_and_hydroxyl();
        let t = term(ESTER_STEPS);
        let out = to_ice_form_checked(&t, &g, &vt()).unwrap();
        assert_eq!(out, t);
    }

    #[test]
    fn staged_form_sorts_scrambled_generators() {
        let g = samples::hydrogen_molecule();
        let t = term("S(h1);C(h1,h2|a,b)");
        let out = to_ice_form_checked(&t, &g, &vt()).unwrap();
        assert!(IceForm::of(&out).is_some(), "{out}");
        assert_eq!(
            translate(&out, &g, &vt()).unwrap(),
            translate(&t, &g, &vt()).unwrap()
        );
    }

    #[test]
    fn staged_form_cancels_reconnected_ion_pairs() {
        let mut apart = samples::sodium_chloride();
        apart
            .set_bond("na", "cl", crate::graph::BondLabel::NONE)
            .unwrap();
        let t = term("~I(na,cl);I(na,cl)");
        let out = to_ice_form_checked(&t, &apart, &vt()).unwrap();
        assert_eq!(out.to_string(), "S(na);S(cl)");
    }

    #[test]
    fn staged_form_handles_renames_of_bound_markers() {
        // The rename target collides with the ion pair member: the commute
        // must substitute the old name.
        let g = samples::sodium_chloride();
        let mut with_marker = g.clone();
        with_marker.remove_vertex("cl").unwrap();
        with_marker.add_atom("m", AtomLabel::Alpha, -1).unwrap();
        with_marker
            .set_bond("na", "m", crate::graph::BondLabel::Ionic)
            .unwrap();
        let t = term("R(m>q);I(na,q)");
        let out = to_ice_form_checked(&t, &with_marker, &vt()).unwrap();
        let ice = IceForm::of(&out).expect("staged order");
        assert_eq!(ice.separations.len(), 1);
        assert_eq!(ice.separations[0].to_string(), "I(na,m)");
    }

    #[test]
    fn renaming_form_merges_chained_renames() {
        // Two free markers: a chain a -> b -> c merges to a -> c.
        let mut g = ChemGraph::new();
        g.add_atom("x", AtomLabel::element("Na"), 1).unwrap();
        g.add_atom("a", AtomLabel::Alpha, -1).unwrap();
        g.set_bond("x", "a", crate::graph::BondLabel::Ionic).unwrap();
        let gens = vec![rename(&"a".into(), &"b".into()), rename(&"b".into(), &"c".into())];
        let (form, touched) = to_renaming_form(&gens, &g, &vt()).unwrap();
        assert_eq!(form.primary, vec![("a".to_string(), "c".to_string())]);
        assert!(form.secondary.is_empty());
        assert!(touched.is_empty());
    }

    #[test]
    fn renaming_form_replaces_self_renames_with_touches() {
        let g = samples::hydrogen_synthon();
        let gens = vec![rename(&"a".into(), &"a".into())];
        let (form, touched) = to_renaming_form(&gens, &g, &vt()).unwrap();
        assert!(form.primary.is_empty());
        assert_eq!(touched, vec!["a".to_string()]);
    }

    #[test]
    fn renaming_form_defers_swaps_through_a_dummy() {
        // Two distinguishable markers swap names: a->b requires b freed
        // first, so the result routes through a dummy.
        let g = samples::hydrogen_disconnected();
        // a1 and a2 cap different hydrogens, hence distinguishable.
        let gens = vec![
            rename(&"a1".into(), &"x".into()),
            rename(&"a2".into(), &"a1".into()),
        ];
        let (form, _) = to_renaming_form(&gens, &g, &vt()).unwrap();
        // a1 -> x stays primary; a2 -> a1 routes through a dummy, adding a
        // deferred rename.
        assert_eq!(form.primary.len(), 2, "{form:?}");
        assert_eq!(form.secondary.len(), 1, "{form:?}");
        assert!(form.violations(&g).is_empty(), "{form:?}");
    }

    #[test]
    fn renaming_form_folds_interchangeable_sources() {
        // Two isolated negative markers are interchangeable: renaming b away
        // and then a to b folds into a touch and a single rename.
        let mut g = ChemGraph::new();
        g.add_atom("na1", AtomLabel::element("Na"), 1).unwrap();
        g.add_atom("na2", AtomLabel::element("Na"), 1).unwrap();
        g.add_atom("a", AtomLabel::Alpha, -1).unwrap();
        g.add_atom("b", AtomLabel::Alpha, -1).unwrap();
        g.set_bond("na1", "a", crate::graph::BondLabel::Ionic).unwrap();
        g.set_bond("na2", "b", crate::graph::BondLabel::Ionic).unwrap();
        // a and b have different ionic partners, so NOT interchangeable.
        let gens = vec![rename(&"b".into(), &"z".into()), rename(&"a".into(), &"b".into())];
        let (form, touched) = to_renaming_form(&gens, &g, &vt()).unwrap();
        // Distinguishable markers cannot fold: a -> b defers through a dummy.
        assert_eq!(form.primary.len(), 2, "{form:?} {touched:?}");
        assert_eq!(form.secondary.len(), 1, "{form:?} {touched:?}");

        // Isolated markers with identical surroundings ARE interchangeable.
        let mut g2 = ChemGraph::new();
        g2.add_atom("a", AtomLabel::Alpha, -1).unwrap();
        g2.add_atom("b", AtomLabel::Alpha, -1).unwrap();
        let (form2, touched2) = to_renaming_form(
            &[rename(&"b".into(), &"z".into()), rename(&"a".into(), &"b".into())],
            &g2,
            &vt(),
        )
        .unwrap();
        assert_eq!(form2.primary, vec![("a".to_string(), "z".to_string())]);
        assert_eq!(touched2, vec!["b".to_string()]);
    }

    #[test]
    fn normal_form_of_the_published_sequence() {
        let g = samples::acyl_chloride_and_hydroxyl();
        let t = term(ESTER_STEPS);
        let out = to_normal_form_checked(&t, &g, &vt()).unwrap();
        // Equality with the published normal form, as normal forms.
        let published = term(ESTER_NF);
        assert!(check_normal_form(&published, &g, &vt()).unwrap().is_empty());
        assert!(nf_equivalent(&out, &canonicalize(&published, &g, &vt()).unwrap(), &g, &vt()).unwrap(),
            "got {out}");
        assert_eq!(
            translate(&out, &g, &vt()).unwrap(),
            translate(&t, &g, &vt()).unwrap()
        );
    }

    #[test]
    fn normal_form_cancels_a_cleave_pair() {
        let g = samples::hydrogen_molecule();
        let t = term("C(h1,h2|a,b);~C(h1,h2|a,b)");
        let out = to_normal_form_checked(&t, &g, &vt()).unwrap();
        assert_eq!(out.to_string(), "S(h1);S(h2)");
    }

    #[test]
    fn normal_form_cancels_mismatched_caps_with_renames() {
        // The reconnection consumes caps in the flipped orientation.
        let g = samples::hydrogen_molecule();
        let t = term("C(h1,h2|a,b);~C(h2,h1|b,a)");
        let out = to_normal_form_checked(&t, &g, &vt()).unwrap();
        assert_eq!(out.to_string(), "S(h1);S(h2)");

        // A double bond cleaved twice and reconnected crosswise: the caps
        // must be re-matched by renaming before the pairs cancel.
        let g2 = samples::sodium_carbonate();
        let t2 = term("C(c,o1|p,q);C(c,o1|r,s);~C(c,o1|p,s);~C(c,o1|r,q)");
        let out2 = to_normal_form_checked(&t2, &g2, &vt()).unwrap();
        assert_eq!(out2.to_string(), "S(c);S(o1)");
    }

    #[test]
    fn normal_form_identity_is_identity() {
        let g = samples::water();
        let out = to_normal_form_checked(&Term::identity(), &g, &vt()).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn normal_form_is_idempotent() {
        let g = samples::acyl_chloride_and_hydroxyl();
        for text in [
            ESTER_STEPS,
            "C(u,z|x,y);E(u,x)",
            "C(u,z|x,y);E(u,x);~E(u,x);S(r)",
        ] {
            let t = term(text);
            let once = to_normal_form_checked(&t, &g, &vt()).unwrap();
            let twice = to_normal_form_checked(&once, &g, &vt()).unwrap();
            assert_eq!(once, twice, "normalizing {text}");
        }
    }

    #[test]
    fn check_normal_form_flags_failures() {
        let g = samples::water();
        let dup = term("S(o);S(o)");
        assert!(!check_normal_form(&dup, &g, &vt()).unwrap().is_empty());

        let g2 = samples::hydrogen_molecule();
        let undo = term("C(h1,h2|a,b);~C(h1,h2|a,b)");
        let failures = check_normal_form(&undo, &g2, &vt()).unwrap();
        assert!(failures.iter().any(|f| f.contains("undone")), "{failures:?}");

        let published = term(ESTER_NF);
        let g3 = samples::acyl_chloride_and_hydroxyl();
        assert!(check_normal_form(&published, &g3, &vt()).unwrap().is_empty());
    }

    #[test]
    fn nf_equivalence_accepts_reordered_blocks_and_orientation() {
        let g = samples::acyl_chloride_and_hydroxyl();
        let a = term(ESTER_NF);
        let b = term("C(v,w|c,d);C(z,u|a,b);~C(u,v|b,c);~C(w,z|d,a);S(r)");
        let c = term("C(u,z|b,a);C(v,w|c,d);~C(w,z|d,a);~C(u,v|b,c);S(r)");
        assert!(nf_equivalent(&a, &b, &g, &vt()).unwrap());
        assert!(nf_equivalent(&a, &c, &g, &vt()).unwrap());
    }

    #[test]
    fn nf_equivalence_renames_dummies() {
        let g = samples::hydrogen_molecule();
        // The introduced caps keep different names on the two sides; the
        // fixed final names m and n must not be conflated.
        let s1 = term("C(h1,h2|a,b);R(a>m);R(b>n)");
        let s2 = term("C(h1,h2|c,d);R(c>m);R(d>n)");
        assert!(nf_equivalent(&s1, &s2, &g, &vt()).unwrap());
        let s3 = term("C(h1,h2|c,d);R(c>n);R(d>m)");
        assert!(!nf_equivalent(&s1, &s3, &g, &vt()).unwrap());
    }

    #[test]
    fn decide_equiv_published_sequence_against_normal_form() {
        let g = samples::acyl_chloride_and_hydroxyl();
        assert!(decide_equiv(&term(ESTER_STEPS), &term(ESTER_NF), &g, &vt()).unwrap());
    }

    #[test]
    fn decide_equiv_distinguishes_touches() {
        let g = samples::hydrogen_molecule();
        assert!(!decide_equiv(&term("S(h1)"), &term("S(h2)"), &g, &vt()).unwrap());
        let t = term("S(h1)");
        assert!(decide_equiv(&t, &t.dagger().dagger(), &g, &vt()).unwrap());
    }

    #[test]
    fn decide_equiv_sees_through_detours() {
        let g = samples::hydrogen_molecule();
        let direct = term("S(h1);S(h2)");
        let detour = term("C(h1,h2|a,b);~C(h1,h2|a,b)");
        assert!(decide_equiv(&direct, &detour, &g, &vt()).unwrap());
        let detour2 = term("C(h1,h2|a,b);E(h1,a);~E(h1,a);~C(h1,h2|a,b)");
        assert!(decide_equiv(&direct, &detour2, &g, &vt()).unwrap());
    }
}
