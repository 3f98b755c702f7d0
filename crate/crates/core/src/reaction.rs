//! The dagger category of formal reactions.
//!
//! A reaction from a chemical graph `A` to a chemical graph `B` records
//! which part of each graph takes part in the transformation (the *changed*
//! subsets `U_A` and `U_B`), an atom-label-preserving bijection between the
//! chemical vertices of the changed subsets, and an exact isomorphism between
//! the untouched remainders.  Charges and bonds inside the changed subsets
//! may differ arbitrarily as long as the net charge is conserved; everything
//! outside must match exactly, including the bonds that cross the boundary.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::Error;
use crate::graph::{ChemGraph, ValenceTable, VertexName};
use crate::violation::Violation;
use crate::Result;

/// A formal reaction `(U_A, U_B, b, i)` between two chemical graphs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reaction {
    dom: ChemGraph,
    cod: ChemGraph,
    changed_dom: BTreeSet<VertexName>,
    changed_cod: BTreeSet<VertexName>,
    /// `b`: bijection between the chemical vertices of the changed subsets.
    atom_map: BTreeMap<VertexName, VertexName>,
    /// `i`: exact isomorphism between the unchanged remainders.
    context_map: BTreeMap<VertexName, VertexName>,
}

impl Reaction {
    /// Builds and fully validates a reaction.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dom: ChemGraph,
        cod: ChemGraph,
        changed_dom: BTreeSet<VertexName>,
        changed_cod: BTreeSet<VertexName>,
        atom_map: BTreeMap<VertexName, VertexName>,
        context_map: BTreeMap<VertexName, VertexName>,
        valences: &ValenceTable,
    ) -> Result<Reaction> {
        let r = Reaction {
            dom,
            cod,
            changed_dom,
            changed_cod,
            atom_map,
            context_map,
        };
        let violations = r.violations(valences)?;
        if violations.is_empty() {
            Ok(r)
        } else {
            Err(Error::invalid("reaction", violations))
        }
    }

    /// Builds a reaction without validating; used by internal constructions
    /// whose outputs are valid by theorem (composition, dagger, translation).
    pub(crate) fn new_unchecked(
        dom: ChemGraph,
        cod: ChemGraph,
        changed_dom: BTreeSet<VertexName>,
        changed_cod: BTreeSet<VertexName>,
        atom_map: BTreeMap<VertexName, VertexName>,
        context_map: BTreeMap<VertexName, VertexName>,
    ) -> Reaction {
        Reaction {
            dom,
            cod,
            changed_dom,
            changed_cod,
            atom_map,
            context_map,
        }
    }

    pub fn dom(&self) -> &ChemGraph {
        &self.dom
    }

    pub fn cod(&self) -> &ChemGraph {
        &self.cod
    }

    /// The changed subset `U_A` of the domain.
    pub fn changed_dom(&self) -> &BTreeSet<VertexName> {
        &self.changed_dom
    }

    /// The changed subset `U_B` of the codomain.
    pub fn changed_cod(&self) -> &BTreeSet<VertexName> {
        &self.changed_cod
    }

    /// The atom bijection `b` on the chemical parts of the changed subsets.
    pub fn atom_map(&self) -> &BTreeMap<VertexName, VertexName> {
        &self.atom_map
    }

    /// The context isomorphism `i` on the unchanged remainders.
    pub fn context_map(&self) -> &BTreeMap<VertexName, VertexName> {
        &self.context_map
    }

    /// Chemical vertices of the domain's changed subset.
    fn chem_changed_dom(&self) -> BTreeSet<VertexName> {
        self.changed_dom
            .iter()
            .filter(|v| self.dom.has_vertex(v) && self.dom.is_chem_vertex(v))
            .cloned()
            .collect()
    }

    fn chem_changed_cod(&self) -> BTreeSet<VertexName> {
        self.changed_cod
            .iter()
            .filter(|v| self.cod.has_vertex(v) && self.cod.is_chem_vertex(v))
            .cloned()
            .collect()
    }

    /// Checks every defining condition and reports the failures.
    pub fn violations(&self, valences: &ValenceTable) -> Result<Vec<Violation>> {
        let mut out = Vec::new();

        for v in self.dom.chemical_violations(valences)? {
            out.push(Violation::new(
                "reaction-object",
                vec!["dom".into()],
                format!("domain is not a chemical graph: {v}"),
            ));
        }
        for v in self.cod.chemical_violations(valences)? {
            out.push(Violation::new(
                "reaction-object",
                vec!["cod".into()],
                format!("codomain is not a chemical graph: {v}"),
            ));
        }

        let mut structural_ok = true;
        for u in &self.changed_dom {
            if !self.dom.has_vertex(u) {
                out.push(Violation::new(
                    "reaction-changed-subset",
                    vec![u.clone()],
                    "changed vertex missing from the domain",
                ));
                structural_ok = false;
            }
        }
        for u in &self.changed_cod {
            if !self.cod.has_vertex(u) {
                out.push(Violation::new(
                    "reaction-changed-subset",
                    vec![u.clone()],
                    "changed vertex missing from the codomain",
                ));
                structural_ok = false;
            }
        }
        if !structural_ok {
            return Ok(out);
        }

        let net_a = self.dom.net_charge_of(self.changed_dom.iter());
        let net_b = self.cod.net_charge_of(self.changed_cod.iter());
        if net_a != net_b {
            out.push(Violation::new(
                "reaction-net-charge",
                vec![],
                format!("changed subsets carry net charges {net_a} and {net_b}"),
            ));
        }

        // b: a label-preserving bijection Chem U_A -> Chem U_B.
        let chem_a = self.chem_changed_dom();
        let chem_b = self.chem_changed_cod();
        let keys: BTreeSet<VertexName> = self.atom_map.keys().cloned().collect();
        let vals: Vec<&VertexName> = self.atom_map.values().collect();
        let val_set: BTreeSet<VertexName> = self.atom_map.values().cloned().collect();
        let mut atom_ok = true;
        if keys != chem_a {
            out.push(Violation::new(
                "reaction-atom-bijection",
                vec![],
                "atom map is not defined on exactly the chemical changed vertices of the domain",
            ));
            atom_ok = false;
        }
        if val_set.len() != vals.len() || val_set != chem_b {
            out.push(Violation::new(
                "reaction-atom-bijection",
                vec![],
                "atom map is not a bijection onto the chemical changed vertices of the codomain",
            ));
            atom_ok = false;
        }
        if atom_ok {
            for (u, v) in &self.atom_map {
                if self.dom.label(u) != self.cod.label(v) {
                    out.push(Violation::new(
                        "reaction-atom-bijection",
                        vec![u.clone(), v.clone()],
                        format!(
                            "atom labels differ: {} vs {}",
                            self.dom.label(u),
                            self.cod.label(v)
                        ),
                    ));
                }
            }
        }

        // i: an exact isomorphism between the unchanged remainders.
        let rest_a: BTreeSet<VertexName> = self
            .dom
            .name_set()
            .difference(&self.changed_dom)
            .cloned()
            .collect();
        let rest_b: BTreeSet<VertexName> = self
            .cod
            .name_set()
            .difference(&self.changed_cod)
            .cloned()
            .collect();
        let ctx_keys: BTreeSet<VertexName> = self.context_map.keys().cloned().collect();
        let ctx_vals: BTreeSet<VertexName> = self.context_map.values().cloned().collect();
        let mut ctx_ok = true;
        if ctx_keys != rest_a {
            out.push(Violation::new(
                "reaction-context-iso",
                vec![],
                "context map is not defined on exactly the unchanged part of the domain",
            ));
            ctx_ok = false;
        }
        if ctx_vals.len() != self.context_map.len() || ctx_vals != rest_b {
            out.push(Violation::new(
                "reaction-context-iso",
                vec![],
                "context map is not a bijection onto the unchanged part of the codomain",
            ));
            ctx_ok = false;
        }
        if ctx_ok && !rest_a.is_empty() {
            let ind_a = self.dom.induced(&rest_a)?;
            let ind_b = self.cod.induced(&rest_b)?;
            if !crate::morphism::is_exact_iso(&ind_a, &ind_b, &self.context_map) {
                out.push(Violation::new(
                    "reaction-context-iso",
                    vec![],
                    "context map does not preserve labels, charges and bonds exactly",
                ));
                ctx_ok = false;
            }
        }

        // Boundary condition: bonds between the changed chemical vertices and
        // the context are carried over bond-for-bond.
        if atom_ok && ctx_ok {
            for (u, bu) in &self.atom_map {
                for (a, ia) in &self.context_map {
                    let lhs = self.dom.bond(u, a);
                    let rhs = self.cod.bond(bu, ia);
                    if lhs != rhs {
                        out.push(Violation::new(
                            "reaction-boundary",
                            vec![u.clone(), a.clone()],
                            format!("boundary bond changes from {lhs} to {rhs}"),
                        ));
                    }
                }
            }
        }

        Ok(out)
    }

    /// True when all defining conditions hold.
    pub fn is_valid(&self, valences: &ValenceTable) -> bool {
        matches!(self.violations(valences), Ok(v) if v.is_empty())
    }

    /// The identity reaction on a chemical graph: nothing changes.
    pub fn identity(g: &ChemGraph) -> Reaction {
        let ctx = g
            .names()
            .map(|v| (v.clone(), v.clone()))
            .collect::<BTreeMap<_, _>>();
        Reaction {
            dom: g.clone(),
            cod: g.clone(),
            changed_dom: BTreeSet::new(),
            changed_cod: BTreeSet::new(),
            atom_map: BTreeMap::new(),
            context_map: ctx,
        }
    }

    /// True when this reaction is an identity: empty changed sets and an
    /// identity context map on the (shared) vertex set.
    pub fn is_identity(&self) -> bool {
        self.changed_dom.is_empty()
            && self.changed_cod.is_empty()
            && self.dom == self.cod
            && self.context_map.iter().all(|(k, v)| k == v)
    }

    /// The reverse reaction `(U_B, U_A, b⁻¹, i⁻¹)`.
    pub fn dagger(&self) -> Reaction {
        Reaction {
            dom: self.cod.clone(),
            cod: self.dom.clone(),
            changed_dom: self.changed_cod.clone(),
            changed_cod: self.changed_dom.clone(),
            atom_map: invert(&self.atom_map),
            context_map: invert(&self.context_map),
        }
    }

    /// Sequential composition; requires the codomain of `self` to be
    /// literally the same named graph as the domain of `other`.
    pub fn compose(&self, other: &Reaction) -> Result<Reaction> {
        if self.cod != other.dom {
            return Err(Error::Precondition(
                "reactions are not composable: middle graphs differ".into(),
            ));
        }
        let inv_i = invert(&self.context_map);

        // Changed subset of the composite domain: everything this reaction
        // changes, plus the preimage of what the second reaction changes in
        // the part this one left untouched.
        let mut z_a = self.changed_dom.clone();
        for w in &other.changed_dom {
            if !self.changed_cod.contains(w) {
                let a = inv_i.get(w).ok_or_else(|| {
                    Error::Internal("context inverse missing a middle vertex".into())
                })?;
                z_a.insert(a.clone());
            }
        }
        // Changed subset of the composite codomain, symmetrically.
        let mut z_c = other.changed_cod.clone();
        for w in &self.changed_cod {
            if !other.changed_dom.contains(w) {
                let c = other.context_map.get(w).ok_or_else(|| {
                    Error::Internal("context map missing a middle vertex".into())
                })?;
                z_c.insert(c.clone());
            }
        }

        // Route a middle-graph vertex through the second reaction.
        let through_second = |x: &VertexName| -> Result<VertexName> {
            if let Some(y) = other.atom_map.get(x) {
                Ok(y.clone())
            } else if let Some(y) = other.context_map.get(x) {
                Ok(y.clone())
            } else {
                Err(Error::Internal(
                    "middle vertex missing from both maps of the second reaction".into(),
                ))
            }
        };

        let mut atom_map = BTreeMap::new();
        let mut context_map = BTreeMap::new();
        for v in self.dom.names() {
            let mid = if let Some(x) = self.atom_map.get(v) {
                Some(x.clone())
            } else if self.changed_dom.contains(v) {
                None // a marker vertex consumed by the first reaction
            } else {
                Some(
                    self.context_map
                        .get(v)
                        .ok_or_else(|| {
                            Error::Internal("context map missing a domain vertex".into())
                        })?
                        .clone(),
                )
            };
            if z_a.contains(v) {
                if self.dom.is_chem_vertex(v) {
                    let x = mid.ok_or_else(|| {
                        Error::Internal("chemical changed vertex lost in the middle".into())
                    })?;
                    atom_map.insert(v.clone(), through_second(&x)?);
                }
            } else {
                let x = mid.ok_or_else(|| {
                    Error::Internal("unchanged vertex lost in the middle".into())
                })?;
                context_map.insert(v.clone(), through_second(&x)?);
            }
        }

        Ok(Reaction {
            dom: self.dom.clone(),
            cod: other.cod.clone(),
            changed_dom: z_a,
            changed_cod: z_c,
            atom_map,
            context_map,
        })
    }
}

fn invert(map: &BTreeMap<VertexName, VertexName>) -> BTreeMap<VertexName, VertexName> {
    map.iter().map(|(k, v)| (v.clone(), k.clone())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samples;

    fn table() -> ValenceTable {
        ValenceTable::default()
    }

    fn ids<const N: usize>(names: [&str; N]) -> BTreeSet<VertexName> {
        names.iter().map(|s| s.to_string()).collect()
    }

    fn pairs<const N: usize>(entries: [(&str, &str); N]) -> BTreeMap<VertexName, VertexName> {
        entries
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect()
    }

    /// H2 -> two hydrogen synthons, breaking the single bond.
    fn hydrogen_split() -> Reaction {
        Reaction::new(
            samples::hydrogen_molecule(),
            samples::hydrogen_disconnected(),
            ids(["h1", "h2"]),
            ids(["h1", "h2", "a1", "a2"]),
            pairs([("h1", "h1"), ("h2", "h2")]),
            BTreeMap::new(),
            &table(),
        )
        .expect("bond-break reaction validates")
    }

    /// A pure relabelling of the disconnected pair that swaps the synthons.
    fn synthon_swap() -> Reaction {
        Reaction::new(
            samples::hydrogen_disconnected(),
            samples::hydrogen_disconnected(),
            BTreeSet::new(),
            BTreeSet::new(),
            BTreeMap::new(),
            pairs([("h1", "h2"), ("h2", "h1"), ("a1", "a2"), ("a2", "a1")]),
            &table(),
        )
        .expect("swap reaction validates")
    }

    #[test]
    fn identity_validates_everywhere() {
        for g in [
            samples::water(),
            samples::sodium_carbonate(),
            samples::hydrogen_synthon(),
        ] {
            let id = Reaction::identity(&g);
            assert!(id.is_valid(&table()));
            assert!(id.is_identity());
        }
    }

    #[test]
    fn bond_break_tuple_validates() {
        let r = hydrogen_split();
        assert_eq!(r.changed_dom().len(), 2);
        assert_eq!(r.changed_cod().len(), 4);
    }

    #[test]
    fn mismatched_net_charge_is_rejected() {
        // Hydroxide -> water-like swap with unequal changed-subset charges.
        let err = Reaction::new(
            samples::hydroxide(),
            samples::hydroxide(),
            ids(["o"]),
            ids(["h"]),
            BTreeMap::new(),
            BTreeMap::new(),
            &table(),
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("reaction-net-charge"), "got: {msg}");
    }

    #[test]
    fn boundary_condition_is_enforced() {
        // Claim only the oxygen of water changes while a hydrogen bond is
        // silently dropped: the boundary clause must fire.
        let mut cod = samples::water();
        cod.set_bond("o", "h1", crate::graph::BondLabel::NONE).unwrap();
        // cod is not even chemical any more; check the boundary clause alone
        // by matching on the violation list.
        let r = Reaction::new_unchecked(
            samples::water(),
            cod,
            ids(["o"]),
            ids(["o"]),
            pairs([("o", "o")]),
            pairs([("h1", "h1"), ("h2", "h2")]),
        );
        let vs = r.violations(&table()).unwrap();
        assert!(vs.iter().any(|v| v.clause == "reaction-boundary"));
    }

    #[test]
    fn unit_laws() {
        let r = hydrogen_split();
        let left = Reaction::identity(r.dom()).compose(&r).unwrap();
        let right = r.compose(&Reaction::identity(r.cod())).unwrap();
        assert_eq!(left, r);
        assert_eq!(right, r);
    }

    #[test]
    fn dagger_laws() {
        let r = hydrogen_split();
        assert_eq!(r.dagger().dagger(), r);
        let id = Reaction::identity(r.dom());
        assert_eq!(id.dagger(), id);

        let s = synthon_swap();
        let rs = r.compose(&s).unwrap();
        let contra = s.dagger().compose(&r.dagger()).unwrap();
        assert_eq!(rs.dagger(), contra);
    }

    #[test]
    fn composition_with_relabelling() {
        let r = hydrogen_split();
        let s = synthon_swap();
        let rs = r.compose(&s).unwrap();
        assert!(rs.is_valid(&table()));
        assert_eq!(rs.changed_dom(), &ids(["h1", "h2"]));
        assert_eq!(rs.changed_cod(), &ids(["h1", "h2", "a1", "a2"]));
        // The atom bijection routes through the swap.
        assert_eq!(rs.atom_map().get("h1").unwrap(), "h2");
    }

    #[test]
    fn touch_reaction_from_dagger() {
        let r = hydrogen_split();
        let touch = r.compose(&r.dagger()).unwrap();
        assert!(touch.is_valid(&table()));
        assert_eq!(touch.dom(), touch.cod());
        assert_eq!(touch.changed_dom(), &ids(["h1", "h2"]));
        assert_eq!(touch.changed_cod(), &ids(["h1", "h2"]));
        assert!(!touch.is_identity());
    }

    #[test]
    fn associativity_on_a_triple() {
        let r = hydrogen_split();
        let s = synthon_swap();
        let t = r.dagger();
        let left = r.compose(&s).unwrap().compose(&t).unwrap();
        let right = r.compose(&s.compose(&t).unwrap()).unwrap();
        assert_eq!(left, right);
        assert!(left.is_valid(&table()));
    }

    #[test]
    fn closure_under_composition() {
        let r = hydrogen_split();
        let s = r.dagger();
        for c in [
            r.compose(&s).unwrap(),
            s.compose(&r).unwrap(),
            r.compose(&synthon_swap()).unwrap(),
        ] {
            assert!(c.is_valid(&table()));
        }
    }
}
