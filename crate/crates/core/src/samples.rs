//! Small ready-made graphs used in documentation and tests.

use crate::graph::{AtomLabel, BondLabel, ChemGraph};

fn atom(g: &mut ChemGraph, name: &str, sym: &str, charge: i32) {
    let label = if sym == "alpha" {
        AtomLabel::Alpha
    } else {
        AtomLabel::element(sym)
    };
    g.add_atom(name, label, charge).expect("fresh vertex name");
}

fn bond(g: &mut ChemGraph, u: &str, v: &str, label: BondLabel) {
    g.set_bond(u, v, label).expect("valid bond");
}

/// H2O: `o` single-bonded to `h1` and `h2`.
pub fn water() -> ChemGraph {
    let mut g = ChemGraph::new();
    atom(&mut g, "o", "O", 0);
    atom(&mut g, "h1", "H", 0);
    atom(&mut g, "h2", "H", 0);
    bond(&mut g, "o", "h1", BondLabel::Covalent(1));
    bond(&mut g, "o", "h2", BondLabel::Covalent(1));
    g
}

/// OH-: `o` carries charge -1 and one bond to `h`.
pub fn hydroxide() -> ChemGraph {
    let mut g = ChemGraph::new();
    atom(&mut g, "o", "O", -1);
    atom(&mut g, "h", "H", 0);
    bond(&mut g, "o", "h", BondLabel::Covalent(1));
    g
}

/// CO3^2-: carbon with one double-bonded oxygen and two singly bonded
/// oxygens carrying charge -1 each.
pub fn carbonate() -> ChemGraph {
    let mut g = ChemGraph::new();
    atom(&mut g, "c", "C", 0);
    atom(&mut g, "o1", "O", 0);
    atom(&mut g, "o2", "O", -1);
    atom(&mut g, "o3", "O", -1);
    bond(&mut g, "c", "o1", BondLabel::Covalent(2));
    bond(&mut g, "c", "o2", BondLabel::Covalent(1));
    bond(&mut g, "c", "o3", BondLabel::Covalent(1));
    g
}

/// NaCl: an ionically bonded Na+/Cl- pair.
pub fn sodium_chloride() -> ChemGraph {
    let mut g = ChemGraph::new();
    atom(&mut g, "na", "Na", 1);
    atom(&mut g, "cl", "Cl", -1);
    bond(&mut g, "na", "cl", BondLabel::Ionic);
    g
}

/// Na2CO3: carbonate with each charged oxygen ionically paired to a Na+.
pub fn sodium_carbonate() -> ChemGraph {
    let mut g = carbonate();
    atom(&mut g, "na1", "Na", 1);
    atom(&mut g, "na2", "Na", 1);
    bond(&mut g, "o2", "na1", BondLabel::Ionic);
    bond(&mut g, "o3", "na2", BondLabel::Ionic);
    g
}

/// CH4.
pub fn methane() -> ChemGraph {
    let mut g = ChemGraph::new();
    atom(&mut g, "c", "C", 0);
    for i in 1..=4 {
        let h = format!("h{i}");
        atom(&mut g, &h, "H", 0);
        bond(&mut g, "c", &h, BondLabel::Covalent(1));
    }
    g
}

/// CH3^-: carbon with three hydrogens and charge -1.
pub fn methyl_anion() -> ChemGraph {
    let mut g = ChemGraph::new();
    atom(&mut g, "c", "C", -1);
    for i in 1..=3 {
        let h = format!("h{i}");
        atom(&mut g, &h, "H", 0);
        bond(&mut g, "c", &h, BondLabel::Covalent(1));
    }
    g
}

/// H2: two singly bonded hydrogens `h1`, `h2`.
pub fn hydrogen_molecule() -> ChemGraph {
    let mut g = ChemGraph::new();
    atom(&mut g, "h1", "H", 0);
    atom(&mut g, "h2", "H", 0);
    bond(&mut g, "h1", "h2", BondLabel::Covalent(1));
    g
}

/// A hydrogen with one open valence: `h` bonded to the marker `a`.
pub fn hydrogen_synthon() -> ChemGraph {
    let mut g = ChemGraph::new();
    atom(&mut g, "h", "H", 0);
    atom(&mut g, "a", "alpha", 0);
    bond(&mut g, "h", "a", BondLabel::Covalent(1));
    g
}

/// Two hydrogen synthons side by side: `h1`-`a1` and `h2`-`a2`.
pub fn hydrogen_disconnected() -> ChemGraph {
    let mut g = ChemGraph::new();
    atom(&mut g, "h1", "H", 0);
    atom(&mut g, "h2", "H", 0);
    atom(&mut g, "a1", "alpha", 0);
    atom(&mut g, "a2", "alpha", 0);
    bond(&mut g, "h1", "a1", BondLabel::Covalent(1));
    bond(&mut g, "h2", "a2", BondLabel::Covalent(1));
    g
}

/// A methyl group with one open valence: C, three H, one marker.
pub fn methyl_synthon() -> ChemGraph {
    let mut g = methyl_anion();
    g.set_charge("c", 0).expect("vertex exists");
    atom(&mut g, "a", "alpha", 0);
    bond(&mut g, "c", "a", BondLabel::Covalent(1));
    g
}

/// Two synthons side by side: Cl-C(=O)-marker and marker-O-H.
///
/// Vertices: `u` (C) double-bonded to `r` (O), single to `z` (Cl) and to the
/// marker `p1`; `v` (O) single-bonded to `w` (H) and to the marker `p2`.
pub fn acyl_chloride_and_hydroxyl() -> ChemGraph {
    let mut g = ChemGraph::new();
    atom(&mut g, "u", "C", 0);
    atom(&mut g, "r", "O", 0);
    atom(&mut g, "z", "Cl", 0);
    atom(&mut g, "p1", "alpha", 0);
    atom(&mut g, "v", "O", 0);
    atom(&mut g, "w", "H", 0);
    atom(&mut g, "p2", "alpha", 0);
    bond(&mut g, "u", "r", BondLabel::Covalent(2));
    bond(&mut g, "u", "z", BondLabel::Covalent(1));
    bond(&mut g, "u", "p1", BondLabel::Covalent(1));
    bond(&mut g, "v", "w", BondLabel::Covalent(1));
    bond(&mut g, "v", "p2", BondLabel::Covalent(1));
    g
}

/// Formyl chloride, HC(=O)Cl: the closed-up variant of the acyl fragment.
pub fn formyl_chloride() -> ChemGraph {
    let mut g = ChemGraph::new();
    atom(&mut g, "u", "C", 0);
    atom(&mut g, "r", "O", 0);
    atom(&mut g, "z", "Cl", 0);
    atom(&mut g, "w", "H", 0);
    bond(&mut g, "u", "r", BondLabel::Covalent(2));
    bond(&mut g, "u", "z", BondLabel::Covalent(1));
    bond(&mut g, "u", "w", BondLabel::Covalent(1));
    g
}

/// Formic acid, HC(=O)OH.
pub fn formic_acid() -> ChemGraph {
    let mut g = ChemGraph::new();
    atom(&mut g, "u", "C", 0);
    atom(&mut g, "r", "O", 0);
    atom(&mut g, "v", "O", 0);
    atom(&mut g, "w", "H", 0);
    atom(&mut g, "h", "H", 0);
    bond(&mut g, "u", "r", BondLabel::Covalent(2));
    bond(&mut g, "u", "v", BondLabel::Covalent(1));
    bond(&mut g, "v", "w", BondLabel::Covalent(1));
    bond(&mut g, "u", "h", BondLabel::Covalent(1));
    g
}

/// HCl.
pub fn hydrogen_chloride() -> ChemGraph {
    let mut g = ChemGraph::new();
    atom(&mut g, "h", "H", 0);
    atom(&mut g, "cl", "Cl", 0);
    bond(&mut g, "h", "cl", BondLabel::Covalent(1));
    g
}
