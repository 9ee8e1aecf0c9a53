//! Valence table and implicit-hydrogen rules.
//!
//! Charged atoms use the valences of their isoelectronic neutral element
//! (N+ behaves like C, O- like F, B- like C, and so on).

use super::{Element, Molecule};
use serde::{Deserialize, Serialize};

fn valences_by_atomic_number(z: i32) -> &'static [u8] {
    match z {
        0 => &[0],
        1 => &[1],
        2 => &[0],
        4 => &[2],
        5 => &[3],
        6 => &[4],
        7 => &[3],
        8 => &[2],
        9 => &[1],
        10 => &[0],
        13 => &[3],
        14 => &[4],
        15 => &[3, 5],
        16 => &[2, 4, 6],
        17 => &[1],
        18 => &[0],
        32 => &[4],
        33 => &[3, 5],
        34 => &[2, 4, 6],
        35 => &[1],
        36 => &[0],
        51 => &[3, 5],
        52 => &[2, 4, 6],
        53 => &[1, 3, 5],
        54 => &[0],
        _ => &[],
    }
}

/// Allowed total valences (bond-order sum plus hydrogens) for an element
/// carrying `charge`.
pub fn allowed_valences(element: Element, charge: i8) -> &'static [u8] {
    valences_by_atomic_number(element.atomic_number() as i32 - charge as i32)
}

/// Hydrogen count the implicit rule assigns to atom `i`: fill up to the
/// lowest allowed valence not below the current bond sum. An aromatic atom
/// with aromatic bonds reserves one unit for its pi bond when it can.
pub fn implicit_hydrogens(mol: &Molecule, i: usize) -> u8 {
    let atom = mol.atom(i);
    let used = mol.bond_valence(i);
    let allowed = allowed_valences(atom.element, atom.charge);
    let Some(&target) = allowed.iter().find(|&&v| v >= used) else {
        return 0;
    };
    let spare = target - used;
    if atom.aromatic && mol.has_aromatic_bond(i) {
        spare.saturating_sub(1)
    } else {
        spare
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValenceViolation {
    pub atom: usize,
    pub observed: u8,
    pub allowed: Vec<u8>,
}

/// Every atom whose valence is not in its element's table. Aromatic atoms
/// with aromatic bonds also accept one extra unit for the pi bond.
pub fn check_valence(mol: &Molecule) -> Vec<ValenceViolation> {
    let mut out = Vec::new();
    for i in 0..mol.atom_count() {
        let atom = mol.atom(i);
        let observed = mol.bond_valence(i) + atom.hydrogens;
        let allowed = allowed_valences(atom.element, atom.charge);
        let pi = atom.aromatic && mol.has_aromatic_bond(i);
        let ok = allowed.contains(&observed) || (pi && allowed.contains(&(observed + 1)));
        if !ok {
            out.push(ValenceViolation {
                atom: i,
                observed,
                allowed: allowed.to_vec(),
            });
        }
    }
    out
}
