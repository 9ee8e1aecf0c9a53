//! Molecular graphs over a fixed element set.
//!
//! A [`Molecule`] is an undirected, simple, attributed graph. Hydrogens are
//! normally implicit: every atom carries a total hydrogen count, and graph
//! nodes exist only for atoms written explicitly (heavy atoms, or `[H]`).
//! Aromaticity is syntactic: whatever the input marked aromatic stays
//! aromatic, and sanitization only checks that the flags are consistent.

mod canon;
mod smiles;
mod valence;
mod writer;

pub use canon::{canonical_form, canonical_order, CanonicalForm};
pub use smiles::{parse_smiles, SmilesError};
pub use valence::{allowed_valences, check_valence, implicit_hydrogens, ValenceViolation};

pub(crate) use smiles::{default_order, parse_raw, Dialect, RawBond};
pub(crate) use writer::write_with_ranks;

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Supported elements. Anything else is rejected at parse time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Element {
    H,
    B,
    C,
    N,
    O,
    F,
    P,
    S,
    Cl,
    Br,
    I,
}

impl Element {
    pub const ALL: [Element; 11] = [
        Element::H,
        Element::B,
        Element::C,
        Element::N,
        Element::O,
        Element::F,
        Element::P,
        Element::S,
        Element::Cl,
        Element::Br,
        Element::I,
    ];

    pub fn atomic_number(self) -> u8 {
        match self {
            Element::H => 1,
            Element::B => 5,
            Element::C => 6,
            Element::N => 7,
            Element::O => 8,
            Element::F => 9,
            Element::P => 15,
            Element::S => 16,
            Element::Cl => 17,
            Element::Br => 35,
            Element::I => 53,
        }
    }

    /// Dense index into [`Element::ALL`].
    pub fn index(self) -> usize {
        Element::ALL.iter().position(|&e| e == self).unwrap()
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Element::H => "H",
            Element::B => "B",
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::F => "F",
            Element::P => "P",
            Element::S => "S",
            Element::Cl => "Cl",
            Element::Br => "Br",
            Element::I => "I",
        }
    }

    pub fn from_symbol(symbol: &str) -> Option<Element> {
        Element::ALL.iter().copied().find(|e| e.symbol() == symbol)
    }

    /// Elements that may be written without brackets.
    pub fn is_organic_subset(self) -> bool {
        !matches!(self, Element::H)
    }

    /// Elements that have a lowercase aromatic spelling.
    pub fn can_be_aromatic(self) -> bool {
        matches!(
            self,
            Element::B | Element::C | Element::N | Element::O | Element::P | Element::S
        )
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Atom {
    pub element: Element,
    pub charge: i8,
    /// Total attached hydrogens that are not graph nodes.
    pub hydrogens: u8,
    pub aromatic: bool,
}

impl Atom {
    pub fn new(element: Element) -> Self {
        Atom {
            element,
            charge: 0,
            hydrogens: 0,
            aromatic: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Contribution to the bond-order sum used by the valence rules. An
    /// aromatic bond counts one; the shared pi electron is accounted for
    /// per atom.
    pub fn valence(self) -> u8 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }

    /// Small stable code, also the bond class seen by the graph encoder
    /// (0 is reserved for "no bond").
    pub fn code(self) -> u8 {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Aromatic => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

impl Bond {
    pub fn other(&self, atom: usize) -> usize {
        if self.a == atom {
            self.b
        } else {
            self.a
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("atom index {0} out of range")]
    AtomOutOfRange(usize),
    #[error("self-loop on atom {0}")]
    SelfLoop(usize),
    #[error("parallel bond between atoms {0} and {1}")]
    ParallelBond(usize, usize),
}

/// Attributed molecular graph. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Molecule {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl Molecule {
    pub fn empty() -> Self {
        Molecule::default()
    }

    /// Builds a graph from parts, checking only that it is simple. Hydrogen
    /// counts are taken as given.
    pub fn from_parts(atoms: Vec<Atom>, bonds: Vec<Bond>) -> Result<Self, GraphError> {
        let mut adjacency = vec![Vec::new(); atoms.len()];
        for (k, bond) in bonds.iter().enumerate() {
            for end in [bond.a, bond.b] {
                if end >= atoms.len() {
                    return Err(GraphError::AtomOutOfRange(end));
                }
            }
            if bond.a == bond.b {
                return Err(GraphError::SelfLoop(bond.a));
            }
            if adjacency[bond.a].iter().any(|&(n, _)| n == bond.b) {
                return Err(GraphError::ParallelBond(bond.a, bond.b));
            }
            adjacency[bond.a].push((bond.b, k));
            adjacency[bond.b].push((bond.a, k));
        }
        Ok(Molecule {
            atoms,
            bonds,
            adjacency,
        })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn atom(&self, i: usize) -> &Atom {
        &self.atoms[i]
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn heavy_atom_count(&self) -> usize {
        self.atoms.iter().filter(|a| a.element != Element::H).count()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// `(neighbor, bond order)` pairs of atom `i`.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, BondOrder)> + '_ {
        self.adjacency[i].iter().map(move |&(n, k)| (n, self.bonds[k].order))
    }

    /// `(neighbor, bond index)` pairs of atom `i`.
    pub fn incident(&self, i: usize) -> &[(usize, usize)] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn bond_between(&self, i: usize, j: usize) -> Option<BondOrder> {
        self.adjacency[i]
            .iter()
            .find(|&&(n, _)| n == j)
            .map(|&(_, k)| self.bonds[k].order)
    }

    /// Sum of bond valence contributions at atom `i`.
    pub fn bond_valence(&self, i: usize) -> u8 {
        self.neighbors(i).map(|(_, o)| o.valence()).sum()
    }

    pub fn has_aromatic_bond(&self, i: usize) -> bool {
        self.neighbors(i).any(|(_, o)| o == BondOrder::Aromatic)
    }

    /// Bonds that lie on at least one cycle (everything that is not a bridge).
    pub fn ring_bonds(&self) -> Vec<bool> {
        let n = self.atoms.len();
        let mut is_ring = vec![true; self.bonds.len()];
        let mut disc = vec![usize::MAX; n];
        let mut low = vec![0usize; n];
        let mut timer = 0;
        for root in 0..n {
            if disc[root] != usize::MAX {
                continue;
            }
            // iterative Tarjan bridge finding: (atom, parent bond, next neighbor slot)
            let mut stack: Vec<(usize, usize, usize)> = vec![(root, usize::MAX, 0)];
            disc[root] = timer;
            low[root] = timer;
            timer += 1;
            while let Some(top) = stack.last_mut() {
                let (u, parent_bond) = (top.0, top.1);
                if top.2 < self.adjacency[u].len() {
                    let (v, k) = self.adjacency[u][top.2];
                    top.2 += 1;
                    if k == parent_bond {
                        continue;
                    }
                    if disc[v] == usize::MAX {
                        disc[v] = timer;
                        low[v] = timer;
                        timer += 1;
                        stack.push((v, k, 0));
                    } else {
                        low[u] = low[u].min(disc[v]);
                    }
                } else {
                    stack.pop();
                    if let Some(&(p, _, _)) = stack.last() {
                        low[p] = low[p].min(low[u]);
                        if low[u] > disc[p] {
                            is_ring[parent_bond] = false;
                        }
                    }
                }
            }
        }
        is_ring
    }

    /// Atoms incident to at least one ring bond.
    pub fn ring_atoms(&self) -> Vec<bool> {
        let ring = self.ring_bonds();
        let mut atoms = vec![false; self.atoms.len()];
        for (k, b) in self.bonds.iter().enumerate() {
            if ring[k] {
                atoms[b.a] = true;
                atoms[b.b] = true;
            }
        }
        atoms
    }

    /// Connected components as sorted atom-index lists, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.atoms.len();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            let mut comp = vec![start];
            seen[start] = true;
            let mut head = 0;
            while head < comp.len() {
                let u = comp[head];
                head += 1;
                for &(v, _) in &self.adjacency[u] {
                    if !seen[v] {
                        seen[v] = true;
                        comp.push(v);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// Induced subgraph on `keep` (in the given order).
    pub fn subgraph(&self, keep: &[usize]) -> Molecule {
        let mut map = vec![usize::MAX; self.atoms.len()];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let atoms = keep.iter().map(|&i| self.atoms[i]).collect();
        let bonds = self
            .bonds
            .iter()
            .filter(|b| map[b.a] != usize::MAX && map[b.b] != usize::MAX)
            .map(|b| Bond {
                a: map[b.a],
                b: map[b.b],
                order: b.order,
            })
            .collect();
        Molecule::from_parts(atoms, bonds).expect("subgraph of a simple graph is simple")
    }

    /// Relabels atoms so that old atom `i` becomes atom `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Molecule {
        assert_eq!(perm.len(), self.atoms.len());
        let mut atoms = vec![self.atoms[0]; self.atoms.len()];
        for (old, &new) in perm.iter().enumerate() {
            atoms[new] = self.atoms[old];
        }
        let bonds = self
            .bonds
            .iter()
            .map(|b| Bond {
                a: perm[b.a],
                b: perm[b.b],
                order: b.order,
            })
            .collect();
        Molecule::from_parts(atoms, bonds).expect("permutation preserves simplicity")
    }

    /// Canonical SMILES-subset text.
    pub fn canonical_smiles(&self) -> String {
        canonical_form(self).text
    }
}

impl fmt::Display for Molecule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical_smiles())
    }
}

/// Incremental construction with implicit-hydrogen assignment.
#[derive(Debug, Default)]
pub struct MoleculeBuilder {
    atoms: Vec<Atom>,
    implicit: Vec<bool>,
    bonds: Vec<Bond>,
}

impl MoleculeBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an atom whose hydrogen count is filled in by the implicit rule.
    pub fn organic(&mut self, element: Element, aromatic: bool) -> usize {
        self.atoms.push(Atom {
            element,
            charge: 0,
            hydrogens: 0,
            aromatic,
        });
        self.implicit.push(true);
        self.atoms.len() - 1
    }

    /// Adds an atom with its hydrogen count fixed.
    pub fn explicit(&mut self, atom: Atom) -> usize {
        self.atoms.push(atom);
        self.implicit.push(false);
        self.atoms.len() - 1
    }

    pub fn bond(&mut self, a: usize, b: usize, order: BondOrder) -> &mut Self {
        self.bonds.push(Bond { a, b, order });
        self
    }

    pub fn build(self) -> Result<Molecule, GraphError> {
        let mut mol = Molecule::from_parts(self.atoms, self.bonds)?;
        for i in 0..mol.atoms.len() {
            if self.implicit[i] {
                let h = implicit_hydrogens(&mol, i);
                mol.atoms[i].hydrogens = h;
            }
        }
        Ok(mol)
    }
}

/// Sanitization failures other than malformed text.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SanitizeError {
    #[error("valence violations: {0:?}")]
    Valence(Vec<ValenceViolation>),
    #[error("aromatic bond {0}-{1} joins a non-aromatic atom")]
    AromaticBond(usize, usize),
}

/// Checks aromatic-flag consistency and the valence table.
pub fn sanitize(mol: &Molecule) -> Result<(), SanitizeError> {
    for b in mol.bonds() {
        if b.order == BondOrder::Aromatic && !(mol.atom(b.a).aromatic && mol.atom(b.b).aromatic) {
            return Err(SanitizeError::AromaticBond(b.a, b.b));
        }
    }
    let violations = check_valence(mol);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(SanitizeError::Valence(violations))
    }
}

pub(crate) fn set_hydrogens(mol: &mut Molecule, i: usize, h: u8) {
    mol.atoms[i].hydrogens = h;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_detection_on_toluene() {
        let mol = parse_smiles("Cc1ccccc1").unwrap();
        let ring = mol.ring_atoms();
        assert!(!ring[0]);
        assert!(ring[1..].iter().all(|&r| r));
        assert_eq!(mol.ring_bonds().iter().filter(|&&r| !r).count(), 1);
    }

    #[test]
    fn parallel_bond_rejected() {
        let atoms = vec![Atom::new(Element::C), Atom::new(Element::C)];
        let bonds = vec![
            Bond {
                a: 0,
                b: 1,
                order: BondOrder::Single,
            },
            Bond {
                a: 1,
                b: 0,
                order: BondOrder::Double,
            },
        ];
        assert_eq!(Molecule::from_parts(atoms, bonds), Err(GraphError::ParallelBond(1, 0)));
    }

    #[test]
    fn builder_fills_hydrogens() {
        let mut b = MoleculeBuilder::new();
        let c = b.organic(Element::C, false);
        let o = b.organic(Element::O, false);
        b.bond(c, o, BondOrder::Double);
        let mol = b.build().unwrap();
        assert_eq!(mol.atom(0).hydrogens, 2);
        assert_eq!(mol.atom(1).hydrogens, 0);
        assert_eq!(mol.canonical_smiles(), "C=O");
    }

    #[test]
    fn components_split() {
        let atoms = vec![Atom::new(Element::C); 4];
        let bonds = vec![Bond {
            a: 0,
            b: 2,
            order: BondOrder::Single,
        }];
        let mol = Molecule::from_parts(atoms, bonds).unwrap();
        assert_eq!(mol.components(), vec![vec![0, 2], vec![1], vec![3]]);
    }
}
