//! Canonical SMILES by partition refinement plus individualization.
//!
//! Atoms start in classes keyed by (element, charge, degree, hydrogens,
//! aromatic) and are refined by their neighbor multisets until stable. When
//! ties remain, every atom of the first tied class is individualized in turn
//! and the lexicographically smallest emission over all leaves wins. Leaves
//! with equal text reveal automorphisms, which prune symmetric branches.

use super::{write_with_ranks, Molecule};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CanonicalForm {
    pub text: String,
}

impl fmt::Display for CanonicalForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

pub fn canonical_form(mol: &Molecule) -> CanonicalForm {
    CanonicalForm {
        text: Search::run(mol).0,
    }
}

/// Emission order of atoms in the canonical text.
pub fn canonical_order(mol: &Molecule) -> Vec<usize> {
    Search::run(mol).1
}

type Key = (u8, i8, usize, u8, bool);

fn initial_ranks(mol: &Molecule) -> Vec<usize> {
    let keys: Vec<Key> = (0..mol.atom_count())
        .map(|i| {
            let a = mol.atom(i);
            (
                a.element.atomic_number(),
                a.charge,
                mol.degree(i),
                a.hydrogens,
                a.aromatic,
            )
        })
        .collect();
    dense_ranks(&keys)
}

fn dense_ranks<K: Ord + Clone>(keys: &[K]) -> Vec<usize> {
    let mut sorted: Vec<K> = keys.to_vec();
    sorted.sort();
    sorted.dedup();
    keys.iter().map(|k| sorted.binary_search(k).unwrap()).collect()
}

fn class_count(ranks: &[usize]) -> usize {
    let mut seen = ranks.to_vec();
    seen.sort_unstable();
    seen.dedup();
    seen.len()
}

/// Splits classes by sorted neighbor (rank, bond) lists until no class splits.
/// Refinement never merges or reorders existing classes.
fn refine(mol: &Molecule, mut ranks: Vec<usize>) -> Vec<usize> {
    let mut classes = class_count(&ranks);
    loop {
        if classes == ranks.len() {
            return ranks;
        }
        let keys: Vec<(usize, Vec<(usize, u8)>)> = (0..mol.atom_count())
            .map(|i| {
                let mut nb: Vec<(usize, u8)> = mol.neighbors(i).map(|(j, o)| (ranks[j], o.code())).collect();
                nb.sort_unstable();
                (ranks[i], nb)
            })
            .collect();
        let next = dense_ranks(&keys);
        let next_classes = class_count(&next);
        ranks = next;
        if next_classes == classes {
            return ranks;
        }
        classes = next_classes;
    }
}

/// Moves `atom` ahead of the rest of its class.
fn individualize(ranks: &[usize], atom: usize) -> Vec<usize> {
    let r = ranks[atom];
    let split: Vec<usize> = ranks
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            if x > r || (x == r && i != atom) {
                x * 2 + 1
            } else {
                x * 2
            }
        })
        .collect();
    dense_ranks(&split)
}

struct Search<'a> {
    mol: &'a Molecule,
    best: Option<(String, Vec<usize>)>,
    leaves: HashMap<String, Vec<usize>>,
    /// automorphisms as atom permutations
    automorphisms: Vec<Vec<usize>>,
}

impl<'a> Search<'a> {
    fn run(mol: &'a Molecule) -> (String, Vec<usize>) {
        if mol.atom_count() == 0 {
            return (String::new(), Vec::new());
        }
        let mut s = Search {
            mol,
            best: None,
            leaves: HashMap::new(),
            automorphisms: Vec::new(),
        };
        let ranks = refine(mol, initial_ranks(mol));
        let mut path = Vec::new();
        s.descend(ranks, &mut path);
        s.best.expect("at least one leaf")
    }

    fn descend(&mut self, ranks: Vec<usize>, path: &mut Vec<usize>) {
        let n = ranks.len();
        if class_count(&ranks) == n {
            self.leaf(&ranks);
            return;
        }
        // first tied class in rank order
        let mut counts = vec![0usize; n];
        for &r in &ranks {
            counts[r] += 1;
        }
        let target = (0..n).find(|&r| counts[r] > 1).unwrap();
        let candidates: Vec<usize> = (0..n).filter(|&i| ranks[i] == target).collect();
        let mut explored: Vec<usize> = Vec::new();
        for &v in &candidates {
            if !explored.is_empty() && self.equivalent_to_explored(v, &explored, path) {
                continue;
            }
            explored.push(v);
            let next = refine(self.mol, individualize(&ranks, v));
            path.push(v);
            self.descend(next, path);
            path.pop();
        }
    }

    fn equivalent_to_explored(&self, v: usize, explored: &[usize], path: &[usize]) -> bool {
        let n = self.mol.atom_count();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let mut any = false;
        for g in &self.automorphisms {
            if path.iter().any(|&p| g[p] != p) {
                continue;
            }
            any = true;
            for i in 0..n {
                let (a, b) = (find(&mut parent, i), find(&mut parent, g[i]));
                if a != b {
                    parent[a] = b;
                }
            }
        }
        if !any {
            return false;
        }
        let rv = find(&mut parent, v);
        explored.iter().any(|&u| find(&mut parent, u) == rv)
    }

    fn leaf(&mut self, ranks: &[usize]) {
        let (text, order) = write_with_ranks(self.mol, ranks);
        if let Some(prev) = self.leaves.get(&text) {
            // same text: position-wise correspondence is an automorphism
            let mut g = vec![0usize; order.len()];
            for (k, &a) in prev.iter().enumerate() {
                g[a] = order[k];
            }
            if g.iter().enumerate().any(|(i, &x)| i != x) {
                self.automorphisms.push(g);
            }
        } else {
            self.leaves.insert(text.clone(), order.clone());
        }
        let better = match &self.best {
            None => true,
            Some((b, _)) => text < *b,
        };
        if better {
            self.best = Some((text, order));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::parse_smiles;

    fn canon(s: &str) -> String {
        canonical_form(&parse_smiles(s).unwrap()).text
    }

    #[test]
    fn isomorphic_inputs_agree() {
        assert_eq!(canon("OCC"), canon("CCO"));
        assert_eq!(canon("c1ccccc1C"), canon("Cc1ccccc1"));
        assert_eq!(canon("O"), canon("[OH2]"));
        assert_eq!(canon("C(=O)O"), canon("OC=O"));
        assert_ne!(canon("CCO"), canon("COC"));
    }

    #[test]
    fn deterministic() {
        let first = canon("C");
        for _ in 0..1000 {
            assert_eq!(canon("C"), first);
        }
    }

    #[test]
    fn symmetric_molecules_terminate() {
        let t = canon("CC(C)(C)C(C(C)(C)C)(C(C)(C)C)C(C)(C)C");
        assert_eq!(t, canon(&t));
        let cubane = canon("C12C3C4C1C5C2C3C45");
        assert_eq!(cubane, canon(&cubane));
    }

    #[test]
    fn round_trip_text() {
        for s in [
            "CC(=O)NC",
            "c1ccc2ccccc2c1",
            "C[N+](=O)[O-]",
            "OB(O)c1ccccc1",
            "C1CCC2(CC1)CCCC2",
            "N#CC(Br)(Cl)I",
            "[H][H]",
            "c1ccc(-c2ccccc2)cc1",
        ] {
            let c = canon(s);
            assert_eq!(canon(&c), c, "{s}");
        }
    }
}
