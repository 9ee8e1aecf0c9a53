use super::pattern::{PatternAtom, PatternBond, PatternGraph};
use crate::molgraph::{Atom, BondOrder, Molecule};

pub(crate) fn atom_matches(p: &PatternAtom, mol: &Molecule, i: usize) -> bool {
    let a: &Atom = mol.atom(i);
    if let Some(e) = p.element {
        if e != a.element || p.aromatic != a.aromatic {
            return false;
        }
    }
    if let Some(c) = p.charge {
        if c != a.charge {
            return false;
        }
    }
    if let Some(d) = p.degree {
        if d as usize != mol.degree(i) {
            return false;
        }
    }
    true
}

pub(crate) fn bond_matches(p: PatternBond, order: BondOrder) -> bool {
    match p {
        PatternBond::Any => true,
        PatternBond::Implicit => matches!(order, BondOrder::Single | BondOrder::Aromatic),
        PatternBond::Order(o) => o == order,
    }
}

/// Pattern atoms ordered so each one after the first has an earlier neighbor.
fn search_order(pat: &PatternGraph) -> Vec<usize> {
    let mut order = vec![0];
    let mut seen = vec![false; pat.atoms.len()];
    seen[0] = true;
    let mut head = 0;
    while head < order.len() {
        let u = order[head];
        head += 1;
        let mut nbrs: Vec<usize> = pat.neighbors(u).map(|(v, _)| v).collect();
        nbrs.sort_unstable();
        for v in nbrs {
            if !seen[v] {
                seen[v] = true;
                order.push(v);
            }
        }
    }
    order
}

/// All injective embeddings of `pat` into `mol`, as molecule atom indices
/// indexed by pattern atom, sorted lexicographically.
pub fn embeddings(pat: &PatternGraph, mol: &Molecule) -> Vec<Vec<usize>> {
    let n = pat.atoms.len();
    let mut out = Vec::new();
    if n == 0 || mol.atom_count() < n {
        return out;
    }
    let order = search_order(pat);
    let mut assign = vec![usize::MAX; n];
    let mut used = vec![false; mol.atom_count()];
    extend(pat, mol, &order, 0, &mut assign, &mut used, &mut out);
    out.sort();
    out
}

/// True when at least one embedding exists.
pub fn has_embedding(pat: &PatternGraph, mol: &Molecule) -> bool {
    // cheap atom screen first
    if !pat
        .atoms
        .iter()
        .all(|p| (0..mol.atom_count()).any(|i| atom_matches(p, mol, i)))
    {
        return false;
    }
    !embeddings(pat, mol).is_empty()
}

fn extend(
    pat: &PatternGraph,
    mol: &Molecule,
    order: &[usize],
    depth: usize,
    assign: &mut Vec<usize>,
    used: &mut Vec<bool>,
    out: &mut Vec<Vec<usize>>,
) {
    if depth == order.len() {
        out.push(assign.clone());
        return;
    }
    let p = order[depth];
    let anchor = pat.neighbors(p).find(|&(q, _)| assign[q] != usize::MAX);
    let candidates: Vec<usize> = match anchor {
        Some((q, _)) => mol.neighbors(assign[q]).map(|(j, _)| j).collect(),
        None => (0..mol.atom_count()).collect(),
    };
    for m in candidates {
        if used[m] || !atom_matches(&pat.atoms[p], mol, m) {
            continue;
        }
        let bonds_ok = pat.neighbors(p).all(|(q, pb)| {
            if assign[q] == usize::MAX {
                return true;
            }
            match mol.bond_between(m, assign[q]) {
                Some(o) => bond_matches(pb, o),
                None => false,
            }
        });
        if !bonds_ok {
            continue;
        }
        assign[p] = m;
        used[m] = true;
        extend(pat, mol, order, depth + 1, assign, used, out);
        used[m] = false;
        assign[p] = usize::MAX;
    }
}
