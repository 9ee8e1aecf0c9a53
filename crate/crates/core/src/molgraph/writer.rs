//! SMILES emission from a total atom ranking.

use super::{implicit_hydrogens, BondOrder, Molecule};
use std::fmt::Write;

/// Writes `mol` by depth-first traversal, starting each component at its
/// lowest-ranked atom and visiting neighbors in ascending rank. Returns the
/// text and the emission order of atoms.
pub(crate) fn write_with_ranks(mol: &Molecule, ranks: &[usize]) -> (String, Vec<usize>) {
    let n = mol.atom_count();
    let mut out = String::new();
    let mut order = Vec::with_capacity(n);
    if n == 0 {
        return (out, order);
    }
    let mut by_rank: Vec<usize> = (0..n).collect();
    by_rank.sort_by_key(|&i| (ranks[i], i));

    let sorted_nbrs: Vec<Vec<(usize, usize)>> = (0..n)
        .map(|i| {
            let mut v = mol.incident(i).to_vec();
            v.sort_by_key(|&(j, _)| (ranks[j], j));
            v
        })
        .collect();

    // pass 1: spanning forest and ring-closure bonds
    let mut visit_pos = vec![usize::MAX; n];
    let mut children: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    let mut closures: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    let mut bond_seen = vec![false; mol.bonds().len()];
    let mut roots = Vec::new();
    for &start in &by_rank {
        if visit_pos[start] != usize::MAX {
            continue;
        }
        roots.push(start);
        visit_pos[start] = order.len();
        order.push(start);
        let mut stack: Vec<(usize, usize)> = vec![(start, 0)];
        while let Some(top) = stack.last_mut() {
            let u = top.0;
            if top.1 >= sorted_nbrs[u].len() {
                stack.pop();
                continue;
            }
            let (v, k) = sorted_nbrs[u][top.1];
            top.1 += 1;
            if bond_seen[k] {
                continue;
            }
            bond_seen[k] = true;
            if visit_pos[v] == usize::MAX {
                visit_pos[v] = order.len();
                order.push(v);
                children[u].push((v, k));
                stack.push((v, 0));
            } else {
                closures[u].push((v, k));
                closures[v].push((u, k));
            }
        }
    }

    // pass 2: text
    let mut digit_of_bond: Vec<Option<u32>> = vec![None; mol.bonds().len()];
    let mut free_digits: Vec<u32> = Vec::new();
    let mut next_digit = 1u32;
    for (ci, &root) in roots.iter().enumerate() {
        if ci > 0 {
            out.push('.');
        }
        // explicit stack of (atom, incoming bond, close paren after)
        enum Step {
            Atom(usize, Option<usize>),
            Open,
            Close,
        }
        let mut stack = vec![Step::Atom(root, None)];
        while let Some(step) = stack.pop() {
            let (u, incoming) = match step {
                Step::Open => {
                    out.push('(');
                    continue;
                }
                Step::Close => {
                    out.push(')');
                    continue;
                }
                Step::Atom(u, incoming) => (u, incoming),
            };
            if let Some(k) = incoming {
                let b = mol.bonds()[k];
                out.push_str(bond_symbol(mol, b.a, b.b, b.order));
            }
            write_atom(mol, u, &mut out);
            let mut ring = closures[u].clone();
            ring.sort_by_key(|&(v, _)| visit_pos[v]);
            for (v, k) in ring {
                if let Some(d) = digit_of_bond[k] {
                    // closing: the opener wrote the bond symbol
                    push_digit(&mut out, d);
                    free_digits.push(d);
                    free_digits.sort_unstable_by(|a, b| b.cmp(a));
                } else {
                    let d = free_digits.pop().unwrap_or_else(|| {
                        next_digit += 1;
                        next_digit - 1
                    });
                    digit_of_bond[k] = Some(d);
                    out.push_str(bond_symbol(mol, u, v, mol.bonds()[k].order));
                    push_digit(&mut out, d);
                }
            }
            let kids = &children[u];
            // last child is written inline, earlier ones as branches
            for (idx, &(v, k)) in kids.iter().enumerate().rev() {
                if idx + 1 == kids.len() {
                    stack.push(Step::Atom(v, Some(k)));
                } else {
                    stack.push(Step::Close);
                    stack.push(Step::Atom(v, Some(k)));
                    stack.push(Step::Open);
                }
            }
        }
    }
    (out, order)
}

fn push_digit(out: &mut String, d: u32) {
    if d < 10 {
        write!(out, "{d}").unwrap();
    } else {
        write!(out, "%{d:02}").unwrap();
    }
}

fn bond_symbol(mol: &Molecule, a: usize, b: usize, order: BondOrder) -> &'static str {
    let both_aromatic = mol.atom(a).aromatic && mol.atom(b).aromatic;
    match order {
        BondOrder::Single if both_aromatic => "-",
        BondOrder::Single => "",
        BondOrder::Double => "=",
        BondOrder::Triple => "#",
        BondOrder::Aromatic if both_aromatic => "",
        BondOrder::Aromatic => ":",
    }
}

fn write_atom(mol: &Molecule, i: usize, out: &mut String) {
    let atom = mol.atom(i);
    let sym = atom.element.symbol();
    let organic_ok = atom.element.is_organic_subset()
        && atom.charge == 0
        && (!atom.aromatic || atom.element.can_be_aromatic())
        && implicit_hydrogens(mol, i) == atom.hydrogens;
    let text_sym = if atom.aromatic {
        sym.to_ascii_lowercase()
    } else {
        sym.to_string()
    };
    if organic_ok {
        out.push_str(&text_sym);
        return;
    }
    out.push('[');
    out.push_str(&text_sym);
    match atom.hydrogens {
        0 => {}
        1 => out.push('H'),
        h => write!(out, "H{h}").unwrap(),
    }
    match atom.charge {
        0 => {}
        1 => out.push('+'),
        -1 => out.push('-'),
        c if c > 0 => write!(out, "+{c}").unwrap(),
        c => write!(out, "-{}", -c).unwrap(),
    }
    out.push(']');
}
