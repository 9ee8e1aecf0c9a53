use super::pattern::{PatternBond, ReactionTemplate};
use crate::molgraph::default_order;
use crate::molgraph::{
    canonical_form, implicit_hydrogens, sanitize, set_hydrogens, Atom, Bond, BondOrder, CanonicalForm, Molecule,
};
use std::collections::{BTreeMap, BTreeSet};

/// Rewrites one match into the product molecules, one per product pattern
/// (patterns that end up in the same connected piece give one molecule).
/// `None` when some atom would need a negative hydrogen count.
pub(crate) fn rewrite(
    tmpl: &ReactionTemplate,
    reactants: &[&Molecule],
    assignment: &[Vec<usize>],
) -> Option<Vec<Molecule>> {
    let mut atoms: Vec<Atom> = Vec::new();
    let mut bonds: BTreeMap<(usize, usize), BondOrder> = BTreeMap::new();
    let mut offsets = Vec::with_capacity(reactants.len());
    for mol in reactants {
        let off = atoms.len();
        offsets.push(off);
        atoms.extend_from_slice(mol.atoms());
        for b in mol.bonds() {
            bonds.insert(key(off + b.a, off + b.b), b.order);
        }
    }
    let original = atoms.len();
    let old_bv = bond_sums(original, &bonds);

    let product_maps: BTreeSet<u32> = tmpl
        .products
        .iter()
        .flat_map(|p| p.atoms.iter().filter_map(|a| a.map))
        .collect();
    let mut mapped: BTreeMap<u32, usize> = BTreeMap::new();
    let mut alive = vec![true; original];
    for (r, pat) in tmpl.reactants.iter().enumerate() {
        for (pi, pa) in pat.atoms.iter().enumerate() {
            let w = offsets[r] + assignment[r][pi];
            match pa.map {
                Some(m) if product_maps.contains(&m) => {
                    mapped.insert(m, w);
                }
                _ => alive[w] = false,
            }
        }
    }

    // product pattern atoms in working indices; fresh atoms appended
    let mut resolved: Vec<Vec<usize>> = Vec::with_capacity(tmpl.products.len());
    for pat in &tmpl.products {
        let mut idx = Vec::with_capacity(pat.atoms.len());
        for qa in &pat.atoms {
            match qa.map {
                Some(m) => {
                    let w = mapped[&m];
                    if let Some(c) = qa.charge {
                        atoms[w].charge = c;
                    }
                    idx.push(w);
                }
                None => {
                    let element = qa.element.expect("validated at parse");
                    atoms.push(Atom {
                        element,
                        charge: qa.charge.unwrap_or(0),
                        hydrogens: 0,
                        aromatic: qa.aromatic,
                    });
                    alive.push(true);
                    idx.push(atoms.len() - 1);
                }
            }
        }
        resolved.push(idx);
    }

    // bonds among mapped atoms that the product no longer lists are broken
    let mut product_pairs: BTreeSet<(u32, u32)> = BTreeSet::new();
    for pat in &tmpl.products {
        for &(a, b, _) in &pat.bonds {
            if let (Some(ma), Some(mb)) = (pat.atoms[a].map, pat.atoms[b].map) {
                product_pairs.insert((ma.min(mb), ma.max(mb)));
            }
        }
    }
    for (r, pat) in tmpl.reactants.iter().enumerate() {
        for &(a, b, _) in &pat.bonds {
            if let (Some(ma), Some(mb)) = (pat.atoms[a].map, pat.atoms[b].map) {
                if mapped.contains_key(&ma)
                    && mapped.contains_key(&mb)
                    && !product_pairs.contains(&(ma.min(mb), ma.max(mb)))
                {
                    let wa = offsets[r] + assignment[r][a];
                    let wb = offsets[r] + assignment[r][b];
                    bonds.remove(&key(wa, wb));
                }
            }
        }
    }
    for (k, pat) in tmpl.products.iter().enumerate() {
        for &(a, b, pb) in &pat.bonds {
            let (wa, wb) = (resolved[k][a], resolved[k][b]);
            let order = match pb {
                PatternBond::Order(o) => o,
                PatternBond::Implicit => default_order(atoms[wa].aromatic, atoms[wb].aromatic),
                PatternBond::Any => *bonds.get(&key(wa, wb)).unwrap_or(&BondOrder::Single),
            };
            bonds.insert(key(wa, wb), order);
        }
    }
    bonds.retain(|&(a, b), _| alive[a] && alive[b]);

    let new_bv = bond_sums(atoms.len(), &bonds);
    for i in 0..original {
        if !alive[i] {
            continue;
        }
        let h = atoms[i].hydrogens as i32 + old_bv[i] as i32 - new_bv[i] as i32;
        if !(0..=u8::MAX as i32).contains(&h) {
            return None;
        }
        atoms[i].hydrogens = h as u8;
    }

    let keep: Vec<usize> = (0..atoms.len()).filter(|&i| alive[i]).collect();
    let mut compact = vec![usize::MAX; atoms.len()];
    for (k, &i) in keep.iter().enumerate() {
        compact[i] = k;
    }
    let new_atoms: Vec<Atom> = keep.iter().map(|&i| atoms[i]).collect();
    let new_bonds: Vec<Bond> = bonds
        .iter()
        .map(|(&(a, b), &order)| Bond {
            a: compact[a],
            b: compact[b],
            order,
        })
        .collect();
    let mut whole = Molecule::from_parts(new_atoms, new_bonds).ok()?;
    for i in original..atoms.len() {
        let c = compact[i];
        let h = implicit_hydrogens(&whole, c);
        set_hydrogens(&mut whole, c, h);
    }

    let components = whole.components();
    let mut comp_of = vec![0usize; whole.atom_count()];
    for (ci, comp) in components.iter().enumerate() {
        for &i in comp {
            comp_of[i] = ci;
        }
    }
    let mut taken = BTreeSet::new();
    let mut products = Vec::new();
    for idx in &resolved {
        let ci = comp_of[compact[idx[0]]];
        if taken.insert(ci) {
            products.push(whole.subgraph(&components[ci]));
        }
    }
    Some(products)
}

fn key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

fn bond_sums(n: usize, bonds: &BTreeMap<(usize, usize), BondOrder>) -> Vec<u32> {
    let mut bv = vec![0u32; n];
    for (&(a, b), o) in bonds {
        if a < n && b < n {
            bv[a] += o.valence() as u32;
            bv[b] += o.valence() as u32;
        }
    }
    bv
}

/// Sanitizes, deduplicates and sorts candidates by canonical text.
pub(crate) fn finalize(candidates: Vec<Molecule>) -> (Vec<(CanonicalForm, Molecule)>, usize) {
    let mut rejected = 0;
    let mut seen: BTreeMap<CanonicalForm, Molecule> = BTreeMap::new();
    for mol in candidates {
        if sanitize(&mol).is_err() {
            rejected += 1;
            continue;
        }
        seen.entry(canonical_form(&mol)).or_insert(mol);
    }
    (seen.into_iter().collect(), rejected)
}
