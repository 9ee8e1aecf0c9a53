use proptest::prelude::*;
use synspace::fingerprint::{morgan_fingerprint, tanimoto};
use synspace::molgraph::{canonical_form, parse_smiles, Molecule};
use synspace::toydata;

fn catalog_molecules() -> Vec<Molecule> {
    toydata::catalog().blocks().iter().map(|b| b.mol.clone()).collect()
}

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn canonical_form_ignores_atom_order(i in 0usize..254, seed in any::<u64>()) {
        let mols = catalog_molecules();
        let m = &mols[i % mols.len()];
        let p = m.permuted(&permutation(m.atom_count(), seed));
        prop_assert_eq!(canonical_form(m), canonical_form(&p));
    }

    #[test]
    fn canonical_text_parses_back(i in 0usize..254) {
        let mols = catalog_molecules();
        let c = canonical_form(&mols[i % mols.len()]);
        let again = parse_smiles(&c.text).unwrap();
        prop_assert_eq!(canonical_form(&again), c);
    }

    #[test]
    fn fingerprint_ignores_atom_order(i in 0usize..254, seed in any::<u64>()) {
        let mols = catalog_molecules();
        let m = &mols[i % mols.len()];
        let p = m.permuted(&permutation(m.atom_count(), seed));
        prop_assert_eq!(morgan_fingerprint(m, 2, 256), morgan_fingerprint(&p, 2, 256));
        prop_assert_eq!(morgan_fingerprint(m, 2, 4096), morgan_fingerprint(&p, 2, 4096));
    }

    #[test]
    fn tanimoto_symmetric_and_bounded(i in 0usize..254, j in 0usize..254) {
        let mols = catalog_molecules();
        let a = morgan_fingerprint(&mols[i % mols.len()], 2, 4096);
        let b = morgan_fingerprint(&mols[j % mols.len()], 2, 4096);
        let ab = tanimoto(&a, &b).unwrap();
        prop_assert_eq!(ab, tanimoto(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(tanimoto(&a, &a).unwrap(), 1.0);
    }
}
