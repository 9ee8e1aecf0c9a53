//! Parses a few molecules, prints canonical forms, hydrogen counts and
//! similarity between them.

use synspace::fingerprint::{morgan_fingerprint, murcko_scaffold, tanimoto};
use synspace::molgraph::{canonical_form, parse_smiles, sanitize};

fn main() {
    let inputs = [
        "OC(=O)c1ccccc1",
        "c1ccccc1C(O)=O",
        "CC(=O)Nc1ccc(O)cc1",
        "C[N+](C)(C)C",
        "c1ccc2[nH]ccc2c1",
    ];
    for s in inputs {
        let m = parse_smiles(s).expect("parse");
        sanitize(&m).expect("valence");
        let h: u32 = m.atoms().iter().map(|a| a.hydrogens as u32).sum();
        println!(
            "{s:24} -> {:28} heavy {:2}  H {h}",
            canonical_form(&m).text,
            m.heavy_atom_count()
        );
    }

    let a = parse_smiles("CC(=O)Nc1ccc(O)cc1").unwrap();
    let b = parse_smiles("CC(=O)Nc1ccc(OC)cc1").unwrap();
    let fa = morgan_fingerprint(&a, 2, 4096);
    let fb = morgan_fingerprint(&b, 2, 4096);
    println!("bits set: {} and {}", fa.count_ones(), fb.count_ones());
    println!("Tanimoto {:.4}", tanimoto(&fa, &fb).unwrap());
    println!(
        "scaffold of {} is {}",
        canonical_form(&b),
        canonical_form(&murcko_scaffold(&b))
    );

    match parse_smiles("C1CC") {
        Ok(_) => println!("unexpected parse"),
        Err(e) => println!("C1CC: {e}"),
    }
}
