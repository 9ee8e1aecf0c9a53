//! Applies toy templates to building blocks, including the multi-product
//! ester cleavage and the three-component coupling.

use synspace::molgraph::{canonical_form, parse_smiles};
use synspace::reaction::{apply_detailed, ReactionTemplate};
use synspace::toydata;

fn show(tmpl: &ReactionTemplate, reactants: &[&str]) {
    let mols: Vec<_> = reactants.iter().map(|s| parse_smiles(s).unwrap()).collect();
    let refs: Vec<_> = mols.iter().collect();
    let out = apply_detailed(tmpl, &refs).unwrap();
    println!("{}", tmpl.text);
    println!("  reactants {reactants:?}: {} matches", out.matches);
    for (rank, (c, _)) in out.products.iter().enumerate() {
        println!("  rank {rank}: {c}");
    }
}

fn main() {
    let t = toydata::templates();
    show(t.get(0).unwrap(), &["OC(=O)c1ccccc1", "Nc1ccccc1"]);
    show(t.get(5).unwrap(), &["Brc1ccc(cc1)C(=O)O", "OB(O)c1ccccc1"]);
    show(t.get(11).unwrap(), &["CCOC(=O)c1ccccc1"]);
    show(t.get(12).unwrap(), &["O=Cc1ccccc1", "C1CCNCC1", "C#Cc1ccccc1"]);
    show(t.get(0).unwrap(), &["CCO", "Nc1ccccc1"]);

    let product = parse_smiles("O=C(Nc1ccccc1)c1ccccc1").unwrap();
    println!("amide canonical form: {}", canonical_form(&product));
}
