//! Samples random pathways from the toy catalog and re-executes them.

use std::time::Instant;
use synspace::sampler::{EligibilityIndex, Sampler, SamplerOptions};
use synspace::synthesis::{execute, ProductPolicy, Status, SynthesisTree, Token};
use synspace::toydata;

fn main() {
    let catalog = toydata::catalog();
    let templates = toydata::templates();
    let index = EligibilityIndex::build(&catalog, &templates);
    let sampler = Sampler::new(&catalog, &templates, &index, SamplerOptions::default());

    let n = 1000;
    let start = Instant::now();
    let (mut ok, mut branched, mut max_len) = (0, 0, 0);
    let mut per_template = vec![0usize; templates.len()];
    for seed in 0..n {
        let p = sampler.sample(seed).expect("sample");
        let res = execute(&p.program, &catalog, &templates, ProductPolicy::default()).unwrap();
        if res.status == Status::Success {
            ok += 1;
        }
        for tok in p.program.body() {
            if let Token::Rxn { r, .. } = tok {
                per_template[*r] += 1;
            }
        }
        let is_branched = convergent(&p.tree);
        branched += is_branched as usize;
        max_len = max_len.max(p.program.tokens.len());
        if seed < 3 {
            println!("{} -> {}", p.program.to_json(), p.canonical);
        }
    }
    println!(
        "{ok}/{n} execute ok, {branched} convergent, longest program {max_len} tokens, {:.2?}",
        start.elapsed()
    );
    println!("reactions per template: {per_template:?}");
}

/// Some reaction consumes two or more intermediates.
fn convergent(t: &SynthesisTree) -> bool {
    match t {
        SynthesisTree::Leaf(_) => false,
        SynthesisTree::Apply { children, .. } => {
            let inner = children
                .iter()
                .filter(|c| matches!(c, SynthesisTree::Apply { .. }))
                .count();
            inner >= 2 || children.iter().any(convergent)
        }
    }
}
