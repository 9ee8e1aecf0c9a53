//! Trains a small model for a few hundred steps, then projects a molecule
//! and expands it into analogs. Every reported product is re-executed.

use synspace::bbindex::BlockIndex;
use synspace::infer::{certify, expand_hit, project, DecodeOptions};
use synspace::model::{train, AdamW, Model, ModelConfig, SampledSource, TrainOptions};
use synspace::molgraph::parse_smiles;
use synspace::sampler::{EligibilityIndex, SamplerOptions};
use synspace::toydata;

fn main() {
    let steps: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let catalog = toydata::catalog();
    let templates = toydata::templates();
    let elig = EligibilityIndex::build(&catalog, &templates);
    let mut source = SampledSource {
        catalog: &catalog,
        templates: &templates,
        index: &elig,
        opts: SamplerOptions {
            max_body_len: Some(14),
            ..SamplerOptions::default()
        },
        seed: 3,
    };
    let mut model = Model::new(ModelConfig::desk(templates.len())).unwrap();
    let mut opt = AdamW::new(&model.params, 1e-3);
    train(
        &mut model,
        &mut opt,
        &mut source,
        TrainOptions {
            steps,
            batch_size: 16,
            ..TrainOptions::default()
        },
        |s, l| {
            if s % 100 == 0 {
                println!("step {s}  loss {:.3}", l.total);
            }
        },
    )
    .unwrap();

    let index = BlockIndex::build(&catalog);
    let target = parse_smiles("CC(=O)Nc1ccc(cc1)-c1ccccc1").unwrap();
    let res = project(
        &model,
        &catalog,
        &index,
        &templates,
        &target,
        &DecodeOptions::default(),
        1,
    )
    .unwrap();
    println!("attempts: {:?}", res.statuses);
    for c in &res.candidates {
        println!("  {:.3}  {}  {}", c.scores.morgan, c.canonical, c.program.to_json());
    }

    let ex = expand_hit(
        &model,
        &catalog,
        &index,
        &templates,
        &target,
        50,
        &DecodeOptions::expansion(),
        None,
        1,
    )
    .unwrap();
    let certified = ex
        .analogs
        .iter()
        .filter(|a| certify(&a.program, &a.canonical, &catalog, &templates))
        .count();
    println!("{} analogs from 50 decodes, {certified} re-execute", ex.analogs.len());
}
