//! Overfits the desk-scale model on 64 fixed toy pathways and reports
//! teacher-forced type accuracy and greedy reconstruction.

use std::time::Instant;
use synspace::bbindex::BlockIndex;
use synspace::infer::{decode_once, DecodeOptions, TokenPredictor};
use synspace::model::{type_accuracy, AdamW, Example, FixedSource, Model, ModelConfig, SampledSource, TrainOptions};
use synspace::sampler::{EligibilityIndex, SamplerOptions};
use synspace::synthesis::Status;
use synspace::toydata;

fn main() {
    let steps: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5000);
    let cat = toydata::catalog();
    let templates = toydata::templates();
    let idx = EligibilityIndex::build(&cat, &templates);
    let source = SampledSource {
        catalog: &cat,
        templates: &templates,
        index: &idx,
        opts: SamplerOptions {
            max_body_len: Some(14),
            ..SamplerOptions::default()
        },
        seed: 64,
    };
    let pathways: Vec<_> = (0..64).map(|i| source.pathway(i).unwrap()).collect();
    let examples: Vec<Example> = pathways.iter().map(|(e, _)| e.clone()).collect();
    let atoms: usize = examples.iter().map(|e| e.graph.atom_count()).sum();
    let tokens: usize = examples.iter().map(|e| e.tokens.len()).sum();
    println!(
        "64 pathways, mean {:.1} atoms, mean {:.1} tokens",
        atoms as f64 / 64.0,
        tokens as f64 / 64.0
    );

    let mut model = Model::new(ModelConfig::desk(templates.len())).unwrap();
    let mut opt = AdamW::new(&model.params, 3e-4);
    let mut fixed = FixedSource::new(examples.clone(), 1);
    let t0 = Instant::now();
    synspace::model::train(
        &mut model,
        &mut opt,
        &mut fixed,
        TrainOptions {
            steps,
            batch_size: 16,
            ..TrainOptions::default()
        },
        |s, l| {
            if s % 250 == 0 || s == 1 {
                println!(
                    "step {s:5}  loss {:9.4}  type {:.4}  bb {:8.4}  rxn {:.4}  {:.1}s",
                    l.total,
                    l.l_type,
                    l.l_bb,
                    l.l_rxn,
                    t0.elapsed().as_secs_f64()
                );
            }
        },
    )
    .unwrap();
    println!("trained {steps} steps in {:.1}s", t0.elapsed().as_secs_f64());
    println!("type accuracy {:.4}", type_accuracy(&model, &examples).unwrap());
    let index = BlockIndex::build(&cat);
    let mut hits = 0;
    for (ex, product) in &pathways {
        let mem = TokenPredictor::encode(&model, product).unwrap();
        let d = decode_once(&model, &mem, &cat, &index, &templates, &DecodeOptions::greedy(), 0).unwrap();
        if d.status == Status::Success && d.program.tokens == ex.tokens {
            hits += 1;
        }
    }
    println!("greedy reconstruction {hits}/64");
}
