//! Cluster split of the toy catalog: train on seven clusters, evaluate on
//! products that use blocks from the held-out one.

use std::time::Instant;
use synspace::bbindex::{kmeans_split, BlockIndex};
use synspace::catalog::Catalog;
use synspace::eval::{evaluate, held_out_pathways};
use synspace::infer::DecodeOptions;
use synspace::model::{
    load_checkpoint, save_checkpoint, train, AdamW, LrSchedule, Model, ModelConfig, SampledSource, TrainOptions,
};
use synspace::reaction::TemplateSet;
use synspace::sampler::SampledPathway;
use synspace::sampler::{EligibilityIndex, SamplerOptions};
use synspace::toydata;

fn main() {
    let mut args = std::env::args().skip(1);
    let steps: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(5000);
    let test_cluster: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let cat = toydata::catalog();
    let templates = toydata::templates();
    let index = BlockIndex::build(&cat);
    let split = kmeans_split(&index, 8, 8, test_cluster).unwrap();
    println!(
        "train {} blocks, test {} blocks",
        split.train_ids.len(),
        split.test_ids.len()
    );

    let train_cat = cat.restrict(&split.train_ids);
    let train_idx = EligibilityIndex::build(&train_cat, &templates);
    let opts = SamplerOptions {
        max_body_len: Some(14),
        ..SamplerOptions::default()
    };
    let mut source = SampledSource {
        catalog: &train_cat,
        templates: &templates,
        index: &train_idx,
        opts,
        seed: 5,
    };
    let test = held_out_pathways(&cat, &templates, &split.test_ids, 200, opts, 99).unwrap();
    let lens: usize = test.iter().map(|p| p.program.tokens.len()).sum();
    println!("test mean tokens {:.1}", lens as f64 / test.len() as f64);
    let ckpt = args.next().map(std::path::PathBuf::from);
    let lr: f64 = std::env::var("LR").ok().and_then(|v| v.parse().ok()).unwrap_or(3e-4);
    let (mut model, mut opt) = match ckpt.as_ref().and_then(|p| load_checkpoint(p).ok()) {
        Some((m, mut o)) => {
            o.lr = lr;
            (m, o)
        }
        None => {
            let m = Model::new(ModelConfig::desk(templates.len())).unwrap();
            let o = AdamW::new(&m.params, lr);
            (m, o)
        }
    };
    let schedule = match std::env::var("COSINE") {
        Ok(_) => LrSchedule::Cosine {
            peak: lr,
            warmup: 500,
            total: opt.step + steps,
            floor: lr / 100.0,
        },
        Err(_) => LrSchedule::Constant,
    };
    let t0 = Instant::now();
    train(
        &mut model,
        &mut opt,
        &mut source,
        TrainOptions {
            steps,
            batch_size: 16,
            schedule,
        },
        |s, l| {
            if s % 500 == 0 {
                println!(
                    "step {s:5}  loss {:8.3}  type {:.4}  rxn {:.4}  {:.0}s",
                    l.total,
                    l.l_type,
                    l.l_rxn,
                    t0.elapsed().as_secs_f64()
                );
            }
        },
    )
    .unwrap();
    if let (Some(p), true) = (&ckpt, steps > 0) {
        save_checkpoint(&model, &opt, p).unwrap();
    }
    report(&model, &cat, &index, &templates, &test);
}

fn report(model: &Model, cat: &Catalog, index: &BlockIndex, templates: &TemplateSet, test: &[SampledPathway]) {
    let smiles: Vec<String> = test.iter().map(|p| p.canonical.text.clone()).collect();
    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let temps: Vec<f64> = std::env::var("TEMPS")
        .ok()
        .map(|v| v.split(',').map(|x| x.parse().unwrap()).collect())
        .unwrap_or(vec![1.0]);
    for t in temps {
        let o = DecodeOptions {
            temperature: t,
            ..DecodeOptions::default()
        };
        let name = format!("T={t}");
        let report = evaluate(model, cat, index, templates, &smiles, &o, workers);
        println!("{name}: {} molecules\n{}", smiles.len(), report.to_table());
        let mut counts = std::collections::BTreeMap::new();
        for r in &report.rows {
            for (k, v) in &r.statuses {
                *counts.entry(k.clone()).or_insert(0) += v;
            }
        }
        println!("attempt statuses: {counts:?}");
    }
}
