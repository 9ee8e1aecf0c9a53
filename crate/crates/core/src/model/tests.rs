use super::*;
use crate::catalog::Catalog;
use crate::molgraph::parse_smiles;
use crate::reaction::TemplateSet;
use crate::sampler::{EligibilityIndex, SamplerOptions};
use crate::synthesis::{PostfixProgram, Token};
use crate::toydata;

fn toy() -> (Catalog, TemplateSet) {
    (toydata::catalog(), toydata::templates())
}

fn examples(cat: &Catalog, t: &TemplateSet, n: usize, seed: u64) -> Vec<Example> {
    let idx = EligibilityIndex::build(cat, t);
    let mut src = SampledSource {
        catalog: cat,
        templates: t,
        index: &idx,
        opts: SamplerOptions {
            max_reactions: 3,
            max_body_len: Some(14),
            ..SamplerOptions::default()
        },
        seed,
    };
    src.batch(0, n).unwrap()
}

fn has_rxn_and_bb(ex: &Example) -> bool {
    ex.tokens.iter().any(|t| matches!(t, Token::Rxn { .. })) && ex.tokens.len() >= 4
}

#[test]
fn uniform_type_loss_at_init() {
    let (cat, t) = toy();
    let model = Model::new(ModelConfig::desk(t.len())).unwrap();
    for ex in examples(&cat, &t, 4, 1) {
        let l = model.loss(&ex.graph, &ex.tokens).unwrap();
        assert!((l.l_type - 3f64.ln()).abs() < 1e-12, "{}", l.l_type);
        assert!(l.l_rxn == 0.0 || (l.l_rxn - (t.len() as f64).ln()).abs() < 1e-12);
    }
}

#[test]
fn gradients_match_finite_differences() {
    let (cat, t) = toy();
    let mut model = Model::new(ModelConfig::tiny(t.len())).unwrap();
    gradcheck::jitter(&mut model, 5, 0.3);
    let exs: Vec<Example> = examples(&cat, &t, 6, 2)
        .into_iter()
        .filter(has_rxn_and_bb)
        .take(2)
        .collect();
    let report = gradcheck::gradient_check(&mut model, &exs, 1e-4).unwrap();
    for g in &report {
        assert!(g.relative <= 1e-4, "{} relative error {}", g.name, g.relative);
    }
    assert!(report.iter().all(|g| g.norm > 0.0), "every group gets gradient");
}

#[test]
fn decoder_is_causal() {
    let (cat, t) = toy();
    let model = Model::new(ModelConfig::desk(t.len())).unwrap();
    let mut model = model;
    gradcheck::jitter(&mut model, 9, 0.1);
    let ex = examples(&cat, &t, 8, 3)
        .into_iter()
        .find(|e| e.tokens.len() >= 5)
        .unwrap();
    let prefix = &ex.tokens[..ex.tokens.len() - 1];
    let a = model.forward(&ex.graph, prefix).unwrap();
    let mut edited = prefix.to_vec();
    let last = edited.len() - 1;
    edited[last] = match &edited[last] {
        Token::Rxn { r, .. } => Token::rxn((r + 1) % t.len()),
        _ => Token::rxn(0),
    };
    let b = model.forward(&ex.graph, &edited).unwrap();
    for i in 0..last {
        assert_eq!(a.type_logits.row(i), b.type_logits.row(i));
        assert_eq!(a.fp_probs.row(i), b.fp_probs.row(i));
        assert_eq!(a.rxn_logits.row(i), b.rxn_logits.row(i));
    }
    assert_ne!(a.type_logits.row(last), b.type_logits.row(last));
}

#[test]
fn encoder_is_permutation_equivariant() {
    let mut model = Model::new(ModelConfig::desk(4)).unwrap();
    gradcheck::jitter(&mut model, 2, 0.1);
    let mol = parse_smiles("CC(=O)Nc1ccc(O)cc1C#N").unwrap();
    let n = mol.atom_count();
    let perm: Vec<usize> = (0..n).map(|i| (i * 5 + 3) % n).collect();
    let a = model.encode(&GraphInput::from_molecule(&mol).unwrap());
    let b = model.encode(&GraphInput::from_molecule(&mol.permuted(&perm)).unwrap());
    for (old, &new) in perm.iter().enumerate() {
        for (x, y) in a.row(old).iter().zip(b.row(new)) {
            assert!((x - y).abs() < 1e-5);
        }
    }
}

#[test]
fn methane_has_one_row() {
    let model = Model::new(ModelConfig::desk(2)).unwrap();
    let g = GraphInput::from_molecule(&parse_smiles("C").unwrap()).unwrap();
    let e = model.encode(&g);
    assert_eq!((e.rows, e.cols), (1, 64));
    assert!(e.data.iter().all(|x| x.is_finite()));
    assert_eq!(g.features[0][1], ATOM_FEATURES - 6 - 2 - 5 - 5 + 4);
}

#[test]
fn batch_mean_equals_individual_losses() {
    let (cat, t) = toy();
    let model = Model::new(ModelConfig::desk(t.len())).unwrap();
    let exs = examples(&cat, &t, 2, 4);
    let solo: Vec<_> = exs
        .iter()
        .map(|e| model.forward(&e.graph, &e.tokens[..e.tokens.len() - 1]).unwrap())
        .collect();
    let again: Vec<_> = exs
        .iter()
        .rev()
        .map(|e| model.forward(&e.graph, &e.tokens[..e.tokens.len() - 1]).unwrap())
        .collect();
    assert_eq!(solo[0], again[1]);
    assert_eq!(solo[1], again[0]);
    let mut g = model.zero_grads();
    let mut mean = 0.0;
    for e in &exs {
        mean += 0.5 * model.loss_and_grad(&e.graph, &e.tokens, 0.5, &mut g).unwrap().total;
    }
    let direct: f64 = exs
        .iter()
        .map(|e| model.loss(&e.graph, &e.tokens).unwrap().total)
        .sum::<f64>()
        / 2.0;
    assert!((mean - direct).abs() < 1e-12);
}

#[test]
fn token_embeddings() {
    let (cat, t) = toy();
    let model = Model::new(ModelConfig::desk(t.len())).unwrap();
    let start = model.embed_tokens(&[Token::Start]).unwrap();
    let pe0 = positional_encoding(0, 64);
    for j in 0..64 {
        assert_eq!(start.get(0, j), model.params[model_e_start(&model)].data[j] + pe0[j]);
    }
    let bb = Token::bb(&cat, &cat.blocks()[0].id).unwrap();
    let prefix = [Token::Start, bb.clone(), Token::rxn(1), bb];
    let e = model.embed_tokens(&prefix).unwrap();
    let (p1, p3) = (positional_encoding(1, 64), positional_encoding(3, 64));
    for j in 0..64 {
        let want = p1[j] - p3[j];
        assert!((e.get(1, j) - e.get(3, j) - want).abs() < 1e-12);
    }
    let long = vec![Token::rxn(0); 16];
    let mut p = vec![Token::Start];
    p.extend(long);
    assert_eq!(
        model.embed_tokens(&p).unwrap_err(),
        ModelError::SequenceTooLong { len: 17, max: 16 }
    );
}

fn model_e_start(model: &Model) -> usize {
    model.names().iter().position(|n| n == "dec.e_start").unwrap()
}

#[test]
fn fresh_outputs_are_well_formed() {
    let (cat, t) = toy();
    let model = Model::new(ModelConfig::desk(t.len())).unwrap();
    let ex = &examples(&cat, &t, 1, 6)[0];
    let out = model.forward(&ex.graph, &ex.tokens[..ex.tokens.len() - 1]).unwrap();
    assert!(out.type_logits.data.iter().all(|x| x.is_finite()));
    assert!(out.fp_probs.data.iter().all(|&p| p > 0.0 && p < 1.0));
}

fn ln(x: f64) -> f64 {
    x.ln()
}

/// Scalar re-implementation of the loss from head outputs.
fn scalar_loss(out: &Outputs, targets: &[Token]) -> (f64, f64, f64) {
    let (mut lt, mut lb, mut lr) = (0.0, 0.0, 0.0);
    let (mut n, mut m) = (0, 0);
    for (i, tok) in targets.iter().enumerate() {
        let row = out.type_logits.row(i);
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        lt -= ln(row[tok.kind().unwrap() as usize].exp() / z);
        match tok {
            Token::Bb { fp, .. } => {
                n += 1;
                for j in 0..fp.len() {
                    let p = out.fp_probs.get(i, j).clamp(1e-7, 1.0 - 1e-7);
                    let y = if fp.get(j) { 1.0 } else { 0.0 };
                    lb -= y * ln(p) + (1.0 - y) * ln(1.0 - p);
                }
            }
            Token::Rxn { r, .. } => {
                m += 1;
                let row = out.rxn_logits.row(i);
                let z: f64 = row.iter().map(|v| v.exp()).sum();
                lr -= ln(row[*r].exp() / z);
            }
            _ => {}
        }
    }
    let lt = lt / targets.len() as f64;
    let lb = if n == 0 { 0.0 } else { lb / n as f64 };
    let lr = if m == 0 { 0.0 } else { lr / m as f64 };
    (lt, lb, lr)
}

#[test]
fn loss_matches_scalar_oracle() {
    let (cat, t) = toy();
    let mut model = Model::new(ModelConfig::desk(t.len())).unwrap();
    gradcheck::jitter(&mut model, 11, 0.05);
    let block = &cat.blocks()[3];
    let prog = PostfixProgram::finalized(vec![Token::bb(&cat, &block.id).unwrap()]);
    let mut exs = vec![Example::new(&block.mol, &prog).unwrap()];
    exs.extend(examples(&cat, &t, 3, 7));
    for ex in &exs {
        let l = model.loss(&ex.graph, &ex.tokens).unwrap();
        let out = model.forward(&ex.graph, &ex.tokens[..ex.tokens.len() - 1]).unwrap();
        let (lt, lb, lr) = scalar_loss(&out, &ex.tokens[1..]);
        assert!((l.l_type - lt).abs() < 1e-10, "{} {}", l.l_type, lt);
        assert!((l.l_bb - lb).abs() < 1e-10 * lb.max(1.0), "{} {}", l.l_bb, lb);
        assert!((l.l_rxn - lr).abs() < 1e-10, "{} {}", l.l_rxn, lr);
        assert!((l.total - (l.l_type + l.l_bb + l.l_rxn)).abs() <= 1e-12);
    }
}

#[test]
fn perfect_fingerprint_prediction_costs_only_the_clip() {
    let params = vec![tape::Tensor::from_vec(
        2,
        3,
        vec![40.0, -40.0, 40.0, -40.0, -40.0, 40.0],
    )];
    let mut t = tape::Tape::new(&params);
    let p = t.param(0);
    let l = t.bce(p, vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
    // three clipped bits per position, summed over bits
    assert!(t.scalar(l) < 3.0 * 1.000001e-7);
}

#[test]
fn zero_learning_rate_changes_only_moments() {
    let (cat, t) = toy();
    let mut model = Model::new(ModelConfig::desk(t.len())).unwrap();
    let before = model.params.clone();
    let mut opt = AdamW::new(&model.params, 0.0);
    train_step(&mut model, &mut opt, &examples(&cat, &t, 2, 8)).unwrap();
    assert_eq!(model.params, before);
    assert!(opt.m.iter().flatten().any(|&x| x != 0.0));
}

#[test]
fn train_step_is_deterministic() {
    let (cat, t) = toy();
    let batch = examples(&cat, &t, 2, 9);
    let run = || {
        let mut model = Model::new(ModelConfig::desk(t.len())).unwrap();
        let mut opt = AdamW::new(&model.params, 3e-4);
        train_step(&mut model, &mut opt, &batch).unwrap();
        model.params
    };
    assert_eq!(run(), run());
}

#[test]
fn overfits_a_fixed_batch() {
    let (cat, t) = toy();
    let batch = examples(&cat, &t, 4, 10);
    let mut model = Model::new(ModelConfig::desk(t.len())).unwrap();
    let mut opt = AdamW::new(&model.params, 1e-3);
    let first = train_step(&mut model, &mut opt, &batch).unwrap().total;
    let mut last = first;
    for _ in 1..200 {
        last = train_step(&mut model, &mut opt, &batch).unwrap().total;
    }
    assert!(last <= 0.5 * first, "loss {first} -> {last}");
}

#[test]
fn checkpoint_round_trip_and_errors() {
    let (cat, t) = toy();
    let batch = examples(&cat, &t, 2, 12);
    let mut model = Model::new(ModelConfig::desk(t.len())).unwrap();
    let mut opt = AdamW::new(&model.params, 3e-4);
    train_step(&mut model, &mut opt, &batch).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.svck");
    save_checkpoint(&model, &opt, &path).unwrap();
    let (m2, o2) = load_checkpoint(&path).unwrap();
    assert_eq!(m2.params, model.params);
    assert_eq!(o2, opt);
    let ex = &batch[0];
    let prefix = &ex.tokens[..ex.tokens.len() - 1];
    assert_eq!(
        model.forward(&ex.graph, prefix).unwrap(),
        m2.forward(&ex.graph, prefix).unwrap()
    );

    let bytes = to_bytes(&model, &opt);
    assert!(matches!(
        from_bytes(&bytes[..bytes.len() / 2]),
        Err(ModelError::CorruptFile(_))
    ));
    let mut flipped = bytes.clone();
    flipped[100] ^= 1;
    assert!(matches!(from_bytes(&flipped), Err(ModelError::CorruptFile(_))));
    let mut v2 = bytes.clone();
    v2[4] = 2;
    assert!(matches!(
        from_bytes(&v2),
        Err(ModelError::VersionMismatch { found: 2, .. })
    ));
    assert!(matches!(
        m2.check_reactions(t.len() + 1),
        Err(ModelError::ConfigMismatch(_))
    ));
}

#[test]
fn cosine_schedule_shape() {
    let s = LrSchedule::Cosine {
        peak: 1e-3,
        warmup: 10,
        total: 110,
        floor: 1e-5,
    };
    assert_eq!(LrSchedule::Constant.lr(5), None);
    assert!((s.lr(5).unwrap() - 5e-4).abs() < 1e-15);
    assert!((s.lr(10).unwrap() - 1e-3).abs() < 1e-15);
    assert!((s.lr(60).unwrap() - (1e-5 + 0.5 * (1e-3 - 1e-5))).abs() < 1e-15);
    assert_eq!(s.lr(110), Some(1e-5));
    assert_eq!(s.lr(500), Some(1e-5));
    let (cat, t) = toy();
    let mut model = Model::new(ModelConfig::tiny(t.len())).unwrap();
    let mut opt = AdamW::new(&model.params, 0.5);
    let mut src = FixedSource::new(examples(&cat, &t, 2, 3), 0);
    let opts = TrainOptions {
        steps: 3,
        batch_size: 1,
        schedule: s,
    };
    train(&mut model, &mut opt, &mut src, opts, |_, _| {}).unwrap();
    assert!((opt.lr - 3e-4).abs() < 1e-15);
}
