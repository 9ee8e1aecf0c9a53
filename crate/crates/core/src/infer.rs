//! Autoregressive decoding interleaved with stack execution.

use crate::bbindex::{BlockIndex, IndexError};
use crate::catalog::Catalog;
use crate::eval::{similarity_scores, SimilarityScores};
use crate::model::tape::{softmax_in_place, Tensor};
use crate::model::{GraphInput, Model, ModelError};
use crate::molgraph::{canonical_form, sanitize, CanonicalForm, Molecule};
use crate::parallel::par_map;
use crate::reaction::TemplateSet;
use crate::seed::{derive_seed, rng_for};
use crate::synthesis::{execute, PostfixProgram, ProductPolicy, Status, SynthesisError, Token, TokenKind, TraceStep};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::io::Write;
use std::process::{Command, Stdio};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum InferError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error("input molecule: {0}")]
    Input(String),
    #[error("options: {0}")]
    Options(String),
    #[error("scoring hook: {0}")]
    Hook(String),
}

/// Next-token distribution parameters for a prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub type_logits: Vec<f64>,
    /// Fingerprint probabilities.
    pub fingerprint: Vec<f64>,
    pub rxn_logits: Vec<f64>,
}

pub trait TokenPredictor {
    type Memory: Send + Sync;
    fn encode(&self, mol: &Molecule) -> Result<Self::Memory, ModelError>;
    /// Prediction for the token following `prefix`.
    fn predict(&self, memory: &Self::Memory, prefix: &[Token]) -> Result<Prediction, ModelError>;
    fn max_seq_len(&self) -> usize;
}

impl TokenPredictor for Model {
    type Memory = Tensor;

    fn encode(&self, mol: &Molecule) -> Result<Tensor, ModelError> {
        Ok(Model::encode(self, &GraphInput::from_molecule(mol)?))
    }

    fn predict(&self, memory: &Tensor, prefix: &[Token]) -> Result<Prediction, ModelError> {
        let out = self.decode(memory, prefix)?;
        let last = prefix.len() - 1;
        Ok(Prediction {
            type_logits: out.type_logits.row(last).to_vec(),
            fingerprint: out.fp_probs.row(last).to_vec(),
            rxn_logits: out.rxn_logits.row(last).to_vec(),
        })
    }

    fn max_seq_len(&self) -> usize {
        self.config.max_seq_len
    }
}

/// Which reaction is written into the prefix after a RXN step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum ReactionFeedback {
    #[default]
    Sampled,
    Argmax,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecodeOptions {
    /// Token budget including Start and End.
    pub max_len: usize,
    pub samples_per_input: usize,
    /// Sampling temperature for types, reactions and block choice; 0 is greedy.
    pub temperature: f64,
    pub top_k: usize,
    /// Pick a random product rank when a reaction gives several products.
    pub branch_ranks: bool,
    pub feedback: ReactionFeedback,
    pub seed: u64,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions {
            max_len: 16,
            samples_per_input: 5,
            temperature: 1.0,
            top_k: 1,
            branch_ranks: false,
            feedback: ReactionFeedback::Sampled,
            seed: 0,
        }
    }
}

impl DecodeOptions {
    pub fn greedy() -> Self {
        DecodeOptions {
            samples_per_input: 1,
            temperature: 0.0,
            ..Self::default()
        }
    }

    /// Settings for hit expansion: hotter sampling over more block candidates.
    pub fn expansion() -> Self {
        DecodeOptions {
            temperature: 1.5,
            top_k: 3,
            ..Self::default()
        }
    }

    fn check(&self, model_len: usize) -> Result<(), InferError> {
        if self.top_k == 0 {
            return Err(InferError::Options("top_k must be at least 1".into()));
        }
        if self.max_len > model_len || self.max_len < 2 {
            return Err(InferError::Options(format!(
                "max_len {} must be in 2..={model_len}",
                self.max_len
            )));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(InferError::Options(
                "temperature must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Index drawn from softmax(logits / t); the first maximum when `t` is 0.
pub fn sample_index(logits: &[f64], t: f64, rng: &mut ChaCha8Rng) -> usize {
    let argmax = (0..logits.len()).fold(0, |b, j| if logits[j] > logits[b] { j } else { b });
    if t <= 0.0 {
        return argmax;
    }
    let mut p: Vec<f64> = logits.iter().map(|z| z / t).collect();
    softmax_in_place(&mut p);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, q) in p.iter().enumerate() {
        acc += q;
        if u < acc {
            return i;
        }
    }
    argmax
}

#[derive(Debug, Clone)]
pub struct Decoded {
    pub status: Status,
    /// Finalized on success; the partial body otherwise.
    pub program: PostfixProgram,
    pub product: Option<Molecule>,
    pub trace: Vec<TraceStep>,
}

/// One decode of an encoded molecule.
#[allow(clippy::too_many_arguments)]
pub fn decode_once<P: TokenPredictor>(
    model: &P,
    memory: &P::Memory,
    catalog: &Catalog,
    index: &BlockIndex,
    templates: &TemplateSet,
    opts: &DecodeOptions,
    seed: u64,
) -> Result<Decoded, InferError> {
    opts.check(model.max_seq_len())?;
    let mut rng = rng_for(seed, &[]);
    let mut machine = crate::synthesis::StackMachine::new(catalog, templates);
    let mut prefix = vec![Token::Start];
    let mut body = Vec::new();
    let finish = |machine: crate::synthesis::StackMachine, status: Status, body: Vec<Token>| {
        let res = machine.into_result(status);
        let mut tokens = vec![Token::Start];
        tokens.extend(body);
        if status == Status::Success {
            tokens.push(Token::End);
        }
        Decoded {
            status,
            program: PostfixProgram { tokens },
            product: res.product,
            trace: res.trace,
        }
    };
    loop {
        if prefix.len() >= opts.max_len {
            return Ok(finish(machine, Status::LengthLimit, body));
        }
        let pred = model.predict(memory, &prefix)?;
        let kind = TokenKind::from_index(sample_index(&pred.type_logits, opts.temperature, &mut rng));
        match kind {
            TokenKind::End => {
                let status = if machine.depth() == 0 {
                    Status::StackUnderflow
                } else {
                    Status::Success
                };
                return Ok(finish(machine, status, body));
            }
            TokenKind::Bb => {
                let hits = index.nearest(&pred.fingerprint, opts.top_k)?;
                let pick = if hits.len() == 1 || opts.temperature <= 0.0 {
                    0
                } else {
                    let neg: Vec<f64> = hits.iter().map(|h| -h.distance).collect();
                    sample_index(&neg, opts.temperature, &mut rng)
                };
                let block = catalog
                    .get(&hits[pick].id)
                    .ok_or_else(|| SynthesisError::UnknownBlock(hits[pick].id.clone()))?;
                machine.push_block(&block.id)?;
                let tok = Token::Bb {
                    id: block.id.clone(),
                    fp: block.fp.clone(),
                };
                body.push(tok.clone());
                prefix.push(tok);
            }
            TokenKind::Rxn => {
                let r = sample_index(&pred.rxn_logits, opts.temperature, &mut rng);
                let branch = opts.branch_ranks;
                let (status, rank) = machine.apply_with(r, |n| if branch { rng.gen_range(0..n) } else { 0 })?;
                body.push(Token::Rxn { r, rank });
                if status != Status::Success {
                    return Ok(finish(machine, status, body));
                }
                let fed = match opts.feedback {
                    ReactionFeedback::Sampled => r,
                    ReactionFeedback::Argmax => sample_index(&pred.rxn_logits, 0.0, &mut rng),
                };
                prefix.push(Token::Rxn { r: fed, rank });
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Candidate {
    pub attempt: usize,
    pub canonical: CanonicalForm,
    #[serde(skip)]
    pub product: Molecule,
    pub program: PostfixProgram,
    pub scores: SimilarityScores,
    #[serde(skip)]
    pub trace: Vec<TraceStep>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProjectionResult {
    /// Successful products, best Morgan similarity first, one per canonical form.
    pub candidates: Vec<Candidate>,
    /// Outcome of every attempt, in attempt order.
    pub statuses: Vec<Status>,
}

fn collect(mol: &Molecule, decodes: Vec<Decoded>) -> ProjectionResult {
    let statuses = decodes.iter().map(|d| d.status).collect();
    let mut candidates: Vec<Candidate> = decodes
        .into_iter()
        .enumerate()
        .filter_map(|(attempt, d)| {
            let product = d.product?;
            Some(Candidate {
                attempt,
                canonical: canonical_form(&product),
                scores: similarity_scores(mol, &product),
                product,
                program: d.program,
                trace: d.trace,
            })
        })
        .collect();
    candidates.sort_by(|a, b| {
        b.scores
            .morgan
            .total_cmp(&a.scores.morgan)
            .then_with(|| a.canonical.cmp(&b.canonical))
            .then_with(|| a.attempt.cmp(&b.attempt))
    });
    candidates.dedup_by(|a, b| a.canonical == b.canonical);
    ProjectionResult { candidates, statuses }
}

fn run_attempts<P: TokenPredictor + Sync>(
    model: &P,
    catalog: &Catalog,
    index: &BlockIndex,
    templates: &TemplateSet,
    mol: &Molecule,
    n: usize,
    opts: &DecodeOptions,
    workers: usize,
) -> Result<ProjectionResult, InferError> {
    opts.check(model.max_seq_len())?;
    sanitize(mol).map_err(|e| InferError::Input(e.to_string()))?;
    let memory = model.encode(mol)?;
    let attempts: Vec<usize> = (0..n).collect();
    let decodes = par_map(&attempts, workers, |_, &a| {
        decode_once(
            model,
            &memory,
            catalog,
            index,
            templates,
            opts,
            derive_seed(opts.seed, &[a as u64]),
        )
    });
    Ok(collect(mol, decodes.into_iter().collect::<Result<_, _>>()?))
}

/// `opts.samples_per_input` decodes of `mol`, ranked by similarity to it.
pub fn project<P: TokenPredictor + Sync>(
    model: &P,
    catalog: &Catalog,
    index: &BlockIndex,
    templates: &TemplateSet,
    mol: &Molecule,
    opts: &DecodeOptions,
    workers: usize,
) -> Result<ProjectionResult, InferError> {
    run_attempts(
        model,
        catalog,
        index,
        templates,
        mol,
        opts.samples_per_input,
        opts,
        workers,
    )
}

/// External scoring command: reads canonical text on stdin, prints one number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoringHook {
    pub program: String,
    pub args: Vec<String>,
}

impl ScoringHook {
    /// Splits a command line on whitespace.
    pub fn parse(cmd: &str) -> Option<Self> {
        let mut parts = cmd.split_whitespace().map(str::to_string);
        Some(ScoringHook {
            program: parts.next()?,
            args: parts.collect(),
        })
    }

    pub fn score(&self, canonical: &str) -> Result<f64, InferError> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| InferError::Hook(format!("{}: {e}", self.program)))?;
        child
            .stdin
            .take()
            .expect("piped stdin")
            .write_all(format!("{canonical}\n").as_bytes())
            .map_err(|e| InferError::Hook(e.to_string()))?;
        let out = child.wait_with_output().map_err(|e| InferError::Hook(e.to_string()))?;
        if !out.status.success() {
            return Err(InferError::Hook(format!("exited with {}", out.status)));
        }
        let text = String::from_utf8_lossy(&out.stdout);
        text.trim()
            .parse::<f64>()
            .map_err(|_| InferError::Hook(format!("expected one number, got {:?}", text.trim())))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Analog {
    pub canonical: CanonicalForm,
    pub program: PostfixProgram,
    pub scores: SimilarityScores,
    /// External score, when a hook is configured.
    pub score: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpansionResult {
    pub attempts: usize,
    pub analogs: Vec<Analog>,
    pub statuses: Vec<Status>,
}

/// `n` decodes around a hit; unique products with their similarity and
/// optional external score.
#[allow(clippy::too_many_arguments)]
pub fn expand_hit<P: TokenPredictor + Sync>(
    model: &P,
    catalog: &Catalog,
    index: &BlockIndex,
    templates: &TemplateSet,
    hit: &Molecule,
    n: usize,
    opts: &DecodeOptions,
    hook: Option<&ScoringHook>,
    workers: usize,
) -> Result<ExpansionResult, InferError> {
    if n == 0 {
        return Err(InferError::Options("n must be at least 1".into()));
    }
    let res = run_attempts(model, catalog, index, templates, hit, n, opts, workers)?;
    let scores = match hook {
        Some(h) => par_map(&res.candidates, workers, |_, c| h.score(&c.canonical.text).map(Some))
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?,
        None => vec![None; res.candidates.len()],
    };
    let analogs = res
        .candidates
        .into_iter()
        .zip(scores)
        .map(|(c, score)| Analog {
            canonical: c.canonical,
            program: c.program,
            scores: c.scores,
            score,
        })
        .collect();
    Ok(ExpansionResult {
        attempts: n,
        analogs,
        statuses: res.statuses,
    })
}

/// Re-executes `program` and checks that it makes `canonical`.
pub fn certify(
    program: &PostfixProgram,
    canonical: &CanonicalForm,
    catalog: &Catalog,
    templates: &TemplateSet,
) -> bool {
    match execute(program, catalog, templates, ProductPolicy::Recorded) {
        Ok(r) => r.status == Status::Success && r.product.map(|p| canonical_form(&p)) == Some(canonical.clone()),
        Err(_) => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::evaluate;
    use crate::model::{AdamW, Example, ModelConfig};
    use crate::molgraph::parse_smiles;
    use crate::reaction::ReactionTemplate;
    use crate::synthesis::StepKind;

    /// Replays a fixed token script regardless of the input.
    struct Script {
        steps: Vec<Token>,
        n_rxn: usize,
        sharp: f64,
    }

    impl TokenPredictor for Script {
        type Memory = ();

        fn encode(&self, _: &Molecule) -> Result<(), ModelError> {
            Ok(())
        }

        fn predict(&self, _: &(), prefix: &[Token]) -> Result<Prediction, ModelError> {
            let tok = self.steps.get(prefix.len() - 1).unwrap_or(&Token::End);
            let mut type_logits = vec![0.0; 3];
            type_logits[tok.kind().unwrap() as usize] = self.sharp;
            let mut rxn_logits = vec![0.0; self.n_rxn];
            let mut fingerprint = vec![0.5; 256];
            match tok {
                Token::Bb { fp, .. } => fingerprint = fp.to_f64(),
                Token::Rxn { r, .. } => rxn_logits[*r] = self.sharp,
                _ => {}
            }
            Ok(Prediction {
                type_logits,
                fingerprint,
                rxn_logits,
            })
        }

        fn max_seq_len(&self) -> usize {
            16
        }
    }

    fn fixture() -> (Catalog, TemplateSet, BlockIndex) {
        let (cat, _) =
            Catalog::parse("acid\tOC(=O)c1ccccc1\namine\tNCCO\nester\tCOC(=O)CN\nketone\tCC(=O)C\nbr\tBrc1ccc(C)cc1\n")
                .unwrap();
        let t = TemplateSet::new(vec![
            ReactionTemplate::parse("[C:1](=O)[O;D1].[N;D1:2]>>[C:1](=O)[N:2]").unwrap(),
            ReactionTemplate::parse("[C:1](=O)[O:2][C;D1:3]>>[C:1](=O)O.[O:2][C:3]").unwrap(),
        ]);
        let idx = BlockIndex::build(&cat);
        (cat, t, idx)
    }

    fn script(cat: &Catalog, body: &[&str]) -> Script {
        let steps = body
            .iter()
            .map(|s| match s.strip_prefix('R') {
                Some(r) => Token::rxn(r.parse().unwrap()),
                None => Token::bb(cat, s).unwrap(),
            })
            .collect();
        Script {
            steps,
            n_rxn: 2,
            sharp: 50.0,
        }
    }

    fn target() -> Molecule {
        parse_smiles("O=C(NCCO)c1ccccc1").unwrap()
    }

    #[test]
    fn replays_a_program() {
        let (cat, t, idx) = fixture();
        let s = script(&cat, &["acid", "amine", "R0"]);
        let d = decode_once(&s, &(), &cat, &idx, &t, &DecodeOptions::greedy(), 1).unwrap();
        assert_eq!(d.status, Status::Success);
        assert_eq!(d.program.tokens.len(), 5);
        let canon = canonical_form(d.product.as_ref().unwrap());
        assert_eq!(canon, canonical_form(&target()));
        assert!(certify(&d.program, &canon, &cat, &t));
        // depth after each step: pushes add one, an arity-k reaction removes k-1
        let mut depth = 0i64;
        for step in &d.trace {
            depth += match step.kind {
                StepKind::Push { .. } => 1,
                StepKind::Apply { r, .. } => 1 - t.get(r).unwrap().arity() as i64,
            };
            assert_eq!(step.depth as i64, depth);
            assert!(depth >= 1);
        }
    }

    #[test]
    fn failure_statuses() {
        let (cat, t, idx) = fixture();
        let g = DecodeOptions::greedy();
        let under = decode_once(&script(&cat, &["R0"]), &(), &cat, &idx, &t, &g, 1).unwrap();
        assert_eq!(under.status, Status::StackUnderflow);
        assert!(under.product.is_none());
        let nomatch = decode_once(&script(&cat, &["amine", "acid", "R0"]), &(), &cat, &idx, &t, &g, 1).unwrap();
        assert_eq!(nomatch.status, Status::NoMatch);
        let early_end = decode_once(&script(&cat, &[]), &(), &cat, &idx, &t, &g, 1).unwrap();
        assert_eq!(early_end.status, Status::StackUnderflow);
        let endless = script(&cat, &["ketone"; 40]);
        let long = decode_once(&endless, &(), &cat, &idx, &t, &g, 1).unwrap();
        assert_eq!(long.status, Status::LengthLimit);
        assert_eq!(long.program.tokens.len(), 16);
        let exact = script(&cat, &["ketone"; 14]);
        let ok = decode_once(&exact, &(), &cat, &idx, &t, &g, 1).unwrap();
        assert_eq!(ok.status, Status::Success);
        assert_eq!(ok.program.tokens.len(), 16);
    }

    #[test]
    fn projection_ranks_and_dedups() {
        let (cat, t, idx) = fixture();
        let s = script(&cat, &["acid", "amine", "R0"]);
        let opts = DecodeOptions {
            samples_per_input: 4,
            ..DecodeOptions::greedy()
        };
        let res = project(&s, &cat, &idx, &t, &target(), &opts, 2).unwrap();
        assert_eq!(res.statuses, vec![Status::Success; 4]);
        assert_eq!(res.candidates.len(), 1);
        assert_eq!(res.candidates[0].scores.morgan, 1.0);
        let none = project(
            &s,
            &cat,
            &idx,
            &t,
            &target(),
            &DecodeOptions {
                samples_per_input: 0,
                ..opts
            },
            1,
        )
        .unwrap();
        assert!(none.candidates.is_empty() && none.statuses.is_empty());
    }

    #[test]
    fn sampled_decoding_is_seeded() {
        let (cat, t, idx) = fixture();
        let mut s = script(&cat, &["ester", "R1"]);
        s.sharp = 1.0;
        let opts = DecodeOptions {
            samples_per_input: 20,
            top_k: 3,
            branch_ranks: true,
            ..DecodeOptions::default()
        };
        let a = project(&s, &cat, &idx, &t, &target(), &opts, 1).unwrap();
        let b = project(&s, &cat, &idx, &t, &target(), &opts, 3).unwrap();
        assert_eq!(a.statuses, b.statuses);
        let texts = |r: &ProjectionResult| {
            r.candidates
                .iter()
                .map(|c| c.canonical.text.clone())
                .collect::<Vec<_>>()
        };
        assert_eq!(texts(&a), texts(&b));
        assert!(
            a.statuses.iter().any(|&s| s != a.statuses[0]),
            "sampling varies outcomes"
        );
        for c in &a.candidates {
            assert!(certify(&c.program, &c.canonical, &cat, &t));
        }
    }

    #[test]
    fn degenerate_expansion_equals_greedy_projection() {
        let (cat, t, idx) = fixture();
        let s = script(&cat, &["acid", "amine", "R0"]);
        let g = DecodeOptions::greedy();
        let p = project(&s, &cat, &idx, &t, &target(), &g, 1).unwrap();
        let e = expand_hit(&s, &cat, &idx, &t, &target(), 1, &g, None, 1).unwrap();
        assert_eq!(e.analogs.len(), 1);
        assert_eq!(e.analogs[0].canonical, p.candidates[0].canonical);
        assert_eq!(e.analogs[0].program, p.candidates[0].program);
        assert!(expand_hit(&s, &cat, &idx, &t, &target(), 0, &g, None, 1).is_err());
    }

    #[test]
    fn scoring_hook_reads_stdout() {
        let hook = ScoringHook::parse("wc -c").unwrap();
        assert_eq!(hook.score("CCO").unwrap(), 4.0);
        let bad = ScoringHook::parse("echo not-a-number").unwrap();
        assert!(matches!(bad.score("C"), Err(InferError::Hook(_))));
    }

    #[test]
    fn underflowing_stub_scores_zero() {
        let (cat, t, idx) = fixture();
        let s = script(&cat, &["R0", "R0"]);
        let mols = vec!["O=C(NCCO)c1ccccc1".to_string(), "CCO".to_string(), "C1CC".to_string()];
        let r = evaluate(&s, &cat, &idx, &t, &mols, &DecodeOptions::default(), 2);
        assert_eq!(r.molecules, 3);
        assert_eq!(r.success_rate, 0.0);
        assert_eq!(r.mean_morgan, 0.0);
        assert_eq!(r.mean_scaffold, 0.0);
        assert_eq!(r.rows[0].statuses["StackUnderflow"], 5);
        assert!(r.rows[2].error.is_some());
        let good = script(&cat, &["acid", "amine", "R0"]);
        let r = evaluate(&good, &cat, &idx, &t, &mols[..2], &DecodeOptions::default(), 1);
        assert_eq!(r.success_rate, 1.0);
        assert_eq!(r.reconstruction_rate, 0.5);
        assert!(r.reconstruction_rate <= r.success_rate);
    }

    #[test]
    fn overfit_model_reconstructs_its_pathway() {
        let (cat, t, idx) = fixture();
        let prog = PostfixProgram::finalized(vec![
            Token::bb(&cat, "acid").unwrap(),
            Token::bb(&cat, "amine").unwrap(),
            Token::rxn(0),
        ]);
        let ex = Example::new(&target(), &prog).unwrap();
        let mut model = Model::new(ModelConfig::desk(t.len())).unwrap();
        let mut opt = AdamW::new(&model.params, 3e-3);
        for _ in 0..150 {
            crate::model::train_step(&mut model, &mut opt, std::slice::from_ref(&ex)).unwrap();
        }
        let mem = TokenPredictor::encode(&model, &target()).unwrap();
        let d = decode_once(&model, &mem, &cat, &idx, &t, &DecodeOptions::greedy(), 0).unwrap();
        assert_eq!(d.status, Status::Success);
        assert_eq!(d.program, prog);
    }
}
