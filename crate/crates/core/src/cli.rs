//! Command-line front end. Exit codes: 0 ok, 1 usage, 2 data.

use crate::bbindex::{kmeans_split, max_train_similarity_filter, BlockIndex};
use crate::catalog::Catalog;
use crate::eval::evaluate;
use crate::infer::{certify, expand_hit, project, DecodeOptions, ReactionFeedback, ScoringHook};
use crate::io::write_atomic;
use crate::model::{
    load_checkpoint, save_checkpoint, train, AdamW, BatchSource, Example, FixedSource, LrSchedule, Model, ModelConfig,
    SampledSource, TrainOptions,
};
use crate::molgraph::{canonical_form, parse_smiles, sanitize, Molecule};
use crate::parallel::par_map;
use crate::reaction::TemplateSet;
use crate::sampler::{prune_unmatched, EligibilityIndex, Sampler, SamplerOptions};
use crate::seed::derive_seed;
use crate::synthesis::{execute, PostfixProgram, ProductPolicy, Status};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::collections::HashMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "error: {m}"),
        }
    }
}

fn data<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

#[derive(Parser, Debug)]
#[command(
    name = "synspace",
    version,
    about = "Synthesis programs, block retrieval and molecule projection"
)]
pub struct Cli {
    /// key=value file; flags given on the command line take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for sampling, decoding and evaluation [default: 1]
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample (program, product) pairs as JSON lines.
    SampleData(SampleDataArgs),
    /// Write the fingerprint index of a catalog.
    BuildIndex(BuildIndexArgs),
    /// K-means split of a catalog, optionally with the similarity filter.
    Split(SplitArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Project molecules into the synthesizable space.
    Project(ProjectArgs),
    /// Generate analogs of a hit molecule.
    Expand(ExpandArgs),
    /// Success, reconstruction and similarity metrics on a molecule set.
    Evaluate(EvaluateArgs),
    /// Run programs through the stack machine.
    Exec(ExecArgs),
}

#[derive(Args, Debug, Default)]
pub struct DataArgs {
    /// Building-block catalog, <id><TAB><smiles> per line.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Reaction templates, <id><TAB><arity><TAB><template> per line.
    #[arg(long)]
    pub templates: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct SamplerArgs {
    /// Maximum reactions per pathway (m_r) [default: 5]
    #[arg(long)]
    pub max_reactions: Option<usize>,
    /// Heavy-atom limit on intermediates (m_a) [default: 80]
    #[arg(long)]
    pub max_atoms: Option<usize>,
    /// Body token cap, Start and End excluded [default: 14]
    #[arg(long)]
    pub max_body_len: Option<usize>,
    /// Chance of growing a fresh slot from a one-step sub-pathway [default: 0.15]
    #[arg(long)]
    pub branch_prob: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SampleDataArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    /// Number of pathways [default: 1000]
    #[arg(long)]
    pub n: Option<usize>,
    /// Base seed [default: 42]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output JSON-lines file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BuildIndexArgs {
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Templates used to drop blocks that match none (optional).
    #[arg(long)]
    pub templates: Option<PathBuf>,
    /// Output index file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Number of clusters [default: 128]
    #[arg(long)]
    pub k: Option<usize>,
    /// Held-out cluster [default: 0]
    #[arg(long)]
    pub test_cluster: Option<usize>,
    /// Seed for k-means++ [default: 42]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Drop test blocks whose max train similarity exceeds this (e.g. 0.6).
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Output catalog of training blocks.
    #[arg(long)]
    pub train_out: Option<PathBuf>,
    /// Output catalog of test blocks.
    #[arg(long)]
    pub test_out: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct ModelArgs {
    /// [default: 64]
    #[arg(long)]
    pub d_model: Option<usize>,
    /// [default: 4]
    #[arg(long)]
    pub heads: Option<usize>,
    /// [default: 2]
    #[arg(long)]
    pub encoder_layers: Option<usize>,
    /// [default: 2]
    #[arg(long)]
    pub decoder_layers: Option<usize>,
    /// Feed-forward width [default: 128]
    #[arg(long)]
    pub d_ff: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Optimizer steps [default: 5000]
    #[arg(long)]
    pub steps: Option<u64>,
    /// [default: 16]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Peak learning rate [default: 0.0003]
    #[arg(long)]
    pub lr: Option<f64>,
    /// constant, or cosine (linear warmup, then decay to lr/100) [default: constant]
    #[arg(long)]
    pub schedule: Option<String>,
    /// Warmup steps for the cosine schedule [default: 500]
    #[arg(long)]
    pub warmup: Option<u64>,
    /// Seed for initialization and data [default: 42]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fixed training set from sample-data; pathways are sampled on the fly otherwise.
    #[arg(long)]
    pub data_file: Option<PathBuf>,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Output checkpoint.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-step losses as JSON lines.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct DecodeArgs {
    /// Model checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Prebuilt index; built from the catalog when absent.
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Decodes per input [default: 5]
    #[arg(long)]
    pub samples: Option<usize>,
    /// 0 is greedy [default: 1.0, expand 1.5]
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Building-block candidates per step [default: 1, expand 3]
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Sample the product rank of multi-product reactions [default: false]
    #[arg(long)]
    pub branch_ranks: Option<bool>,
    /// Reaction fed back to the decoder: sampled or argmax [default: sampled]
    #[arg(long)]
    pub feedback: Option<String>,
    /// Token budget including Start and End [default: 16]
    #[arg(long)]
    pub max_len: Option<usize>,
    /// [default: 42]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct ProjectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub decode: DecodeArgs,
    /// One input molecule.
    #[arg(long)]
    pub smiles: Option<String>,
    /// File with one molecule per line.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output JSON lines; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExpandArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub decode: DecodeArgs,
    /// Hit molecule.
    #[arg(long)]
    pub hit: Option<String>,
    /// Number of decodes [default: 500]
    #[arg(long)]
    pub n: Option<usize>,
    /// Scoring command: canonical text on stdin, one number on stdout.
    #[arg(long)]
    pub score_cmd: Option<String>,
    /// Output JSON lines, one analog each.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub decode: DecodeArgs,
    /// Molecules, one per line (an optional leading id column is allowed).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Output JSON report.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-molecule rows as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExecArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// JSON-lines programs, bare or as written by sample-data.
    #[arg(long)]
    pub program: Option<PathBuf>,
    /// Product choice: recorded or smallest [default: recorded]
    #[arg(long)]
    pub policy: Option<String>,
}

/// Keys accepted in the config file.
const CONFIG_KEYS: &[&str] = &[
    "catalog",
    "templates",
    "max_reactions",
    "max_atoms",
    "max_body_len",
    "branch_prob",
    "n",
    "seed",
    "out",
    "k",
    "test_cluster",
    "threshold",
    "train_out",
    "test_out",
    "d_model",
    "heads",
    "encoder_layers",
    "decoder_layers",
    "d_ff",
    "steps",
    "batch_size",
    "lr",
    "schedule",
    "warmup",
    "data_file",
    "resume",
    "log",
    "checkpoint",
    "index",
    "samples",
    "temperature",
    "top_k",
    "branch_ranks",
    "feedback",
    "max_len",
    "smiles",
    "input",
    "hit",
    "score_cmd",
    "dataset",
    "csv",
    "program",
    "policy",
    "workers",
];

/// Flat key=value settings; `#` starts a comment line.
#[derive(Debug, Default, Clone)]
pub struct Config {
    values: HashMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut values = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let (k, v) = t
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected key=value", i + 1)))?;
            let k = k.trim().replace('-', "_");
            if !CONFIG_KEYS.contains(&k.as_str()) {
                return Err(CliError::Usage(format!("config line {}: unknown key '{k}'", i + 1)));
            }
            values.insert(k, v.trim().to_string());
        }
        Ok(Config { values })
    }

    /// Flag value, else config value, else `None`.
    fn get<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| CliError::Usage(format!("config key '{key}': cannot parse '{v}'"))),
        }
    }

    fn or<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError> {
        Ok(self.get(flag, key)?.unwrap_or(default))
    }

    fn req<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<T, CliError> {
        self.get(flag, key)?
            .ok_or_else(|| CliError::Usage(format!("--{} is required", key.replace('_', "-"))))
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    write_atomic(path, bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_templates(cfg: &Config, a: &DataArgs) -> Result<TemplateSet, CliError> {
    let path: PathBuf = cfg.req(a.templates.clone(), "templates")?;
    TemplateSet::parse(&read(&path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Catalog with duplicates and (given templates) unmatched blocks removed.
fn load_catalog(path: &Path, templates: Option<&TemplateSet>) -> Result<Catalog, CliError> {
    let (cat, report) = Catalog::parse(&read(path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    for (skipped, first) in &report.duplicates {
        log::warn!("block {skipped} duplicates {first}; skipped");
    }
    let cat = match templates {
        Some(t) => {
            let (pruned, dropped) = prune_unmatched(&cat, t);
            if !dropped.is_empty() {
                log::warn!("{} blocks match no template and were dropped", dropped.len());
            }
            pruned
        }
        None => cat,
    };
    if cat.is_empty() {
        return Err(CliError::Data(format!("{}: catalog is empty", path.display())));
    }
    Ok(cat)
}

fn load_data(cfg: &Config, a: &DataArgs) -> Result<(Catalog, TemplateSet), CliError> {
    let templates = load_templates(cfg, a)?;
    let path: PathBuf = cfg.req(a.catalog.clone(), "catalog")?;
    Ok((load_catalog(&path, Some(&templates))?, templates))
}

fn sampler_options(cfg: &Config, a: &SamplerArgs) -> Result<SamplerOptions, CliError> {
    let d = SamplerOptions::default();
    let o = SamplerOptions {
        max_reactions: cfg.or(a.max_reactions, "max_reactions", d.max_reactions)?,
        max_atoms: cfg.or(a.max_atoms, "max_atoms", d.max_atoms)?,
        branch_prob: cfg.or(a.branch_prob, "branch_prob", d.branch_prob)?,
        max_body_len: Some(cfg.or(a.max_body_len, "max_body_len", 14)?),
    };
    if o.max_reactions == 0 || o.max_atoms == 0 {
        return Err(CliError::Usage(
            "--max-reactions and --max-atoms must be at least 1".into(),
        ));
    }
    if !(0.0..=1.0).contains(&o.branch_prob) {
        return Err(CliError::Usage("--branch-prob must lie in [0, 1]".into()));
    }
    Ok(o)
}

fn molecule(text: &str) -> Result<Molecule, CliError> {
    let m = parse_smiles(text).map_err(|e| CliError::Data(format!("{text}: {e}")))?;
    sanitize(&m).map_err(|e| CliError::Data(format!("{text}: {e}")))?;
    Ok(m)
}

/// Molecule text from a dataset line: the last tab-separated field.
fn dataset_lines(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.rsplit('\t').next().unwrap_or(l).trim().to_string())
        .collect()
}

#[derive(Serialize)]
struct SampleRecord<'a> {
    program: &'a PostfixProgram,
    product_smiles: &'a str,
    seed: u64,
}

fn sample_data(cfg: &Config, a: SampleDataArgs, workers: usize) -> Result<(), CliError> {
    let (cat, templates) = load_data(cfg, &a.data)?;
    let opts = sampler_options(cfg, &a.sampler)?;
    let n: usize = cfg.or(a.n, "n", 1000)?;
    let seed = cfg.or(a.seed, "seed", DEFAULT_SEED)?;
    let out: PathBuf = cfg.req(a.out, "out")?;
    let idx = EligibilityIndex::build(&cat, &templates);
    let sampler = Sampler::new(&cat, &templates, &idx, opts);
    let seeds: Vec<u64> = (0..n as u64).map(|i| derive_seed(seed, &[i])).collect();
    let sampled = par_map(&seeds, workers, |_, &s| sampler.sample(s));
    let mut text = String::new();
    for (p, &s) in sampled.into_iter().zip(&seeds) {
        let p = p.map_err(data)?;
        let rec = SampleRecord {
            program: &p.program,
            product_smiles: &p.canonical.text,
            seed: s,
        };
        text.push_str(&serde_json::to_string(&rec).map_err(data)?);
        text.push('\n');
    }
    write(&out, text.as_bytes())?;
    log::info!("wrote {n} pathways to {}", out.display());
    Ok(())
}

fn build_index(cfg: &Config, a: BuildIndexArgs) -> Result<(), CliError> {
    let templates = match cfg.get(a.templates, "templates")? {
        Some(p) => Some(load_templates(
            cfg,
            &DataArgs {
                catalog: None,
                templates: Some(p),
            },
        )?),
        None => None,
    };
    let path: PathBuf = cfg.req(a.catalog, "catalog")?;
    let cat = load_catalog(&path, templates.as_ref())?;
    let out: PathBuf = cfg.req(a.out, "out")?;
    let index = BlockIndex::build(&cat);
    write(&out, &index.to_bytes())?;
    println!("{} blocks", index.len());
    Ok(())
}

fn split(cfg: &Config, a: SplitArgs) -> Result<(), CliError> {
    let (cat, _) = load_data(cfg, &a.data)?;
    let k = cfg.or(a.k, "k", 128)?;
    let test_cluster = cfg.or(a.test_cluster, "test_cluster", 0)?;
    let seed = cfg.or(a.seed, "seed", DEFAULT_SEED)?;
    let threshold: Option<f64> = cfg.get(a.threshold, "threshold")?;
    let train_out: PathBuf = cfg.req(a.train_out, "train_out")?;
    let test_out: PathBuf = cfg.req(a.test_out, "test_out")?;
    let index = BlockIndex::build(&cat);
    let s = kmeans_split(&index, k, seed, test_cluster).map_err(data)?;
    let mut test_ids = s.test_ids.clone();
    if let Some(t) = threshold {
        test_ids = max_train_similarity_filter(&cat, &test_ids, &s.train_ids, t).map_err(data)?;
        log::info!(
            "similarity filter kept {} of {} test blocks",
            test_ids.len(),
            s.test_ids.len()
        );
    }
    write(&train_out, cat.restrict(&s.train_ids).to_tsv().as_bytes())?;
    write(&test_out, cat.restrict(&test_ids).to_tsv().as_bytes())?;
    println!("train {} blocks, test {} blocks", s.train_ids.len(), test_ids.len());
    Ok(())
}

#[derive(Serialize)]
struct StepRecord {
    step: u64,
    loss: f64,
    l_type: f64,
    l_bb: f64,
    l_rxn: f64,
}

fn read_examples(path: &Path, cat: &Catalog) -> Result<Vec<Example>, CliError> {
    let mut out = Vec::new();
    for (i, line) in read(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| CliError::Data(format!("{}:{}: {m}", path.display(), i + 1));
        let v: serde_json::Value = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let prog = PostfixProgram::from_json_value(&v["program"], cat).map_err(|e| bad(e.to_string()))?;
        let smiles = v["product_smiles"]
            .as_str()
            .ok_or_else(|| bad("missing product_smiles".into()))?;
        let mol = parse_smiles(smiles).map_err(|e| bad(e.to_string()))?;
        out.push(Example::new(&mol, &prog).map_err(|e| bad(e.to_string()))?);
    }
    if out.is_empty() {
        return Err(CliError::Data(format!("{}: no training pathways", path.display())));
    }
    Ok(out)
}

fn train_cmd(cfg: &Config, a: TrainArgs) -> Result<(), CliError> {
    let (cat, templates) = load_data(cfg, &a.data)?;
    let opts = sampler_options(cfg, &a.sampler)?;
    let steps = cfg.or(a.steps, "steps", 5000)?;
    let batch_size = cfg.or(a.batch_size, "batch_size", 16)?;
    let lr = cfg.or(a.lr, "lr", 3e-4)?;
    let seed = cfg.or(a.seed, "seed", DEFAULT_SEED)?;
    let out: PathBuf = cfg.req(a.out, "out")?;
    let log_path: Option<PathBuf> = cfg.get(a.log, "log")?;
    if batch_size == 0 || !(lr >= 0.0) {
        return Err(CliError::Usage(
            "--batch-size must be positive and --lr non-negative".into(),
        ));
    }
    let (mut model, mut opt) = match cfg.get(a.resume, "resume")? {
        Some(p) => {
            let (m, mut o) = load_checkpoint(&p).map_err(data)?;
            m.check_reactions(templates.len()).map_err(data)?;
            o.lr = lr;
            (m, o)
        }
        None => {
            let d = ModelConfig::desk(templates.len());
            let m = &a.model;
            let config = ModelConfig {
                d_model: cfg.or(m.d_model, "d_model", d.d_model)?,
                n_heads: cfg.or(m.heads, "heads", d.n_heads)?,
                n_encoder_layers: cfg.or(m.encoder_layers, "encoder_layers", d.n_encoder_layers)?,
                n_decoder_layers: cfg.or(m.decoder_layers, "decoder_layers", d.n_decoder_layers)?,
                d_ff: cfg.or(m.d_ff, "d_ff", d.d_ff)?,
                seed,
                ..d
            };
            let model = Model::new(config).map_err(|e| CliError::Usage(e.to_string()))?;
            let opt = AdamW::new(&model.params, lr);
            (model, opt)
        }
    };
    let schedule = match cfg.or(a.schedule, "schedule", "constant".to_string())?.as_str() {
        "constant" => LrSchedule::Constant,
        "cosine" => LrSchedule::Cosine {
            peak: lr,
            warmup: cfg.or(a.warmup, "warmup", 500)?,
            total: opt.step + steps,
            floor: lr / 100.0,
        },
        other => {
            return Err(CliError::Usage(format!(
                "--schedule must be constant or cosine, not '{other}'"
            )))
        }
    };
    let body_cap = model.config.max_seq_len - 2;
    if opts.max_body_len.unwrap_or(body_cap) > body_cap {
        return Err(CliError::Usage(format!("--max-body-len must be at most {body_cap}")));
    }
    let idx = EligibilityIndex::build(&cat, &templates);
    let mut source: Box<dyn BatchSource> = match cfg.get(a.data_file, "data_file")? {
        Some(p) => Box::new(FixedSource::new(read_examples(&p, &cat)?, seed)),
        None => Box::new(SampledSource {
            catalog: &cat,
            templates: &templates,
            index: &idx,
            opts,
            seed,
        }),
    };
    let mut log_text = String::new();
    let t0 = std::time::Instant::now();
    train(
        &mut model,
        &mut opt,
        source.as_mut(),
        TrainOptions {
            steps,
            batch_size,
            schedule,
        },
        |step, l| {
            let rec = StepRecord {
                step,
                loss: l.total,
                l_type: l.l_type,
                l_bb: l.l_bb,
                l_rxn: l.l_rxn,
            };
            log_text.push_str(&serde_json::to_string(&rec).expect("plain data"));
            log_text.push('\n');
            if step % 100 == 0 {
                log::info!(
                    "step {step} loss {:.4} type {:.4} bb {:.4} rxn {:.4} ({:.0}s)",
                    l.total,
                    l.l_type,
                    l.l_bb,
                    l.l_rxn,
                    t0.elapsed().as_secs_f64()
                );
            }
        },
    )
    .map_err(data)?;
    save_checkpoint(&model, &opt, &out).map_err(data)?;
    if let Some(p) = log_path {
        write(&p, log_text.as_bytes())?;
    }
    println!("trained to step {}; checkpoint {}", opt.step, out.display());
    Ok(())
}

struct Decoding {
    model: Model,
    catalog: Catalog,
    templates: TemplateSet,
    index: BlockIndex,
    opts: DecodeOptions,
}

fn decoding(cfg: &Config, data_args: &DataArgs, a: &DecodeArgs, base: DecodeOptions) -> Result<Decoding, CliError> {
    let ckpt: PathBuf = cfg.req(a.checkpoint.clone(), "checkpoint")?;
    let feedback = match cfg.or(a.feedback.clone(), "feedback", "sampled".to_string())?.as_str() {
        "sampled" => ReactionFeedback::Sampled,
        "argmax" => ReactionFeedback::Argmax,
        other => {
            return Err(CliError::Usage(format!(
                "--feedback must be sampled or argmax, not '{other}'"
            )))
        }
    };
    let opts = DecodeOptions {
        max_len: cfg.or(a.max_len, "max_len", base.max_len)?,
        samples_per_input: cfg.or(a.samples, "samples", base.samples_per_input)?,
        temperature: cfg.or(a.temperature, "temperature", base.temperature)?,
        top_k: cfg.or(a.top_k, "top_k", base.top_k)?,
        branch_ranks: cfg.or(a.branch_ranks, "branch_ranks", base.branch_ranks)?,
        feedback,
        seed: cfg.or(a.seed, "seed", DEFAULT_SEED)?,
    };
    let (catalog, templates) = load_data(cfg, data_args)?;
    let (model, _) = load_checkpoint(&ckpt).map_err(data)?;
    model.check_reactions(templates.len()).map_err(data)?;
    let index = match cfg.get(a.index.clone(), "index")? {
        Some(p) => {
            let bytes = std::fs::read(&p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            BlockIndex::from_bytes(&bytes, &catalog).map_err(data)?
        }
        None => BlockIndex::build(&catalog),
    };
    Ok(Decoding {
        model,
        catalog,
        templates,
        index,
        opts,
    })
}

#[derive(Serialize)]
struct ProjectedRecord<'a> {
    product: &'a str,
    program: &'a PostfixProgram,
    morgan: f64,
    scaffold: f64,
    gobbi: &'static str,
}

#[derive(Serialize)]
struct ProjectionRecord<'a> {
    input: &'a str,
    statuses: Vec<Status>,
    results: Vec<ProjectedRecord<'a>>,
}

fn emit(out: Option<PathBuf>, text: String) -> Result<(), CliError> {
    match out {
        Some(p) => write(&p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn project_cmd(cfg: &Config, a: ProjectArgs, workers: usize) -> Result<(), CliError> {
    let smiles: Option<String> = cfg.get(a.smiles, "smiles")?;
    let input: Option<PathBuf> = cfg.get(a.input, "input")?;
    let inputs = match (smiles, input) {
        (Some(s), None) => vec![s],
        (None, Some(p)) => dataset_lines(&read(&p)?),
        _ => return Err(CliError::Usage("give exactly one of --smiles or --input".into())),
    };
    let d = decoding(cfg, &a.data, &a.decode, DecodeOptions::default())?;
    let out: Option<PathBuf> = cfg.get(a.out, "out")?;
    let mut text = String::new();
    for (i, s) in inputs.iter().enumerate() {
        let mol = molecule(s)?;
        let opts = DecodeOptions {
            seed: derive_seed(d.opts.seed, &[i as u64]),
            ..d.opts.clone()
        };
        let res = project(&d.model, &d.catalog, &d.index, &d.templates, &mol, &opts, workers).map_err(data)?;
        for c in &res.candidates {
            if !certify(&c.program, &c.canonical, &d.catalog, &d.templates) {
                return Err(CliError::Data(format!("product {} does not re-execute", c.canonical)));
            }
        }
        let rec = ProjectionRecord {
            input: s,
            statuses: res.statuses.clone(),
            results: res
                .candidates
                .iter()
                .map(|c| ProjectedRecord {
                    product: &c.canonical.text,
                    program: &c.program,
                    morgan: c.scores.morgan,
                    scaffold: c.scores.scaffold,
                    gobbi: crate::eval::UNSUPPORTED,
                })
                .collect(),
        };
        text.push_str(&serde_json::to_string(&rec).map_err(data)?);
        text.push('\n');
    }
    emit(out, text)
}

#[derive(Serialize)]
struct AnalogRecord<'a> {
    product: &'a str,
    program: &'a PostfixProgram,
    morgan: f64,
    scaffold: f64,
    score: Option<f64>,
}

fn expand_cmd(cfg: &Config, a: ExpandArgs, workers: usize) -> Result<(), CliError> {
    let hit_text: String = cfg.req(a.hit, "hit")?;
    let n = cfg.or(a.n, "n", 500)?;
    if n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    let hook = match cfg.get::<String>(a.score_cmd, "score_cmd")? {
        Some(c) => Some(ScoringHook::parse(&c).ok_or_else(|| CliError::Usage("--score-cmd is empty".into()))?),
        None => None,
    };
    let d = decoding(cfg, &a.data, &a.decode, DecodeOptions::expansion())?;
    let out: Option<PathBuf> = cfg.get(a.out, "out")?;
    let hit = molecule(&hit_text)?;
    let res = expand_hit(
        &d.model,
        &d.catalog,
        &d.index,
        &d.templates,
        &hit,
        n,
        &d.opts,
        hook.as_ref(),
        workers,
    )
    .map_err(data)?;
    let mut text = String::new();
    for an in &res.analogs {
        if !certify(&an.program, &an.canonical, &d.catalog, &d.templates) {
            return Err(CliError::Data(format!("analog {} does not re-execute", an.canonical)));
        }
        let rec = AnalogRecord {
            product: &an.canonical.text,
            program: &an.program,
            morgan: an.scores.morgan,
            scaffold: an.scores.scaffold,
            score: an.score,
        };
        text.push_str(&serde_json::to_string(&rec).map_err(data)?);
        text.push('\n');
    }
    emit(out, text)?;
    let mut hist = [0usize; 10];
    for an in &res.analogs {
        hist[((an.scores.morgan * 10.0) as usize).min(9)] += 1;
    }
    let mut summary = format!(
        "{} unique analogs from {} decodes\nsimilarity histogram:\n",
        res.analogs.len(),
        n
    );
    for (i, c) in hist.iter().enumerate() {
        writeln!(
            summary,
            "  [{:.1}, {:.1}{} {c}",
            i as f64 / 10.0,
            (i + 1) as f64 / 10.0,
            if i == 9 { "]" } else { ")" }
        )
        .unwrap();
    }
    eprint!("{summary}");
    Ok(())
}

fn evaluate_cmd(cfg: &Config, a: EvaluateArgs, workers: usize) -> Result<(), CliError> {
    let dataset: PathBuf = cfg.req(a.dataset, "dataset")?;
    let out: PathBuf = cfg.req(a.out, "out")?;
    let csv: Option<PathBuf> = cfg.get(a.csv, "csv")?;
    let mols = dataset_lines(&read(&dataset)?);
    if mols.is_empty() {
        return Err(CliError::Data(format!("{}: empty dataset", dataset.display())));
    }
    let d = decoding(cfg, &a.data, &a.decode, DecodeOptions::default())?;
    let mut report = evaluate(&d.model, &d.catalog, &d.index, &d.templates, &mols, &d.opts, workers);
    report
        .metadata
        .insert("dataset".into(), dataset.display().to_string().into());
    for row in &report.rows {
        if let (Some(p), Some(prog)) = (&row.best_product, &row.best_program) {
            let prog = PostfixProgram::from_json_value(prog, &d.catalog).map_err(data)?;
            let canon = canonical_form(&molecule(p)?);
            if !certify(&prog, &canon, &d.catalog, &d.templates) {
                return Err(CliError::Data(format!("product {p} does not re-execute")));
            }
        }
    }
    let json = serde_json::to_string_pretty(&report).map_err(data)?;
    write(&out, format!("{json}\n").as_bytes())?;
    if let Some(p) = csv {
        write(&p, report.to_csv().as_bytes())?;
    }
    print!("{}", report.to_table());
    Ok(())
}

fn exec_cmd(cfg: &Config, a: ExecArgs) -> Result<(), CliError> {
    let (cat, templates) = load_data(cfg, &a.data)?;
    let path: PathBuf = cfg.req(a.program, "program")?;
    let policy = match cfg.or(a.policy, "policy", "recorded".to_string())?.as_str() {
        "recorded" => ProductPolicy::Recorded,
        "smallest" => ProductPolicy::Smallest,
        other => {
            return Err(CliError::Usage(format!(
                "--policy must be recorded or smallest, not '{other}'"
            )))
        }
    };
    let mut failed = 0;
    for (i, line) in read(&path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| CliError::Data(format!("{}:{}: {m}", path.display(), i + 1));
        let v: serde_json::Value = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let v = if v.get("program").is_some() { &v["program"] } else { &v };
        let prog = PostfixProgram::from_json_value(v, &cat).map_err(|e| bad(e.to_string()))?;
        let res = execute(&prog, &cat, &templates, policy).map_err(|e| bad(e.to_string()))?;
        match res.product {
            Some(p) if res.status == Status::Success => println!("{}", canonical_form(&p)),
            _ => {
                failed += 1;
                println!("{:?} at step {}", res.status, res.failed_step.unwrap_or(0));
            }
        }
    }
    if failed > 0 {
        return Err(CliError::Data(format!("{failed} program(s) failed")));
    }
    Ok(())
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(p) => Config::parse(&read(p).map_err(|e| CliError::Usage(e.to_string()))?)?,
        None => Config::default(),
    };
    let workers = cfg.or(cli.workers, "workers", 1)?;
    if workers == 0 {
        return Err(CliError::Usage("--workers must be at least 1".into()));
    }
    match cli.command {
        Command::SampleData(a) => sample_data(&cfg, a, workers),
        Command::BuildIndex(a) => build_index(&cfg, a),
        Command::Split(a) => split(&cfg, a),
        Command::Train(a) => train_cmd(&cfg, a),
        Command::Project(a) => project_cmd(&cfg, a, workers),
        Command::Expand(a) => expand_cmd(&cfg, a, workers),
        Command::Evaluate(a) => evaluate_cmd(&cfg, a, workers),
        Command::Exec(a) => exec_cmd(&cfg, a),
    }
}
