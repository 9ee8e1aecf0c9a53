use super::network::{GraphInput, LossValues, Model};
use super::optim::AdamW;
use super::ModelError;
use crate::catalog::Catalog;
use crate::molgraph::Molecule;
use crate::reaction::TemplateSet;
use crate::sampler::{EligibilityIndex, Sampler, SamplerOptions};
use crate::seed::{derive_seed, rng_for};
use crate::synthesis::{PostfixProgram, Token};
use rand::seq::SliceRandom;

/// A product graph with the finalized program that makes it.
#[derive(Debug, Clone)]
pub struct Example {
    pub graph: GraphInput,
    pub tokens: Vec<Token>,
}

impl Example {
    pub fn new(product: &Molecule, program: &PostfixProgram) -> Result<Self, ModelError> {
        if !program.is_finalized() {
            return Err(ModelError::ShapeMismatch("program must be finalized".into()));
        }
        Ok(Example {
            graph: GraphInput::from_molecule(product)?,
            tokens: program.tokens.clone(),
        })
    }
}

/// One optimizer step on the mean loss of `batch`.
pub fn train_step(model: &mut Model, opt: &mut AdamW, batch: &[Example]) -> Result<LossValues, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let mut grads = model.zero_grads();
    let scale = 1.0 / batch.len() as f64;
    let mut mean = LossValues {
        total: 0.0,
        l_type: 0.0,
        l_bb: 0.0,
        l_rxn: 0.0,
    };
    for ex in batch {
        let l = model.loss_and_grad(&ex.graph, &ex.tokens, scale, &mut grads)?;
        mean.total += l.total * scale;
        mean.l_type += l.l_type * scale;
        mean.l_bb += l.l_bb * scale;
        mean.l_rxn += l.l_rxn * scale;
    }
    opt.update(&mut model.params, &grads)?;
    Ok(mean)
}

pub trait BatchSource {
    fn batch(&mut self, step: u64, size: usize) -> Result<Vec<Example>, ModelError>;
}

/// Cycles through a fixed example set, reshuffled every epoch.
pub struct FixedSource {
    examples: Vec<Example>,
    seed: u64,
    order: Vec<usize>,
    epoch: Option<u64>,
}

impl FixedSource {
    pub fn new(examples: Vec<Example>, seed: u64) -> Self {
        FixedSource {
            examples,
            seed,
            order: Vec::new(),
            epoch: None,
        }
    }
}

impl BatchSource for FixedSource {
    fn batch(&mut self, step: u64, size: usize) -> Result<Vec<Example>, ModelError> {
        let n = self.examples.len();
        if n == 0 {
            return Err(ModelError::EmptyBatch);
        }
        (0..size as u64)
            .map(|i| {
                let k = step * size as u64 + i;
                let epoch = k / n as u64;
                if self.epoch != Some(epoch) {
                    self.order = (0..n).collect();
                    self.order.shuffle(&mut rng_for(self.seed, &[epoch]));
                    self.epoch = Some(epoch);
                }
                Ok(self.examples[self.order[(k % n as u64) as usize]].clone())
            })
            .collect()
    }
}

/// Fresh pathways for every step.
pub struct SampledSource<'a> {
    pub catalog: &'a Catalog,
    pub templates: &'a TemplateSet,
    pub index: &'a EligibilityIndex,
    pub opts: SamplerOptions,
    pub seed: u64,
}

impl SampledSource<'_> {
    pub fn example(&self, seed: u64) -> Result<Example, ModelError> {
        Ok(self.pathway(seed)?.0)
    }

    /// An example together with its product molecule.
    pub fn pathway(&self, seed: u64) -> Result<(Example, Molecule), ModelError> {
        let sampler = Sampler::new(self.catalog, self.templates, self.index, self.opts);
        let p = sampler
            .sample(derive_seed(seed, &[1]))
            .map_err(|e| ModelError::Data(e.to_string()))?;
        Ok((Example::new(&p.product, &p.program)?, p.product))
    }
}

impl BatchSource for SampledSource<'_> {
    fn batch(&mut self, step: u64, size: usize) -> Result<Vec<Example>, ModelError> {
        (0..size as u64)
            .map(|i| self.example(derive_seed(self.seed, &[step, i])))
            .collect()
    }
}

/// Learning-rate policy over global optimizer steps.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum LrSchedule {
    /// Keep whatever rate the optimizer holds.
    #[default]
    Constant,
    /// Linear warmup to `peak`, then cosine decay to `floor` at step `total`.
    Cosine {
        peak: f64,
        warmup: u64,
        total: u64,
        floor: f64,
    },
}

impl LrSchedule {
    /// Rate for 1-based `step`; `None` for `Constant`.
    pub fn lr(&self, step: u64) -> Option<f64> {
        match *self {
            LrSchedule::Constant => None,
            LrSchedule::Cosine {
                peak,
                warmup,
                total,
                floor,
            } => Some(if step <= warmup {
                peak * step as f64 / warmup.max(1) as f64
            } else if step >= total {
                floor
            } else {
                let t = (step - warmup) as f64 / (total - warmup) as f64;
                floor + 0.5 * (peak - floor) * (1.0 + (std::f64::consts::PI * t).cos())
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub steps: u64,
    pub batch_size: usize,
    pub schedule: LrSchedule,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            steps: 5000,
            batch_size: 16,
            schedule: LrSchedule::Constant,
        }
    }
}

/// Runs `opts.steps` steps, continuing from the optimizer's step counter,
/// and reports each step's mean loss to `on_step`.
pub fn train(
    model: &mut Model,
    opt: &mut AdamW,
    source: &mut dyn BatchSource,
    opts: TrainOptions,
    mut on_step: impl FnMut(u64, &LossValues),
) -> Result<(), ModelError> {
    for _ in 0..opts.steps {
        let step = opt.step;
        if let Some(lr) = opts.schedule.lr(step + 1) {
            opt.lr = lr;
        }
        let batch = source.batch(step, opts.batch_size)?;
        let l = train_step(model, opt, &batch)?;
        on_step(step + 1, &l);
    }
    Ok(())
}

/// Teacher-forced next-token type accuracy over `examples`.
pub fn type_accuracy(model: &Model, examples: &[Example]) -> Result<f64, ModelError> {
    let (mut hits, mut total) = (0, 0);
    for ex in examples {
        let (h, t) = model.type_hits(&ex.graph, &ex.tokens)?;
        hits += h;
        total += t;
    }
    Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
}
