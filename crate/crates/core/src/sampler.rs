//! Random generation of (program, product) training pairs.
//!
//! Each step picks a template applicable to the current intermediate, puts
//! the intermediate into the lowest slot it matches and fills the other
//! slots with eligible blocks. Pathways are grown as trees and emitted in
//! post-order, so blocks for slots below the intermediate are pushed before
//! the intermediate's own sub-program.

use crate::catalog::Catalog;
use crate::molgraph::{CanonicalForm, Molecule};
use crate::reaction::{apply_detailed, has_embedding, TemplateSet};
use crate::synthesis::{compile_tree, PostfixProgram, SynthesisTree};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const STEP_RETRIES: usize = 16;
pub const RESTARTS: usize = 8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SampleError {
    #[error("no template has a non-empty set of eligible blocks for every slot")]
    NoTemplates,
    #[error("dead end after {0} restarts")]
    DeadEnd(usize),
}

/// Blocks eligible for each template slot.
#[derive(Debug, Clone)]
pub struct EligibilityIndex {
    /// `forward[r][slot]` lists catalog positions.
    forward: Vec<Vec<Vec<usize>>>,
    /// Blocks that match no slot of any template.
    pub unmatched: Vec<String>,
    /// `(r, slot)` pairs without eligible blocks.
    pub empty_slots: Vec<(usize, usize)>,
}

impl EligibilityIndex {
    pub fn build(catalog: &Catalog, templates: &TemplateSet) -> Self {
        let mut forward: Vec<Vec<Vec<usize>>> = templates.iter().map(|t| vec![Vec::new(); t.arity()]).collect();
        let mut matched = vec![false; catalog.len()];
        for (k, block) in catalog.blocks().iter().enumerate() {
            for (r, t) in templates.iter().enumerate() {
                for (slot, pat) in t.reactants.iter().enumerate() {
                    if has_embedding(pat, &block.mol) {
                        forward[r][slot].push(k);
                        matched[k] = true;
                    }
                }
            }
        }
        let unmatched = catalog
            .blocks()
            .iter()
            .zip(&matched)
            .filter(|(_, &m)| !m)
            .map(|(b, _)| b.id.clone())
            .collect();
        let mut empty_slots = Vec::new();
        for (r, slots) in forward.iter().enumerate() {
            for (s, v) in slots.iter().enumerate() {
                if v.is_empty() {
                    log::warn!("template {r} slot {s} has no eligible blocks");
                    empty_slots.push((r, s));
                }
            }
        }
        EligibilityIndex {
            forward,
            unmatched,
            empty_slots,
        }
    }

    pub fn eligible(&self, r: usize, slot: usize) -> &[usize] {
        &self.forward[r][slot]
    }

    /// Every slot of `r` has at least one eligible block.
    pub fn usable(&self, r: usize) -> bool {
        self.forward[r].iter().all(|v| !v.is_empty())
    }

    /// Templates applicable to `mol`, each with the lowest slot `mol` matches.
    /// Only templates whose other slots have eligible blocks are listed.
    pub fn available(&self, mol: &Molecule, templates: &TemplateSet) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (r, t) in templates.iter().enumerate() {
            let slot = t.reactants.iter().position(|p| has_embedding(p, mol));
            if let Some(s) = slot {
                let others_ok = (0..t.arity()).all(|i| i == s || !self.forward[r][i].is_empty());
                if others_ok {
                    out.push((r, s));
                }
            }
        }
        out
    }
}

/// Catalog without blocks that match no template slot.
pub fn prune_unmatched(catalog: &Catalog, templates: &TemplateSet) -> (Catalog, Vec<String>) {
    let idx = EligibilityIndex::build(catalog, templates);
    if idx.unmatched.is_empty() {
        return (catalog.clone(), Vec::new());
    }
    let keep: Vec<String> = catalog
        .blocks()
        .iter()
        .filter(|b| !idx.unmatched.contains(&b.id))
        .map(|b| b.id.clone())
        .collect();
    (catalog.restrict(&keep), idx.unmatched)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerOptions {
    /// Maximum number of reactions.
    pub max_reactions: usize,
    /// Growth stops once the intermediate has this many heavy atoms.
    pub max_atoms: usize,
    /// Probability of filling a fresh slot with a one-step sub-pathway.
    pub branch_prob: f64,
    /// Cap on body tokens (program length without Start/End).
    pub max_body_len: Option<usize>,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        SamplerOptions {
            max_reactions: 5,
            max_atoms: 80,
            branch_prob: 0.15,
            max_body_len: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SampledPathway {
    pub tree: SynthesisTree,
    pub program: PostfixProgram,
    pub product: Molecule,
    pub canonical: CanonicalForm,
}

#[derive(Clone)]
struct Node {
    tree: SynthesisTree,
    mol: Molecule,
    canonical: CanonicalForm,
    reactions: usize,
    tokens: usize,
}

pub struct Sampler<'a> {
    catalog: &'a Catalog,
    templates: &'a TemplateSet,
    index: &'a EligibilityIndex,
    pub opts: SamplerOptions,
}

impl<'a> Sampler<'a> {
    pub fn new(
        catalog: &'a Catalog,
        templates: &'a TemplateSet,
        index: &'a EligibilityIndex,
        opts: SamplerOptions,
    ) -> Self {
        Sampler {
            catalog,
            templates,
            index,
            opts,
        }
    }

    fn leaf(&self, k: usize) -> Node {
        let b = &self.catalog.blocks()[k];
        Node {
            tree: SynthesisTree::Leaf(b.id.clone()),
            mol: b.mol.clone(),
            canonical: b.canonical.clone(),
            reactions: 0,
            tokens: 1,
        }
    }

    fn random_leaf(&self, rng: &mut ChaCha8Rng, r: usize, slot: usize) -> Node {
        let k = *self.index.eligible(r, slot).choose(rng).expect("usable slot");
        self.leaf(k)
    }

    /// Applies `r` to `children` taking the rank-0 product.
    fn react(&self, r: usize, children: Vec<Node>) -> Option<Node> {
        let tmpl = self.templates.get(r)?;
        let mols: Vec<&Molecule> = children.iter().map(|c| &c.mol).collect();
        let out = apply_detailed(tmpl, &mols).ok()?;
        let (canonical, mol) = out.products.into_iter().next()?;
        let reactions = 1 + children.iter().map(|c| c.reactions).sum::<usize>();
        let tokens = 1 + children.iter().map(|c| c.tokens).sum::<usize>();
        Some(Node {
            tree: SynthesisTree::apply(r, children.into_iter().map(|c| c.tree).collect()),
            mol,
            canonical,
            reactions,
            tokens,
        })
    }

    /// One-step pathway whose product still fits slot `slot` of `r`.
    fn sub_pathway(&self, rng: &mut ChaCha8Rng, r: usize, slot: usize, max_tokens: usize) -> Option<Node> {
        let pattern = &self.templates.get(r)?.reactants[slot];
        for _ in 0..4 {
            let start = self.random_leaf(rng, r, slot);
            let options: Vec<(usize, usize)> = self
                .index
                .available(&start.mol, self.templates)
                .into_iter()
                .filter(|&(r2, _)| self.templates.get(r2).unwrap().arity() + 1 <= max_tokens)
                .collect();
            let Some(&(r2, s2)) = options.choose(rng) else {
                continue;
            };
            let arity = self.templates.get(r2).unwrap().arity();
            let mut start = Some(start);
            let children: Vec<Node> = (0..arity)
                .map(|i| {
                    if i == s2 {
                        start.take().unwrap()
                    } else {
                        self.random_leaf(rng, r2, i)
                    }
                })
                .collect();
            if let Some(node) = self.react(r2, children) {
                if has_embedding(pattern, &node.mol) {
                    return Some(node);
                }
            }
        }
        None
    }

    fn grow(&self, rng: &mut ChaCha8Rng) -> Result<Option<Node>, SampleError> {
        let o = &self.opts;
        let cap = o.max_body_len.unwrap_or(usize::MAX);
        let mut cur: Option<Node> = None;
        loop {
            let (reactions, atoms, tokens) = match &cur {
                None => (0, 0, 0),
                Some(n) => (n.reactions, n.mol.heavy_atom_count(), n.tokens),
            };
            if reactions >= o.max_reactions || atoms >= o.max_atoms {
                return Ok(cur);
            }
            let options: Vec<(usize, Option<usize>)> = match &cur {
                None => (0..self.templates.len())
                    .filter(|&r| self.index.usable(r))
                    .map(|r| (r, None))
                    .collect(),
                Some(n) => self
                    .index
                    .available(&n.mol, self.templates)
                    .into_iter()
                    .map(|(r, s)| (r, Some(s)))
                    .collect(),
            };
            // smallest growth: one token per fresh slot plus the reaction
            let options: Vec<(usize, Option<usize>)> = options
                .into_iter()
                .filter(|&(r, s)| {
                    let arity = self.templates.get(r).unwrap().arity();
                    tokens + arity - usize::from(s.is_some()) + 1 <= cap
                })
                .collect();
            if options.is_empty() {
                return match cur {
                    None => Err(SampleError::NoTemplates),
                    Some(n) => Ok(Some(n)),
                };
            }
            let mut grown = None;
            for _ in 0..STEP_RETRIES {
                let &(r, s) = options.choose(rng).unwrap();
                let arity = self.templates.get(r).unwrap().arity();
                let mut budget = cap - tokens - (arity - usize::from(s.is_some()) + 1);
                let mut reaction_budget = o.max_reactions - reactions - 1;
                let mut children = Vec::with_capacity(arity);
                for i in 0..arity {
                    if Some(i) == s {
                        // placeholder, swapped below
                        children.push(None);
                        continue;
                    }
                    let mut child = None;
                    if reaction_budget > 0 && budget >= 2 && rng.gen::<f64>() < o.branch_prob {
                        child = self.sub_pathway(rng, r, i, budget + 1);
                    }
                    let child = child.unwrap_or_else(|| self.random_leaf(rng, r, i));
                    budget -= child.tokens - 1;
                    reaction_budget -= child.reactions;
                    children.push(Some(child));
                }
                if let (Some(slot), Some(node)) = (s, cur.as_ref()) {
                    children[slot] = Some(node.clone());
                }
                let children: Vec<Node> = children.into_iter().map(|c| c.unwrap()).collect();
                if let Some(node) = self.react(r, children) {
                    grown = Some(node);
                    break;
                }
            }
            match grown {
                Some(n) => cur = Some(n),
                None => return Ok(None),
            }
        }
    }

    /// Samples one pathway; identical seeds give identical results.
    pub fn sample(&self, seed: u64) -> Result<SampledPathway, SampleError> {
        for restart in 0..RESTARTS {
            let mut rng = crate::seed::rng_for(seed, &[restart as u64]);
            if let Some(node) = self.grow(&mut rng)? {
                let program = compile_tree(&node.tree, self.catalog, self.templates)
                    .expect("sampled tree references known blocks and templates");
                return Ok(SampledPathway {
                    tree: node.tree,
                    program,
                    product: node.mol,
                    canonical: node.canonical,
                });
            }
        }
        Err(SampleError::DeadEnd(RESTARTS))
    }
}
