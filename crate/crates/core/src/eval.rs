//! Success, reconstruction and similarity metrics over a molecule set.

use crate::bbindex::BlockIndex;
use crate::catalog::Catalog;
use crate::fingerprint::{morgan_fingerprint, murcko_scaffold, tanimoto, DEFAULT_RADIUS, METRIC_BITS};
use crate::infer::{project, DecodeOptions, TokenPredictor};
use crate::molgraph::{canonical_form, parse_smiles, sanitize, Molecule};
use crate::parallel::par_map;
use crate::reaction::TemplateSet;
use crate::sampler::{EligibilityIndex, SampleError, SampledPathway, Sampler, SamplerOptions};
use crate::synthesis::Token;
use serde::Serialize;
use std::collections::{BTreeMap, HashSet};
use std::fmt::Write;

pub const UNSUPPORTED: &str = "unsupported";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimilarityScores {
    pub morgan: f64,
    pub scaffold: f64,
}

impl SimilarityScores {
    pub const ZERO: SimilarityScores = SimilarityScores {
        morgan: 0.0,
        scaffold: 0.0,
    };
}

/// Morgan-4096 Tanimoto of the molecules and of their Murcko scaffolds.
/// The Gobbi pharmacophore score has no counterpart here.
pub fn similarity_scores(a: &Molecule, b: &Molecule) -> SimilarityScores {
    let fp = |m: &Molecule| morgan_fingerprint(m, DEFAULT_RADIUS, METRIC_BITS);
    let morgan = tanimoto(&fp(a), &fp(b)).expect("same length");
    let (sa, sb) = (murcko_scaffold(a), murcko_scaffold(b));
    let scaffold = match (sa.is_empty(), sb.is_empty()) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => tanimoto(&fp(&sa), &fp(&sb)).expect("same length"),
    };
    SimilarityScores { morgan, scaffold }
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalRow {
    pub index: usize,
    pub input: String,
    pub success: bool,
    pub reconstructed: bool,
    pub morgan: f64,
    pub scaffold: f64,
    pub best_product: Option<String>,
    pub best_program: Option<serde_json::Value>,
    /// Attempt outcomes by status name.
    pub statuses: BTreeMap<String, usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub molecules: usize,
    pub success_rate: f64,
    pub reconstruction_rate: f64,
    pub mean_morgan: f64,
    pub mean_scaffold: f64,
    pub mean_gobbi: &'static str,
    pub metadata: BTreeMap<String, serde_json::Value>,
    pub rows: Vec<EvalRow>,
}

fn evaluate_one<P: TokenPredictor + Sync>(
    model: &P,
    catalog: &Catalog,
    index: &BlockIndex,
    templates: &TemplateSet,
    i: usize,
    text: &str,
    opts: &DecodeOptions,
) -> EvalRow {
    let mut row = EvalRow {
        index: i,
        input: text.to_string(),
        success: false,
        reconstructed: false,
        morgan: 0.0,
        scaffold: 0.0,
        best_product: None,
        best_program: None,
        statuses: BTreeMap::new(),
        error: None,
    };
    let mol = match parse_smiles(text) {
        Ok(m) => m,
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    };
    if let Err(e) = sanitize(&mol) {
        row.error = Some(e.to_string());
        return row;
    }
    let target = canonical_form(&mol);
    let opts = DecodeOptions {
        seed: crate::seed::derive_seed(opts.seed, &[i as u64]),
        ..opts.clone()
    };
    let res = match project(model, catalog, index, templates, &mol, &opts, 1) {
        Ok(r) => r,
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    };
    for s in &res.statuses {
        *row.statuses.entry(format!("{s:?}")).or_insert(0) += 1;
    }
    if let Some(best) = res.candidates.first() {
        row.success = true;
        row.reconstructed = res.candidates.iter().any(|c| c.canonical == target);
        row.morgan = best.scores.morgan;
        row.scaffold = best.scores.scaffold;
        row.best_product = Some(best.canonical.text.clone());
        row.best_program = serde_json::to_value(&best.program).ok();
    }
    row
}

/// Projects every input and aggregates the metrics. Inputs that fail to
/// parse become failed rows.
pub fn evaluate<P: TokenPredictor + Sync>(
    model: &P,
    catalog: &Catalog,
    index: &BlockIndex,
    templates: &TemplateSet,
    molecules: &[String],
    opts: &DecodeOptions,
    workers: usize,
) -> EvalReport {
    let rows = par_map(molecules, workers, |i, text| {
        evaluate_one(model, catalog, index, templates, i, text, opts)
    });
    let n = rows.len();
    let mean = |f: &dyn Fn(&EvalRow) -> f64| {
        if n == 0 {
            0.0
        } else {
            rows.iter().map(f).sum::<f64>() / n as f64
        }
    };
    let mut metadata = BTreeMap::new();
    metadata.insert("attempts_per_molecule".into(), opts.samples_per_input.into());
    metadata.insert("temperature".into(), opts.temperature.into());
    metadata.insert("top_k".into(), opts.top_k.into());
    metadata.insert("seed".into(), opts.seed.into());
    metadata.insert("max_len".into(), opts.max_len.into());
    metadata.insert("index_blocks".into(), index.len().into());
    metadata.insert(
        "l_bb_normalization".into(),
        "sum over fingerprint bits, mean over BB positions (alternative: mean over bits)".into(),
    );
    EvalReport {
        molecules: n,
        success_rate: mean(&|r| r.success as u8 as f64),
        reconstruction_rate: mean(&|r| r.reconstructed as u8 as f64),
        mean_morgan: mean(&|r| r.morgan),
        mean_scaffold: mean(&|r| r.scaffold),
        mean_gobbi: UNSUPPORTED,
        metadata,
        rows,
    }
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{:<22}{:>10}", "metric", "value").unwrap();
        writeln!(s, "{:<22}{:>10}", "molecules", self.molecules).unwrap();
        writeln!(s, "{:<22}{:>10.4}", "success rate", self.success_rate).unwrap();
        writeln!(s, "{:<22}{:>10.4}", "reconstruction rate", self.reconstruction_rate).unwrap();
        writeln!(s, "{:<22}{:>10.4}", "sim. (Morgan)", self.mean_morgan).unwrap();
        writeln!(s, "{:<22}{:>10.4}", "sim. (scaffold)", self.mean_scaffold).unwrap();
        writeln!(s, "{:<22}{:>10}", "sim. (Gobbi)", self.mean_gobbi).unwrap();
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,input,success,reconstructed,morgan,scaffold,best_product,error\n");
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.index,
                csv_field(&r.input),
                r.success,
                r.reconstructed,
                r.morgan,
                r.scaffold,
                csv_field(r.best_product.as_deref().unwrap_or("")),
                csv_field(r.error.as_deref().unwrap_or(""))
            )
            .unwrap();
        }
        s
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// `n` sampled pathways over the full catalog that use at least one of
/// `held_out` blocks, with distinct products.
pub fn held_out_pathways(
    catalog: &Catalog,
    templates: &TemplateSet,
    held_out: &[String],
    n: usize,
    opts: SamplerOptions,
    seed: u64,
) -> Result<Vec<SampledPathway>, SampleError> {
    let held: HashSet<&str> = held_out.iter().map(|s| s.as_str()).collect();
    let idx = EligibilityIndex::build(catalog, templates);
    let sampler = Sampler::new(catalog, templates, &idx, opts);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    let budget = 1000 * n.max(1) as u64;
    for i in 0..budget {
        if out.len() == n {
            break;
        }
        let p = sampler.sample(crate::seed::derive_seed(seed, &[i]))?;
        let uses_held = p.program.tokens.iter().any(|t| match t {
            Token::Bb { id, .. } => held.contains(id.as_str()),
            _ => false,
        });
        if uses_held && seen.insert(p.canonical.clone()) {
            out.push(p);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mol(s: &str) -> Molecule {
        parse_smiles(s).unwrap()
    }

    #[test]
    fn similarity_conventions() {
        let a = mol("CC(=O)Nc1ccccc1");
        assert_eq!(
            similarity_scores(&a, &a),
            SimilarityScores {
                morgan: 1.0,
                scaffold: 1.0
            }
        );
        let s = similarity_scores(&mol("c1ccccc1"), &mol("Cc1ccccc1"));
        assert_eq!(s.scaffold, 1.0);
        assert!(s.morgan < 1.0);
        assert_eq!(similarity_scores(&mol("CCCCCC"), &mol("c1ccccc1")).scaffold, 0.0);
        assert_eq!(similarity_scores(&mol("CCCCCC"), &mol("CCO")).scaffold, 1.0);
    }

    #[test]
    fn csv_quotes() {
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("CCO"), "CCO");
    }
}
