//! Building-block catalog: `<id>\t<smiles>` records.

use crate::fingerprint::{morgan_fingerprint, FingerprintBits, DEFAULT_RADIUS, RETRIEVAL_BITS};
use crate::molgraph::{canonical_form, parse_smiles, CanonicalForm, Molecule};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CatalogError {
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
    #[error("duplicate block id '{0}'")]
    DuplicateId(String),
    #[error("unknown block id '{0}'")]
    UnknownBlock(String),
}

#[derive(Debug, Clone)]
pub struct Block {
    pub id: String,
    pub mol: Molecule,
    pub canonical: CanonicalForm,
    /// 256-bit retrieval fingerprint.
    pub fp: FingerprintBits,
}

impl Block {
    pub fn new(id: impl Into<String>, mol: Molecule) -> Self {
        let canonical = canonical_form(&mol);
        let fp = morgan_fingerprint(&mol, DEFAULT_RADIUS, RETRIEVAL_BITS);
        Block {
            id: id.into(),
            mol,
            canonical,
            fp,
        }
    }
}

/// Blocks skipped while loading.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    /// (skipped id, id of the earlier block with the same canonical form)
    pub duplicates: Vec<(String, String)>,
}

#[derive(Debug, Clone, Default)]
pub struct Catalog {
    blocks: Vec<Block>,
    by_id: HashMap<String, usize>,
    by_canonical: HashMap<CanonicalForm, usize>,
}

impl Catalog {
    /// Adds a block. Returns the id of an existing block with the same
    /// canonical form instead of inserting a duplicate.
    pub fn insert(&mut self, block: Block) -> Result<Result<usize, String>, CatalogError> {
        if self.by_id.contains_key(&block.id) {
            return Err(CatalogError::DuplicateId(block.id));
        }
        if let Some(&k) = self.by_canonical.get(&block.canonical) {
            return Ok(Err(self.blocks[k].id.clone()));
        }
        let k = self.blocks.len();
        self.by_id.insert(block.id.clone(), k);
        self.by_canonical.insert(block.canonical.clone(), k);
        self.blocks.push(block);
        Ok(Ok(k))
    }

    pub fn from_blocks(blocks: Vec<Block>) -> Result<(Self, LoadReport), CatalogError> {
        let mut cat = Catalog::default();
        let mut report = LoadReport::default();
        for b in blocks {
            let id = b.id.clone();
            if let Err(first) = cat.insert(b)? {
                report.duplicates.push((id, first));
            }
        }
        Ok((cat, report))
    }

    pub fn parse(text: &str) -> Result<(Self, LoadReport), CatalogError> {
        let mut blocks = Vec::new();
        for (k, line) in text.lines().enumerate() {
            let line_no = k + 1;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let (id, smiles) = t.split_once('\t').ok_or_else(|| CatalogError::Line {
                line: line_no,
                msg: "expected <id><TAB><smiles>".into(),
            })?;
            let (id, smiles) = (id.trim(), smiles.trim());
            if id.is_empty() || smiles.contains('\t') {
                return Err(CatalogError::Line {
                    line: line_no,
                    msg: "expected <id><TAB><smiles>".into(),
                });
            }
            let mol = parse_smiles(smiles).map_err(|e| CatalogError::Line {
                line: line_no,
                msg: format!("{smiles}: {e}"),
            })?;
            blocks.push(Block::new(id, mol));
        }
        Self::from_blocks(blocks)
    }

    pub fn to_tsv(&self) -> String {
        self.blocks
            .iter()
            .map(|b| format!("{}\t{}\n", b.id, b.canonical))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn get(&self, id: &str) -> Option<&Block> {
        self.by_id.get(id).map(|&k| &self.blocks[k])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn block(&self, id: &str) -> Result<&Block, CatalogError> {
        self.get(id).ok_or_else(|| CatalogError::UnknownBlock(id.to_string()))
    }

    pub fn find_canonical(&self, c: &CanonicalForm) -> Option<&Block> {
        self.by_canonical.get(c).map(|&k| &self.blocks[k])
    }

    /// Sub-catalog holding only `ids`, in catalog order.
    pub fn restrict(&self, ids: &[String]) -> Catalog {
        let wanted: std::collections::HashSet<&str> = ids.iter().map(|s| s.as_str()).collect();
        let blocks = self
            .blocks
            .iter()
            .filter(|b| wanted.contains(b.id.as_str()))
            .cloned()
            .collect();
        Catalog::from_blocks(blocks).expect("subset of a valid catalog").0
    }
}
