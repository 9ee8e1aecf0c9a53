use crate::molgraph::{parse_raw, BondOrder, Dialect, Element, RawBond, SmilesError};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template syntax: {0}")]
    Syntax(String),
    #[error("pattern syntax: {0}")]
    Pattern(#[from] SmilesError),
    #[error("map number error: {0}")]
    MapNumber(String),
    #[error("pattern {0} is not connected")]
    Disconnected(usize),
    #[error("template arity {0} outside 1..=3")]
    Arity(usize),
    #[error("line {line}: {msg}")]
    File { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternAtom {
    /// `None` matches any element.
    pub element: Option<Element>,
    pub aromatic: bool,
    pub charge: Option<i8>,
    /// Required graph degree.
    pub degree: Option<u8>,
    pub map: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternBond {
    Order(BondOrder),
    /// Unwritten bond: single or aromatic.
    Implicit,
    Any,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternGraph {
    pub atoms: Vec<PatternAtom>,
    pub bonds: Vec<(usize, usize, PatternBond)>,
}

impl PatternGraph {
    pub fn bond_between(&self, i: usize, j: usize) -> Option<PatternBond> {
        self.bonds
            .iter()
            .find(|&&(a, b, _)| (a, b) == (i, j) || (a, b) == (j, i))
            .map(|&(_, _, o)| o)
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, PatternBond)> + '_ {
        self.bonds.iter().filter_map(move |&(a, b, o)| {
            if a == i {
                Some((b, o))
            } else if b == i {
                Some((a, o))
            } else {
                None
            }
        })
    }

    fn is_connected(&self) -> bool {
        if self.atoms.is_empty() {
            return false;
        }
        let mut seen = vec![false; self.atoms.len()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for (v, _) in self.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.iter().all(|&s| s)
    }

    /// Index of the pattern atom carrying map number `m`.
    pub fn atom_with_map(&self, m: u32) -> Option<usize> {
        self.atoms.iter().position(|a| a.map == Some(m))
    }

    /// Parses one pattern component.
    pub fn parse(text: &str) -> Result<Self, TemplateError> {
        let raw = parse_raw(text, Dialect::Pattern)?;
        let atoms = raw
            .atoms
            .iter()
            .map(|a| PatternAtom {
                element: a.element,
                aromatic: a.aromatic,
                charge: a.charge,
                degree: a.degree,
                map: a.map,
            })
            .collect();
        let bonds = raw
            .bonds
            .iter()
            .map(|&(a, b, o)| {
                let bond = match o {
                    Some(RawBond::Order(o)) => PatternBond::Order(o),
                    Some(RawBond::Any) => PatternBond::Any,
                    None => PatternBond::Implicit,
                };
                (a, b, bond)
            })
            .collect();
        Ok(PatternGraph { atoms, bonds })
    }
}

/// Reactant patterns rewrite into product patterns; atoms correspond by map number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReactionTemplate {
    pub text: String,
    pub reactants: Vec<PatternGraph>,
    pub products: Vec<PatternGraph>,
}

fn split_top_level(side: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in side.char_indices() {
        match c {
            '[' => depth += 1,
            ']' => depth -= 1,
            '.' if depth == 0 => {
                parts.push(&side[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(&side[start..]);
    parts
}

impl ReactionTemplate {
    pub fn arity(&self) -> usize {
        self.reactants.len()
    }

    /// Parses `r1.r2...>>p1[.p2]`.
    pub fn parse(text: &str) -> Result<Self, TemplateError> {
        let text = text.trim();
        let (lhs, rhs) = text
            .split_once(">>")
            .ok_or_else(|| TemplateError::Syntax("missing '>>'".into()))?;
        if rhs.contains(">>") {
            return Err(TemplateError::Syntax("more than one '>>'".into()));
        }
        let reactants = split_top_level(lhs)
            .into_iter()
            .map(PatternGraph::parse)
            .collect::<Result<Vec<_>, _>>()?;
        let products = split_top_level(rhs)
            .into_iter()
            .map(PatternGraph::parse)
            .collect::<Result<Vec<_>, _>>()?;
        if reactants.is_empty() || reactants.len() > 3 {
            return Err(TemplateError::Arity(reactants.len()));
        }
        for (k, p) in reactants.iter().chain(&products).enumerate() {
            if !p.is_connected() {
                return Err(TemplateError::Disconnected(k));
            }
        }
        let mut reactant_maps: BTreeMap<u32, usize> = BTreeMap::new();
        for (r, pat) in reactants.iter().enumerate() {
            for a in &pat.atoms {
                if let Some(m) = a.map {
                    if reactant_maps.insert(m, r).is_some() {
                        return Err(TemplateError::MapNumber(format!(
                            "map number {m} repeated on the reactant side"
                        )));
                    }
                }
            }
        }
        let mut product_maps = BTreeMap::new();
        for pat in &products {
            for a in &pat.atoms {
                match a.map {
                    Some(m) => {
                        if product_maps.insert(m, ()).is_some() {
                            return Err(TemplateError::MapNumber(format!(
                                "map number {m} repeated on the product side"
                            )));
                        }
                        if !reactant_maps.contains_key(&m) {
                            return Err(TemplateError::MapNumber(format!(
                                "product map number {m} has no reactant atom"
                            )));
                        }
                    }
                    None => {
                        if a.element.is_none() {
                            return Err(TemplateError::MapNumber(
                                "unmapped product atom must name an element".into(),
                            ));
                        }
                    }
                }
            }
        }
        Ok(ReactionTemplate {
            text: text.to_string(),
            reactants,
            products,
        })
    }
}

/// Ordered template collection; a template's index is its reaction id.
#[derive(Debug, Clone, Default)]
pub struct TemplateSet {
    templates: Vec<ReactionTemplate>,
}

impl TemplateSet {
    pub fn new(templates: Vec<ReactionTemplate>) -> Self {
        TemplateSet { templates }
    }

    /// Reads `<id>\t<arity>\t<template>` lines. Ids must count up from 0.
    pub fn parse(text: &str) -> Result<Self, TemplateError> {
        let mut templates = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line_no = lineno + 1;
            let line = line.trim_end();
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let err = |msg: String| TemplateError::File { line: line_no, msg };
            if fields.len() != 3 {
                return Err(err(format!("expected 3 tab-separated fields, found {}", fields.len())));
            }
            let id: usize = fields[0]
                .trim()
                .parse()
                .map_err(|_| err(format!("bad id '{}'", fields[0])))?;
            if id != templates.len() {
                return Err(err(format!("id {id} out of sequence, expected {}", templates.len())));
            }
            let arity: usize = fields[1]
                .trim()
                .parse()
                .map_err(|_| err(format!("bad arity '{}'", fields[1])))?;
            let tmpl = ReactionTemplate::parse(fields[2]).map_err(|e| err(e.to_string()))?;
            if tmpl.arity() != arity {
                return Err(err(format!("declared arity {arity}, template has {}", tmpl.arity())));
            }
            templates.push(tmpl);
        }
        Ok(TemplateSet { templates })
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn get(&self, r: usize) -> Option<&ReactionTemplate> {
        self.templates.get(r)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ReactionTemplate> {
        self.templates.iter()
    }

    pub fn to_tsv(&self) -> String {
        self.templates
            .iter()
            .enumerate()
            .map(|(i, t)| format!("{i}\t{}\t{}\n", t.arity(), t.text))
            .collect()
    }
}
