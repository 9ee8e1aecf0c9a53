//! Reaction templates: parsing, reactant matching and product rewriting.
//!
//! Templates use a small SMARTS-like grammar: `[C:1]` mapped atoms, `[*]`
//! wildcards, `;D<n>` degree constraints, charges, and the bond symbols
//! `- = # : ~`. An unwritten reactant bond matches single or aromatic.

mod matcher;
mod pattern;
mod rewrite;

pub use matcher::{embeddings, has_embedding};
pub use pattern::{PatternAtom, PatternBond, PatternGraph, ReactionTemplate, TemplateError, TemplateSet};

use crate::molgraph::{CanonicalForm, Molecule};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReactionError {
    #[error("template takes {expected} reactants, got {got}")]
    ArityMismatch { expected: usize, got: usize },
}

/// One embedding per reactant pattern: `atoms[i][p]` is the atom of
/// reactant `i` matched by pattern atom `p`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct MatchAssignment {
    pub atoms: Vec<Vec<usize>>,
}

/// Detailed result of applying a template.
#[derive(Debug, Clone, Default)]
pub struct ApplyOutcome {
    /// Sanitized unique products sorted by canonical text.
    pub products: Vec<(CanonicalForm, Molecule)>,
    pub matches: usize,
    /// Candidates dropped by sanitization or hydrogen accounting.
    pub rejected: usize,
}

fn check_arity(tmpl: &ReactionTemplate, got: usize) -> Result<(), ReactionError> {
    if tmpl.arity() != got {
        return Err(ReactionError::ArityMismatch {
            expected: tmpl.arity(),
            got,
        });
    }
    Ok(())
}

/// All combinations of per-reactant embeddings, in lexicographic order.
pub fn match_pattern(tmpl: &ReactionTemplate, reactants: &[&Molecule]) -> Result<Vec<MatchAssignment>, ReactionError> {
    check_arity(tmpl, reactants.len())?;
    let per: Vec<Vec<Vec<usize>>> = tmpl
        .reactants
        .iter()
        .zip(reactants)
        .map(|(p, m)| embeddings(p, m))
        .collect();
    if per.iter().any(|e| e.is_empty()) {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    let mut idx = vec![0usize; per.len()];
    loop {
        out.push(MatchAssignment {
            atoms: idx.iter().zip(&per).map(|(&k, e)| e[k].clone()).collect(),
        });
        let mut pos = per.len();
        loop {
            if pos == 0 {
                return Ok(out);
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < per[pos].len() {
                break;
            }
            idx[pos] = 0;
        }
    }
}

pub fn apply_detailed(tmpl: &ReactionTemplate, reactants: &[&Molecule]) -> Result<ApplyOutcome, ReactionError> {
    let matches = match_pattern(tmpl, reactants)?;
    let mut candidates = Vec::new();
    let mut rejected = 0;
    for m in &matches {
        match rewrite::rewrite(tmpl, reactants, &m.atoms) {
            Some(products) => candidates.extend(products),
            None => rejected += 1,
        }
    }
    let (products, dropped) = rewrite::finalize(candidates);
    Ok(ApplyOutcome {
        products,
        matches: matches.len(),
        rejected: rejected + dropped,
    })
}

/// Unique sanitized products sorted by canonical text; empty when the
/// template does not apply.
pub fn apply_template(tmpl: &ReactionTemplate, reactants: &[&Molecule]) -> Result<Vec<Molecule>, ReactionError> {
    Ok(apply_detailed(tmpl, reactants)?
        .products
        .into_iter()
        .map(|(_, m)| m)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::{canonical_form, check_valence, parse_smiles};

    const AMIDE: &str = "[C:1](=O)O.[N:2]>>[C:1](=O)[N:2]";

    fn mol(s: &str) -> Molecule {
        parse_smiles(s).unwrap()
    }

    fn canon(s: &str) -> String {
        canonical_form(&mol(s)).text
    }

    fn apply(t: &str, rs: &[&str]) -> Vec<String> {
        let t = ReactionTemplate::parse(t).unwrap();
        let ms: Vec<Molecule> = rs.iter().map(|s| mol(s)).collect();
        let refs: Vec<&Molecule> = ms.iter().collect();
        apply_template(&t, &refs)
            .unwrap()
            .iter()
            .map(|m| canonical_form(m).text)
            .collect()
    }

    #[test]
    fn amide_coupling() {
        let t = ReactionTemplate::parse(AMIDE).unwrap();
        let (acid, amine) = (mol("CC(=O)O"), mol("CN"));
        assert_eq!(match_pattern(&t, &[&acid, &amine]).unwrap().len(), 1);
        assert_eq!(apply(AMIDE, &["CC(=O)O", "CN"]), vec![canon("CC(=O)NC")]);
    }

    #[test]
    fn no_match_is_empty() {
        let t = ReactionTemplate::parse(AMIDE).unwrap();
        let m = mol("C");
        assert!(match_pattern(&t, &[&m, &m]).unwrap().is_empty());
        assert!(apply(AMIDE, &["C", "C"]).is_empty());
    }

    #[test]
    fn identity() {
        assert_eq!(apply("[C:1]>>[C:1]", &["C"]), vec![canon("C")]);
        let t = ReactionTemplate::parse("[C:1]>>[C:1]").unwrap();
        let ethane = mol("CC");
        assert_eq!(match_pattern(&t, &[&ethane]).unwrap().len(), 2);
    }

    #[test]
    fn arity_mismatch() {
        let t = ReactionTemplate::parse(AMIDE).unwrap();
        let m = mol("C");
        assert_eq!(
            match_pattern(&t, &[&m]),
            Err(ReactionError::ArityMismatch { expected: 2, got: 1 })
        );
    }

    #[test]
    fn operand_order_matters() {
        assert!(apply(AMIDE, &["CN", "CC(=O)O"]).is_empty());
    }

    #[test]
    fn suzuki_biaryl() {
        let t = "[c:1][Br].[c:2][B]([O;D1])[O;D1]>>[c:1]-[c:2]";
        let out = apply(t, &["Brc1ccccc1", "OB(O)c1ccncc1"]);
        assert_eq!(out, vec![canon("c1ccc(-c2ccncc2)cc1")]);
    }

    #[test]
    fn multi_product_hydrolysis() {
        let t = "[C:1](=O)[O:2][C:3]>>[C:1](=O)O.[O:2][C:3]";
        let out = apply(t, &["CC(=O)OCC"]);
        let mut want = vec![canon("CC(=O)O"), canon("CCO")];
        want.sort();
        assert_eq!(out, want);
    }

    #[test]
    fn three_component() {
        let t = "[C;D2:1]=O.[N;D2:2].[C;D1:3]#[C:4]>>[N:2][C:1][C:3]#[C:4]";
        let out = apply(t, &["CC=O", "CNC", "C#Cc1ccccc1"]);
        assert_eq!(out, vec![canon("CC(N(C)C)C#Cc1ccccc1")]);
    }

    #[test]
    fn substituents_follow_mapped_atoms() {
        // the ester's ethyl group leaves with the deleted oxygen
        let t = "[C:1](=O)O[C].[N:2]>>[C:1](=O)[N:2]";
        let out = apply(t, &["OCC(=O)OCC", "NC1CC1"]);
        assert_eq!(out, vec![canon("OCC(=O)NC1CC1")]);
    }

    #[test]
    fn permutation_invariant_output() {
        let a = apply(AMIDE, &["OC(=O)c1ccccc1", "NCCO"]);
        let b = apply(AMIDE, &["c1ccc(cc1)C(O)=O", "OCCN"]);
        assert_eq!(a, b);
        assert_eq!(a.len(), 1);
    }

    #[test]
    fn products_pass_valence() {
        let t = ReactionTemplate::parse(AMIDE).unwrap();
        let (a, b) = (mol("OC(=O)CC(=O)O"), mol("NCCN"));
        let out = apply_template(&t, &[&a, &b]).unwrap();
        assert_eq!(out.len(), 1);
        for m in &out {
            assert!(check_valence(m).is_empty());
        }
    }

    fn brute_force_count(pat: &PatternGraph, m: &Molecule) -> usize {
        let n = pat.atoms.len();
        let total = m.atom_count().pow(n as u32);
        let mut count = 0;
        'outer: for code in 0..total {
            let mut x = code;
            let mut assign = Vec::with_capacity(n);
            for _ in 0..n {
                assign.push(x % m.atom_count());
                x /= m.atom_count();
            }
            for i in 0..n {
                for j in 0..i {
                    if assign[i] == assign[j] {
                        continue 'outer;
                    }
                }
                if !matcher::atom_matches(&pat.atoms[i], m, assign[i]) {
                    continue 'outer;
                }
            }
            for &(a, b, pb) in &pat.bonds {
                match m.bond_between(assign[a], assign[b]) {
                    Some(o) if matcher::bond_matches(pb, o) => {}
                    _ => continue 'outer,
                }
            }
            count += 1;
        }
        count
    }

    #[test]
    fn matcher_agrees_with_brute_force() {
        let patterns = [
            "[C:1](=O)O",
            "[N:2]",
            "[*]~[*]",
            "[C:1][C:2][C:3]",
            "c1ccccc1",
            "[C;D1:3]#[C:4]",
            "[*]-[O]",
        ];
        let molecules = [
            "CC(=O)O",
            "OC(=O)CC(=O)O",
            "c1ccccc1O",
            "CC(C)(C)N",
            "C#CCO",
            "C1CC1C=O",
            "NCCN",
        ];
        for p in patterns {
            let pat = &PatternGraph::parse(p).unwrap();
            for s in molecules {
                let m = mol(s);
                assert_eq!(embeddings(pat, &m).len(), brute_force_count(pat, &m), "{p} on {s}");
            }
        }
    }
}
