//! SMILES-subset reader.
//!
//! Supported: organic-subset atoms, bracket atoms with hydrogen count and
//! charge, bonds `- = # :`, branches, ring closures (`1`..`9`, `%nn`).
//! Stereo marks, isotopes, atom classes and `.` are rejected. The same
//! reader handles the pattern dialect used by reaction templates, which adds
//! `*`, `~`, degree constraints and map numbers.

use super::{implicit_hydrogens, sanitize, Atom, Bond, BondOrder, Element, Molecule, SanitizeError};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SmilesError {
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unsupported feature at position {pos}: {what}")]
    Unsupported { pos: usize, what: String },
    #[error(transparent)]
    Valence(#[from] SanitizeError),
}

fn syntax(pos: usize, msg: impl Into<String>) -> SmilesError {
    SmilesError::Syntax { pos, msg: msg.into() }
}

fn unsupported(pos: usize, what: impl Into<String>) -> SmilesError {
    SmilesError::Unsupported { pos, what: what.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Dialect {
    Molecule,
    Pattern,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum RawBond {
    Order(BondOrder),
    Any,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct RawAtom {
    /// `None` is the wildcard `*`.
    pub element: Option<Element>,
    pub aromatic: bool,
    pub bracket: bool,
    pub hydrogens: Option<u8>,
    pub charge: Option<i8>,
    pub degree: Option<u8>,
    pub map: Option<u32>,
    pub pos: usize,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct RawGraph {
    pub atoms: Vec<RawAtom>,
    /// `None` order means unspecified in the text.
    pub bonds: Vec<(usize, usize, Option<RawBond>)>,
}

struct Reader<'a> {
    text: &'a [u8],
    pos: usize,
    dialect: Dialect,
}

impl<'a> Reader<'a> {
    fn peek(&self) -> Option<u8> {
        self.text.get(self.pos).copied()
    }

    fn peek_at(&self, k: usize) -> Option<u8> {
        self.text.get(self.pos + k).copied()
    }

    fn number(&mut self) -> Option<u32> {
        let start = self.pos;
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        if self.pos == start {
            None
        } else {
            std::str::from_utf8(&self.text[start..self.pos]).ok()?.parse().ok()
        }
    }

    fn organic(&mut self) -> Result<RawAtom, SmilesError> {
        let pos = self.pos;
        let c = self.peek().unwrap();
        let (element, aromatic, len) = match (c, self.peek_at(1)) {
            (b'C', Some(b'l')) => (Element::Cl, false, 2),
            (b'B', Some(b'r')) => (Element::Br, false, 2),
            (b'B', _) => (Element::B, false, 1),
            (b'C', _) => (Element::C, false, 1),
            (b'N', _) => (Element::N, false, 1),
            (b'O', _) => (Element::O, false, 1),
            (b'P', _) => (Element::P, false, 1),
            (b'S', _) => (Element::S, false, 1),
            (b'F', _) => (Element::F, false, 1),
            (b'I', _) => (Element::I, false, 1),
            (b'b', _) => (Element::B, true, 1),
            (b'c', _) => (Element::C, true, 1),
            (b'n', _) => (Element::N, true, 1),
            (b'o', _) => (Element::O, true, 1),
            (b'p', _) => (Element::P, true, 1),
            (b's', _) => (Element::S, true, 1),
            (b'*', _) if self.dialect == Dialect::Pattern => {
                self.pos += 1;
                return Ok(RawAtom {
                    element: None,
                    aromatic: false,
                    bracket: false,
                    hydrogens: None,
                    charge: None,
                    degree: None,
                    map: None,
                    pos,
                });
            }
            _ => return Err(unsupported(pos, format!("element '{}'", c as char))),
        };
        self.pos += len;
        Ok(RawAtom {
            element: Some(element),
            aromatic,
            bracket: false,
            hydrogens: None,
            charge: None,
            degree: None,
            map: None,
            pos,
        })
    }

    fn bracket(&mut self) -> Result<RawAtom, SmilesError> {
        let open = self.pos;
        self.pos += 1;
        if matches!(self.peek(), Some(b'0'..=b'9')) {
            return Err(unsupported(self.pos, "isotope"));
        }
        let sym_pos = self.pos;
        let (element, aromatic) = match self.peek() {
            Some(b'*') if self.dialect == Dialect::Pattern => {
                self.pos += 1;
                (None, false)
            }
            Some(c) if c.is_ascii_alphabetic() => {
                let two = self.peek_at(1).filter(|n| n.is_ascii_lowercase()).map(|n| [c, n]);
                let mut found = None;
                if let Some(two) = two.filter(|_| c.is_ascii_uppercase()) {
                    let s = std::str::from_utf8(&two).unwrap();
                    match Element::from_symbol(s) {
                        Some(e) => found = Some((e, false, 2)),
                        None => return Err(unsupported(sym_pos, format!("element '{s}'"))),
                    }
                }
                if found.is_none() {
                    let s = (c as char).to_string();
                    if let Some(e) = Element::from_symbol(&s) {
                        found = Some((e, false, 1));
                    } else if c.is_ascii_lowercase() {
                        let upper = (c as char).to_ascii_uppercase().to_string();
                        if let Some(e) = Element::from_symbol(&upper).filter(|e| e.can_be_aromatic()) {
                            found = Some((e, true, 1));
                        }
                    }
                }
                match found {
                    Some((e, arom, len)) => {
                        self.pos += len;
                        (Some(e), arom)
                    }
                    None => {
                        let end = self.text[sym_pos..]
                            .iter()
                            .position(|b| !b.is_ascii_alphabetic())
                            .map_or(self.text.len(), |k| sym_pos + k);
                        let sym = String::from_utf8_lossy(&self.text[sym_pos..end]);
                        return Err(unsupported(sym_pos, format!("element '{sym}'")));
                    }
                }
            }
            _ => return Err(syntax(sym_pos, "expected element symbol in bracket atom")),
        };
        let mut atom = RawAtom {
            element,
            aromatic,
            bracket: true,
            hydrogens: None,
            charge: None,
            degree: None,
            map: None,
            pos: open,
        };
        loop {
            let here = self.pos;
            match self.peek() {
                None => return Err(syntax(open, "unterminated bracket atom")),
                Some(b']') => {
                    self.pos += 1;
                    break;
                }
                Some(b'@') => return Err(unsupported(here, "stereo mark")),
                Some(b'H') => {
                    if self.dialect == Dialect::Pattern {
                        return Err(unsupported(here, "hydrogen count in pattern"));
                    }
                    if atom.hydrogens.is_some() {
                        return Err(syntax(here, "repeated hydrogen count"));
                    }
                    self.pos += 1;
                    let n = self.number().unwrap_or(1);
                    atom.hydrogens = Some(u8::try_from(n).map_err(|_| syntax(here, "hydrogen count too large"))?);
                }
                Some(b';') if self.dialect == Dialect::Pattern => {
                    self.pos += 1;
                }
                Some(b'D') if self.dialect == Dialect::Pattern => {
                    self.pos += 1;
                    let n = self.number().ok_or_else(|| syntax(here, "degree needs a number"))?;
                    atom.degree = Some(u8::try_from(n).map_err(|_| syntax(here, "degree too large"))?);
                }
                Some(c @ (b'+' | b'-')) => {
                    if atom.charge.is_some() {
                        return Err(syntax(here, "repeated charge"));
                    }
                    let sign: i32 = if c == b'+' { 1 } else { -1 };
                    self.pos += 1;
                    let mut magnitude: u32 = 1;
                    if let Some(n) = self.number() {
                        magnitude = n;
                    } else {
                        while self.peek() == Some(c) {
                            self.pos += 1;
                            magnitude += 1;
                        }
                    }
                    if magnitude > 4 {
                        return Err(syntax(here, "charge out of range"));
                    }
                    atom.charge = Some((sign * magnitude as i32) as i8);
                }
                Some(b':') => {
                    if self.dialect == Dialect::Molecule {
                        return Err(unsupported(here, "atom class"));
                    }
                    self.pos += 1;
                    let n = self.number().ok_or_else(|| syntax(here, "map number expected"))?;
                    atom.map = Some(n);
                }
                Some(c) => return Err(syntax(here, format!("unexpected '{}' in bracket atom", c as char))),
            }
        }
        Ok(atom)
    }
}

/// Reads text into an unresolved graph.
pub(crate) fn parse_raw(text: &str, dialect: Dialect) -> Result<RawGraph, SmilesError> {
    let mut r = Reader {
        text: text.as_bytes(),
        pos: 0,
        dialect,
    };
    let mut g = RawGraph::default();
    let mut prev: Option<usize> = None;
    let mut pending: Option<(RawBond, usize)> = None;
    let mut branches: Vec<(usize, usize)> = Vec::new();
    let mut rings: BTreeMap<u32, (usize, Option<RawBond>, usize)> = BTreeMap::new();

    if text.is_empty() {
        return Err(syntax(0, "empty input"));
    }

    while let Some(c) = r.peek() {
        let here = r.pos;
        match c {
            b'(' => {
                let p = prev.ok_or_else(|| syntax(here, "branch without a preceding atom"))?;
                if pending.is_some() {
                    return Err(syntax(here, "bond before branch"));
                }
                branches.push((p, here));
                r.pos += 1;
            }
            b')' => {
                if pending.is_some() {
                    return Err(syntax(here, "dangling bond"));
                }
                let (p, _) = branches.pop().ok_or_else(|| syntax(here, "unmatched ')'"))?;
                prev = Some(p);
                r.pos += 1;
            }
            b'-' | b'=' | b'#' | b':' | b'~' => {
                if pending.is_some() {
                    return Err(syntax(here, "two consecutive bonds"));
                }
                let bond = match c {
                    b'-' => RawBond::Order(BondOrder::Single),
                    b'=' => RawBond::Order(BondOrder::Double),
                    b'#' => RawBond::Order(BondOrder::Triple),
                    b':' => RawBond::Order(BondOrder::Aromatic),
                    _ if dialect == Dialect::Pattern => RawBond::Any,
                    _ => return Err(unsupported(here, "'~' bond")),
                };
                pending = Some((bond, here));
                r.pos += 1;
            }
            b'/' | b'\\' => return Err(unsupported(here, "directional bond")),
            b'.' => return Err(unsupported(here, "disconnected fragments")),
            b'0'..=b'9' | b'%' => {
                let num = if c == b'%' {
                    r.pos += 1;
                    let (a, b) = (r.peek_at(0), r.peek_at(1));
                    match (a, b) {
                        (Some(a @ b'0'..=b'9'), Some(b @ b'0'..=b'9')) => {
                            r.pos += 2;
                            ((a - b'0') * 10 + (b - b'0')) as u32
                        }
                        _ => return Err(syntax(here, "'%' needs two digits")),
                    }
                } else {
                    r.pos += 1;
                    (c - b'0') as u32
                };
                let p = prev.ok_or_else(|| syntax(here, "ring closure without an atom"))?;
                let bond = pending.take().map(|(b, _)| b);
                if let Some((opener, open_bond, _)) = rings.remove(&num) {
                    let order = match (open_bond, bond) {
                        (Some(x), Some(y)) if x != y => {
                            return Err(syntax(here, "conflicting ring-closure bond orders"))
                        }
                        (x, y) => x.or(y),
                    };
                    if opener == p {
                        return Err(syntax(here, "ring closure to the same atom"));
                    }
                    if g.bonds
                        .iter()
                        .any(|&(a, b, _)| (a, b) == (opener, p) || (a, b) == (p, opener))
                    {
                        return Err(syntax(here, "ring closure duplicates an existing bond"));
                    }
                    g.bonds.push((opener, p, order));
                } else {
                    rings.insert(num, (p, bond, here));
                }
            }
            b'[' => {
                let atom = r.bracket()?;
                push_atom(&mut g, atom, &mut prev, &mut pending);
            }
            _ => {
                if c.is_ascii_alphabetic() || c == b'*' {
                    let atom = r.organic()?;
                    push_atom(&mut g, atom, &mut prev, &mut pending);
                } else {
                    return Err(syntax(here, format!("unexpected character '{}'", c as char)));
                }
            }
        }
    }
    if let Some((_, pos)) = pending {
        return Err(syntax(pos, "dangling bond at end of input"));
    }
    if let Some(&(_, pos)) = branches.last() {
        return Err(syntax(pos, "unclosed branch"));
    }
    if let Some((_, &(_, _, pos))) = rings.iter().next() {
        return Err(syntax(pos, "unclosed ring"));
    }
    Ok(g)
}

fn push_atom(g: &mut RawGraph, atom: RawAtom, prev: &mut Option<usize>, pending: &mut Option<(RawBond, usize)>) {
    g.atoms.push(atom);
    let idx = g.atoms.len() - 1;
    if let Some(p) = *prev {
        g.bonds.push((p, idx, pending.take().map(|(b, _)| b)));
    }
    *prev = Some(idx);
}

/// Implicit bond between two atoms: aromatic when both are aromatic.
pub(crate) fn default_order(a_aromatic: bool, b_aromatic: bool) -> BondOrder {
    if a_aromatic && b_aromatic {
        BondOrder::Aromatic
    } else {
        BondOrder::Single
    }
}

/// Parses and sanitizes a molecule.
pub fn parse_smiles(text: &str) -> Result<Molecule, SmilesError> {
    let raw = parse_raw(text, Dialect::Molecule)?;
    let atoms: Vec<Atom> = raw
        .atoms
        .iter()
        .map(|a| Atom {
            element: a.element.expect("molecule dialect has no wildcards"),
            charge: a.charge.unwrap_or(0),
            hydrogens: a.hydrogens.unwrap_or(0),
            aromatic: a.aromatic,
        })
        .collect();
    let bonds: Vec<Bond> = raw
        .bonds
        .iter()
        .map(|&(a, b, o)| Bond {
            a,
            b,
            order: match o {
                Some(RawBond::Order(o)) => o,
                Some(RawBond::Any) => unreachable!("'~' rejected in molecule dialect"),
                None => default_order(atoms[a].aromatic, atoms[b].aromatic),
            },
        })
        .collect();
    let mut mol = Molecule::from_parts(atoms, bonds).map_err(|e| syntax(0, e.to_string()))?;
    normalize_charge_separation(&mut mol);
    for i in 0..mol.atom_count() {
        if !raw.atoms[i].bracket {
            let h = implicit_hydrogens(&mol, i);
            mol.atoms[i].hydrogens = h;
        }
    }
    sanitize(&mol)?;
    Ok(mol)
}

/// Rewrites hypervalent nitrogen with a terminal `=O` into the
/// charge-separated form `[N+]-[O-]`.
fn normalize_charge_separation(mol: &mut Molecule) {
    for i in 0..mol.atom_count() {
        let atom = mol.atoms[i];
        if atom.element != Element::N || atom.charge != 0 || atom.aromatic {
            continue;
        }
        if mol.bond_valence(i) + atom.hydrogens <= 3 {
            continue;
        }
        let target = mol.adjacency[i].iter().copied().find(|&(n, k)| {
            let o = mol.atoms[n];
            o.element == Element::O
                && o.charge == 0
                && o.hydrogens == 0
                && mol.adjacency[n].len() == 1
                && mol.bonds[k].order == BondOrder::Double
        });
        if let Some((n, k)) = target {
            mol.atoms[i].charge = 1;
            mol.atoms[n].charge = -1;
            mol.bonds[k].order = BondOrder::Single;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn methane() {
        let m = parse_smiles("C").unwrap();
        assert_eq!(m.atom_count(), 1);
        assert_eq!(m.atom(0).hydrogens, 4);
    }

    #[test]
    fn benzene_adjacency() {
        let m = parse_smiles("c1ccccc1").unwrap();
        assert_eq!(m.atom_count(), 6);
        assert_eq!(m.bonds().len(), 6);
        assert!(m.bonds().iter().all(|b| b.order == BondOrder::Aromatic));
        for i in 0..6 {
            assert!(m.atom(i).aromatic);
            assert_eq!(m.atom(i).hydrogens, 1);
            let mut nbrs: Vec<usize> = m.neighbors(i).map(|(n, _)| n).collect();
            nbrs.sort();
            let mut expect = vec![(i + 1) % 6, (i + 5) % 6];
            expect.sort();
            assert_eq!(nbrs, expect);
        }
    }

    #[test]
    fn unclosed_branch_reports_position() {
        assert_eq!(
            parse_smiles("C(=O"),
            Err(SmilesError::Syntax {
                pos: 1,
                msg: "unclosed branch".into()
            })
        );
    }

    #[test]
    fn rejects_unsupported_features() {
        for s in ["C[C@H](N)O", "[13C]", "C/C=C/C", "CC.O", "[Na+]", "Xe", "C[CH2:1]"] {
            assert!(
                matches!(parse_smiles(s), Err(SmilesError::Unsupported { .. })),
                "{s}: {:?}",
                parse_smiles(s)
            );
        }
    }

    #[test]
    fn syntax_errors() {
        for s in ["", "C1CC", "C)", "C==C", "(C)", "C11", "[C", "C-"] {
            assert!(matches!(parse_smiles(s), Err(SmilesError::Syntax { .. })), "{s}");
        }
    }

    #[test]
    fn valence_errors() {
        assert!(matches!(parse_smiles("C(C)(C)(C)(C)C"), Err(SmilesError::Valence(_))));
        assert!(matches!(parse_smiles("[CH3]"), Err(SmilesError::Valence(_))));
        assert!(matches!(parse_smiles("C:C"), Err(SmilesError::Valence(_))));
    }

    #[test]
    fn bracket_atoms() {
        let m = parse_smiles("[NH4+]").unwrap();
        assert_eq!((m.atom(0).charge, m.atom(0).hydrogens), (1, 4));
        let m = parse_smiles("C[O-]").unwrap();
        assert_eq!(m.atom(1).charge, -1);
        let m = parse_smiles("c1cc[nH]c1").unwrap();
        assert_eq!(m.atom(3).hydrogens, 1);
        let m = parse_smiles("ClCBr").unwrap();
        assert_eq!(m.atom(0).element, Element::Cl);
        assert_eq!(m.atom(2).element, Element::Br);
        let m = parse_smiles("C%12CC%12").unwrap();
        assert_eq!(m.bonds().len(), 3);
    }

    #[test]
    fn pattern_dialect() {
        let g = parse_raw("[C:1](=O)[O;D1]", Dialect::Pattern).unwrap();
        assert_eq!(g.atoms.len(), 3);
        assert_eq!(g.atoms[0].map, Some(1));
        assert_eq!(g.atoms[2].degree, Some(1));
        let g = parse_raw("[*:2]~[N+]", Dialect::Pattern).unwrap();
        assert_eq!(g.atoms[0].element, None);
        assert_eq!(g.atoms[1].charge, Some(1));
        assert_eq!(g.bonds[0].2, Some(RawBond::Any));
    }
}
