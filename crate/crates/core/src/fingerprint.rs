//! Circular fingerprints, Tanimoto similarity and Murcko scaffolds.

use crate::molgraph::{Bond, Molecule};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Retrieval fingerprint length.
pub const RETRIEVAL_BITS: usize = 256;
/// Similarity-metric fingerprint length.
pub const METRIC_BITS: usize = 4096;
pub const DEFAULT_RADIUS: usize = 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FingerprintError {
    #[error("fingerprint lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid hex fingerprint: {0}")]
    BadHex(String),
}

/// Fixed-length bit vector. Bit `i` lives in word `i / 64` at position `i % 64`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FingerprintBits {
    nbits: usize,
    words: Vec<u64>,
}

impl FingerprintBits {
    pub fn zeros(nbits: usize) -> Self {
        FingerprintBits {
            nbits,
            words: vec![0; nbits.div_ceil(64)],
        }
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut fp = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                fp.set(i);
            }
        }
        fp
    }

    pub fn len(&self) -> usize {
        self.nbits
    }

    pub fn is_empty(&self) -> bool {
        self.nbits == 0
    }

    pub fn set(&mut self, i: usize) {
        assert!(i < self.nbits);
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn get(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    /// Bits as 0.0/1.0 values.
    pub fn to_f64(&self) -> Vec<f64> {
        (0..self.nbits).map(|i| if self.get(i) { 1.0 } else { 0.0 }).collect()
    }

    /// Bytes with bit `8k` as the most significant bit of byte `k`.
    pub fn to_bytes(&self) -> Vec<u8> {
        (0..self.nbits.div_ceil(8))
            .map(|k| {
                (0..8).fold(0u8, |acc, j| {
                    let i = 8 * k + j;
                    acc << 1 | (i < self.nbits && self.get(i)) as u8
                })
            })
            .collect()
    }

    pub fn from_bytes(bytes: &[u8], nbits: usize) -> Self {
        let mut fp = Self::zeros(nbits);
        for i in 0..nbits {
            if bytes[i / 8] >> (7 - i % 8) & 1 == 1 {
                fp.set(i);
            }
        }
        fp
    }

    /// Lowercase hex, `len / 4` characters, most significant bit first.
    pub fn to_hex(&self) -> String {
        (0..self.nbits.div_ceil(4))
            .map(|k| {
                let nibble = (0..4).fold(0u32, |acc, j| {
                    let i = 4 * k + j;
                    acc << 1 | (i < self.nbits && self.get(i)) as u32
                });
                char::from_digit(nibble, 16).unwrap()
            })
            .collect()
    }

    pub fn from_hex(hex: &str) -> Result<Self, FingerprintError> {
        let mut fp = Self::zeros(hex.len() * 4);
        for (k, c) in hex.chars().enumerate() {
            let v = c
                .to_digit(16)
                .filter(|_| !c.is_ascii_uppercase())
                .ok_or_else(|| FingerprintError::BadHex(hex.to_string()))?;
            for j in 0..4 {
                if v >> (3 - j) & 1 == 1 {
                    fp.set(4 * k + j);
                }
            }
        }
        Ok(fp)
    }
}

impl fmt::Display for FingerprintBits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(words: &[u64]) -> u64 {
    let mut h = FNV_OFFSET;
    for w in words {
        for byte in w.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    h
}

/// Morgan-style circular fingerprint. Every atom environment of every
/// iteration `0..=radius` sets bit `hash % nbits`.
pub fn morgan_fingerprint(mol: &Molecule, radius: usize, nbits: usize) -> FingerprintBits {
    assert!(nbits > 0, "fingerprint needs at least one bit");
    let mut fp = FingerprintBits::zeros(nbits);
    let ring = mol.ring_atoms();
    let mut hashes: Vec<u64> = (0..mol.atom_count())
        .map(|i| {
            let a = mol.atom(i);
            fnv1a(&[
                0,
                a.element.atomic_number() as u64,
                a.charge as i64 as u64,
                mol.degree(i) as u64,
                a.hydrogens as u64,
                a.aromatic as u64,
                ring[i] as u64,
            ])
        })
        .collect();
    for &h in &hashes {
        fp.set((h % nbits as u64) as usize);
    }
    for iteration in 1..=radius {
        let next: Vec<u64> = (0..mol.atom_count())
            .map(|i| {
                let mut nb: Vec<(u64, u64)> = mol.neighbors(i).map(|(j, o)| (o.code() as u64, hashes[j])).collect();
                nb.sort_unstable();
                let mut words = vec![iteration as u64, hashes[i]];
                for (o, h) in nb {
                    words.push(o);
                    words.push(h);
                }
                fnv1a(&words)
            })
            .collect();
        for &h in &next {
            fp.set((h % nbits as u64) as usize);
        }
        hashes = next;
    }
    fp
}

/// `|a ∧ b| / |a ∨ b|`; two all-zero vectors have similarity 1.
pub fn tanimoto(a: &FingerprintBits, b: &FingerprintBits) -> Result<f64, FingerprintError> {
    if a.nbits != b.nbits {
        return Err(FingerprintError::LengthMismatch(a.nbits, b.nbits));
    }
    let (mut inter, mut union) = (0u32, 0u32);
    for (x, y) in a.words.iter().zip(&b.words) {
        inter += (x & y).count_ones();
        union += (x | y).count_ones();
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Ring systems plus the linkers between them. Acyclic molecules give the
/// empty molecule. Atoms that lose a substituent gain hydrogens to keep
/// their valence.
pub fn murcko_scaffold(mol: &Molecule) -> Molecule {
    let ring = mol.ring_atoms();
    if !ring.iter().any(|&r| r) {
        return Molecule::empty();
    }
    let n = mol.atom_count();
    let mut alive = vec![true; n];
    let mut degree: Vec<usize> = (0..n).map(|i| mol.degree(i)).collect();
    loop {
        let prune: Vec<usize> = (0..n).filter(|&i| alive[i] && !ring[i] && degree[i] <= 1).collect();
        if prune.is_empty() {
            break;
        }
        for i in prune {
            alive[i] = false;
            for (j, _) in mol.neighbors(i) {
                if alive[j] {
                    degree[j] -= 1;
                }
            }
        }
    }
    let keep: Vec<usize> = (0..n).filter(|&i| alive[i]).collect();
    let mut map = vec![usize::MAX; n];
    for (k, &i) in keep.iter().enumerate() {
        map[i] = k;
    }
    let mut atoms: Vec<_> = keep.iter().map(|&i| *mol.atom(i)).collect();
    let mut bonds = Vec::new();
    for b in mol.bonds() {
        match (alive[b.a], alive[b.b]) {
            (true, true) => bonds.push(Bond {
                a: map[b.a],
                b: map[b.b],
                order: b.order,
            }),
            (true, false) => atoms[map[b.a]].hydrogens += b.order.valence(),
            (false, true) => atoms[map[b.b]].hydrogens += b.order.valence(),
            (false, false) => {}
        }
    }
    Molecule::from_parts(atoms, bonds).expect("induced subgraph is simple")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::{canonical_form, check_valence, parse_smiles};

    fn mol(s: &str) -> Molecule {
        parse_smiles(s).unwrap()
    }

    #[test]
    fn tanimoto_toy_values() {
        let a = FingerprintBits::from_bools(&[true, true, false, false]);
        let b = FingerprintBits::from_bools(&[true, false, true, false]);
        assert!((tanimoto(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(tanimoto(&a, &a).unwrap(), 1.0);
        let c = FingerprintBits::from_bools(&[false, false, true, true]);
        assert_eq!(tanimoto(&a, &c).unwrap(), 0.0);
        let z = FingerprintBits::zeros(4);
        assert_eq!(tanimoto(&z, &z).unwrap(), 1.0);
        assert_eq!(
            tanimoto(&a, &FingerprintBits::zeros(8)),
            Err(FingerprintError::LengthMismatch(4, 8))
        );
    }

    #[test]
    fn hex_is_msb_first() {
        let a = FingerprintBits::from_bools(&[true, true, false, false]);
        assert_eq!(a.to_hex(), "c");
        let fp = morgan_fingerprint(&mol("CCO"), 2, 256);
        assert_eq!(fp.to_hex().len(), 64);
        assert_eq!(FingerprintBits::from_hex(&fp.to_hex()).unwrap(), fp);
        assert_eq!(FingerprintBits::from_bytes(&fp.to_bytes(), 256), fp);
        assert!(FingerprintBits::from_hex("0G").is_err());
    }

    #[test]
    fn methane_and_ethane_differ() {
        let a = morgan_fingerprint(&mol("C"), 2, 256);
        let b = morgan_fingerprint(&mol("CC"), 2, 256);
        assert_ne!(a, b);
    }

    #[test]
    fn water_spellings_agree() {
        assert_eq!(
            morgan_fingerprint(&mol("O"), 0, 256),
            morgan_fingerprint(&mol("[OH2]"), 0, 256)
        );
    }

    #[test]
    fn atom_order_invariant() {
        assert_eq!(
            morgan_fingerprint(&mol("OCC(=O)N"), 2, 4096),
            morgan_fingerprint(&mol("NC(=O)CO"), 2, 4096)
        );
    }

    #[test]
    fn scaffolds() {
        let benzene = canonical_form(&mol("c1ccccc1"));
        assert_eq!(canonical_form(&murcko_scaffold(&mol("c1ccccc1"))), benzene);
        assert_eq!(canonical_form(&murcko_scaffold(&mol("Cc1ccccc1"))), benzene);
        assert!(murcko_scaffold(&mol("CCCCCC")).is_empty());
        let linked = murcko_scaffold(&mol("OCc1ccc(CCC2CCNCC2)cc1"));
        assert_eq!(canonical_form(&linked), canonical_form(&mol("c1ccc(CCC2CCNCC2)cc1")));
        assert!(check_valence(&linked).is_empty());
        let ketone = murcko_scaffold(&mol("O=C1CCCCC1"));
        assert_eq!(canonical_form(&ketone), canonical_form(&mol("C1CCCCC1")));
    }

    #[test]
    fn scaffold_idempotent() {
        for s in ["CC(=O)Nc1ccc(O)cc1", "c1ccc2ccccc2c1CCN", "CCCC", "C1CC1C(C)C1CCC1"] {
            let once = murcko_scaffold(&mol(s));
            let twice = murcko_scaffold(&once);
            assert_eq!(canonical_form(&once), canonical_form(&twice), "{s}");
        }
    }
}
