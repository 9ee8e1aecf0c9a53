//! Fingerprint index over building blocks: exact nearest-neighbour search,
//! K-means splitting and the train-similarity filter.

use crate::catalog::Catalog;
use crate::fingerprint::{morgan_fingerprint, tanimoto, FingerprintBits, DEFAULT_RADIUS, METRIC_BITS, RETRIEVAL_BITS};
use rand::Rng;
use thiserror::Error;

pub const SVBI_MAGIC: &[u8; 4] = b"SVBI";
pub const SVBI_VERSION: u32 = 1;
const FP_BYTES: usize = RETRIEVAL_BITS / 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IndexError {
    #[error("index is empty")]
    EmptyIndex,
    #[error("query has {got} dimensions, index has {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("need at least {k} blocks for {k} clusters, have {n}")]
    TooFewBlocks { k: usize, n: usize },
    #[error("test cluster {0} out of range")]
    BadCluster(usize),
    #[error("index file: {0}")]
    Format(String),
    #[error("unsupported index version {0}")]
    Version(u32),
    #[error("block '{0}' is not in the catalog")]
    UnknownBlock(String),
    #[error("stored fingerprint of '{0}' differs from the catalog molecule")]
    StaleFingerprint(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockIndex {
    ids: Vec<String>,
    fps: Vec<FingerprintBits>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub id: String,
    pub row: usize,
    pub distance: f64,
}

impl BlockIndex {
    /// Fingerprints are recomputed from the molecules.
    pub fn build(catalog: &Catalog) -> Self {
        let (ids, fps) = catalog
            .blocks()
            .iter()
            .map(|b| (b.id.clone(), morgan_fingerprint(&b.mol, DEFAULT_RADIUS, RETRIEVAL_BITS)))
            .unzip();
        BlockIndex { ids, fps }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn fingerprint(&self, row: usize) -> &FingerprintBits {
        &self.fps[row]
    }

    pub fn row_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    /// Top `k` rows by squared Euclidean distance to `query`; ties by id.
    pub fn nearest(&self, query: &[f64], k: usize) -> Result<Vec<Neighbor>, IndexError> {
        if self.is_empty() {
            return Err(IndexError::EmptyIndex);
        }
        if query.len() != RETRIEVAL_BITS {
            return Err(IndexError::DimMismatch {
                expected: RETRIEVAL_BITS,
                got: query.len(),
            });
        }
        let mut all: Vec<Neighbor> = self
            .fps
            .iter()
            .enumerate()
            .map(|(row, fp)| Neighbor {
                id: self.ids[row].clone(),
                row,
                distance: squared_distance(query, fp),
            })
            .collect();
        all.sort_by(|a, b| a.distance.total_cmp(&b.distance).then_with(|| a.id.cmp(&b.id)));
        all.truncate(k.max(1));
        Ok(all)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(SVBI_MAGIC);
        out.extend_from_slice(&SVBI_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for (id, fp) in self.ids.iter().zip(&self.fps) {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            out.extend_from_slice(&fp.to_bytes());
        }
        out
    }

    /// Reads an index file, checking every record against the catalog.
    pub fn from_bytes(bytes: &[u8], catalog: &Catalog) -> Result<Self, IndexError> {
        let records = read_records(bytes)?;
        let mut ids = Vec::with_capacity(records.len());
        let mut fps = Vec::with_capacity(records.len());
        for (id, stored) in records {
            let block = catalog.get(&id).ok_or_else(|| IndexError::UnknownBlock(id.clone()))?;
            let fp = morgan_fingerprint(&block.mol, DEFAULT_RADIUS, RETRIEVAL_BITS);
            if fp != stored {
                return Err(IndexError::StaleFingerprint(id));
            }
            ids.push(id);
            fps.push(fp);
        }
        Ok(BlockIndex { ids, fps })
    }
}

pub fn squared_distance(query: &[f64], fp: &FingerprintBits) -> f64 {
    query
        .iter()
        .enumerate()
        .map(|(i, &q)| {
            let d = q - if fp.get(i) { 1.0 } else { 0.0 };
            d * d
        })
        .sum()
}

fn read_records(bytes: &[u8]) -> Result<Vec<(String, FingerprintBits)>, IndexError> {
    let short = || IndexError::Format("truncated".into());
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8], IndexError> {
        let s = bytes.get(pos..pos + n).ok_or_else(short)?;
        pos += n;
        Ok(s)
    };
    if take(4)? != SVBI_MAGIC {
        return Err(IndexError::Format("bad magic".into()));
    }
    let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap());
    let version = u32_at(take(4)?);
    if version != SVBI_VERSION {
        return Err(IndexError::Version(version));
    }
    let count = u32_at(take(4)?) as usize;
    let mut out = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let len = u32_at(take(4)?) as usize;
        let id = std::str::from_utf8(take(len)?)
            .map_err(|_| IndexError::Format("id is not UTF-8".into()))?
            .to_string();
        let fp = FingerprintBits::from_bytes(take(FP_BYTES)?, RETRIEVAL_BITS);
        out.push((id, fp));
    }
    if pos != bytes.len() {
        return Err(IndexError::Format("trailing bytes".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    /// Cluster of each index row.
    pub clusters: Vec<usize>,
}

pub const KMEANS_MAX_ITERS: usize = 200;
pub const KMEANS_TOL: f64 = 1e-6;

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm with k-means++ seeding. Returns the cluster of each point.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Vec<usize> {
    let n = points.len();
    assert!(k >= 1 && k <= n);
    let mut rng = crate::seed::rng_for(seed, &[]);
    let first = rng.gen_range(0..n);
    let mut centroids: Vec<Vec<f64>> = vec![points[first].clone()];
    let mut chosen = vec![false; n];
    chosen[first] = true;
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut x = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if x < d {
                    pick = i;
                    break;
                }
                x -= d;
            }
            pick
        } else {
            // every point coincides with a centroid
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.gen_range(0..free.len())]
        };
        chosen[pick] = true;
        let c = points[pick].clone();
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(dist2(p, &c));
        }
        centroids.push(c);
    }

    let dim = points[0].len();
    let mut assign = vec![0usize; n];
    for _ in 0..KMEANS_MAX_ITERS {
        for (i, p) in points.iter().enumerate() {
            let mut best = (f64::INFINITY, 0);
            for (c, cen) in centroids.iter().enumerate() {
                let d = dist2(p, cen);
                if d < best.0 {
                    best = (d, c);
                }
            }
            assign[i] = best.1;
        }
        fix_empty_clusters(points, &centroids, &mut assign, k);
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            counts[assign[i]] += 1;
            for (s, x) in sums[assign[i]].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut moved: f64 = 0.0;
        for c in 0..k {
            let new: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            moved = moved.max(dist2(&new, &centroids[c]).sqrt());
            centroids[c] = new;
        }
        if moved < KMEANS_TOL {
            break;
        }
    }
    assign
}

/// Gives every empty cluster the point farthest from its own centroid,
/// taken from a cluster with more than one member.
fn fix_empty_clusters(points: &[Vec<f64>], centroids: &[Vec<f64>], assign: &mut [usize], k: usize) {
    loop {
        let mut counts = vec![0usize; k];
        for &a in assign.iter() {
            counts[a] += 1;
        }
        let Some(empty) = (0..k).find(|&c| counts[c] == 0) else {
            return;
        };
        let far = (0..points.len())
            .filter(|&i| counts[assign[i]] > 1)
            .max_by(|&i, &j| {
                dist2(&points[i], &centroids[assign[i]])
                    .total_cmp(&dist2(&points[j], &centroids[assign[j]]))
                    .then_with(|| j.cmp(&i))
            })
            .expect("k <= n leaves a cluster with several members");
        assign[far] = empty;
    }
}

/// Clusters the index fingerprints and holds out cluster `test_cluster`.
pub fn kmeans_split(index: &BlockIndex, k: usize, seed: u64, test_cluster: usize) -> Result<Split, IndexError> {
    if index.len() < k || k == 0 {
        return Err(IndexError::TooFewBlocks { k, n: index.len() });
    }
    if test_cluster >= k {
        return Err(IndexError::BadCluster(test_cluster));
    }
    let points: Vec<Vec<f64>> = index.fps.iter().map(|f| f.to_f64()).collect();
    let clusters = kmeans(&points, k, seed);
    let (mut train_ids, mut test_ids) = (Vec::new(), Vec::new());
    for (row, &c) in clusters.iter().enumerate() {
        if c == test_cluster {
            test_ids.push(index.ids[row].clone());
        } else {
            train_ids.push(index.ids[row].clone());
        }
    }
    Ok(Split {
        train_ids,
        test_ids,
        clusters,
    })
}

/// Highest Tanimoto similarity (4096-bit) of `fp` to any of `train`; 0 when empty.
pub fn max_similarity(fp: &FingerprintBits, train: &[FingerprintBits]) -> f64 {
    train
        .iter()
        .map(|t| tanimoto(fp, t).expect("equal lengths"))
        .fold(0.0, f64::max)
}

/// Keeps test blocks whose maximum similarity to the train blocks is at most `threshold`.
pub fn max_train_similarity_filter(
    catalog: &Catalog,
    test_ids: &[String],
    train_ids: &[String],
    threshold: f64,
) -> Result<Vec<String>, IndexError> {
    let fp = |id: &String| -> Result<FingerprintBits, IndexError> {
        let b = catalog.get(id).ok_or_else(|| IndexError::UnknownBlock(id.clone()))?;
        Ok(morgan_fingerprint(&b.mol, DEFAULT_RADIUS, METRIC_BITS))
    };
    let train: Vec<FingerprintBits> = train_ids.iter().map(fp).collect::<Result<_, _>>()?;
    let mut keep = Vec::new();
    for id in test_ids {
        if max_similarity(&fp(id)?, &train) <= threshold {
            keep.push(id.clone());
        }
    }
    Ok(keep)
}
