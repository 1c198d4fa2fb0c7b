//! Exact cosine search over unit-norm fact-check embeddings.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::path::Path;

use rayon::prelude::*;

use crate::binio::{put_f64s, put_u32, put_u64, to_u32, ByteReader};
use crate::encoder::NORM_FLOOR;
use crate::error::{Error, Result};

pub const INDEX_MAGIC: &[u8; 4] = b"BIDX";
pub const INDEX_VERSION: u32 = 1;
const NORM_TOLERANCE: f64 = 1e-6;

/// Ranked fact-check ids for one post.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub post_id: u64,
    pub hits: Vec<(u64, f64)>,
}

impl RankedList {
    pub fn new(post_id: u64) -> Self {
        Self {
            post_id,
            hits: Vec::new(),
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.hits.iter().map(|&(id, _)| id)
    }

    pub fn truncated(&self, k: usize) -> Self {
        Self {
            post_id: self.post_id,
            hits: self.hits.iter().take(k).copied().collect(),
        }
    }

    /// Checks non-increasing scores, distinct ids and the ascending-id tie
    /// rule.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (i, &(id, score)) in self.hits.iter().enumerate() {
            if !seen.insert(id) {
                return Err(Error::DuplicateHit {
                    post_id: self.post_id,
                    fact_check_id: id,
                });
            }
            if i > 0 && hit_order(&self.hits[i - 1], &(id, score)) != Ordering::Less {
                return Err(Error::HitsNotSorted {
                    post_id: self.post_id,
                });
            }
        }
        Ok(())
    }
}

/// Descending score, then ascending id.
pub fn hit_order(a: &(u64, f64), b: &(u64, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Keep the best `k` hits in [`hit_order`].
pub fn top_k(mut hits: Vec<(u64, f64)>, k: usize) -> Vec<(u64, f64)> {
    if k == 0 {
        return Vec::new();
    }
    if hits.len() > k {
        hits.select_nth_unstable_by(k - 1, hit_order);
        hits.truncate(k);
    }
    hits.sort_unstable_by(hit_order);
    hits
}

/// Immutable `N x D` matrix of unit rows keyed by fact-check id.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    ids: Vec<u64>,
    dim: usize,
    data: Vec<f64>,
}

impl VectorIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Exact top-`k` by cosine. A zero query scores 0 against every row.
    pub fn search(&self, post_id: u64, query: &[f64], k: usize) -> Result<RankedList> {
        if self.is_empty() {
            return Ok(RankedList::new(post_id));
        }
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if query.len() != self.dim {
            return Err(Error::Shape(format!(
                "query of dimension {} against index of dimension {}",
                query.len(),
                self.dim
            )));
        }
        let norm = query.iter().map(|v| v * v).sum::<f64>().sqrt();
        let scores: Vec<(u64, f64)> = self
            .ids
            .iter()
            .enumerate()
            .map(|(i, &id)| {
                if norm < NORM_FLOOR {
                    return (id, 0.0);
                }
                let dot: f64 = self.row(i).iter().zip(query).map(|(a, b)| a * b).sum();
                (id, dot / norm)
            })
            .collect();
        Ok(RankedList {
            post_id,
            hits: top_k(scores, k),
        })
    }

    /// Independent queries run on the current rayon pool; output order
    /// follows the input.
    pub fn search_many(&self, queries: &[(u64, Vec<f64>)], k: usize) -> Result<Vec<RankedList>> {
        queries
            .par_iter()
            .map(|(post_id, q)| self.search(*post_id, q, k))
            .collect()
    }
}

/// Build an index, normalizing every row on the way in.
pub fn build_index(entries: Vec<(u64, Vec<f64>)>) -> Result<VectorIndex> {
    let dim = entries.first().map_or(0, |(_, v)| v.len());
    let mut ids = Vec::with_capacity(entries.len());
    let mut data = Vec::with_capacity(entries.len() * dim);
    let mut seen = HashSet::new();
    for (id, values) in entries {
        if !seen.insert(id) {
            return Err(Error::DuplicateId {
                kind: "fact-check",
                id,
            });
        }
        if values.len() != dim {
            return Err(Error::Shape(format!(
                "entry {id} has dimension {} but index has {dim}",
                values.len()
            )));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < NORM_FLOOR || !norm.is_finite() {
            return Err(Error::DegenerateVector(id));
        }
        ids.push(id);
        data.extend(values.iter().map(|v| v / norm));
    }
    Ok(VectorIndex { ids, dim, data })
}

pub fn encode_index(index: &VectorIndex) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(20 + index.len() * (8 + 8 * index.dim));
    buf.extend_from_slice(INDEX_MAGIC);
    put_u32(&mut buf, INDEX_VERSION);
    put_u32(&mut buf, to_u32(index.dim, "dimension")?);
    put_u64(&mut buf, index.len() as u64);
    for &id in &index.ids {
        put_u64(&mut buf, id);
    }
    put_f64s(&mut buf, &index.data);
    Ok(buf)
}

pub fn decode_index(bytes: &[u8]) -> Result<VectorIndex> {
    let mut r = ByteReader::new(bytes);
    r.magic(INDEX_MAGIC)?;
    r.version(INDEX_VERSION)?;
    let dim = r.u32()? as usize;
    let n = r.u64()?;
    let payload = n
        .checked_mul(8 + 8 * dim as u64)
        .ok_or_else(|| Error::Corrupt {
            offset: 12,
            message: format!("row count {n} overflows"),
        })?;
    r.expect_remaining(payload)?;
    let n = n as usize;
    let mut ids = Vec::with_capacity(n);
    let mut seen = HashSet::new();
    for _ in 0..n {
        let offset = r.offset();
        let id = r.u64()?;
        if !seen.insert(id) {
            return Err(Error::Corrupt {
                offset,
                message: format!("duplicate id {id}"),
            });
        }
        ids.push(id);
    }
    let start = r.offset();
    let mut data = vec![0.0; n * dim];
    r.f64_into(&mut data)?;
    for i in 0..n {
        let norm = data[i * dim..(i + 1) * dim]
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        if norm.is_nan() || (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::Corrupt {
                offset: start + (i * dim * 8) as u64,
                message: format!("row {i} has norm {norm}"),
            });
        }
    }
    Ok(VectorIndex { ids, dim, data })
}

pub fn save_index(index: &VectorIndex, path: &Path) -> Result<()> {
    std::fs::write(path, encode_index(index)?).map_err(|e| Error::io(path, e))
}

pub fn load_index(path: &Path) -> Result<VectorIndex> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_index(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn basis() -> VectorIndex {
        build_index(
            (0..4)
                .map(|i| {
                    let mut v = vec![0.0; 4];
                    v[i] = 1.0;
                    (10 + i as u64, v)
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn build_counts_and_normalizes() {
        let idx = build_index(vec![
            (1, vec![2.0, 0.0, 0.0, 0.0]),
            (2, vec![0.0, 1.0, 1.0, 0.0]),
            (3, vec![1.0, 1.0, 1.0, 1.0]),
        ])
        .unwrap();
        assert_eq!((idx.len(), idx.dim()), (3, 4));
        assert_eq!(idx.row(0), &[1.0, 0.0, 0.0, 0.0]);
        let err = build_index(vec![(7, vec![1.0]), (7, vec![2.0])]).unwrap_err();
        assert!(err.to_string().contains('7'));
        assert!(build_index(vec![(1, vec![1.0]), (2, vec![1.0, 0.0])]).is_err());
        assert!(matches!(
            build_index(vec![(5, vec![0.0, 0.0])]),
            Err(Error::DegenerateVector(5))
        ));
    }

    #[test]
    fn orthonormal_query() {
        let hits = basis().search(0, &[0.0, 1.0, 0.0, 0.0], 1).unwrap().hits;
        assert_eq!(hits, vec![(11, 1.0)]);
    }

    #[test]
    fn k_larger_than_index() {
        let idx = build_index(vec![
            (3, vec![1.0, 0.0]),
            (1, vec![0.0, 1.0]),
            (2, vec![1.0, 1.0]),
        ])
        .unwrap();
        let list = idx.search(9, &[1.0, 0.8], 10).unwrap();
        assert_eq!(list.ids().collect::<Vec<_>>(), vec![2, 3, 1]);
        list.validate().unwrap();
    }

    #[test]
    fn ties_and_zero_query() {
        let idx = basis();
        let list = idx.search(0, &[0.0; 4], 4).unwrap();
        assert_eq!(list.ids().collect::<Vec<_>>(), vec![10, 11, 12, 13]);
        assert!(list.hits.iter().all(|&(_, s)| s == 0.0));
        let empty = build_index(Vec::new()).unwrap();
        assert!(empty.search(3, &[], 5).unwrap().hits.is_empty());
        assert!(idx.search(0, &[1.0], 1).is_err());
    }

    #[test]
    fn file_round_trip_and_rejections() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("idx.bin");
        let idx = build_index(vec![(4, vec![0.3, -0.4]), (9, vec![1e-3, 7.0])]).unwrap();
        save_index(&idx, &path).unwrap();
        let back = load_index(&path).unwrap();
        assert_eq!(back, idx);
        for (a, b) in back.data().iter().zip(idx.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }

        let bytes = encode_index(&idx).unwrap();
        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(decode_index(&bad)
            .unwrap_err()
            .to_string()
            .contains("bad magic"));

        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(
            decode_index(&bad),
            Err(Error::VersionMismatch { found: 2, .. })
        ));

        let short = &bytes[..bytes.len() - 5];
        match decode_index(short).unwrap_err() {
            Error::Truncated {
                expected, actual, ..
            } => {
                assert_eq!(expected, bytes.len() as u64);
                assert_eq!(actual, bytes.len() as u64 - 5);
            }
            other => panic!("unexpected {other}"),
        }
        assert!(decode_index(&bytes[..10]).is_err());

        let mut dup = bytes.clone();
        dup[28..36].copy_from_slice(&4u64.to_le_bytes());
        assert!(decode_index(&dup)
            .unwrap_err()
            .to_string()
            .contains("duplicate"));

        let mut skew = bytes.clone();
        skew[36..44].copy_from_slice(&2.0f64.to_le_bytes());
        assert!(matches!(decode_index(&skew), Err(Error::Corrupt { .. })));
    }

    fn random_index(seed: u64, n: usize, d: usize) -> VectorIndex {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        build_index(
            (0..n)
                .map(|i| {
                    let v = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    (i as u64 * 3 + 1, v)
                })
                .collect(),
        )
        .unwrap()
    }

    proptest! {
        #[test]
        fn full_k_is_sorted_permutation(seed: u64, n in 1usize..40) {
            let idx = random_index(seed, n, 5);
            let q: Vec<f64> = idx.row(0).iter().map(|v| v * 2.0).collect();
            let list = idx.search(0, &q, n).unwrap();
            prop_assert!(list.validate().is_ok());
            let mut ids: Vec<u64> = list.ids().collect();
            ids.sort_unstable();
            let mut expected = idx.ids().to_vec();
            expected.sort_unstable();
            prop_assert_eq!(ids, expected);
            prop_assert_eq!(list.hits[0].0, idx.ids()[0]);
            prop_assert!(list.hits[0].1 >= 1.0 - 1e-9);
            for &(_, s) in &list.hits {
                prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&s));
            }
        }

        #[test]
        fn prefix_monotone_in_k(seed: u64, k in 1usize..20) {
            let idx = random_index(seed, 25, 4);
            let q = [0.1, -0.5, 0.3, 0.9];
            let a = idx.search(0, &q, k).unwrap();
            let b = idx.search(0, &q, k + 1).unwrap();
            prop_assert_eq!(&a.hits[..], &b.hits[..a.hits.len()]);
        }
    }
}
