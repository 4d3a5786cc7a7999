//! Linear-scan Hamming ranking over bit-packed codes.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hashmodel::PackedCodes;

/// Codes of the database plus opaque external ids, one per code.
#[derive(Debug, Clone)]
pub struct HammingIndex {
    codes: PackedCodes,
    ids: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hit {
    pub id: u64,
    /// Position in the database.
    pub position: usize,
    pub distance: u32,
}

pub fn build_index(codes: PackedCodes, ids: Vec<u64>) -> Result<HammingIndex> {
    if ids.len() != codes.len() {
        return Err(Error::LengthMismatch {
            expected: codes.len(),
            got: ids.len(),
        });
    }
    Ok(HammingIndex { codes, ids })
}

/// Popcount of `a XOR b`. Padding bits are zero by construction, so no mask is
/// needed beyond the word count.
#[inline]
pub fn hamming(a: &[u64], b: &[u64]) -> Result<u32> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(hamming_unchecked(a, b))
}

#[inline]
fn hamming_unchecked(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

impl HammingIndex {
    /// Index whose ids are the database positions `0..n`.
    pub fn with_positions(codes: PackedCodes) -> Self {
        let ids = (0..codes.len() as u64).collect();
        Self { codes, ids }
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn bits(&self) -> usize {
        self.codes.bits()
    }

    pub fn codes(&self) -> &PackedCodes {
        &self.codes
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    fn check_query(&self, q: &[u64]) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if q.len() != self.codes.words_per_code() {
            return Err(Error::LengthMismatch {
                expected: self.codes.words_per_code(),
                got: q.len(),
            });
        }
        Ok(())
    }

    /// Distances from `q` to every database code, in database order.
    pub fn distances(&self, q: &[u64]) -> Result<Vec<u32>> {
        self.check_query(q)?;
        Ok((0..self.len())
            .into_par_iter()
            .with_min_len(1024)
            .map(|i| hamming_unchecked(q, self.codes.code(i)))
            .collect())
    }

    /// Database positions ordered by ascending distance, ties by position.
    pub fn rank(&self, q: &[u64]) -> Result<Vec<(usize, u32)>> {
        let dist = self.distances(q)?;
        // Counting sort over the r + 1 possible distances keeps ties in
        // position order.
        let mut buckets = vec![0usize; self.bits() + 2];
        for &d in &dist {
            buckets[d as usize + 1] += 1;
        }
        for b in 1..buckets.len() {
            buckets[b] += buckets[b - 1];
        }
        let mut out = vec![(0usize, 0u32); dist.len()];
        for (pos, &d) in dist.iter().enumerate() {
            let slot = &mut buckets[d as usize];
            out[*slot] = (pos, d);
            *slot += 1;
        }
        Ok(out)
    }

    /// Top `min(k, n)` hits.
    pub fn query(&self, q: &[u64], k: usize) -> Result<Vec<Hit>> {
        if k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        let mut ranked = self.rank(q)?;
        ranked.truncate(k);
        Ok(ranked
            .into_iter()
            .map(|(position, distance)| Hit {
                id: self.ids[position],
                position,
                distance,
            })
            .collect())
    }
}
