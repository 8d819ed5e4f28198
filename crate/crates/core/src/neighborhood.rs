//! The neighborhood-vector space: all `m` with nonnegative counts per state and
//! total degree at most `kmax`.
//!
//! Vectors are ordered degree-major and lexicographically (ascending) within a
//! degree, so every degree slice occupies a contiguous ordinal range.

use crate::numeric::binomial;
use thiserror::Error;

/// Default bound on the number of vectors the index may materialize.
pub const DEFAULT_CAP: u64 = 5_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("neighborhood space has {needed} vectors, above the materialization cap of {cap}")]
pub struct CapacityError {
    pub needed: u64,
    pub cap: u64,
}

/// Number of neighborhood vectors of exactly degree `k` over `num_states` states.
pub fn size_of_mk(k: u64, num_states: usize) -> u64 {
    if num_states == 0 {
        return u64::from(k == 0);
    }
    let s = num_states as u64;
    binomial(k + s - 1, s - 1).unwrap_or(u64::MAX)
}

/// `|M|` for degrees `0..=kmax`.
pub fn neighborhood_count(num_states: usize, kmax: u64) -> u64 {
    let s = num_states as u64;
    binomial(kmax + s, s).unwrap_or(u64::MAX)
}

/// Number of scalar equations of the full system.
pub fn ame_equation_count(kmax: u64, num_states: usize) -> u64 {
    let s = num_states as u64;
    match binomial(kmax + s, s.saturating_sub(1)) {
        Some(b) => b.saturating_mul(kmax + 1),
        None => u64::MAX,
    }
}

/// `m` with one more neighbor in `s1` and one fewer in `s2`, if that stays nonnegative.
pub fn shift(m: &[u32], s1: usize, s2: usize) -> Option<Vec<u32>> {
    debug_assert_ne!(s1, s2);
    if m[s2] == 0 {
        return None;
    }
    let mut out = m.to_vec();
    out[s1] += 1;
    out[s2] -= 1;
    Some(out)
}

pub fn degree(m: &[u32]) -> u32 {
    m.iter().sum()
}

/// Materialized bijection between neighborhood vectors and ordinals.
#[derive(Debug, Clone)]
pub struct NeighborhoodIndex {
    num_states: usize,
    kmax: u32,
    vectors: Vec<u32>,
    offsets: Vec<usize>,
}

impl NeighborhoodIndex {
    pub fn new(num_states: usize, kmax: u32) -> Result<Self, CapacityError> {
        Self::with_cap(num_states, kmax, DEFAULT_CAP)
    }

    pub fn with_cap(num_states: usize, kmax: u32, cap: u64) -> Result<Self, CapacityError> {
        assert!(num_states >= 1, "at least one state required");
        let needed = neighborhood_count(num_states, kmax as u64);
        if needed > cap {
            return Err(CapacityError { needed, cap });
        }
        let mut vectors = Vec::with_capacity(needed as usize * num_states);
        let mut offsets = Vec::with_capacity(kmax as usize + 2);
        let mut buf = vec![0u32; num_states];
        for k in 0..=kmax {
            offsets.push(vectors.len() / num_states);
            push_compositions(k, 0, &mut buf, &mut vectors);
        }
        offsets.push(vectors.len() / num_states);
        debug_assert_eq!(offsets[kmax as usize + 1] as u64, needed);
        Ok(Self { num_states, kmax, vectors, offsets })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn kmax(&self) -> u32 {
        self.kmax
    }

    pub fn len(&self) -> usize {
        self.vectors.len() / self.num_states
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vector(&self, ordinal: usize) -> &[u32] {
        &self.vectors[ordinal * self.num_states..(ordinal + 1) * self.num_states]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[u32]> + '_ {
        self.vectors.chunks_exact(self.num_states)
    }

    /// Ordinal range of the degree-`k` slice.
    pub fn degree_range(&self, k: u32) -> std::ops::Range<usize> {
        self.offsets[k as usize]..self.offsets[k as usize + 1]
    }

    pub fn degree_of(&self, ordinal: usize) -> u32 {
        // offsets is sorted; the slice containing `ordinal` is the last start <= ordinal
        (self.offsets.partition_point(|&o| o <= ordinal) - 1) as u32
    }

    pub fn index_of(&self, m: &[u32]) -> Option<usize> {
        if m.len() != self.num_states {
            return None;
        }
        let k = degree(m);
        if k > self.kmax {
            return None;
        }
        Some(self.offsets[k as usize] + rank_in_degree(m, k))
    }

    pub fn shift_ordinal(&self, ordinal: usize, s1: usize, s2: usize) -> Option<usize> {
        let m = self.vector(ordinal);
        if m[s2] == 0 {
            return None;
        }
        let mut buf = m.to_vec();
        buf[s1] += 1;
        buf[s2] -= 1;
        self.index_of(&buf)
    }
}

fn push_compositions(rest: u32, pos: usize, buf: &mut [u32], out: &mut Vec<u32>) {
    if pos + 1 == buf.len() {
        buf[pos] = rest;
        out.extend_from_slice(buf);
        return;
    }
    for v in 0..=rest {
        buf[pos] = v;
        push_compositions(rest - v, pos + 1, buf, out);
    }
}

/// Lexicographic rank of `m` among all vectors of the same degree.
fn rank_in_degree(m: &[u32], k: u32) -> usize {
    let n = m.len();
    let mut rank = 0u64;
    let mut rest = k as u64;
    for (i, &v) in m.iter().enumerate().take(n.saturating_sub(1)) {
        let q = (n - i - 1) as u64;
        let v = v as u64;
        // vectors whose i-th entry is below v: sum_{u<v} C(rest-u+q-1, q-1)
        rank += binomial(rest + q, q).unwrap() - binomial(rest - v + q, q).unwrap();
        rest -= v;
    }
    rank as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_count(num_states: usize, k: u32) -> u64 {
        // direct recursion over all compositions
        fn go(rest: u32, parts: usize) -> u64 {
            if parts == 1 {
                return 1;
            }
            (0..=rest).map(|v| go(rest - v, parts - 1)).sum()
        }
        go(k, num_states)
    }

    #[test]
    fn three_state_sizes() {
        assert_eq!(neighborhood_count(3, 60), 39711);
        assert_eq!(neighborhood_count(3, 55), 30856);
        assert_eq!(neighborhood_count(3, 500), 21_084_251);
        assert_eq!(NeighborhoodIndex::new(3, 60).unwrap().len(), 39711);
        assert_eq!(NeighborhoodIndex::new(3, 55).unwrap().len(), 30856);
    }

    #[test]
    fn cap_refuses_large_spaces() {
        let err = NeighborhoodIndex::new(3, 500).unwrap_err();
        assert_eq!(err.needed, 21_084_251);
        assert_eq!(err.cap, DEFAULT_CAP);
    }

    #[test]
    fn slice_sizes() {
        assert_eq!(size_of_mk(0, 3), 1);
        assert_eq!(size_of_mk(2, 3), 6);
        assert_eq!(size_of_mk(2, 3), brute_count(3, 2));
        assert_eq!(size_of_mk(50, 3), 1326);
        assert_eq!(size_of_mk(50, 3), brute_count(3, 50));
    }

    #[test]
    fn equation_counts() {
        assert_eq!(ame_equation_count(60, 3), 119133);
        assert_eq!(ame_equation_count(0, 2), 2);
        assert_eq!(ame_equation_count(55, 3), 92568);
        assert_eq!(ame_equation_count(60, 3), 3 * 39711);
    }

    #[test]
    fn shifts() {
        assert_eq!(shift(&[2, 2], 0, 1), Some(vec![3, 1]));
        assert_eq!(shift(&[2, 0], 0, 1), None);
        let there = shift(&[2, 2], 0, 1).unwrap();
        assert_eq!(shift(&there, 1, 0), Some(vec![2, 2]));
    }

    #[test]
    fn index_roundtrip_and_order() {
        let idx = NeighborhoodIndex::new(3, 12).unwrap();
        let mut prev: Option<Vec<u32>> = None;
        for (j, m) in idx.iter().enumerate() {
            assert_eq!(idx.index_of(m), Some(j));
            assert_eq!(idx.degree_of(j), degree(m));
            if let Some(p) = prev {
                let (dp, dm) = (degree(&p), degree(m));
                assert!(dp < dm || (dp == dm && p.as_slice() < m));
            }
            prev = Some(m.to_vec());
        }
        assert_eq!(idx.degree_range(2), 1 + 3..1 + 3 + 6);
    }

    #[test]
    fn partition_property_up_to_kmax_60() {
        for s in 1..=4 {
            for kmax in [0u32, 1, 7, 30, 60] {
                if neighborhood_count(s, kmax as u64) > 2_000_000 {
                    continue;
                }
                let idx = NeighborhoodIndex::new(s, kmax).unwrap();
                let total: u64 = (0..=kmax as u64).map(|k| size_of_mk(k, s)).sum();
                assert_eq!(total, idx.len() as u64);
                for k in 0..=kmax {
                    assert_eq!(idx.degree_range(k).len() as u64, size_of_mk(k as u64, s));
                }
            }
        }
    }

    proptest! {
        #[test]
        fn equation_count_is_states_times_vectors(s in 2usize..=5, kmax in 0u64..=40) {
            prop_assert_eq!(ame_equation_count(kmax, s), s as u64 * neighborhood_count(s, kmax));
            let brute: u64 = (0..=kmax as u32).map(|k| brute_count(s, k)).sum();
            prop_assert_eq!(neighborhood_count(s, kmax), brute);
        }

        #[test]
        fn shift_preserves_degree(m in proptest::collection::vec(0u32..10, 2..5), a in 0usize..5, b in 0usize..5) {
            let n = m.len();
            let (a, b) = (a % n, b % n);
            prop_assume!(a != b);
            if let Some(t) = shift(&m, a, b) {
                prop_assert_eq!(degree(&t), degree(&m));
                prop_assert_eq!(shift(&t, b, a), Some(m.clone()));
            } else {
                prop_assert_eq!(m[b], 0);
            }
        }
    }
}
