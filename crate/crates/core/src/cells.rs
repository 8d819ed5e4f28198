//! Proportionality cells of the unit simplex and integer-box counting.
//!
//! At degree `k > 0`, coordinate `s` of a neighborhood vector lands in interval
//! `min(floor(m[s]·p / k), p − 1)`. The vectors of degree `k` sharing a cell key
//! are exactly the integer points of an axis-aligned box intersected with the
//! hyperplane `Σ m = k`, which makes counts and coordinate sums computable
//! without enumerating members.

use crate::numeric::binomial;

pub type CellKey = Vec<u32>;

/// Cell index of a count `v` at degree `k > 0`.
pub fn coordinate_index(v: u32, k: u32, p: u32) -> u32 {
    debug_assert!(k > 0 && p > 0);
    let raw = (v as u64 * p as u64) / k as u64;
    raw.min(p as u64 - 1) as u32
}

/// Cell key of `m`; the all-zero key for the zero vector.
pub fn simplex_cell(m: &[u32], p: u32) -> CellKey {
    assert!(p >= 1, "interval count must be positive");
    let k: u32 = m.iter().sum();
    if k == 0 {
        return vec![0; m.len()];
    }
    m.iter().map(|&v| coordinate_index(v, k, p)).collect()
}

/// Inclusive range of counts `v` with `coordinate_index(v, k, p) == i`, or
/// `None` if no integer falls in that interval.
pub fn coordinate_bounds(i: u32, k: u32, p: u32) -> Option<(u32, u32)> {
    debug_assert!(k > 0 && i < p);
    let (k64, p64, i64_) = (k as u64, p as u64, i as u64);
    let lo = (i64_ * k64).div_ceil(p64);
    let hi = if i + 1 == p { k64 } else { ((i64_ + 1) * k64).div_ceil(p64) - 1 };
    (lo <= hi).then_some((lo as u32, hi as u32))
}

/// Number of integer vectors `v` with `lo_s <= v_s <= hi_s` and `Σ v = n`.
pub fn count_box(n: u32, bounds: &[(u32, u32)]) -> u128 {
    let lo_sum: u64 = bounds.iter().map(|b| b.0 as u64).sum();
    let hi_sum: u64 = bounds.iter().map(|b| b.1 as u64).sum();
    let n = n as u64;
    if bounds.is_empty() {
        return u128::from(n == 0);
    }
    if n < lo_sum || n > hi_sum || bounds.iter().any(|b| b.0 > b.1) {
        return 0;
    }
    let rest = n - lo_sum;
    let d = bounds.len();
    let widths: Vec<u64> = bounds.iter().map(|b| (b.1 - b.0) as u64 + 1).collect();
    // inclusion-exclusion over coordinates forced above their upper bound
    let mut total: i128 = 0;
    for mask in 0u32..(1 << d) {
        let excess: u64 = (0..d).filter(|&t| mask & (1 << t) != 0).map(|t| widths[t]).sum();
        if excess > rest {
            continue;
        }
        let c = binomial(rest - excess + d as u64 - 1, d as u64 - 1).expect("box count fits u64") as i128;
        if mask.count_ones() % 2 == 0 {
            total += c;
        } else {
            total -= c;
        }
    }
    debug_assert!(total >= 0);
    total as u128
}

/// Per-coordinate sums of `v_s` over the box points with `Σ v = n`.
pub fn box_coordinate_sums(n: u32, bounds: &[(u32, u32)]) -> Vec<u128> {
    let mut out = vec![0u128; bounds.len()];
    let mut rest_bounds: Vec<(u32, u32)> = Vec::with_capacity(bounds.len().saturating_sub(1));
    for s in 0..bounds.len() {
        rest_bounds.clear();
        rest_bounds.extend(bounds.iter().enumerate().filter(|&(t, _)| t != s).map(|(_, b)| *b));
        let (lo, hi) = bounds[s];
        for v in lo..=hi.min(n) {
            out[s] += v as u128 * count_box(n - v, &rest_bounds);
        }
    }
    out
}

/// Calls `f` on every integer point of the box with `Σ v = n`, in ascending
/// lexicographic order.
pub fn for_each_box_point<F: FnMut(&[u32])>(n: u32, bounds: &[(u32, u32)], mut f: F) {
    let mut v = vec![0u32; bounds.len()];
    // suffix sums of the bounds prune infeasible prefixes
    let mut lo_tail = vec![0u64; bounds.len() + 1];
    let mut hi_tail = vec![0u64; bounds.len() + 1];
    for i in (0..bounds.len()).rev() {
        lo_tail[i] = lo_tail[i + 1] + bounds[i].0 as u64;
        hi_tail[i] = hi_tail[i + 1] + bounds[i].1 as u64;
    }
    fn go<F: FnMut(&[u32])>(
        pos: usize,
        rest: u64,
        bounds: &[(u32, u32)],
        lo_tail: &[u64],
        hi_tail: &[u64],
        v: &mut [u32],
        f: &mut F,
    ) {
        if pos == bounds.len() {
            if rest == 0 {
                f(v);
            }
            return;
        }
        let (lo, hi) = (bounds[pos].0 as u64, bounds[pos].1 as u64);
        let from = lo.max(rest.saturating_sub(hi_tail[pos + 1]));
        let to = hi.min(rest.saturating_sub(lo_tail[pos + 1]));
        if rest < lo_tail[pos] {
            return;
        }
        for x in from..=to {
            v[pos] = x as u32;
            go(pos + 1, rest - x, bounds, lo_tail, hi_tail, v, f);
        }
    }
    if bounds.is_empty() {
        if n == 0 {
            f(&v);
        }
        return;
    }
    go(0, n as u64, bounds, &lo_tail, &hi_tail, &mut v, &mut f);
}

/// A nonempty cell at one degree with its member count and coordinate sums.
#[derive(Debug, Clone, PartialEq)]
pub struct CellAtDegree {
    pub key: CellKey,
    pub bounds: Vec<(u32, u32)>,
    pub count: u128,
    pub coordinate_sums: Vec<u128>,
}

/// All nonempty cells at degree `k`, in ascending key order.
pub fn cells_at_degree(k: u32, num_states: usize, p: u32) -> Vec<CellAtDegree> {
    if k == 0 {
        return vec![CellAtDegree {
            key: vec![0; num_states],
            bounds: vec![(0, 0); num_states],
            count: 1,
            coordinate_sums: vec![0; num_states],
        }];
    }
    let per_coord: Vec<(u32, (u32, u32))> =
        (0..p).filter_map(|i| coordinate_bounds(i, k, p).map(|b| (i, b))).collect();
    let mut out = Vec::new();
    let mut key = Vec::with_capacity(num_states);
    let mut bounds = Vec::with_capacity(num_states);
    enumerate(k, num_states, &per_coord, 0, 0, &mut key, &mut bounds, &mut out);
    out
}

#[allow(clippy::too_many_arguments)]
fn enumerate(
    k: u32,
    num_states: usize,
    per_coord: &[(u32, (u32, u32))],
    lo_sum: u32,
    hi_sum: u32,
    key: &mut Vec<u32>,
    bounds: &mut Vec<(u32, u32)>,
    out: &mut Vec<CellAtDegree>,
) {
    if key.len() == num_states {
        if lo_sum <= k && k <= hi_sum {
            let count = count_box(k, bounds);
            debug_assert!(count > 0);
            out.push(CellAtDegree {
                key: key.clone(),
                bounds: bounds.clone(),
                count,
                coordinate_sums: box_coordinate_sums(k, bounds),
            });
        }
        return;
    }
    let remaining = (num_states - key.len() - 1) as u32;
    for &(i, (lo, hi)) in per_coord {
        if lo_sum + lo > k {
            break;
        }
        // remaining coordinates can contribute at most k each
        if ((hi_sum + hi) as u64 + remaining as u64 * k as u64) < k as u64 {
            continue;
        }
        key.push(i);
        bounds.push((lo, hi));
        enumerate(k, num_states, per_coord, lo_sum + lo, hi_sum + hi, key, bounds, out);
        key.pop();
        bounds.pop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neighborhood::NeighborhoodIndex;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    #[test]
    fn key_examples() {
        assert_eq!(simplex_cell(&[7, 0, 0], 5), vec![4, 0, 0]);
        assert_eq!(simplex_cell(&[1, 1], 2), vec![1, 1]);
        assert_eq!(simplex_cell(&[0, 0, 0], 4), vec![0, 0, 0]);
        assert_eq!(simplex_cell(&[1, 2], 1), vec![0, 0]);
    }

    #[test]
    fn bounds_partition_counts() {
        for k in 1..40 {
            for p in 1..20 {
                let mut next = 0;
                for i in 0..p {
                    if let Some((lo, hi)) = coordinate_bounds(i, k, p) {
                        assert_eq!(lo, next);
                        for v in lo..=hi {
                            assert_eq!(coordinate_index(v, k, p), i);
                        }
                        next = hi + 1;
                    }
                }
                assert_eq!(next, k + 1);
            }
        }
    }

    fn brute(k: u32, s: usize, p: u32) -> BTreeMap<CellKey, (u128, Vec<u128>)> {
        let idx = NeighborhoodIndex::new(s, k).unwrap();
        let mut out: BTreeMap<CellKey, (u128, Vec<u128>)> = BTreeMap::new();
        for j in idx.degree_range(k) {
            let m = idx.vector(j);
            let e = out.entry(simplex_cell(m, p)).or_insert((0, vec![0; s]));
            e.0 += 1;
            for (acc, &v) in e.1.iter_mut().zip(m) {
                *acc += v as u128;
            }
        }
        out
    }

    #[test]
    fn cells_match_enumeration() {
        for s in 1..=4 {
            for k in 0..=14 {
                for p in [1, 2, 3, 5, 8, 20] {
                    let fast: BTreeMap<_, _> = cells_at_degree(k, s, p)
                        .into_iter()
                        .map(|c| (c.key, (c.count, c.coordinate_sums)))
                        .collect();
                    assert_eq!(fast, brute(k, s, p), "s={s} k={k} p={p}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn box_count_matches_brute_force(
            bounds in proptest::collection::vec((0u32..6, 0u32..6), 1..4),
            n in 0u32..15,
        ) {
            let bounds: Vec<(u32, u32)> = bounds.into_iter().map(|(a, b)| (a.min(b), a.max(b))).collect();
            let mut count = 0u128;
            let mut sums = vec![0u128; bounds.len()];
            let mut v: Vec<u32> = bounds.iter().map(|b| b.0).collect();
            loop {
                if v.iter().sum::<u32>() == n {
                    count += 1;
                    for (a, &x) in sums.iter_mut().zip(&v) {
                        *a += x as u128;
                    }
                }
                let mut d = 0;
                while d < v.len() && v[d] == bounds[d].1 {
                    v[d] = bounds[d].0;
                    d += 1;
                }
                if d == v.len() {
                    break;
                }
                v[d] += 1;
            }
            prop_assert_eq!(count_box(n, &bounds), count);
            let mut visited = 0u128;
            for_each_box_point(n, &bounds, |p| {
                assert_eq!(p.iter().sum::<u32>(), n);
                assert!(p.iter().zip(&bounds).all(|(x, b)| b.0 <= *x && *x <= b.1));
                visited += 1;
            });
            prop_assert_eq!(visited, count);
            prop_assert_eq!(box_coordinate_sums(n, &bounds), sums);
        }
    }
}
