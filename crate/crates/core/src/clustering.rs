//! Partition of the neighborhood space into clusters: contiguous degree
//! intervals crossed with proportionality cells.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use crate::cells::{cells_at_degree, coordinate_bounds, coordinate_index, count_box, simplex_cell, CellKey};
use crate::model::{DegreeDistribution, ValidatedModel};
use crate::neighborhood::{degree, size_of_mk, NeighborhoodIndex, DEFAULT_CAP};
use crate::{Error, Result};

/// Contiguous, exhaustive degree intervals over `0..=kmax`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DegreePartition {
    intervals: Vec<(u32, u32)>,
    lookup: Vec<u32>,
}

impl DegreePartition {
    pub fn from_intervals(intervals: Vec<(u32, u32)>) -> Result<Self> {
        let mut next = 0;
        for &(lo, hi) in &intervals {
            if lo != next || hi < lo {
                return Err(Error::InvalidArgument(format!("degree intervals not contiguous at [{lo}, {hi}]")));
            }
            next = hi + 1;
        }
        if intervals.is_empty() {
            return Err(Error::InvalidArgument("empty degree partition".into()));
        }
        let mut lookup = Vec::with_capacity(next as usize);
        for (i, &(lo, hi)) in intervals.iter().enumerate() {
            lookup.extend(std::iter::repeat_n(i as u32, (hi - lo + 1) as usize));
        }
        Ok(Self { intervals, lookup })
    }

    pub fn intervals(&self) -> &[(u32, u32)] {
        &self.intervals
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn kmax(&self) -> u32 {
        self.intervals.last().map_or(0, |i| i.1)
    }

    pub fn interval_of(&self, k: u32) -> Option<usize> {
        self.lookup.get(k as usize).map(|&i| i as usize)
    }

    /// `L = Σ_K (Σ_{k∈K} P(k))²`.
    pub fn disparity(&self, dist: &DegreeDistribution) -> f64 {
        self.intervals
            .iter()
            .map(|&(lo, hi)| {
                let m: f64 = (lo..=hi).map(|k| dist.p(k)).sum();
                m * m
            })
            .sum()
    }
}

/// Greedy agglomeration of singleton degrees: repeatedly merges the adjacent
/// pair whose merge increases the disparity cost least, lowest degree first on ties.
pub fn cluster_degrees(dist: &DegreeDistribution, target: usize) -> DegreePartition {
    let target = target.max(1);
    let kmax = dist.kmax();
    let mut intervals: Vec<(u32, u32)> = (0..=kmax).map(|k| (k, k)).collect();
    let mut mass: Vec<f64> = (0..=kmax).map(|k| dist.p(k)).collect();
    while intervals.len() > target {
        let mut best = 0;
        let mut best_cost = f64::INFINITY;
        for i in 0..intervals.len() - 1 {
            // (a+b)² − a² − b²
            let cost = 2.0 * mass[i] * mass[i + 1];
            if cost < best_cost {
                best_cost = cost;
                best = i;
            }
        }
        intervals[best].1 = intervals[best + 1].1;
        mass[best] += mass[best + 1];
        intervals.remove(best + 1);
        mass.remove(best + 1);
    }
    DegreePartition::from_intervals(intervals).expect("merging keeps intervals contiguous")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusteringMode {
    /// The neighborhood space is materialized and every vector has a cluster id.
    Exact,
    /// Only per-degree cell geometry is used.
    Approximate,
}

/// Members of one cluster at one degree.
#[derive(Debug, Clone, PartialEq)]
pub struct DegreeShare {
    pub k: u32,
    pub count: u64,
    /// Weight of each member of this degree; `Σ count·weight = 1` over the cluster.
    pub weight: f64,
    /// Per-state sums of `m[s]` over these members.
    pub coordinate_sums: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub interval: usize,
    pub key: CellKey,
    pub size: u64,
    pub degrees: Vec<DegreeShare>,
    /// Weighted mean neighborhood vector.
    pub center: Vec<f64>,
}

impl Cluster {
    pub fn weight_at(&self, k: u32) -> f64 {
        self.degrees.iter().find(|d| d.k == k).map_or(0.0, |d| d.weight)
    }

    pub fn mean_degree(&self) -> f64 {
        self.center.iter().sum()
    }
}

/// Donor members of a cluster whose shift lands in another cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct BorderFlow {
    pub target: usize,
    pub k: u32,
    pub count: u64,
    /// Sum of `m[s1]` over the donors.
    pub s1_sum: f64,
}

#[derive(Debug, Clone)]
pub struct Clustering {
    num_states: usize,
    p: u32,
    partition: DegreePartition,
    clusters: Vec<Cluster>,
    lookup: HashMap<(u32, CellKey), u32>,
    index: Option<Arc<NeighborhoodIndex>>,
    membership: Option<Vec<u32>>,
}

/// Builds the joint clustering with `degree_target` degree intervals and `p`
/// proportionality intervals per coordinate, materializing the neighborhood
/// space (`Exact`) or not (`Approximate`).
pub fn build_clustering(
    model: &ValidatedModel,
    degree_target: usize,
    p: u32,
    mode: ClusteringMode,
) -> Result<Clustering> {
    let partition = cluster_degrees(model.degree(), degree_target);
    match mode {
        ClusteringMode::Exact => {
            let index = Arc::new(NeighborhoodIndex::with_cap(model.num_states(), model.kmax(), DEFAULT_CAP)?);
            Clustering::exact(index, model.degree(), partition, p)
        }
        ClusteringMode::Approximate => Clustering::approximate(model.num_states(), model.degree(), partition, p),
    }
}

impl Clustering {
    /// Clustering over a materialized index.
    pub fn exact(
        index: Arc<NeighborhoodIndex>,
        dist: &DegreeDistribution,
        partition: DegreePartition,
        p: u32,
    ) -> Result<Self> {
        let mut c = Self::approximate(index.num_states(), dist, partition, p)?;
        let mut membership = Vec::with_capacity(index.len());
        for m in index.iter() {
            let id = c.cluster_of(m).expect("every vector lies in a nonempty cell");
            membership.push(id as u32);
        }
        c.index = Some(index);
        c.membership = Some(membership);
        Ok(c)
    }

    /// Clustering from cell geometry alone.
    pub fn approximate(num_states: usize, dist: &DegreeDistribution, partition: DegreePartition, p: u32) -> Result<Self> {
        if p == 0 {
            return Err(Error::InvalidArgument("interval count p must be at least 1".into()));
        }
        if partition.kmax() != dist.kmax() {
            return Err(Error::InvalidArgument("degree partition does not cover the degree range".into()));
        }
        let mut acc: BTreeMap<(u32, CellKey), Vec<(u32, u128, Vec<u128>)>> = BTreeMap::new();
        for k in 0..=dist.kmax() {
            let interval = partition.interval_of(k).expect("covered") as u32;
            for cell in cells_at_degree(k, num_states, p) {
                acc.entry((interval, cell.key)).or_default().push((k, cell.count, cell.coordinate_sums));
            }
        }
        let mut clusters = Vec::with_capacity(acc.len());
        let mut lookup = HashMap::with_capacity(acc.len());
        for ((interval, key), shares) in acc {
            let size: u128 = shares.iter().map(|s| s.1).sum();
            let rel: Vec<f64> = shares.iter().map(|(k, _, _)| dist.p(*k) / size_of_mk(*k as u64, num_states) as f64).collect();
            let z: f64 = shares.iter().zip(&rel).map(|(s, r)| s.1 as f64 * r).sum();
            let degrees: Vec<DegreeShare> = shares
                .into_iter()
                .zip(&rel)
                .map(|((k, count, sums), r)| DegreeShare {
                    k,
                    count: count as u64,
                    weight: if z > 0.0 { r / z } else { 1.0 / size as f64 },
                    coordinate_sums: sums.into_iter().map(|v| v as f64).collect(),
                })
                .collect();
            let mut center = vec![0.0; num_states];
            for d in &degrees {
                for (c, s) in center.iter_mut().zip(&d.coordinate_sums) {
                    *c += d.weight * s;
                }
            }
            lookup.insert((interval, key.clone()), clusters.len() as u32);
            clusters.push(Cluster { interval: interval as usize, key, size: size as u64, degrees, center });
        }
        Ok(Self { num_states, p, partition, clusters, lookup, index: None, membership: None })
    }

    pub fn mode(&self) -> ClusteringMode {
        if self.membership.is_some() {
            ClusteringMode::Exact
        } else {
            ClusteringMode::Approximate
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn p(&self) -> u32 {
        self.p
    }

    pub fn partition(&self) -> &DegreePartition {
        &self.partition
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn cluster(&self, id: usize) -> &Cluster {
        &self.clusters[id]
    }

    /// Total number of neighborhood vectors covered.
    pub fn total_size(&self) -> u64 {
        self.clusters.iter().map(|c| c.size).sum()
    }

    pub fn index(&self) -> Option<&Arc<NeighborhoodIndex>> {
        self.index.as_ref()
    }

    /// Cluster id per index ordinal (exact mode only).
    pub fn membership(&self) -> Option<&[u32]> {
        self.membership.as_deref()
    }

    pub fn cluster_of(&self, m: &[u32]) -> Option<usize> {
        let interval = self.partition.interval_of(degree(m))? as u32;
        self.lookup.get(&(interval, simplex_cell(m, self.p))).map(|&i| i as usize)
    }

    fn cluster_with_key(&self, interval: usize, key: &[u32]) -> usize {
        *self.lookup.get(&(interval as u32, key.to_vec())).expect("shift targets lie in nonempty cells") as usize
    }

    /// Members of `donor` whose `(s1 → s2)` shift leaves the cluster, grouped by
    /// degree and target cluster. Only members with `m[s1] ≥ 1` can shift.
    pub fn border_flows(&self, donor: usize, s1: usize, s2: usize) -> Vec<BorderFlow> {
        assert_ne!(s1, s2);
        let c = &self.clusters[donor];
        let mut out = Vec::new();
        for share in &c.degrees {
            let k = share.k;
            if k == 0 {
                continue;
            }
            let bounds: Vec<(u32, u32)> = c
                .key
                .iter()
                .map(|&i| coordinate_bounds(i, k, self.p).expect("cell is nonempty at this degree"))
                .collect();
            let (lo1, hi1) = bounds[s1];
            let (lo2, hi2) = bounds[s2];
            let pinned = |v1: Option<(u32, u32)>, v2: Option<(u32, u32)>| -> (u128, Vec<u128>) {
                let mut b = bounds.clone();
                if let Some(r) = v1 {
                    b[s1] = r;
                }
                if let Some(r) = v2 {
                    b[s2] = r;
                }
                if b.iter().any(|r| r.0 > r.1) {
                    return (0, vec![0; b.len()]);
                }
                (count_box(k, &b), crate::cells::box_coordinate_sums(k, &b))
            };
            let exits_low = lo1 >= 1 && coordinate_index(lo1 - 1, k, self.p) != c.key[s1];
            let exits_high = hi2 < k && coordinate_index(hi2 + 1, k, self.p) != c.key[s2];
            let mut push = |new1: Option<u32>, new2: Option<u32>, count: u128, s1_sum: u128| {
                if count == 0 {
                    return;
                }
                let mut key = c.key.clone();
                if let Some(v) = new1 {
                    key[s1] = coordinate_index(v, k, self.p);
                }
                if let Some(v) = new2 {
                    key[s2] = coordinate_index(v, k, self.p);
                }
                out.push(BorderFlow {
                    target: self.cluster_with_key(c.interval, &key),
                    k,
                    count: count as u64,
                    s1_sum: s1_sum as f64,
                });
            };
            if exits_low {
                // m[s1] = lo1 and m[s2] stays inside its interval after +1
                let upper2 = if exits_high { hi2.wrapping_sub(1) } else { hi2 };
                if !(exits_high && hi2 == 0) {
                    let (n, _) = pinned(Some((lo1, lo1)), Some((lo2, upper2)));
                    push(Some(lo1 - 1), None, n, n * lo1 as u128);
                }
            }
            if exits_high {
                let lower1 = if exits_low { lo1 + 1 } else { lo1.max(1) };
                let (n, sums) = pinned(Some((lower1, hi1)), Some((hi2, hi2)));
                push(None, Some(hi2 + 1), n, sums[s1]);
            }
            if exits_low && exits_high {
                let (n, _) = pinned(Some((lo1, lo1)), Some((hi2, hi2)));
                push(Some(lo1 - 1), Some(hi2 + 1), n, n * lo1 as u128);
            }
        }
        out
    }

    /// Distinct clusters reachable from `id` by one `(s1 → s2)` shift.
    pub fn shift_neighbors(&self, id: usize, s1: usize, s2: usize) -> Vec<usize> {
        let mut t: Vec<usize> = self.border_flows(id, s1, s2).into_iter().map(|b| b.target).collect();
        t.sort_unstable();
        t.dedup();
        t
    }
}
