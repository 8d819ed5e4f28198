//! Erased configuration-model networks.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::DegreeDistribution;
use crate::{Error, Result};

/// Simple undirected graph as sorted adjacency lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Network {
    adj: Vec<Vec<u32>>,
    /// Stubs dropped by erasing self-loops and multi-edges.
    erased_stubs: u64,
    requested_stubs: u64,
}

impl Network {
    /// Builds a graph from an edge list, rejecting self-loops and duplicates.
    pub fn from_edges(n: usize, edges: &[(u32, u32)]) -> Result<Self> {
        let mut adj = vec![Vec::new(); n];
        let mut seen = HashSet::new();
        for &(u, v) in edges {
            if u as usize >= n || v as usize >= n {
                return Err(Error::InvalidArgument(format!("edge ({u},{v}) outside node range {n}")));
            }
            if u == v {
                return Err(Error::InvalidArgument(format!("self-loop at {u}")));
            }
            if !seen.insert((u.min(v), u.max(v))) {
                return Err(Error::InvalidArgument(format!("duplicate edge ({u},{v})")));
            }
            adj[u as usize].push(v);
            adj[v as usize].push(u);
        }
        adj.iter_mut().for_each(|a| a.sort_unstable());
        let stubs = 2 * edges.len() as u64;
        Ok(Self { adj, erased_stubs: 0, requested_stubs: stubs })
    }

    pub fn num_nodes(&self) -> usize {
        self.adj.len()
    }

    pub fn num_edges(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn neighbors(&self, v: usize) -> &[u32] {
        &self.adj[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    pub fn max_degree(&self) -> usize {
        self.adj.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn mean_degree(&self) -> f64 {
        2.0 * self.num_edges() as f64 / self.num_nodes().max(1) as f64
    }

    /// Fraction of sampled stubs lost to erasure.
    pub fn erasure_loss(&self) -> f64 {
        if self.requested_stubs == 0 {
            0.0
        } else {
            self.erased_stubs as f64 / self.requested_stubs as f64
        }
    }

    /// Empirical degree distribution over `0..=max_degree`.
    pub fn degree_histogram(&self) -> Vec<f64> {
        let mut h = vec![0.0; self.max_degree() + 1];
        for a in &self.adj {
            h[a.len()] += 1.0;
        }
        let n = self.num_nodes() as f64;
        h.iter_mut().for_each(|v| *v /= n);
        h
    }

    pub fn edges(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.adj
            .iter()
            .enumerate()
            .flat_map(|(u, a)| a.iter().filter(move |&&v| (u as u32) < v).map(move |&v| (u as u32, v)))
    }

    /// Edge list as `u,v` lines, preceded by a `# nodes N` header.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# nodes {}", self.num_nodes())?;
        for (u, v) in self.edges() {
            writeln!(out, "{u},{v}")?;
        }
        Ok(())
    }

    pub fn read_edge_list<R: BufRead>(input: R) -> Result<Self> {
        let mut n = None;
        let mut edges = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if let Some(rest) = line.strip_prefix("# nodes") {
                n = Some(rest.trim().parse::<usize>().map_err(|e| Error::InvalidArgument(format!("line {}: {e}", i + 1)))?);
                continue;
            }
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (u, v) = line
                .split_once(',')
                .ok_or_else(|| Error::InvalidArgument(format!("line {}: expected u,v", i + 1)))?;
            let parse = |s: &str| s.trim().parse::<u32>().map_err(|e| Error::InvalidArgument(format!("line {}: {e}", i + 1)));
            edges.push((parse(u)?, parse(v)?));
        }
        let n = n.unwrap_or_else(|| edges.iter().map(|&(u, v)| u.max(v) as usize + 1).max().unwrap_or(0));
        Self::from_edges(n, &edges)
    }
}

/// Samples i.i.d. degrees from `dist`, matches stubs uniformly at random and
/// erases self-loops and multi-edges.
pub fn generate_configuration_network(dist: &DegreeDistribution, n: usize, seed: u64) -> Result<Network> {
    if n < 2 {
        return Err(Error::InvalidArgument("a network needs at least two nodes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let law = WeightedIndex::new(dist.probabilities())
        .map_err(|e| Error::InvalidArgument(format!("degree distribution: {e}")))?;
    let mut degrees: Vec<u32> = (0..n).map(|_| law.sample(&mut rng) as u32).collect();
    let mut total: u64 = degrees.iter().map(|&d| d as u64).sum();
    let mut attempts = 0;
    while total % 2 == 1 {
        let v = rng.random_range(0..n);
        total -= degrees[v] as u64;
        degrees[v] = law.sample(&mut rng) as u32;
        total += degrees[v] as u64;
        attempts += 1;
        if attempts > 10_000 {
            return Err(Error::InvalidArgument("cannot draw an even degree sum from this distribution".into()));
        }
    }
    let mut stubs: Vec<u32> = Vec::with_capacity(total as usize);
    for (v, &d) in degrees.iter().enumerate() {
        stubs.extend(std::iter::repeat_n(v as u32, d as usize));
    }
    stubs.shuffle(&mut rng);
    let mut seen: HashSet<(u32, u32)> = HashSet::with_capacity(stubs.len() / 2);
    let mut adj = vec![Vec::new(); n];
    let mut erased = 0u64;
    for pair in stubs.chunks_exact(2) {
        let (u, v) = (pair[0].min(pair[1]), pair[0].max(pair[1]));
        if u == v || !seen.insert((u, v)) {
            erased += 2;
            continue;
        }
        adj[u as usize].push(v);
        adj[v as usize].push(u);
    }
    adj.iter_mut().for_each(|a| a.sort_unstable());
    Ok(Network { adj, erased_stubs: erased, requested_stubs: total })
}
