//! Drivers: full and lumped solves, the iterative refinement heuristic, and
//! error sweeps.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use log::info;

use crate::clustering::{cluster_degrees, Clustering, ClusteringMode};
use crate::full::FullSystem;
use crate::lumped::{build_lumped_approx, build_lumped_exact, lump_initial_state, BorderEstimate, LumpedSystem};
use crate::model::{multinomial_initial_state, ValidatedModel};
use crate::neighborhood::{neighborhood_count, NeighborhoodIndex, DEFAULT_CAP};
use crate::ode::{integrate, IntegrationStats, SolverConfig};
use crate::trajectory::{trajectory_distance, Trajectory};
use crate::{Error, Result};

/// Observer called with `(t, full state)` at every grid point of a full solve.
pub type FullObserver<'a> = dyn FnMut(f64, &FullSystem, &[f64]) + 'a;

/// Solution of the full system.
#[derive(Debug, Clone)]
pub struct FullSolution {
    pub trajectory: Trajectory,
    pub stats: IntegrationStats,
    pub num_equations: usize,
}

/// Model plus shared, lazily built neighborhood index.
#[derive(Debug, Clone)]
pub struct Solver {
    model: ValidatedModel,
    config: SolverConfig,
    cap: u64,
    index: Option<Arc<NeighborhoodIndex>>,
}

impl Solver {
    pub fn new(model: ValidatedModel) -> Self {
        Self { model, config: SolverConfig::default(), cap: DEFAULT_CAP, index: None }
    }

    pub fn with_config(mut self, config: SolverConfig) -> Self {
        self.config = config;
        self
    }

    pub fn with_cap(mut self, cap: u64) -> Self {
        self.cap = cap;
        self
    }

    pub fn model(&self) -> &ValidatedModel {
        &self.model
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    /// Whether the neighborhood space fits under the materialization cap.
    pub fn materializable(&self) -> bool {
        neighborhood_count(self.model.num_states(), self.model.kmax() as u64) <= self.cap
    }

    pub fn index(&mut self) -> Result<Arc<NeighborhoodIndex>> {
        if let Some(i) = &self.index {
            return Ok(i.clone());
        }
        let i = Arc::new(NeighborhoodIndex::with_cap(self.model.num_states(), self.model.kmax(), self.cap)?);
        self.index = Some(i.clone());
        Ok(i)
    }

    pub fn solve_full(&mut self) -> Result<FullSolution> {
        self.solve_full_observed(&mut |_, _, _| {})
    }

    pub fn solve_full_observed(&mut self, observer: &mut FullObserver<'_>) -> Result<FullSolution> {
        let index = self.index()?;
        let started = Instant::now();
        let sys = FullSystem::with_index(&self.model, index.clone())?;
        let x0 = multinomial_initial_state(&self.model, &index);
        let (trajectory, stats) = self.integrate_globals(&sys, &x0, |t, y| observer(t, &sys, y))?;
        info!(
            "full system: {} equations, {} steps, {:.2?}",
            sys.num_variables(),
            stats.accepted,
            started.elapsed()
        );
        Ok(FullSolution { trajectory, stats, num_equations: sys.num_variables() })
    }

    /// Builds the clustering with `|K| = degree_intervals` and `p` cells per
    /// coordinate, materialized unless `approximate`.
    pub fn clustering(&mut self, degree_intervals: usize, p: u32, approximate: bool) -> Result<Arc<Clustering>> {
        let partition = cluster_degrees(self.model.degree(), degree_intervals);
        let c = if approximate {
            Clustering::approximate(self.model.num_states(), self.model.degree(), partition, p)?
        } else {
            Clustering::exact(self.index()?, self.model.degree(), partition, p)?
        };
        Ok(Arc::new(c))
    }

    pub fn lumped_system(&self, clustering: Arc<Clustering>, estimate: BorderEstimate) -> Result<LumpedSystem> {
        match clustering.mode() {
            ClusteringMode::Exact => build_lumped_exact(&self.model, clustering),
            ClusteringMode::Approximate => build_lumped_approx(&self.model, clustering, estimate),
        }
    }

    pub fn solve_lumped(&mut self, spec: &LumpSpec) -> Result<LumpedSolution> {
        let started = Instant::now();
        let clustering = self.clustering(spec.degree_intervals, spec.p, spec.approximate)?;
        let sys = self.lumped_system(clustering.clone(), spec.estimate)?;
        let z0 = lump_initial_state(&self.model, &clustering)?;
        let ns = self.model.num_states();
        let (trajectory, stats) = self.integrate_globals(&sys, &z0, |_, _| {})?;
        info!(
            "lumped |K|={} p={} ({}): {} clusters, {} steps, {:.2?}",
            spec.degree_intervals,
            spec.p,
            if spec.approximate { "approximate" } else { "exact" },
            clustering.len(),
            stats.accepted,
            started.elapsed()
        );
        Ok(LumpedSolution { trajectory, stats, num_clusters: clustering.len(), num_equations: ns * clustering.len(), clustering })
    }

    fn integrate_globals<S, F>(&self, sys: &S, y0: &[f64], mut observer: F) -> Result<(Trajectory, IntegrationStats)>
    where
        S: crate::ode::OdeSystem,
        F: FnMut(f64, &[f64]),
    {
        let ns = self.model.num_states();
        let mut times = Vec::new();
        let mut values = Vec::new();
        let stats = integrate(sys, y0, self.model.horizon(), self.model.grid_points(), &self.config, |t, y| {
            times.push(t);
            values.push(crate::full::global_fractions(y, ns));
            observer(t, y);
        })?;
        Ok((Trajectory::new(self.model.states().names().to_vec(), times, values)?, stats))
    }

    /// Iterative refinement with `|K| = p = c_i`; stops once consecutive
    /// solutions are closer than `eps`.
    pub fn auto_lump(&mut self, cfg: &AutoConfig) -> Result<AutoResult> {
        cfg.check()?;
        let mut log = Vec::new();
        let mut c = cfg.c0;
        let mut prev: Option<LumpedSolution> = None;
        for i in 0..cfg.max_iterations {
            let spec = LumpSpec { degree_intervals: c as usize, p: c, approximate: cfg.approximate, estimate: cfg.estimate };
            let sol = self.solve_lumped(&spec)?;
            let eps = match &prev {
                Some(p) => Some(trajectory_distance(&p.trajectory, &sol.trajectory)?),
                None => None,
            };
            log.push(IterationRow { i, c, clusters: sol.num_clusters, epsilon: eps });
            info!("iteration {i}: c={c}, {} clusters, epsilon={eps:?}", sol.num_clusters);
            if eps.is_some_and(|e| e < cfg.eps) {
                return Ok(AutoResult { solution: sol, log });
            }
            prev = Some(sol);
            c = next_c(c, cfg.r);
        }
        Err(Error::IterationLimit(cfg.max_iterations))
    }

    /// Lumped solutions for `c = start..=end` against `reference`.
    pub fn sweep(&mut self, start: u32, end: u32, approximate: bool, reference: &Trajectory) -> Result<Vec<SweepRow>> {
        let mut rows = Vec::new();
        let mut prev: Option<Trajectory> = None;
        for c in start..=end {
            let sol = self.solve_lumped(&LumpSpec {
                degree_intervals: c as usize,
                p: c,
                approximate,
                estimate: BorderEstimate::default(),
            })?;
            let epsilon = trajectory_distance(reference, &sol.trajectory)?;
            let surrogate = match &prev {
                Some(p) => Some(trajectory_distance(p, &sol.trajectory)?),
                None => None,
            };
            rows.push(SweepRow { c, clusters: sol.num_clusters, epsilon, surrogate });
            prev = Some(sol.trajectory);
        }
        Ok(rows)
    }
}

/// Next refinement level: `⌊r·c⌋`, forced to grow by at least one.
pub fn next_c(c: u32, r: f64) -> u32 {
    ((r * c as f64).floor() as u32).max(c + 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LumpSpec {
    pub degree_intervals: usize,
    pub p: u32,
    pub approximate: bool,
    pub estimate: BorderEstimate,
}

#[derive(Debug, Clone)]
pub struct LumpedSolution {
    pub trajectory: Trajectory,
    pub stats: IntegrationStats,
    pub clustering: Arc<Clustering>,
    pub num_clusters: usize,
    pub num_equations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoConfig {
    pub c0: u32,
    pub r: f64,
    pub eps: f64,
    pub max_iterations: usize,
    pub approximate: bool,
    pub estimate: BorderEstimate,
}

impl Default for AutoConfig {
    fn default() -> Self {
        Self { c0: 10, r: 1.3, eps: 0.01, max_iterations: 12, approximate: false, estimate: BorderEstimate::default() }
    }
}

impl AutoConfig {
    fn check(&self) -> Result<()> {
        if self.c0 < 1 {
            return Err(Error::InvalidArgument("c0 must be at least 1".into()));
        }
        if !(self.r > 1.0) {
            return Err(Error::InvalidArgument("r must exceed 1".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidArgument("eps must be positive".into()));
        }
        if self.max_iterations < 1 {
            return Err(Error::InvalidArgument("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRow {
    pub i: usize,
    pub c: u32,
    pub clusters: usize,
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct AutoResult {
    pub solution: LumpedSolution,
    pub log: Vec<IterationRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub c: u32,
    pub clusters: usize,
    /// Distance to the reference.
    pub epsilon: f64,
    /// Distance to the previous level.
    pub surrogate: Option<f64>,
}

pub fn write_iteration_log<W: Write>(rows: &[IterationRow], mut out: W) -> Result<()> {
    writeln!(out, "i,c_i,clusters,epsilon")?;
    for r in rows {
        let eps = r.epsilon.map_or(String::new(), crate::trajectory::fmt12);
        writeln!(out, "{},{},{},{}", r.i, r.c, r.clusters, eps)?;
    }
    Ok(())
}

pub fn write_sweep<W: Write>(rows: &[SweepRow], reference: &str, mut out: W) -> Result<()> {
    writeln!(out, "# reference: {reference}")?;
    writeln!(out, "c,clusters,epsilon,surrogate")?;
    for r in rows {
        let s = r.surrogate.map_or(String::new(), crate::trajectory::fmt12);
        writeln!(out, "{},{},{},{}", r.c, r.clusters, crate::trajectory::fmt12(r.epsilon), s)?;
    }
    Ok(())
}

/// Spearman rank correlation of two equally long samples (average ranks for ties).
pub fn rank_correlation(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0;
            for &t in &idx[i..=j] {
                r[t] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::full::tests::{model, sir};

    #[test]
    fn growth_rule() {
        assert_eq!(next_c(10, 1.3), 13);
        assert_eq!(next_c(13, 1.3), 16);
        assert_eq!(next_c(16, 1.3), 20);
        assert_eq!(next_c(1, 1.3), 2);
        assert_eq!(next_c(3, 1.1), 4);
    }

    #[test]
    fn spearman() {
        assert!((rank_correlation(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-15);
        assert!((rank_correlation(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
        assert_eq!(rank_correlation(&[1.0, 1.0], &[1.0, 2.0]), 0.0);
    }

    #[test]
    fn infinite_eps_stops_after_second_iteration() {
        let mut s = Solver::new(sir(12));
        let cfg = AutoConfig { c0: 3, eps: f64::INFINITY, ..Default::default() };
        let res = s.auto_lump(&cfg).unwrap();
        assert_eq!(res.log.len(), 2);
        assert_eq!(res.log[0].epsilon, None);
        assert_eq!(res.log[1].c, 4);
    }

    #[test]
    fn constant_rate_model_stops_at_first_comparison() {
        let m = model(
            r#"{"states":["A","B","C"],"rules":[{"from":"A","to":"B","rate":"0.9"},{"from":"B","to":"C","rate":"0.4"},{"from":"C","to":"A","rate":"1.1"}],
               "degree":{"type":"powerlaw","gamma":2.2,"kmax":15},"initial":{"A":0.5,"B":0.3,"C":0.2},"horizon":4}"#,
        );
        let mut s = Solver::new(m);
        let res = s.auto_lump(&AutoConfig { c0: 2, ..Default::default() }).unwrap();
        assert_eq!(res.log.len(), 2);
        assert!(res.log[1].epsilon.unwrap() < 1e-8);
        // well-mixed oracle: dA = 1.1 C − 0.9 A, dB = 0.9 A − 0.4 B
        let (mut a, mut b, mut c) = (0.5f64, 0.3f64, 0.2f64);
        let h = 1e-4;
        for _ in 0..40_000 {
            let f = |a: f64, b: f64, c: f64| (1.1 * c - 0.9 * a, 0.9 * a - 0.4 * b, 0.4 * b - 1.1 * c);
            let k1 = f(a, b, c);
            let k2 = f(a + h / 2.0 * k1.0, b + h / 2.0 * k1.1, c + h / 2.0 * k1.2);
            let k3 = f(a + h / 2.0 * k2.0, b + h / 2.0 * k2.1, c + h / 2.0 * k2.2);
            let k4 = f(a + h * k3.0, b + h * k3.1, c + h * k3.2);
            a += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
            b += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
            c += h / 6.0 * (k1.2 + 2.0 * k2.2 + 2.0 * k3.2 + k4.2);
        }
        let last = res.solution.trajectory.last().unwrap();
        assert!((last[0] - a).abs() < 1e-6 && (last[1] - b).abs() < 1e-6 && (last[2] - c).abs() < 1e-6);
    }

    #[test]
    fn iteration_guard() {
        let mut s = Solver::new(sir(12));
        let cfg = AutoConfig { c0: 2, eps: 1e-300, max_iterations: 2, ..Default::default() };
        assert!(matches!(s.auto_lump(&cfg), Err(Error::IterationLimit(2))));
    }

    #[test]
    fn bad_auto_config() {
        let mut s = Solver::new(sir(5));
        assert!(s.auto_lump(&AutoConfig { r: 1.0, ..Default::default() }).is_err());
        assert!(s.auto_lump(&AutoConfig { c0: 0, ..Default::default() }).is_err());
        assert!(s.auto_lump(&AutoConfig { eps: 0.0, ..Default::default() }).is_err());
    }

    #[test]
    fn iteration_log_format() {
        let rows = vec![
            IterationRow { i: 0, c: 10, clusters: 500, epsilon: None },
            IterationRow { i: 1, c: 13, clusters: 900, epsilon: Some(0.02) },
        ];
        let mut buf = Vec::new();
        write_iteration_log(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "i,c_i,clusters,epsilon\n0,10,500,\n1,13,900,2.00000000000e-2\n");
    }
}
