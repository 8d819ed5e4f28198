//! Exact event-driven simulation of the rule system on a network.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use super::network::{generate_configuration_network, Network};
use super::sum_tree::SumTree;
use crate::model::ValidatedModel;
use crate::ode::uniform_grid;
use crate::trajectory::{mean_and_sd, Trajectory};
use crate::{Error, Result};

/// Simulation state: node states, cached neighbor counts, per-node total rates.
#[derive(Debug, Clone)]
pub struct Simulation<'a> {
    net: &'a Network,
    model: &'a ValidatedModel,
    /// Rule indices grouped by source state.
    rules_from: Vec<Vec<usize>>,
    state: Vec<u8>,
    counts: Vec<u32>,
    tree: SumTree,
    population: Vec<u64>,
    time: f64,
    events: u64,
    rng: ChaCha8Rng,
}

impl<'a> Simulation<'a> {
    /// Starts from explicit node states.
    pub fn new(net: &'a Network, model: &'a ValidatedModel, states: Vec<usize>, seed: u64) -> Result<Self> {
        let ns = model.num_states();
        if states.len() != net.num_nodes() || states.iter().any(|&s| s >= ns) {
            return Err(Error::InvalidArgument("initial node states do not fit network or model".into()));
        }
        if ns > u8::MAX as usize {
            return Err(Error::InvalidArgument("too many states for the simulator".into()));
        }
        let mut rules_from = vec![Vec::new(); ns];
        for (r, rule) in model.rules().iter().enumerate() {
            rules_from[rule.from].push(r);
        }
        let n = net.num_nodes();
        let state: Vec<u8> = states.iter().map(|&s| s as u8).collect();
        let mut counts = vec![0u32; n * ns];
        for v in 0..n {
            for &u in net.neighbors(v) {
                counts[v * ns + state[u as usize] as usize] += 1;
            }
        }
        let mut population = vec![0u64; ns];
        for &s in &state {
            population[s as usize] += 1;
        }
        let mut sim = Self {
            net,
            model,
            rules_from,
            state,
            counts,
            tree: SumTree::new(n),
            population,
            time: 0.0,
            events: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let rates: Vec<f64> = (0..n).map(|v| sim.node_rate(v)).collect::<Result<_>>()?;
        sim.tree = SumTree::from_weights(&rates);
        Ok(sim)
    }

    /// Starts with node states drawn i.i.d. from the model's initial fractions.
    pub fn with_random_states(net: &'a Network, model: &'a ValidatedModel, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let law = WeightedIndex::new(model.initial()).map_err(|e| Error::InvalidArgument(format!("initial: {e}")))?;
        let states = (0..net.num_nodes()).map(|_| law.sample(&mut rng)).collect();
        Self::new(net, model, states, rng.random())
    }

    fn node_rate(&self, v: usize) -> Result<f64> {
        let ns = self.model.num_states();
        let m = &self.counts[v * ns..(v + 1) * ns];
        let mut total = 0.0;
        for &r in &self.rules_from[self.state[v] as usize] {
            total += self.model.rules()[r].rate.eval_counts(m)?;
        }
        Ok(total)
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    pub fn total_rate(&self) -> f64 {
        self.tree.total()
    }

    pub fn node_states(&self) -> Vec<usize> {
        self.state.iter().map(|&s| s as usize).collect()
    }

    /// Cached neighbor counts of node `v`.
    pub fn neighbor_counts(&self, v: usize) -> &[u32] {
        let ns = self.model.num_states();
        &self.counts[v * ns..(v + 1) * ns]
    }

    pub fn population(&self) -> &[u64] {
        &self.population
    }

    pub fn fractions(&self) -> Vec<f64> {
        let n = self.net.num_nodes() as f64;
        self.population.iter().map(|&c| c as f64 / n).collect()
    }

    /// Fires the next event if it happens no later than `until`; otherwise
    /// advances the clock to `until` and returns `false`.
    pub fn step_until(&mut self, until: f64) -> Result<bool> {
        let total = self.tree.total();
        if !(total > 0.0) {
            self.time = until;
            return Ok(false);
        }
        let wait: f64 = self.rng.sample::<f64, _>(Exp1) / total;
        if self.time + wait > until {
            // memorylessness lets the clock stop here without bias
            self.time = until;
            return Ok(false);
        }
        self.time += wait;
        let v = self.tree.find(self.rng.random::<f64>() * total);
        let ns = self.model.num_states();
        let from = self.state[v] as usize;
        let m = &self.counts[v * ns..(v + 1) * ns];
        let mut rates = Vec::with_capacity(self.rules_from[from].len());
        for &r in &self.rules_from[from] {
            rates.push(self.model.rules()[r].rate.eval_counts(m)?);
        }
        let node_total: f64 = rates.iter().sum();
        debug_assert!(node_total > 0.0, "selected node has zero rate");
        let mut u = self.rng.random::<f64>() * node_total;
        let mut pick = self.rules_from[from][rates.len() - 1];
        for (i, &r) in self.rules_from[from].iter().enumerate() {
            if u < rates[i] && rates[i] > 0.0 {
                pick = r;
                break;
            }
            u -= rates[i];
        }
        let to = self.model.rules()[pick].to;
        self.apply(v, to)?;
        Ok(true)
    }

    fn apply(&mut self, v: usize, to: usize) -> Result<()> {
        let ns = self.model.num_states();
        let from = self.state[v] as usize;
        self.state[v] = to as u8;
        self.population[from] -= 1;
        self.population[to] += 1;
        self.tree.set(v, self.node_rate(v)?);
        for &u in self.net.neighbors(v) {
            let u = u as usize;
            self.counts[u * ns + from] -= 1;
            self.counts[u * ns + to] += 1;
            self.tree.set(u, self.node_rate(u)?);
        }
        self.events += 1;
        Ok(())
    }

    pub fn run_until(&mut self, t: f64) -> Result<()> {
        while self.step_until(t)? {}
        Ok(())
    }

    /// Recounts neighbor states, populations and rates from scratch and
    /// compares them with the caches.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let ns = self.model.num_states();
        let n = self.net.num_nodes();
        let mut pop = vec![0u64; ns];
        for v in 0..n {
            pop[self.state[v] as usize] += 1;
            let mut m = vec![0u32; ns];
            for &u in self.net.neighbors(v) {
                m[self.state[u as usize] as usize] += 1;
            }
            if m != self.neighbor_counts(v) {
                return Err(format!("node {v}: cached {:?}, recount {m:?}", self.neighbor_counts(v)));
            }
            let r = self.node_rate(v).map_err(|e| e.to_string())?;
            if r != self.tree.get(v) {
                return Err(format!("node {v}: cached rate {}, fresh {r}", self.tree.get(v)));
            }
        }
        if pop != self.population || pop.iter().sum::<u64>() != n as u64 {
            return Err(format!("population {:?} vs recount {pop:?}", self.population));
        }
        let fresh = SumTree::from_weights(&(0..n).map(|v| self.tree.get(v)).collect::<Vec<_>>());
        if fresh.total() != self.tree.total() {
            return Err("total rate differs from the sum of node rates".into());
        }
        Ok(())
    }
}

/// One SSA run from i.i.d. initial states; global fractions on the model grid.
pub fn simulate_gillespie(net: &Network, model: &ValidatedModel, horizon: f64, grid_points: usize, seed: u64) -> Result<Trajectory> {
    let mut sim = Simulation::with_random_states(net, model, seed)?;
    let grid = uniform_grid(horizon, grid_points);
    let mut values = Vec::with_capacity(grid.len());
    for &t in &grid {
        sim.run_until(t)?;
        values.push(sim.fractions());
    }
    Trajectory::new(model.states().names().to_vec(), grid, values)
}

/// Network size and run count for Monte-Carlo averages.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarlo {
    pub nodes: usize,
    pub runs: usize,
    pub seed: u64,
    pub workers: usize,
}

impl MonteCarlo {
    pub fn new(nodes: usize, runs: usize, seed: u64) -> Self {
        Self { nodes, runs, seed, workers: default_workers() }
    }
}

/// Worker count from `AMELUMP_WORKERS`, else the available parallelism.
pub fn default_workers() -> usize {
    std::env::var("AMELUMP_WORKERS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&w| w > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Per-run seeds derived from the master seed.
pub fn run_seeds(master: u64, runs: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    (0..runs).map(|_| rng.random()).collect()
}

/// Mean and standard deviation over independent runs, each on a fresh network.
pub fn average_runs(model: &ValidatedModel, mc: &MonteCarlo) -> Result<Trajectory> {
    if mc.runs < 1 {
        return Err(Error::InvalidArgument("at least one run required".into()));
    }
    let seeds = run_seeds(mc.seed, mc.runs);
    let one = |seed: u64| -> Result<Trajectory> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = generate_configuration_network(model.degree(), mc.nodes, rng.random())?;
        simulate_gillespie(&net, model, model.horizon(), model.grid_points(), rng.random())
    };
    let workers = mc.workers.clamp(1, mc.runs);
    let mut results: Vec<Option<Result<Trajectory>>> = (0..mc.runs).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunks: Vec<_> = results.chunks_mut(mc.runs.div_ceil(workers)).zip(seeds.chunks(mc.runs.div_ceil(workers))).collect();
        for (out, seeds) in chunks {
            scope.spawn(move || {
                for (slot, &s) in out.iter_mut().zip(seeds) {
                    *slot = Some(one(s));
                }
            });
        }
    });
    let runs: Vec<Trajectory> = results.into_iter().map(|r| r.expect("every run executed")).collect::<Result<_>>()?;
    mean_and_sd(&runs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::full::tests::{model, sis};
    use crate::model::powerlaw_distribution;

    #[test]
    fn no_rules_constant_trajectory() {
        let m = model(
            r#"{"states":["A","B"],"rules":[],"degree":{"type":"powerlaw","gamma":2.5,"kmax":10},
               "initial":{"A":0.3,"B":0.7},"horizon":2}"#,
        );
        let net = generate_configuration_network(m.degree(), 500, 1).unwrap();
        let t = simulate_gillespie(&net, &m, 2.0, 11, 4).unwrap();
        assert!(t.values().iter().all(|r| r == &t.values()[0]));
        assert!((t.values()[0][0] - 0.3).abs() < 0.1);
    }

    #[test]
    fn pure_death_matches_exponential_decay() {
        let m = sis(0.0, 1.0, 10);
        let net = generate_configuration_network(m.degree(), 400, 2).unwrap();
        let seeds = run_seeds(99, 50);
        let runs: Vec<Trajectory> = seeds.iter().map(|&s| simulate_gillespie(&net, &m, 2.0, 5, s).unwrap()).collect();
        let avg = mean_and_sd(&runs).unwrap();
        let i = m.states().index("I").unwrap();
        let i0 = avg.values()[0][i];
        for (t, (row, sd)) in avg.times().iter().zip(avg.values().iter().zip(avg.sd().unwrap())) {
            let want = i0 * (-t).exp();
            let se = sd[i] / (runs.len() as f64).sqrt();
            assert!((row[i] - want).abs() <= 3.0 * se.max(1e-3), "t={t}: {} vs {want}", row[i]);
        }
    }

    #[test]
    fn caches_coherent_under_random_event_counts() {
        let m = sis(2.0, 1.0, 20);
        let net = generate_configuration_network(&powerlaw_distribution(2.5, 1, 20).unwrap(), 300, 8).unwrap();
        let mut sim = Simulation::with_random_states(&net, &m, 3).unwrap();
        sim.check_invariants().unwrap();
        for _ in 0..200 {
            for _ in 0..17 {
                if !sim.step_until(f64::INFINITY).unwrap() {
                    break;
                }
            }
            sim.check_invariants().unwrap();
        }
        assert!(sim.events() > 100);
    }

    #[test]
    fn runs_are_reproducible_and_worker_independent() {
        let m = sis(2.0, 1.0, 15);
        let mut mc = MonteCarlo::new(300, 3, 17);
        mc.workers = 1;
        let a = average_runs(&m, &mc).unwrap();
        mc.workers = 3;
        let b = average_runs(&m, &mc).unwrap();
        assert_eq!(a, b);
        let single = average_runs(&m, &MonteCarlo { runs: 1, ..mc.clone() }).unwrap();
        assert!(single.sd().unwrap().iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_initial_states() {
        let m = sis(2.0, 1.0, 5);
        let net = Network::from_edges(2, &[(0, 1)]).unwrap();
        assert!(Simulation::new(&net, &m, vec![0], 1).is_err());
        assert!(Simulation::new(&net, &m, vec![0, 5], 1).is_err());
    }
}
