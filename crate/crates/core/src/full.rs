//! The full approximate master equation over every `(state, m)` pair.
//!
//! Layout: `x[s * |M| + j]` is the fraction of nodes in state `s` whose
//! neighborhood has ordinal `j` in the [`NeighborhoodIndex`].

use std::sync::Arc;

use crate::model::ValidatedModel;
use crate::neighborhood::NeighborhoodIndex;
use crate::numeric::compensated_sum;
use crate::ode::OdeSystem;
use crate::{Error, Result};

const NONE: u32 = u32::MAX;

/// Neighbor transition `s1 -> s2` with at least one rule behind it.
#[derive(Debug, Clone)]
pub(crate) struct TransitionPair {
    pub s1: usize,
    pub s2: usize,
    /// Sum of the rates of all rules `s1 -> s2`, over `M`.
    pub rate: Vec<f64>,
}

/// Ordered pairs `(s1, s2)` that have at least one rule, in lexicographic order.
pub(crate) fn transition_pairs(model: &ValidatedModel) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(usize, usize)> = model.rules().iter().map(|r| (r.from, r.to)).collect();
    pairs.sort_unstable();
    pairs.dedup();
    pairs
}

#[derive(Debug, Clone)]
pub struct FullSystem {
    index: Arc<NeighborhoodIndex>,
    num_states: usize,
    rules: Vec<(usize, usize)>,
    /// `rule_rates[r][j]` = f_r(m_j)
    rule_rates: Vec<Vec<f64>>,
    pairs: Vec<TransitionPair>,
    /// `counts[s][j]` = m_j[s]
    counts: Vec<Vec<f64>>,
    /// For each pair, the ordinal of `shift(m_j, s1, s2)` or NONE.
    shift_source: Vec<Vec<u32>>,
}

pub fn build_full_ame(model: &ValidatedModel) -> Result<FullSystem> {
    let index = Arc::new(NeighborhoodIndex::new(model.num_states(), model.kmax())?);
    FullSystem::with_index(model, index)
}

impl FullSystem {
    pub fn with_index(model: &ValidatedModel, index: Arc<NeighborhoodIndex>) -> Result<Self> {
        let ns = model.num_states();
        let nm = index.len();
        let mut rule_rates = Vec::with_capacity(model.rules().len());
        for rule in model.rules() {
            let mut v = Vec::with_capacity(nm);
            for m in index.iter() {
                v.push(rule.rate.eval_counts(m)?);
            }
            rule_rates.push(v);
        }
        let counts = (0..ns).map(|s| index.iter().map(|m| m[s] as f64).collect()).collect();
        let mut pairs = Vec::new();
        let mut shift_source = Vec::new();
        for (s1, s2) in transition_pairs(model) {
            let mut rate = vec![0.0; nm];
            for (r, rule) in model.rules().iter().enumerate() {
                if rule.from == s1 && rule.to == s2 {
                    rate.iter_mut().zip(&rule_rates[r]).for_each(|(a, b)| *a += b);
                }
            }
            pairs.push(TransitionPair { s1, s2, rate });
            shift_source.push(
                (0..nm)
                    .map(|j| index.shift_ordinal(j, s1, s2).map_or(NONE, |t| t as u32))
                    .collect(),
            );
        }
        Ok(Self {
            num_states: ns,
            rules: model.rules().iter().map(|r| (r.from, r.to)).collect(),
            rule_rates,
            pairs,
            counts,
            shift_source,
            index,
        })
    }

    pub fn index(&self) -> &NeighborhoodIndex {
        &self.index
    }

    pub fn shared_index(&self) -> Arc<NeighborhoodIndex> {
        self.index.clone()
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_variables(&self) -> usize {
        self.num_states * self.index.len()
    }

    /// `beta[s][p]`: rate at which an `(s, s1)` edge turns into an `(s, s2)` edge,
    /// for every transition pair `p`. Zero when there are no `(s, s1)` edges.
    pub fn betas(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let nm = self.index.len();
        (0..self.num_states)
            .map(|s| {
                self.pairs
                    .iter()
                    .map(|p| {
                        let xs1 = &x[p.s1 * nm..(p.s1 + 1) * nm];
                        let cs = &self.counts[s];
                        let mut num = 0.0;
                        let mut den = 0.0;
                        for j in 0..nm {
                            // round-off negatives must not push beta outside the range of g
                            let e = cs[j] * xs1[j].max(0.0);
                            den += e;
                            num += p.rate[j] * e;
                        }
                        if den > 0.0 {
                            num / den
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Transition pairs `(s1, s2)` in the order used by [`FullSystem::betas`].
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.pairs.iter().map(|p| (p.s1, p.s2)).collect()
    }

    pub fn eval(&self, x: &[f64], dx: &mut [f64]) -> Result<()> {
        assert_eq!(x.len(), self.num_variables());
        assert_eq!(dx.len(), x.len());
        if let Some(bad) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical { t: f64::NAN, reason: format!("non-finite state entry {bad}") });
        }
        let nm = self.index.len();
        dx.iter_mut().for_each(|v| *v = 0.0);

        for (r, &(from, to)) in self.rules.iter().enumerate() {
            let rates = &self.rule_rates[r];
            for j in 0..nm {
                let flow = rates[j] * x[from * nm + j];
                dx[from * nm + j] -= flow;
                dx[to * nm + j] += flow;
            }
        }

        let betas = self.betas(x);
        for s in 0..self.num_states {
            let xs = &x[s * nm..(s + 1) * nm];
            let dxs = &mut dx[s * nm..(s + 1) * nm];
            for (p, pair) in self.pairs.iter().enumerate() {
                let beta = betas[s][p];
                if beta == 0.0 {
                    continue;
                }
                let c1 = &self.counts[pair.s1];
                let src = &self.shift_source[p];
                for j in 0..nm {
                    let mut d = -xs[j] * c1[j];
                    let from = src[j];
                    if from != NONE {
                        let from = from as usize;
                        d += xs[from] * c1[from];
                    }
                    dxs[j] += beta * d;
                }
            }
        }
        Ok(())
    }

    pub fn rhs(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut dx = vec![0.0; x.len()];
        self.eval(x, &mut dx)?;
        Ok(dx)
    }

    /// Global fraction per state: sum of each state's slice.
    pub fn global_fractions(&self, x: &[f64]) -> Vec<f64> {
        global_fractions(x, self.num_states)
    }

    /// Mass per degree `k = 0..=kmax`.
    pub fn degree_marginals(&self, x: &[f64]) -> Vec<f64> {
        let nm = self.index.len();
        (0..=self.index.kmax())
            .map(|k| {
                let r = self.index.degree_range(k);
                compensated_sum((0..self.num_states).flat_map(|s| x[s * nm + r.start..s * nm + r.end].iter().copied()))
            })
            .collect()
    }
}

/// Sums each of `num_states` equal-length slices of `x`.
pub fn global_fractions(x: &[f64], num_states: usize) -> Vec<f64> {
    if x.is_empty() {
        return vec![0.0; num_states];
    }
    let n = x.len() / num_states;
    (0..num_states).map(|s| compensated_sum(x[s * n..(s + 1) * n].iter().copied())).collect()
}

impl OdeSystem for FullSystem {
    fn dim(&self) -> usize {
        self.num_variables()
    }

    fn rhs(&self, y: &[f64], dy: &mut [f64]) -> Result<()> {
        self.eval(y, dy)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::model::{multinomial_initial_state, validate_model, DegreeDistribution, ModelSpec};
    use crate::neighborhood::ame_equation_count;
    use proptest::prelude::*;
    use std::collections::HashMap;

    pub(crate) fn model(json: &str) -> ValidatedModel {
        validate_model(ModelSpec::from_json(json).unwrap()).unwrap()
    }

    pub(crate) fn sis(l1: f64, l2: f64, kmax: u32) -> ValidatedModel {
        model(&format!(
            r#"{{"states":["S","I"],"rules":[{{"from":"S","to":"I","rate":"{l1}*m[I]"}},{{"from":"I","to":"S","rate":"{l2}"}}],
               "degree":{{"type":"powerlaw","gamma":2.5,"kmax":{kmax}}},"initial":{{"S":0.8,"I":0.2}},"horizon":3}}"#
        ))
    }

    pub(crate) fn sir(kmax: u32) -> ValidatedModel {
        model(&format!(
            r#"{{"states":["I","R","S"],"rules":[{{"from":"S","to":"I","rate":"3.0*m[I]"}},{{"from":"I","to":"R","rate":"2.0"}},{{"from":"R","to":"S","rate":"1.0"}}],
               "degree":{{"type":"powerlaw","gamma":2.5,"kmax":{kmax}}},"initial":{{"I":0.25,"R":0.25,"S":0.5}},"horizon":3}}"#
        ))
    }

    /// Independent expansion of every term of the master equation, written
    /// directly over explicit neighborhood vectors.
    fn naive_rhs(model: &ValidatedModel, idx: &NeighborhoodIndex, x: &[f64]) -> Vec<f64> {
        let ns = model.num_states();
        let ms: Vec<Vec<u32>> = idx.iter().map(|m| m.to_vec()).collect();
        let pos: HashMap<Vec<u32>, usize> = ms.iter().cloned().enumerate().map(|(i, m)| (m, i)).collect();
        let val = |s: usize, m: &Vec<u32>| x[s * ms.len() + pos[m]];
        let f = |r: usize, m: &Vec<u32>| model.rules()[r].rate.eval_counts(m).unwrap();
        let beta = |s: usize, s1: usize, s2: usize| {
            let mut num = 0.0;
            let mut den = 0.0;
            for m in &ms {
                for (r, rule) in model.rules().iter().enumerate() {
                    if rule.from == s1 && rule.to == s2 {
                        num += f(r, m) * val(s1, m) * m[s] as f64;
                    }
                }
                den += val(s1, m) * m[s] as f64;
            }
            if den > 0.0 {
                num / den
            } else {
                0.0
            }
        };
        let mut out = vec![0.0; x.len()];
        for s in 0..ns {
            for m in &ms {
                let mut d = 0.0;
                for (r, rule) in model.rules().iter().enumerate() {
                    if rule.to == s {
                        d += f(r, m) * val(rule.from, m);
                    }
                    if rule.from == s {
                        d -= f(r, m) * val(s, m);
                    }
                }
                for s1 in 0..ns {
                    for s2 in 0..ns {
                        if s1 == s2 {
                            continue;
                        }
                        let b = beta(s, s1, s2);
                        if m[s2] >= 1 {
                            let mut src = m.clone();
                            src[s1] += 1;
                            src[s2] -= 1;
                            d += b * val(s, &src) * src[s1] as f64;
                        }
                        d -= b * val(s, m) * m[s1] as f64;
                    }
                }
                out[s * ms.len() + pos[m]] = d;
            }
        }
        out
    }

    pub(crate) fn random_state(n: usize, seed: u64) -> Vec<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let t: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= t);
        v
    }

    #[test]
    fn variable_counts() {
        let sys = build_full_ame(&sis(1.0, 1.0, 2)).unwrap();
        assert_eq!(sys.num_variables(), 12);
        assert_eq!(sys.num_variables() as u64, ame_equation_count(2, 2));
        let sys = build_full_ame(&sir(60)).unwrap();
        assert_eq!(sys.num_variables(), 119133);
    }

    #[test]
    fn matches_hand_expansion_small() {
        for kmax in 1..=3 {
            for (l1, l2) in [(3.0, 1.0), (0.5, 2.0), (0.0, 1.0)] {
                let m = sis(l1, l2, kmax);
                let sys = build_full_ame(&m).unwrap();
                for seed in 0..4 {
                    let x = random_state(sys.num_variables(), seed);
                    let fast = sys.rhs(&x).unwrap();
                    let slow = naive_rhs(&m, sys.index(), &x);
                    for (a, b) in fast.iter().zip(&slow) {
                        assert!((a - b).abs() <= 1e-14, "{a} vs {b}");
                    }
                }
            }
        }
        // a three-state check at small degree as well
        let m = sir(3);
        let sys = build_full_ame(&m).unwrap();
        let x = random_state(sys.num_variables(), 9);
        let fast = sys.rhs(&x).unwrap();
        let slow = naive_rhs(&m, sys.index(), &x);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() <= 1e-13);
        }
    }

    #[test]
    fn no_rules_no_motion() {
        let m = model(
            r#"{"states":["A","B"],"rules":[],"degree":{"type":"table","p":[0.2,0.3,0.5]},"initial":{"A":0.5,"B":0.5},"horizon":1}"#,
        );
        let sys = build_full_ame(&m).unwrap();
        let x = random_state(sys.num_variables(), 1);
        assert!(sys.rhs(&x).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn absorbing_configuration_is_fixed() {
        // SIR without waning immunity: all mass in R is absorbing
        let m = model(
            r#"{"states":["I","R","S"],"rules":[{"from":"S","to":"I","rate":"3*m[I]"},{"from":"I","to":"R","rate":"2"}],
                "degree":{"type":"powerlaw","gamma":2.5,"kmax":8},"initial":{"R":1.0},"horizon":1}"#,
        );
        let sys = build_full_ame(&m).unwrap();
        let x = multinomial_initial_state(&m, sys.index());
        assert!(sys.rhs(&x).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_infection_rate_has_no_infection_shift() {
        let m = sis(0.0, 1.0, 5);
        let sys = build_full_ame(&m).unwrap();
        let x = multinomial_initial_state(&m, sys.index());
        let pairs = sys.pairs();
        let b = sys.betas(&x);
        let infect = pairs.iter().position(|&p| p == (0, 1)).unwrap();
        let recover = pairs.iter().position(|&p| p == (1, 0)).unwrap();
        for s in 0..2 {
            assert_eq!(b[s][infect], 0.0);
            assert!((b[s][recover] - 1.0).abs() < 1e-12);
        }
        let dx = sys.rhs(&x).unwrap();
        let g = global_fractions(&dx, 2);
        assert!((g[1] + 0.2).abs() < 1e-12);
    }

    #[test]
    fn sir_conservation_at_start() {
        let m = sir(60);
        let sys = build_full_ame(&m).unwrap();
        let x = multinomial_initial_state(&m, sys.index());
        assert_eq!(
            sys.global_fractions(&x).iter().map(|v| (v * 1e12).round() / 1e12).collect::<Vec<_>>(),
            vec![0.25, 0.25, 0.5]
        );
        let dx = sys.rhs(&x).unwrap();
        assert!(compensated_sum(dx.iter().copied()).abs() < 1e-12);
        for d in sys.degree_marginals(&dx) {
            assert!(d.abs() < 1e-12);
        }
        let marg = sys.degree_marginals(&x);
        for (k, v) in marg.iter().enumerate() {
            assert!((v - m.degree().p(k as u32)).abs() < 1e-12);
        }
    }

    #[test]
    fn marginals_of_point_mass() {
        let m = sis(1.0, 1.0, 5).with_degree(DegreeDistribution::delta(5));
        let sys = build_full_ame(&m).unwrap();
        let x = multinomial_initial_state(&m, sys.index());
        let marg = sys.degree_marginals(&x);
        assert_eq!(marg.len(), 6);
        assert!((marg[5] - 1.0).abs() < 1e-12);
        assert!(marg[..5].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn global_fraction_edge_cases() {
        assert_eq!(global_fractions(&[0.25, 0.25, 0.25, 0.25], 2), vec![0.5, 0.5]);
        assert_eq!(global_fractions(&[0.0; 6], 3), vec![0.0; 3]);
    }

    #[test]
    fn rejects_non_finite() {
        let sys = build_full_ame(&sis(1.0, 1.0, 2)).unwrap();
        let mut x = vec![0.0; sys.num_variables()];
        x[3] = f64::NAN;
        assert!(sys.rhs(&x).is_err());
    }

    #[test]
    fn beta_stays_in_rate_range_with_round_off_negatives() {
        let m = sis(3.0, 1.0, 6);
        let sys = build_full_ame(&m).unwrap();
        let idx = sys.index();
        let nm = idx.len();
        let (i, s) = (m.states().index("I").unwrap(), m.states().index("S").unwrap());
        let at = |ni: u32, ns: u32| {
            let mut v = vec![0u32; 2];
            v[i] = ni;
            v[s] = ns;
            idx.index_of(&v).unwrap()
        };
        let mut x = vec![0.0; sys.num_variables()];
        x[i * nm + at(3, 3)] = 1.0;
        // near-extinct susceptibles: positive pair mass overall, negative infection-weighted mass
        x[s * nm + at(0, 6)] = 1e-14;
        x[s * nm + at(3, 3)] = -1e-14;
        for row in sys.betas(&x) {
            for b in row {
                assert!((0.0..=3.0 * 6.0).contains(&b), "beta {b}");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn conservation_and_beta_bounds(seed in 0u64..10_000, kmax in 1u32..12, l1 in 0.0f64..4.0) {
            let m = sis(l1, 1.5, kmax);
            let sys = build_full_ame(&m).unwrap();
            let x = random_state(sys.num_variables(), seed);
            let dx = sys.rhs(&x).unwrap();
            prop_assert!(compensated_sum(dx.iter().copied()).abs() < 1e-12);
            for d in sys.degree_marginals(&dx) {
                prop_assert!(d.abs() < 1e-12);
            }
            let lam = l1.max(1.5);
            for row in sys.betas(&x) {
                for b in row {
                    prop_assert!(b >= 0.0 && b <= lam * kmax as f64 + 1e-12);
                }
            }
        }
    }
}
