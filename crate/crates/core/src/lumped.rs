//! The lumped AME: one equation per `(state, cluster)`.
//!
//! Layout: `z[s * |C| + c]`.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::cells::{coordinate_bounds, for_each_box_point};
use crate::clustering::{Clustering, ClusteringMode};
use crate::full::transition_pairs;
use crate::model::{MultinomialPmf, ValidatedModel};
use crate::numeric::{compensated_sum, KahanSum};
use crate::ode::OdeSystem;
use crate::{Error, Result};

/// How the approximate system estimates `m[s1]` over border members.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BorderEstimate {
    /// Midpoint of the donor and receiver centers.
    Midpoint,
    /// Exact mean of `m[s1]` over the border members, from cell geometry.
    #[default]
    FaceMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LumpedMode {
    Exact,
    Approximate(BorderEstimate),
}

/// Linear mass transfer `dz[s, target] += β · coef · z[s, source]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    pub target: u32,
    pub source: u32,
    pub coef: f64,
}

#[derive(Debug, Clone)]
pub struct LumpedSystem {
    clustering: Arc<Clustering>,
    mode: LumpedMode,
    num_states: usize,
    num_clusters: usize,
    rules: Vec<(usize, usize)>,
    /// `a[r][c]`: lumped rate of rule `r` in cluster `c`.
    a: Vec<Vec<f64>>,
    pairs: Vec<(usize, usize)>,
    /// `beta_num[p][s][c]`: weighted sum of `g_p(m)·m[s]` over `c`.
    beta_num: Vec<Vec<Vec<f64>>>,
    /// `beta_den[s][c]`: weighted sum of `m[s]` over `c`.
    beta_den: Vec<Vec<f64>>,
    /// `outflow[p][c]`: multiplies `-β z[s, c]`; empty when flows are all in `links`.
    outflow: Vec<Vec<f64>>,
    links: Vec<Vec<Link>>,
}

/// Lumped system with every scalar summed over materialized members.
pub fn build_lumped_exact(model: &ValidatedModel, clustering: Arc<Clustering>) -> Result<LumpedSystem> {
    let index = clustering.index().ok_or(Error::ApproximateMode)?.clone();
    let membership = clustering.membership().ok_or(Error::ApproximateMode)?;
    if index.num_states() != model.num_states() || index.kmax() != model.kmax() {
        return Err(Error::InvalidArgument("clustering does not match the model".into()));
    }
    let ns = model.num_states();
    let nc = clustering.len();
    let pairs = transition_pairs(model);
    let weight_of = |j: usize, m: &[u32]| clustering.cluster(membership[j] as usize).weight_at(m.iter().sum());

    let mut a = vec![vec![KahanSum::default(); nc]; model.rules().len()];
    let mut num = vec![vec![vec![KahanSum::default(); nc]; ns]; pairs.len()];
    let mut den = vec![vec![KahanSum::default(); nc]; ns];
    let mut links: Vec<BTreeMap<(u32, u32), KahanSum>> = vec![BTreeMap::new(); pairs.len()];
    let mut rates = vec![0.0; model.rules().len()];
    for (j, m) in index.iter().enumerate() {
        let c = membership[j] as usize;
        let w = weight_of(j, m);
        for (r, rule) in model.rules().iter().enumerate() {
            rates[r] = rule.rate.eval_counts(m)?;
            a[r][c].add(w * rates[r]);
        }
        for s in 0..ns {
            den[s][c].add(w * m[s] as f64);
        }
        for (p, &(s1, s2)) in pairs.iter().enumerate() {
            let g: f64 = model.rules().iter().zip(&rates).filter(|(r, _)| r.from == s1 && r.to == s2).map(|(_, v)| v).sum();
            for s in 0..ns {
                num[p][s][c].add(w * g * m[s] as f64);
            }
            // m receives from its shift source m' = m + e_s1 - e_s2
            if let Some(src) = index.shift_ordinal(j, s1, s2) {
                let m_src = index.vector(src);
                let cs = membership[src];
                let ws = weight_of(src, m_src);
                links[p].entry((c as u32, cs)).or_default().add(ws * m_src[s1] as f64);
            }
        }
    }
    let finish = |v: Vec<KahanSum>| v.into_iter().map(|k| k.value()).collect::<Vec<f64>>();
    let beta_den: Vec<Vec<f64>> = den.into_iter().map(finish).collect();
    let outflow = pairs.iter().map(|&(s1, _)| beta_den[s1].clone()).collect();
    Ok(LumpedSystem {
        mode: LumpedMode::Exact,
        num_states: ns,
        num_clusters: nc,
        rules: model.rules().iter().map(|r| (r.from, r.to)).collect(),
        a: a.into_iter().map(finish).collect(),
        beta_num: num.into_iter().map(|v| v.into_iter().map(finish).collect()).collect(),
        beta_den,
        outflow,
        links: links
            .into_iter()
            .map(|l| l.into_iter().map(|((t, s), k)| Link { target: t, source: s, coef: k.value() }).collect())
            .collect(),
        pairs,
        clustering,
    })
}

/// Lumped system from cluster centers and border geometry; never touches
/// individual neighborhood vectors.
pub fn build_lumped_approx(
    model: &ValidatedModel,
    clustering: Arc<Clustering>,
    estimate: BorderEstimate,
) -> Result<LumpedSystem> {
    if clustering.num_states() != model.num_states() || clustering.partition().kmax() != model.kmax() {
        return Err(Error::InvalidArgument("clustering does not match the model".into()));
    }
    let ns = model.num_states();
    let nc = clustering.len();
    let pairs = transition_pairs(model);
    let mut a = vec![vec![0.0; nc]; model.rules().len()];
    let mut num = vec![vec![vec![0.0; nc]; ns]; pairs.len()];
    let mut beta_den = vec![vec![0.0; nc]; ns];
    let mut rates = vec![0.0; model.rules().len()];
    for (c, cl) in clustering.clusters().iter().enumerate() {
        let k = cl.mean_degree();
        for (r, rule) in model.rules().iter().enumerate() {
            rates[r] = rule.rate.eval(&cl.center, k)?;
            a[r][c] = rates[r];
        }
        for s in 0..ns {
            beta_den[s][c] = cl.center[s];
        }
        for (p, &(s1, s2)) in pairs.iter().enumerate() {
            let g: f64 = model.rules().iter().zip(&rates).filter(|(r, _)| r.from == s1 && r.to == s2).map(|(_, v)| v).sum();
            for s in 0..ns {
                num[p][s][c] = g * cl.center[s];
            }
        }
    }
    let mut links = vec![Vec::new(); pairs.len()];
    for (p, &(s1, s2)) in pairs.iter().enumerate() {
        for donor in 0..nc {
            let dc = clustering.cluster(donor);
            let mut per_target: BTreeMap<usize, (KahanSum, KahanSum)> = BTreeMap::new();
            for flow in clustering.border_flows(donor, s1, s2) {
                let w = dc.weight_at(flow.k);
                let e = per_target.entry(flow.target).or_default();
                e.0.add(w * flow.count as f64);
                e.1.add(w * flow.s1_sum);
            }
            for (target, (mass, s1_mass)) in per_target {
                let coef = match estimate {
                    BorderEstimate::Midpoint => {
                        mass.value() * 0.5 * (dc.center[s1] + clustering.cluster(target).center[s1])
                    }
                    BorderEstimate::FaceMean => s1_mass.value(),
                };
                links[p].push(Link { target: target as u32, source: donor as u32, coef });
                links[p].push(Link { target: donor as u32, source: donor as u32, coef: -coef });
            }
        }
    }
    Ok(LumpedSystem {
        mode: LumpedMode::Approximate(estimate),
        num_states: ns,
        num_clusters: nc,
        rules: model.rules().iter().map(|r| (r.from, r.to)).collect(),
        a,
        beta_num: num,
        beta_den,
        outflow: Vec::new(),
        links,
        pairs,
        clustering,
    })
}

/// Builds the lumped system matching the clustering's mode.
pub fn build_lumped(model: &ValidatedModel, clustering: Arc<Clustering>) -> Result<LumpedSystem> {
    match clustering.mode() {
        ClusteringMode::Exact => build_lumped_exact(model, clustering),
        ClusteringMode::Approximate => build_lumped_approx(model, clustering, BorderEstimate::default()),
    }
}

impl LumpedSystem {
    pub fn mode(&self) -> LumpedMode {
        self.mode
    }

    pub fn clustering(&self) -> &Arc<Clustering> {
        &self.clustering
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    pub fn num_variables(&self) -> usize {
        self.num_states * self.num_clusters
    }

    /// Lumped rate of rule `r` in cluster `c`.
    pub fn rule_rate(&self, r: usize, c: usize) -> f64 {
        self.a[r][c]
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn links(&self, pair: usize) -> &[Link] {
        &self.links[pair]
    }

    /// `beta[s][p]`, zero when the denominator vanishes.
    pub fn betas(&self, z: &[f64]) -> Vec<Vec<f64>> {
        let nc = self.num_clusters;
        (0..self.num_states)
            .map(|s| {
                self.pairs
                    .iter()
                    .enumerate()
                    .map(|(p, &(s1, _))| {
                        let zs1 = &z[s1 * nc..(s1 + 1) * nc];
                        let (nv, dv) = (&self.beta_num[p][s], &self.beta_den[s]);
                        let mut num = 0.0;
                        let mut den = 0.0;
                        for c in 0..nc {
                            let zc = zs1[c].max(0.0);
                            num += nv[c] * zc;
                            den += dv[c] * zc;
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

    pub fn eval(&self, z: &[f64], dz: &mut [f64]) -> Result<()> {
        assert_eq!(z.len(), self.num_variables());
        assert_eq!(dz.len(), z.len());
        if let Some(bad) = z.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical { t: f64::NAN, reason: format!("non-finite lumped entry {bad}") });
        }
        let nc = self.num_clusters;
        dz.iter_mut().for_each(|v| *v = 0.0);
        for (r, &(from, to)) in self.rules.iter().enumerate() {
            let a = &self.a[r];
            for c in 0..nc {
                let flow = a[c] * z[from * nc + c];
                dz[from * nc + c] -= flow;
                dz[to * nc + c] += flow;
            }
        }
        let betas = self.betas(z);
        for s in 0..self.num_states {
            let zs = &z[s * nc..(s + 1) * nc];
            let dzs = &mut dz[s * nc..(s + 1) * nc];
            for p in 0..self.pairs.len() {
                let beta = betas[s][p];
                if beta == 0.0 {
                    continue;
                }
                if let Some(out) = self.outflow.get(p) {
                    for c in 0..nc {
                        dzs[c] -= beta * out[c] * zs[c];
                    }
                }
                for l in &self.links[p] {
                    dzs[l.target as usize] += beta * l.coef * zs[l.source as usize];
                }
            }
        }
        Ok(())
    }

    pub fn rhs(&self, z: &[f64]) -> Result<Vec<f64>> {
        let mut dz = vec![0.0; z.len()];
        self.eval(z, &mut dz)?;
        Ok(dz)
    }

    /// Total mass per degree interval.
    pub fn interval_masses(&self, z: &[f64]) -> Vec<f64> {
        let nc = self.num_clusters;
        let mut out = vec![KahanSum::default(); self.clustering.partition().len()];
        for s in 0..self.num_states {
            for (c, cl) in self.clustering.clusters().iter().enumerate() {
                out[cl.interval].add(z[s * nc + c]);
            }
        }
        out.into_iter().map(|k| k.value()).collect()
    }
}

impl OdeSystem for LumpedSystem {
    fn dim(&self) -> usize {
        self.num_variables()
    }

    fn rhs(&self, y: &[f64], dy: &mut [f64]) -> Result<()> {
        self.eval(y, dy)
    }
}

/// Sums a full state over each cluster's members.
pub fn lump_state(x: &[f64], clustering: &Clustering) -> Result<Vec<f64>> {
    let membership = clustering.membership().ok_or(Error::ApproximateMode)?;
    let nm = membership.len();
    let ns = clustering.num_states();
    if x.len() != ns * nm {
        return Err(Error::InvalidArgument(format!("full state has {} entries, expected {}", x.len(), ns * nm)));
    }
    let nc = clustering.len();
    let mut acc = vec![KahanSum::default(); ns * nc];
    for s in 0..ns {
        for (j, &c) in membership.iter().enumerate() {
            acc[s * nc + c as usize].add(x[s * nm + j]);
        }
    }
    Ok(acc.into_iter().map(|k| k.value()).collect())
}

/// Initial lumped state of the model's multinomial start, in either mode.
pub fn lump_initial_state(model: &ValidatedModel, clustering: &Clustering) -> Result<Vec<f64>> {
    if let (Some(index), Some(_)) = (clustering.index(), clustering.membership()) {
        let x0 = crate::model::multinomial_initial_state(model, index);
        return lump_state(&x0, clustering);
    }
    let ns = model.num_states();
    let nc = clustering.len();
    let law = MultinomialPmf::new(model.initial(), model.kmax());
    // per-degree totals for the same renormalization the exact path applies
    let mut cell_mass = vec![Vec::new(); nc];
    let mut degree_total = vec![KahanSum::default(); model.kmax() as usize + 1];
    for (c, cl) in clustering.clusters().iter().enumerate() {
        for share in &cl.degrees {
            let mut sum = KahanSum::default();
            if share.k == 0 {
                sum.add(1.0);
            } else {
                let bounds: Vec<(u32, u32)> = cl
                    .key
                    .iter()
                    .map(|&i| coordinate_bounds(i, share.k, clustering.p()).expect("nonempty cell"))
                    .collect();
                for_each_box_point(share.k, &bounds, |m| sum.add(law.pmf(m)));
            }
            degree_total[share.k as usize].add(sum.value());
            cell_mass[c].push((share.k, sum.value()));
        }
    }
    let mut z = vec![0.0; ns * nc];
    for (c, masses) in cell_mass.iter().enumerate() {
        let mass: f64 = compensated_sum(masses.iter().map(|&(k, v)| {
            let t = degree_total[k as usize].value();
            let v = if t > 0.0 { v / t } else { v };
            model.degree().p(k) * v
        }));
        for s in 0..ns {
            z[s * nc + c] = model.initial()[s] * mass;
        }
    }
    Ok(z)
}

/// Per-state global fractions `Σ_c z[s, c]`.
pub fn unlump_globals(z: &[f64], num_states: usize) -> Vec<f64> {
    crate::full::global_fractions(z, num_states)
}

/// Spreads each cluster's mass over its members by weight.
pub fn unlump_full(z: &[f64], clustering: &Clustering) -> Result<Vec<f64>> {
    let membership = clustering.membership().ok_or(Error::ApproximateMode)?;
    let index = clustering.index().ok_or(Error::ApproximateMode)?;
    let nm = membership.len();
    let nc = clustering.len();
    let ns = clustering.num_states();
    if z.len() != ns * nc {
        return Err(Error::InvalidArgument(format!("lumped state has {} entries, expected {}", z.len(), ns * nc)));
    }
    let mut x = vec![0.0; ns * nm];
    for (j, m) in index.iter().enumerate() {
        let c = membership[j] as usize;
        let w = clustering.cluster(c).weight_at(m.iter().sum());
        for s in 0..ns {
            x[s * nm + j] = z[s * nc + c] * w;
        }
    }
    Ok(x)
}
