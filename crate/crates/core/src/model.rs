//! Contact-process models: states, rules, degree distribution and initial
//! condition, plus the JSON model-file format.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::neighborhood::NeighborhoodIndex;
use crate::numeric::compensated_sum;
use crate::rate::{parse_rate, ParseError, RateExpr, Scope};
use crate::Error;

const NORM_TOL: f64 = 1e-12;

/// Ordered, duplicate-free list of state labels. The order fixes every index
/// used elsewhere.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSet {
    names: Vec<String>,
}

impl StateSet {
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub from: usize,
    pub to: usize,
    pub rate: RateExpr,
}

/// Degree probabilities `P(k)` for `k = 0..=kmax`.
#[derive(Debug, Clone, PartialEq)]
pub struct DegreeDistribution {
    p: Vec<f64>,
}

impl DegreeDistribution {
    /// Builds a distribution from a table. Trailing zero entries are dropped.
    pub fn from_table(p: Vec<f64>) -> Result<Self, Error> {
        let mut issues = Vec::new();
        check_table(&p, &mut issues);
        if !issues.is_empty() {
            return Err(Error::Validation(issues));
        }
        Ok(Self::canonical(p))
    }

    fn canonical(mut p: Vec<f64>) -> Self {
        while p.len() > 1 && *p.last().unwrap() == 0.0 {
            p.pop();
        }
        let total = compensated_sum(p.iter().copied());
        for v in &mut p {
            *v /= total;
        }
        Self { p }
    }

    /// Point mass at degree `k`.
    pub fn delta(k: u32) -> Self {
        let mut p = vec![0.0; k as usize + 1];
        p[k as usize] = 1.0;
        Self { p }
    }

    pub fn kmax(&self) -> u32 {
        (self.p.len() - 1) as u32
    }

    pub fn p(&self, k: u32) -> f64 {
        self.p.get(k as usize).copied().unwrap_or(0.0)
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.p
    }

    pub fn mean(&self) -> f64 {
        compensated_sum(self.p.iter().enumerate().map(|(k, p)| k as f64 * p))
    }
}

/// Truncated power law `P(k) ∝ k^-gamma` on `kmin..=kmax`.
pub fn powerlaw_distribution(gamma: f64, kmin: u32, kmax: u32) -> Result<DegreeDistribution, Error> {
    if !(gamma > 0.0 && gamma.is_finite()) || kmin < 1 || kmin > kmax {
        return Err(Error::InvalidArgument(format!(
            "power law needs gamma > 0 and 1 <= kmin <= kmax (got gamma={gamma}, kmin={kmin}, kmax={kmax})"
        )));
    }
    let mut p = vec![0.0; kmax as usize + 1];
    for k in kmin..=kmax {
        p[k as usize] = (k as f64).powf(-gamma);
    }
    let z = compensated_sum(p.iter().copied());
    for v in &mut p {
        *v /= z;
    }
    Ok(DegreeDistribution { p })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum DegreeSpec {
    Powerlaw {
        gamma: f64,
        #[serde(default = "default_kmin")]
        kmin: u32,
        kmax: u32,
    },
    Table {
        p: Vec<f64>,
    },
}

fn default_kmin() -> u32 {
    1
}

fn default_grid_points() -> usize {
    101
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSpec {
    pub from: String,
    pub to: String,
    pub rate: String,
}

/// Model file contents, before validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub states: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub constants: BTreeMap<String, f64>,
    pub rules: Vec<RuleSpec>,
    pub degree: DegreeSpec,
    pub initial: BTreeMap<String, f64>,
    pub horizon: f64,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
}

impl ModelSpec {
    pub fn from_json(text: &str) -> Result<Self, Error> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model spec serializes")
    }
}

/// One problem found while validating a [`ModelSpec`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NoStates,
    EmptyStateName,
    DuplicateState(String),
    UnknownRuleState { rule: usize, name: String },
    SelfRule { rule: usize, state: String },
    RateSyntax { rule: usize, error: ParseError },
    NegativeRate { rule: usize, at: Vec<u32>, value: f64 },
    RateEvaluation { rule: usize, at: Vec<u32>, message: String },
    InvalidDegree(String),
    DegreeNotNormalized { sum: f64 },
    UnknownInitialState(String),
    NegativeInitial(String),
    InitialNotNormalized { sum: f64 },
    NonPositiveHorizon(f64),
    TooFewGridPoints(usize),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            NoStates => write!(f, "no states declared"),
            EmptyStateName => write!(f, "empty state name"),
            DuplicateState(s) => write!(f, "duplicate state `{s}`"),
            UnknownRuleState { rule, name } => write!(f, "rule {rule}: unknown state `{name}`"),
            SelfRule { rule, state } => write!(f, "rule {rule}: self-rule on `{state}`"),
            RateSyntax { rule, error } => write!(f, "rule {rule}: {error}"),
            NegativeRate { rule, at, value } => write!(f, "rule {rule}: negative rate {value} at m={at:?}"),
            RateEvaluation { rule, at, message } => write!(f, "rule {rule}: rate evaluation failed at m={at:?}: {message}"),
            InvalidDegree(msg) => write!(f, "degree distribution: {msg}"),
            DegreeNotNormalized { sum } => write!(f, "degree distribution not normalized (sum {sum})"),
            UnknownInitialState(s) => write!(f, "initial: unknown state `{s}`"),
            NegativeInitial(s) => write!(f, "initial: negative fraction for `{s}`"),
            InitialNotNormalized { sum } => write!(f, "initial not normalized (sum {sum})"),
            NonPositiveHorizon(h) => write!(f, "horizon must be positive (got {h})"),
            TooFewGridPoints(n) => write!(f, "grid_points must be at least 2 (got {n})"),
        }
    }
}

fn check_table(p: &[f64], issues: &mut Vec<Violation>) {
    if p.is_empty() {
        issues.push(Violation::InvalidDegree("empty table".into()));
        return;
    }
    if let Some(k) = p.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
        issues.push(Violation::InvalidDegree(format!("P({k}) is negative or not finite")));
        return;
    }
    let sum = compensated_sum(p.iter().copied());
    if (sum - 1.0).abs() > NORM_TOL {
        issues.push(Violation::DegreeNotNormalized { sum });
    }
}

/// A model that passed validation. Immutable.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedModel {
    spec: ModelSpec,
    states: StateSet,
    rules: Vec<Rule>,
    degree: DegreeDistribution,
    initial: Vec<f64>,
}

impl ValidatedModel {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn states(&self) -> &StateSet {
        &self.states
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn degree(&self) -> &DegreeDistribution {
        &self.degree
    }

    pub fn kmax(&self) -> u32 {
        self.degree.kmax()
    }

    /// Initial global fraction per state, in state order.
    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn horizon(&self) -> f64 {
        self.spec.horizon
    }

    pub fn grid_points(&self) -> usize {
        self.spec.grid_points
    }

    pub fn name(&self) -> &str {
        self.spec.name.as_deref().unwrap_or("model")
    }

    /// Copy with a different degree distribution (given as an explicit table).
    pub fn with_degree(&self, degree: DegreeDistribution) -> Self {
        let mut spec = self.spec.clone();
        spec.degree = DegreeSpec::Table { p: degree.p.clone() };
        Self { spec, degree, ..self.clone() }
    }

    /// Copy with a different time horizon and grid.
    pub fn with_horizon(&self, horizon: f64, grid_points: usize) -> Self {
        let mut out = self.clone();
        out.spec.horizon = horizon;
        out.spec.grid_points = grid_points;
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, Error> {
        validate_model(ModelSpec::load(path)?)
    }

    pub fn from_json(text: &str) -> Result<Self, Error> {
        validate_model(ModelSpec::from_json(text)?)
    }
}

/// Checks a spec and returns the canonical model, or every violation found.
pub fn validate_model(spec: ModelSpec) -> Result<ValidatedModel, Error> {
    let mut issues = Vec::new();

    if spec.states.is_empty() {
        issues.push(Violation::NoStates);
    }
    for (i, s) in spec.states.iter().enumerate() {
        if s.is_empty() {
            issues.push(Violation::EmptyStateName);
        } else if spec.states[..i].contains(s) {
            issues.push(Violation::DuplicateState(s.clone()));
        }
    }
    let states = StateSet { names: spec.states.clone() };

    let degree = match &spec.degree {
        DegreeSpec::Powerlaw { gamma, kmin, kmax } => match powerlaw_distribution(*gamma, *kmin, *kmax) {
            Ok(d) => Some(d),
            Err(e) => {
                issues.push(Violation::InvalidDegree(e.to_string()));
                None
            }
        },
        DegreeSpec::Table { p } => {
            let before = issues.len();
            check_table(p, &mut issues);
            (issues.len() == before).then(|| DegreeDistribution::canonical(p.clone()))
        }
    };

    let scope = Scope::new(&spec.states).with_constants(&spec.constants);
    let mut rules = Vec::new();
    let mut parsed = Vec::new();
    for (i, r) in spec.rules.iter().enumerate() {
        let from = states.index(&r.from);
        let to = states.index(&r.to);
        for (name, idx) in [(&r.from, from), (&r.to, to)] {
            if idx.is_none() {
                issues.push(Violation::UnknownRuleState { rule: i, name: name.clone() });
            }
        }
        if r.from == r.to {
            issues.push(Violation::SelfRule { rule: i, state: r.from.clone() });
        }
        let rate = match parse_rate(&r.rate, scope) {
            Ok(e) => Some(e),
            Err(error) => {
                issues.push(Violation::RateSyntax { rule: i, error });
                None
            }
        };
        if let Some(rate) = &rate {
            parsed.push((i, rate.clone()));
        }
        if let (Some(from), Some(to), Some(rate)) = (from, to, rate) {
            if from != to {
                rules.push(Rule { from, to, rate });
            }
        }
    }

    if let Some(d) = &degree {
        for (i, rate) in &parsed {
            probe_rate(*i, rate, states.len(), d.kmax(), &mut issues);
        }
    }

    let mut initial = vec![0.0; states.len()];
    for (name, &v) in &spec.initial {
        match states.index(name) {
            Some(i) => {
                if !(v >= 0.0 && v.is_finite()) {
                    issues.push(Violation::NegativeInitial(name.clone()));
                }
                initial[i] = v;
            }
            None => issues.push(Violation::UnknownInitialState(name.clone())),
        }
    }
    let sum = compensated_sum(initial.iter().copied());
    if (sum - 1.0).abs() > NORM_TOL {
        issues.push(Violation::InitialNotNormalized { sum });
    }
    if !(spec.horizon > 0.0 && spec.horizon.is_finite()) {
        issues.push(Violation::NonPositiveHorizon(spec.horizon));
    }
    if spec.grid_points < 2 {
        issues.push(Violation::TooFewGridPoints(spec.grid_points));
    }

    if !issues.is_empty() {
        return Err(Error::Validation(issues));
    }
    let degree = degree.expect("checked above");
    let mut spec = spec;
    for s in &states.names {
        spec.initial.entry(s.clone()).or_insert(0.0);
    }
    if let DegreeSpec::Table { p } = &mut spec.degree {
        *p = degree.p.clone();
    }
    Ok(ValidatedModel { spec, states, rules, degree, initial })
}

/// Evaluates a rate on a spread of neighborhoods, flagging negative or failing values.
fn probe_rate(rule: usize, rate: &RateExpr, num_states: usize, kmax: u32, issues: &mut Vec<Violation>) {
    let mut probes: Vec<Vec<u32>> = Vec::new();
    let mut degrees = vec![0, 1, 2, 3, kmax / 2, kmax];
    degrees.retain(|&k| k <= kmax);
    degrees.dedup();
    for &k in &degrees {
        if k <= 3 && num_states <= 6 {
            let idx = NeighborhoodIndex::with_cap(num_states, k, 10_000).expect("small");
            probes.extend(idx.degree_range(k).map(|j| idx.vector(j).to_vec()));
        } else {
            for s in 0..num_states {
                let mut m = vec![0; num_states];
                m[s] = k;
                probes.push(m);
            }
            let mut m = vec![k / num_states as u32; num_states];
            m[0] += k % num_states as u32;
            probes.push(m);
        }
    }
    for m in probes {
        match rate.eval_counts(&m) {
            Ok(v) if v >= 0.0 && v.is_finite() => {}
            Ok(value) => {
                issues.push(Violation::NegativeRate { rule, at: m, value });
                return;
            }
            Err(e) => {
                issues.push(Violation::RateEvaluation { rule, at: m, message: e.to_string() });
                return;
            }
        }
    }
}

/// Full initial state under independent random state assignment:
/// `x[s,m] = x_s(0) P(k) Multinomial(k; m) prod_s' x_s'(0)^m[s']`, laid out
/// state-major over `index` ordinals.
/// Multinomial neighborhood probabilities `k!/Π m_s! · Π x_s^{m_s}`.
#[derive(Debug, Clone)]
pub struct MultinomialPmf {
    x: Vec<f64>,
    ln_x: Vec<f64>,
    ln_fact: Vec<f64>,
}

impl MultinomialPmf {
    pub fn new(x: &[f64], kmax: u32) -> Self {
        let ln_fact = std::iter::once(0.0)
            .chain((1..=kmax).scan(0.0, |acc, i| {
                *acc += (i as f64).ln();
                Some(*acc)
            }))
            .collect();
        Self { x: x.to_vec(), ln_x: x.iter().map(|v| v.ln()).collect(), ln_fact }
    }

    pub fn pmf(&self, m: &[u32]) -> f64 {
        let k: u32 = m.iter().sum();
        let mut ln = self.ln_fact[k as usize];
        for (s, &c) in m.iter().enumerate() {
            if c > 0 {
                if self.x[s] == 0.0 {
                    return 0.0;
                }
                ln += c as f64 * self.ln_x[s] - self.ln_fact[c as usize];
            }
        }
        ln.exp()
    }
}

/// Full initial state: nodes independently in state `s` with probability
/// `x_s(0)`, degrees from `P(k)`, neighbor states multinomial.
pub fn multinomial_initial_state(model: &ValidatedModel, index: &NeighborhoodIndex) -> Vec<f64> {
    let ns = model.num_states();
    let nm = index.len();
    let x0 = model.initial();
    let law = MultinomialPmf::new(x0, index.kmax());
    let mut pmf = vec![0.0; nm];
    for k in 0..=index.kmax() {
        let range = index.degree_range(k);
        let mut vals: Vec<f64> = range.clone().map(|j| law.pmf(index.vector(j))).collect();
        // rescale the slice so it sums to one exactly (up to rounding)
        let total = compensated_sum(vals.iter().copied());
        if total > 0.0 {
            vals.iter_mut().for_each(|v| *v /= total);
        }
        for (j, v) in range.zip(vals) {
            pmf[j] = v;
        }
    }

    let mut x = vec![0.0; ns * nm];
    for s in 0..ns {
        for j in 0..nm {
            let k = index.degree_of(j);
            x[s * nm + j] = x0[s] * model.degree().p(k) * pmf[j];
        }
    }
    x
}
