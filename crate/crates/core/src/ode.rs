//! Adaptive Dormand–Prince 5(4) integration of autonomous systems sampled on a
//! uniform output grid.

use log::debug;

use crate::trajectory::Trajectory;
use crate::{Error, Result};

/// Autonomous system `dy/dt = f(y)`.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, y: &[f64], dy: &mut [f64]) -> Result<()>;
}

impl<F> OdeSystem for (usize, F)
where
    F: Fn(&[f64], &mut [f64]),
{
    fn dim(&self) -> usize {
        self.0
    }

    fn rhs(&self, y: &[f64], dy: &mut [f64]) -> Result<()> {
        (self.1)(y, dy);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    pub initial_step: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { rtol: 1e-6, atol: 1e-8, max_steps: 2_000_000, initial_step: None }
    }
}

impl SolverConfig {
    fn check(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(Error::InvalidArgument("tolerances must be positive".into()));
        }
        if let Some(h) = self.initial_step {
            if !(h > 0.0) {
                return Err(Error::InvalidArgument("initial step must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Entries below this abort integration.
pub const NEGATIVE_ABORT: f64 = -1e-6;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IntegrationStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
    /// Smallest state entry seen at any accepted step.
    pub min_value: f64,
    /// Number of accepted steps that had entries in `[NEGATIVE_ABORT, 0)`.
    pub steps_with_negatives: usize,
}

/// Uniform grid `0, H/(n-1), ..., H`.
pub fn uniform_grid(horizon: f64, grid_points: usize) -> Vec<f64> {
    let n = grid_points.max(2);
    (0..n).map(|i| if i == n - 1 { horizon } else { horizon * i as f64 / (n - 1) as f64 }).collect()
}

const SAFETY: f64 = 0.9;
const MIN_SHRINK: f64 = 0.2;
const MAX_GROWTH: f64 = 10.0;
/// Weight of the previous error in the proportional-integral step controller.
const PI_BETA: f64 = 0.04;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

struct Stages {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    ynew: Vec<f64>,
}

/// Integrates from `y0` over `[0, horizon]`, calling `observer(t, y)` at each
/// of the `grid_points` uniform output times (including `t = 0`).
pub fn integrate<S, F>(
    sys: &S,
    y0: &[f64],
    horizon: f64,
    grid_points: usize,
    config: &SolverConfig,
    mut observer: F,
) -> Result<IntegrationStats>
where
    S: OdeSystem + ?Sized,
    F: FnMut(f64, &[f64]),
{
    config.check()?;
    let n = sys.dim();
    if y0.len() != n {
        return Err(Error::InvalidArgument(format!("initial state has {} entries, system has {n}", y0.len())));
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("initial state is not finite".into()));
    }
    let mass: f64 = crate::numeric::compensated_sum(y0.iter().copied());
    if (mass - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("initial state sums to {mass}, expected 1")));
    }
    if !(horizon > 0.0 && horizon.is_finite()) || grid_points < 2 {
        return Err(Error::InvalidArgument("need horizon > 0 and at least two grid points".into()));
    }

    let grid = uniform_grid(horizon, grid_points);
    let mut stats = IntegrationStats { min_value: y0.iter().copied().fold(f64::INFINITY, f64::min), ..Default::default() };
    let mut y = y0.to_vec();
    let mut st = Stages {
        k: std::array::from_fn(|_| vec![0.0; n]),
        tmp: vec![0.0; n],
        ynew: vec![0.0; n],
    };
    let mut t = 0.0;
    observer(t, &y);

    sys.rhs(&y, &mut st.k[0]).map_err(|e| at_time(e, t))?;
    stats.rhs_evals += 1;
    let mut h = match config.initial_step {
        Some(h) => h,
        None => initial_step(sys, &y, &st.k[0], config, &mut st.tmp, &mut st.ynew).map_err(|e| at_time(e, t))?,
    }
    .min(horizon);
    stats.rhs_evals += 1;

    let mut err_old: f64 = 1e-4;
    let mut last_rejected = false;
    for &target in &grid[1..] {
        while t < target {
            if stats.accepted + stats.rejected >= config.max_steps {
                return Err(Error::Numerical { t, reason: format!("step limit of {} exhausted", config.max_steps) });
            }
            let remaining = target - t;
            let clipped = h >= remaining;
            let step = if clipped { remaining } else { h };
            let err = dp_step(sys, &y, step, config, &mut st).map_err(|e| at_time(e, t))?;
            stats.rhs_evals += 6;
            if !err.is_finite() {
                return Err(Error::Numerical { t, reason: "non-finite state or error estimate".into() });
            }
            let fac11 = err.powf(0.2 - PI_BETA * 0.75);
            if err <= 1.0 {
                stats.accepted += 1;
                t = if clipped { target } else { t + step };
                std::mem::swap(&mut y, &mut st.ynew);
                // FSAL: the last stage is f(y_new)
                st.k.swap(0, 6);
                let min = y.iter().copied().fold(f64::INFINITY, f64::min);
                if min < NEGATIVE_ABORT {
                    return Err(Error::Numerical {
                        t,
                        reason: format!("state entry {min:e} below {NEGATIVE_ABORT:e}; tighten tolerances"),
                    });
                }
                if min < 0.0 {
                    stats.steps_with_negatives += 1;
                }
                stats.min_value = stats.min_value.min(min);
                let shrink = (fac11 / err_old.powf(PI_BETA) / SAFETY).clamp(1.0 / MAX_GROWTH, 1.0 / MIN_SHRINK);
                let mut proposed = step / shrink;
                if last_rejected {
                    proposed = proposed.min(step);
                }
                err_old = err.max(1e-4);
                last_rejected = false;
                // a step shortened to hit the grid should not shrink the next one
                h = if clipped { h.max(proposed) } else { proposed };
            } else {
                stats.rejected += 1;
                last_rejected = true;
                h = step / (fac11 / SAFETY).min(1.0 / MIN_SHRINK);
                if h < 1e-14 * horizon.max(1.0) {
                    return Err(Error::Numerical { t, reason: "step size underflow".into() });
                }
            }
        }
        observer(target, &y);
    }
    if stats.steps_with_negatives > 0 {
        debug!("{} steps had small negative entries (min {:e})", stats.steps_with_negatives, stats.min_value);
    }
    Ok(stats)
}

fn at_time(e: Error, t: f64) -> Error {
    match e {
        Error::Numerical { reason, .. } => Error::Numerical { t, reason },
        other => other,
    }
}

fn axpy_stage(out: &mut [f64], y: &[f64], h: f64, terms: &[(f64, &[f64])]) {
    for i in 0..y.len() {
        let mut acc = 0.0;
        for (a, k) in terms {
            acc += a * k[i];
        }
        out[i] = y[i] + h * acc;
    }
}

/// One Dormand–Prince step; returns the scaled error norm. Writes the new state
/// to `st.ynew` and `f(ynew)` to `st.k[6]`.
fn dp_step<S: OdeSystem + ?Sized>(
    sys: &S,
    y: &[f64],
    h: f64,
    config: &SolverConfig,
    st: &mut Stages,
) -> Result<f64> {
    let [k1, k2, k3, k4, k5, k6, k7] = &mut st.k;
    let tmp = &mut st.tmp;
    axpy_stage(tmp, y, h, &[(A21, k1)]);
    sys.rhs(tmp, k2)?;
    axpy_stage(tmp, y, h, &[(A31, k1), (A32, k2)]);
    sys.rhs(tmp, k3)?;
    axpy_stage(tmp, y, h, &[(A41, k1), (A42, k2), (A43, k3)]);
    sys.rhs(tmp, k4)?;
    axpy_stage(tmp, y, h, &[(A51, k1), (A52, k2), (A53, k3), (A54, k4)]);
    sys.rhs(tmp, k5)?;
    axpy_stage(tmp, y, h, &[(A61, k1), (A62, k2), (A63, k3), (A64, k4), (A65, k5)]);
    sys.rhs(tmp, k6)?;
    axpy_stage(&mut st.ynew, y, h, &[(A71, k1), (A73, k3), (A74, k4), (A75, k5), (A76, k6)]);
    sys.rhs(&st.ynew, k7)?;
    let mut acc = 0.0;
    for i in 0..y.len() {
        let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        let r = e / (config.atol + config.rtol * y[i].abs().max(st.ynew[i].abs()));
        acc = f64::max(acc, r.abs());
    }
    Ok(acc)
}

fn initial_step<S: OdeSystem + ?Sized>(
    sys: &S,
    y: &[f64],
    f0: &[f64],
    config: &SolverConfig,
    tmp: &mut [f64],
    f1: &mut [f64],
) -> Result<f64> {
    let n = y.len().max(1) as f64;
    let rms = |v: &dyn Fn(usize) -> f64| {
        let sq: f64 = (0..y.len())
            .map(|i| {
                let r = v(i) / (config.atol + config.rtol * y[i].abs());
                r * r
            })
            .sum();
        (sq / n).sqrt()
    };
    let d0 = rms(&|i| y[i]);
    let d1 = rms(&|i| f0[i]);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    for i in 0..y.len() {
        tmp[i] = y[i] + h0 * f0[i];
    }
    sys.rhs(tmp, f1)?;
    let d2 = rms(&|i| f1[i] - f0[i]) / h0;
    let h1 = if d1.max(d2) <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / d1.max(d2)).powf(0.2) };
    Ok((100.0 * h0).min(h1))
}

/// Integrates and records `project(y)` on the grid as a [`Trajectory`].
pub fn solve_trajectory<S, P>(
    sys: &S,
    y0: &[f64],
    horizon: f64,
    grid_points: usize,
    config: &SolverConfig,
    state_names: Vec<String>,
    project: P,
) -> Result<(Trajectory, IntegrationStats)>
where
    S: OdeSystem + ?Sized,
    P: Fn(&[f64]) -> Vec<f64>,
{
    let mut times = Vec::with_capacity(grid_points);
    let mut values = Vec::with_capacity(grid_points);
    let stats = integrate(sys, y0, horizon, grid_points, config, |t, y| {
        times.push(t);
        values.push(project(y));
    })?;
    Ok((Trajectory::new(state_names, times, values)?, stats))
}
