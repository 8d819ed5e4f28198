//! Sampled global-fraction time series, their distance, and CSV I/O.

use std::io::{BufRead, Write};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    states: Vec<String>,
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
    sd: Option<Vec<Vec<f64>>>,
}

impl Trajectory {
    pub fn new(states: Vec<String>, times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::InvalidArgument(format!(
                "{} times but {} value rows",
                times.len(),
                values.len()
            )));
        }
        if values.iter().any(|row| row.len() != states.len()) {
            return Err(Error::InvalidArgument("value row width differs from state count".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("times must be strictly increasing".into()));
        }
        Ok(Self { states, times, values, sd: None })
    }

    pub fn with_sd(mut self, sd: Vec<Vec<f64>>) -> Result<Self> {
        if sd.len() != self.times.len() || sd.iter().any(|r| r.len() != self.states.len()) {
            return Err(Error::InvalidArgument("sd table shape differs from values".into()));
        }
        self.sd = Some(sd);
        Ok(self)
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn sd(&self) -> Option<&[Vec<f64>]> {
        self.sd.as_deref()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Values of one state over time.
    pub fn series(&self, state: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[state]).collect()
    }

    pub fn last(&self) -> Option<&[f64]> {
        self.values.last().map(Vec::as_slice)
    }

    /// Largest `|Σ_s x_s(t) − 1|` over the grid.
    pub fn max_mass_error(&self) -> f64 {
        self.values.iter().map(|r| (r.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max)
    }

    /// Largest per-state absolute difference over the grid.
    pub fn max_abs_deviation(&self, other: &Trajectory) -> Result<f64> {
        self.check_comparable(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max))
    }

    fn check_comparable(&self, other: &Trajectory) -> Result<()> {
        if self.states != other.states {
            return Err(Error::GridMismatch(format!("states {:?} vs {:?}", self.states, other.states)));
        }
        if self.times.len() != other.times.len() {
            return Err(Error::GridMismatch(format!("{} vs {} grid points", self.times.len(), other.times.len())));
        }
        for (a, b) in self.times.iter().zip(&other.times) {
            if (a - b).abs() > 1e-9 * a.abs().max(b.abs()).max(1.0) {
                return Err(Error::GridMismatch(format!("time {a} vs {b}")));
            }
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut header = vec!["t".to_string()];
        header.extend(self.states.iter().cloned());
        if self.sd.is_some() {
            header.extend(self.states.iter().map(|s| format!("sd_{s}")));
        }
        writeln!(out, "{}", header.join(","))?;
        for (i, t) in self.times.iter().enumerate() {
            let mut row = vec![fmt12(*t)];
            row.extend(self.values[i].iter().map(|v| fmt12(*v)));
            if let Some(sd) = &self.sd {
                row.extend(sd[i].iter().map(|v| fmt12(*v)));
            }
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| Error::InvalidArgument("empty trajectory csv".into()))??;
        let cols: Vec<&str> = header.trim().split(',').collect();
        if cols.first() != Some(&"t") {
            return Err(Error::InvalidArgument("trajectory csv must start with a `t` column".into()));
        }
        let names: Vec<String> = cols[1..].iter().map(|s| s.to_string()).collect();
        let n_sd = names.iter().filter(|n| n.starts_with("sd_")).count();
        let states: Vec<String> = names[..names.len() - n_sd].to_vec();
        let has_sd = n_sd > 0;
        if has_sd && n_sd != states.len() {
            return Err(Error::InvalidArgument("sd columns do not match state columns".into()));
        }
        let (mut times, mut values, mut sds) = (Vec::new(), Vec::new(), Vec::new());
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let nums = line
                .trim()
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::InvalidArgument(format!("line {}: {e}", lineno + 2)))?;
            if nums.len() != cols.len() {
                return Err(Error::InvalidArgument(format!("line {}: expected {} fields", lineno + 2, cols.len())));
            }
            times.push(nums[0]);
            values.push(nums[1..1 + states.len()].to_vec());
            if has_sd {
                sds.push(nums[1 + states.len()..].to_vec());
            }
        }
        let traj = Trajectory::new(states, times, values)?;
        if has_sd {
            traj.with_sd(sds)
        } else {
            Ok(traj)
        }
    }
}

/// 12 significant digits in scientific notation.
pub fn fmt12(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    format!("{v:.11e}")
}

/// Maximum over the shared grid of the Euclidean distance between the
/// per-state global fractions.
pub fn trajectory_distance(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    a.check_comparable(b)?;
    Ok(a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt())
        .fold(0.0, f64::max))
}

/// Pointwise mean and sample standard deviation over trajectories sharing a grid.
pub fn mean_and_sd(runs: &[Trajectory]) -> Result<Trajectory> {
    let first = runs.first().ok_or_else(|| Error::InvalidArgument("no runs to average".into()))?;
    for r in &runs[1..] {
        first.check_comparable(r)?;
    }
    let n = runs.len() as f64;
    let s = first.states.len();
    let mut mean = vec![vec![0.0; s]; first.len()];
    let mut sd = vec![vec![0.0; s]; first.len()];
    for i in 0..first.len() {
        for j in 0..s {
            let m = runs.iter().map(|r| r.values[i][j]).sum::<f64>() / n;
            let var = if runs.len() > 1 {
                runs.iter().map(|r| (r.values[i][j] - m).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            mean[i][j] = m;
            sd[i][j] = var.sqrt();
        }
    }
    Trajectory::new(first.states.clone(), first.times.clone(), mean)?.with_sd(sd)
}
