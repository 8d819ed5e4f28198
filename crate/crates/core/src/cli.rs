//! Command-line front end.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::lumped::BorderEstimate;
use crate::model::ValidatedModel;
use crate::netsim::gillespie::{run_seeds, MonteCarlo};
use crate::netsim::{average_runs, generate_configuration_network};
use crate::ode::SolverConfig;
use crate::solve::{write_iteration_log, write_sweep, AutoConfig, LumpSpec, Solver};
use crate::trajectory::{trajectory_distance, Trajectory};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(name = "amelump", version, about = "Approximate master equations with automatic lumping")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    /// Integrate the full AME.
    Solve {
        model: PathBuf,
        #[command(flatten)]
        #[serde(flatten)]
        ode: OdeArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Integrate the lumped AME for one clustering.
    Lump {
        model: PathBuf,
        #[command(flatten)]
        #[serde(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        #[serde(flatten)]
        ode: OdeArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Refine the clustering until consecutive solutions agree.
    Auto {
        model: PathBuf,
        #[arg(long, default_value_t = 10)]
        c0: u32,
        #[arg(long, default_value_t = 1.3)]
        r: f64,
        #[arg(long, default_value_t = 0.01)]
        eps: f64,
        #[arg(long, default_value_t = 12)]
        max_iterations: usize,
        /// Build clusters without materializing the neighborhood space.
        #[arg(long)]
        approx: bool,
        #[arg(long, value_enum, default_value_t = EstimateArg::FaceMean)]
        estimate: EstimateArg,
        #[command(flatten)]
        #[serde(flatten)]
        ode: OdeArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Error curve for |K| = |P| = c over a range of c.
    Sweep {
        model: PathBuf,
        #[arg(long, default_value_t = 5)]
        start: u32,
        #[arg(long, default_value_t = 20)]
        end: u32,
        #[arg(long)]
        approx: bool,
        /// Reference trajectory CSV; defaults to the full AME when it fits,
        /// else the finest lumping.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[command(flatten)]
        #[serde(flatten)]
        ode: OdeArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte-Carlo mean over Gillespie runs on sampled networks.
    Simulate {
        model: PathBuf,
        #[arg(long = "N", default_value_t = 100_000)]
        #[serde(rename = "N")]
        nodes: usize,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Also write the first run's network as an edge list.
        #[arg(long)]
        save_network: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Maximal Euclidean distance over time between two trajectories.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cluster table and degree-partition cost for one clustering.
    Info {
        model: PathBuf,
        #[command(flatten)]
        #[serde(flatten)]
        grid: GridArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-run the command recorded in a manifest.
    Replay {
        manifest: PathBuf,
        /// Output directory; defaults to the recorded one.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct GridArgs {
    /// Number of degree intervals.
    #[arg(long = "K")]
    #[serde(rename = "K")]
    pub degree_intervals: usize,
    /// Cells per simplex coordinate.
    #[arg(long = "P")]
    #[serde(rename = "P")]
    pub p: u32,
    #[arg(long)]
    pub approx: bool,
    #[arg(long, value_enum, default_value_t = EstimateArg::FaceMean)]
    pub estimate: EstimateArg,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct OdeArgs {
    #[arg(long, default_value_t = 1e-6)]
    pub rtol: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub atol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimateArg {
    Midpoint,
    FaceMean,
}

impl From<EstimateArg> for BorderEstimate {
    fn from(e: EstimateArg) -> Self {
        match e {
            EstimateArg::Midpoint => BorderEstimate::Midpoint,
            EstimateArg::FaceMean => BorderEstimate::FaceMean,
        }
    }
}

impl OdeArgs {
    fn config(&self) -> SolverConfig {
        SolverConfig { rtol: self.rtol, atol: self.atol, ..SolverConfig::default() }
    }
}

/// Everything needed to repeat a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    #[serde(flatten)]
    pub command: Command,
    /// SHA-256 of the model file, when the command reads one.
    pub model_sha256: Option<String>,
    pub seeds: Vec<u64>,
    pub outputs: Vec<PathBuf>,
    pub results: Value,
    pub duration_seconds: f64,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Validation(_) | Error::Parse(_) | Error::Eval(_) | Error::Json(_) => 3,
        Error::Capacity(_) => 4,
        Error::Numerical { .. } | Error::IterationLimit(_) => 5,
        Error::Io(_) => 6,
        _ => 1,
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn load_model(path: &Path) -> Result<(ValidatedModel, String)> {
    let bytes = fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone()).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok((ValidatedModel::from_json(&text)?, sha256_hex(&bytes)))
}

fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let f = fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Trajectory::read_csv(std::io::BufReader::new(f))
}

fn write_with<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<fs::File>) -> Result<()>,
{
    let file = fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    std::io::Write::flush(&mut w)?;
    Ok(())
}

struct Outcome {
    model_sha256: Option<String>,
    seeds: Vec<u64>,
    outputs: Vec<PathBuf>,
    results: Value,
}

fn out_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::Io(format!("{}: {e}", out.display())))
}

/// Executes a command and, when it has an output directory, writes its manifest.
pub fn execute(command: &Command) -> Result<RunManifest> {
    let started = Instant::now();
    let outcome = dispatch(command)?;
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.clone(),
        model_sha256: outcome.model_sha256,
        seeds: outcome.seeds,
        outputs: outcome.outputs,
        results: outcome.results,
        duration_seconds: started.elapsed().as_secs_f64(),
    };
    if let Some(out) = output_dir(command) {
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(out.join(MANIFEST_FILE), text + "\n")?;
    }
    Ok(manifest)
}

fn output_dir(command: &Command) -> Option<&Path> {
    match command {
        Command::Solve { out, .. }
        | Command::Lump { out, .. }
        | Command::Auto { out, .. }
        | Command::Sweep { out, .. }
        | Command::Simulate { out, .. }
        | Command::Info { out, .. } => Some(out),
        Command::Compare { out, .. } => out.as_deref(),
        Command::Replay { .. } => None,
    }
}

fn dispatch(command: &Command) -> Result<Outcome> {
    match command {
        Command::Solve { model, ode, out } => {
            let (m, hash) = load_model(model)?;
            out_dir(out)?;
            let sol = Solver::new(m).with_config(ode.config()).solve_full()?;
            let path = out.join("trajectory.csv");
            write_with(&path, |w| sol.trajectory.write_csv(w))?;
            println!("{} equations, {} steps", sol.num_equations, sol.stats.accepted);
            Ok(Outcome {
                model_sha256: Some(hash),
                seeds: vec![],
                outputs: vec![path],
                results: json!({
                    "equations": sol.num_equations,
                    "steps": sol.stats.accepted,
                    "rejected": sol.stats.rejected,
                    "min_value": sol.stats.min_value,
                }),
            })
        }
        Command::Lump { model, grid, ode, out } => {
            let (m, hash) = load_model(model)?;
            out_dir(out)?;
            let spec = LumpSpec {
                degree_intervals: grid.degree_intervals,
                p: grid.p,
                approximate: grid.approx,
                estimate: grid.estimate.into(),
            };
            let sol = Solver::new(m).with_config(ode.config()).solve_lumped(&spec)?;
            let path = out.join("trajectory.csv");
            write_with(&path, |w| sol.trajectory.write_csv(w))?;
            println!("{} clusters, {} equations", sol.num_clusters, sol.num_equations);
            Ok(Outcome {
                model_sha256: Some(hash),
                seeds: vec![],
                outputs: vec![path],
                results: json!({"clusters": sol.num_clusters, "equations": sol.num_equations}),
            })
        }
        Command::Auto { model, c0, r, eps, max_iterations, approx, estimate, ode, out } => {
            let (m, hash) = load_model(model)?;
            out_dir(out)?;
            let cfg = AutoConfig {
                c0: *c0,
                r: *r,
                eps: *eps,
                max_iterations: *max_iterations,
                approximate: *approx,
                estimate: (*estimate).into(),
            };
            let res = Solver::new(m).with_config(ode.config()).auto_lump(&cfg)?;
            let traj = out.join("trajectory.csv");
            let log = out.join("iterations.csv");
            write_with(&traj, |w| res.solution.trajectory.write_csv(w))?;
            write_with(&log, |w| write_iteration_log(&res.log, w))?;
            let last = res.log.last().expect("at least one iteration");
            println!("{} iterations, final c={} with {} clusters", res.log.len(), last.c, last.clusters);
            Ok(Outcome {
                model_sha256: Some(hash),
                seeds: vec![],
                outputs: vec![traj, log],
                results: json!({
                    "iterations": res.log.len(),
                    "clusters": res.log.iter().map(|r| r.clusters).collect::<Vec<_>>(),
                    "final_epsilon": last.epsilon,
                }),
            })
        }
        Command::Sweep { model, start, end, approx, reference, ode, out } => {
            if start > end || *start < 1 {
                return Err(Error::InvalidArgument(format!("bad sweep range {start}..={end}")));
            }
            let (m, hash) = load_model(model)?;
            out_dir(out)?;
            let mut solver = Solver::new(m).with_config(ode.config());
            let (reference_traj, label) = match reference {
                Some(p) => (read_trajectory(p)?, format!("file {}", p.display())),
                None if solver.materializable() => (solver.solve_full()?.trajectory, "full AME".to_string()),
                None => {
                    let spec = LumpSpec {
                        degree_intervals: *end as usize,
                        p: *end,
                        approximate: *approx,
                        estimate: BorderEstimate::default(),
                    };
                    (solver.solve_lumped(&spec)?.trajectory, format!("finest lumping c={end}"))
                }
            };
            let rows = solver.sweep(*start, *end, *approx, &reference_traj)?;
            let path = out.join("sweep.csv");
            write_with(&path, |w| write_sweep(&rows, &label, w))?;
            let ref_path = out.join("reference.csv");
            write_with(&ref_path, |w| reference_traj.write_csv(w))?;
            println!("reference: {label}");
            for r in &rows {
                println!("c={:3} clusters={:6} epsilon={:.3e}", r.c, r.clusters, r.epsilon);
            }
            Ok(Outcome {
                model_sha256: Some(hash),
                seeds: vec![],
                outputs: vec![path, ref_path],
                results: json!({"reference": label}),
            })
        }
        Command::Simulate { model, nodes, runs, seed, save_network, out } => {
            let (m, hash) = load_model(model)?;
            out_dir(out)?;
            let mc = MonteCarlo::new(*nodes, *runs, *seed);
            let traj = average_runs(&m, &mc)?;
            let path = out.join("trajectory.csv");
            write_with(&path, |w| traj.write_csv(w))?;
            let mut outputs = vec![path];
            let mut seeds = vec![*seed];
            seeds.extend(run_seeds(*seed, *runs));
            if *save_network {
                use rand::{Rng, SeedableRng};
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seeds[1]);
                let net = generate_configuration_network(m.degree(), *nodes, rng.random())?;
                let p = out.join("network.csv");
                write_with(&p, |w| net.write_edge_list(w))?;
                outputs.push(p);
            }
            println!("{runs} runs on N={nodes}");
            Ok(Outcome { model_sha256: Some(hash), seeds, outputs, results: json!({}) })
        }
        Command::Compare { a, b, out } => {
            let eps = trajectory_distance(&read_trajectory(a)?, &read_trajectory(b)?)?;
            println!("{}", crate::trajectory::fmt12(eps));
            if let Some(out) = out {
                out_dir(out)?;
            }
            Ok(Outcome { model_sha256: None, seeds: vec![], outputs: vec![], results: json!({"epsilon": eps}) })
        }
        Command::Info { model, grid, out } => {
            let (m, hash) = load_model(model)?;
            out_dir(out)?;
            let mut solver = Solver::new(m);
            let c = solver.clustering(grid.degree_intervals, grid.p, grid.approx)?;
            let disparity = c.partition().disparity(solver.model().degree());
            let path = out.join("clusters.csv");
            write_with(&path, |w| {
                use std::io::Write;
                writeln!(w, "cluster,interval,k_lo,k_hi,cell,size,mean_degree")?;
                for (i, cl) in c.clusters().iter().enumerate() {
                    let (lo, hi) = c.partition().intervals()[cl.interval];
                    let key: Vec<String> = cl.key.iter().map(u32::to_string).collect();
                    writeln!(w, "{i},{},{lo},{hi},{},{},{}", cl.interval, key.join(";"), cl.size, crate::trajectory::fmt12(cl.mean_degree()))?;
                }
                Ok(())
            })?;
            let summary = out.join("summary.csv");
            write_with(&summary, |w| {
                use std::io::Write;
                writeln!(w, "K,P,clusters,neighborhoods,disparity")?;
                writeln!(w, "{},{},{},{},{}", c.partition().len(), c.p(), c.len(), c.total_size(), crate::trajectory::fmt12(disparity))?;
                Ok(())
            })?;
            println!("clusters={} neighborhoods={} L(K)={disparity:.6e}", c.len(), c.total_size());
            Ok(Outcome {
                model_sha256: Some(hash),
                seeds: vec![],
                outputs: vec![path, summary],
                results: json!({"clusters": c.len(), "disparity": disparity}),
            })
        }
        Command::Replay { manifest, out } => {
            let recorded = RunManifest::load(manifest)?;
            let mut cmd = recorded.command.clone();
            if let Some(dir) = out {
                set_output_dir(&mut cmd, dir.clone());
            }
            if let (Some(path), Some(want)) = (model_path(&cmd), &recorded.model_sha256) {
                let got = sha256_hex(&fs::read(path)?);
                if &got != want {
                    return Err(Error::InvalidArgument(format!("model {} changed since the recorded run", path.display())));
                }
            }
            let m = execute(&cmd)?;
            Ok(Outcome { model_sha256: m.model_sha256, seeds: m.seeds, outputs: m.outputs, results: m.results })
        }
    }
}

fn model_path(command: &Command) -> Option<&Path> {
    match command {
        Command::Solve { model, .. }
        | Command::Lump { model, .. }
        | Command::Auto { model, .. }
        | Command::Sweep { model, .. }
        | Command::Simulate { model, .. }
        | Command::Info { model, .. } => Some(model),
        _ => None,
    }
}

fn set_output_dir(command: &mut Command, dir: PathBuf) {
    match command {
        Command::Solve { out, .. }
        | Command::Lump { out, .. }
        | Command::Auto { out, .. }
        | Command::Sweep { out, .. }
        | Command::Simulate { out, .. }
        | Command::Info { out, .. } => *out = dir,
        Command::Compare { out, .. } => *out = Some(dir),
        Command::Replay { out, .. } => *out = Some(dir),
    }
}

/// Binary entry point.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    match execute(&cli.command) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::Capacity(_)) {
                eprintln!("hint: the neighborhood space is too large to materialize; use `lump --approx`");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
