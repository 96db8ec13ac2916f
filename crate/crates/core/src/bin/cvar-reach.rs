use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cvar_reach::config::ModelConfig;
use cvar_reach::oracle::verification_suite;
use cvar_reach::pipeline::{self, RunStatus, SimulateRequest, SolveRequest, Stopping, DEFAULT_ALPHAS, DEFAULT_R_LEVELS};
use cvar_reach::risk::s_grid;
use cvar_reach::sim::Horizon;
use cvar_reach::Error;

#[derive(Parser)]
#[command(name = "cvar-reach", version, about = "CVaR safe sets by value iteration on an augmented grid")]
struct Cli {
    /// Worker threads for per-s solves and rollouts (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct RunDir {
    /// Run directory. Defaults to `$CVAR_REACH_OUT/run`, else `./runs/run`.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunDir {
    fn path(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| default_root().join("run"))
    }
}

fn default_root() -> PathBuf {
    std::env::var_os("CVAR_REACH_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

#[derive(Subcommand)]
enum Command {
    /// Compute (or resume) the value grids v^s for every s on the grid.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Run directory. Defaults to `$CVAR_REACH_OUT/<config stem>`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// `lo:hi:n`; defaults to 21 values over [0, cost bound].
        #[arg(long)]
        s_grid: Option<String>,
        /// Sup-norm step tolerance; defaults to 1e-6 times the cost bound.
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long, default_value_t = 1000)]
        max_iter: usize,
        /// Stop all s together on the checkpoint criterion with this stride instead of per-s tolerance.
        #[arg(long)]
        gamma_stride: Option<usize>,
        #[arg(long, default_value_t = 0.005)]
        gamma_threshold: f64,
        /// Risk levels the checkpoint criterion watches.
        #[arg(long, value_delimiter = ',')]
        alpha: Vec<f64>,
        /// Nonnegative constant added to every stage cost.
        #[arg(long, default_value_t = 0.0)]
        shift: f64,
    },
    /// Write V*_alpha, s*, contour tables and safe-set masks.
    Safesets {
        #[command(flatten)]
        run: RunDir,
        #[arg(long, value_delimiter = ',')]
        alpha: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        r: Vec<f64>,
    },
    /// Write the precommitment selector for one initial state.
    Policy {
        #[command(flatten)]
        run: RunDir,
        #[arg(long)]
        alpha: f64,
        #[arg(long, value_delimiter = ',', required = true)]
        x0: Vec<f64>,
    },
    /// Monte Carlo CVaR of the precommitment policy against the solver value.
    Simulate {
        #[command(flatten)]
        run: RunDir,
        #[arg(long)]
        alpha: f64,
        #[arg(long, value_delimiter = ',', required = true)]
        x0: Vec<f64>,
        #[arg(long, default_value_t = 20_000)]
        n: usize,
        /// Fixed truncation horizon; adaptive doubling when omitted.
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Dump this many trajectories as CSV.
        #[arg(long, default_value_t = 0)]
        trajectories: usize,
    },
    /// Run the finite-MDP verification suite.
    Oracle {
        #[arg(long, default_value_t = 17)]
        seed: u64,
    },
    /// Dump (x, z, v, u) tables for stored grids.
    Export {
        #[command(flatten)]
        run: RunDir,
        /// Restrict to these s values.
        #[arg(long, value_delimiter = ',')]
        s: Vec<f64>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Validation { .. } | Error::Domain(_) => 3,
        Error::MissingArtifacts(_) | Error::HashMismatch { .. } | Error::Format { .. } => 4,
        _ => 1,
    }
}

fn parse_s_grid(spec: &str) -> Result<Vec<f64>, Error> {
    let bad = || Error::Validation {
        path: "s_grid".into(),
        message: format!("expected lo:hi:n, got `{spec}`"),
    };
    let parts: Vec<&str> = spec.split(':').collect();
    let [lo, hi, n] = parts.as_slice() else {
        return Err(bad());
    };
    let lo: f64 = lo.parse().map_err(|_| bad())?;
    let hi: f64 = hi.parse().map_err(|_| bad())?;
    let n: usize = n.parse().map_err(|_| bad())?;
    if n == 0 || !(lo <= hi) {
        return Err(bad());
    }
    Ok(s_grid(lo, hi, n))
}

fn or_default(v: Vec<f64>, default: &[f64]) -> Vec<f64> {
    if v.is_empty() {
        default.to_vec()
    } else {
        v
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), Error> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn solve(
    config: &Path,
    out: Option<PathBuf>,
    s_spec: Option<String>,
    tol: Option<f64>,
    max_iter: usize,
    gamma_stride: Option<usize>,
    gamma_threshold: f64,
    alpha: Vec<f64>,
    shift: f64,
) -> Result<u8, Error> {
    let text = std::fs::read_to_string(config)?;
    let bound = ModelConfig::parse(&text)?.cost_bound + shift;
    let s_values = match s_spec {
        Some(spec) => parse_s_grid(&spec)?,
        None => s_grid(0.0, bound, 21),
    };
    let stopping = match gamma_stride {
        Some(stride) => Stopping::Gamma {
            alphas: or_default(alpha, &DEFAULT_ALPHAS),
            stride,
            threshold: gamma_threshold,
            max_iter,
        },
        None => Stopping::Tolerance {
            tol: tol.unwrap_or(1e-6 * bound),
            max_iter,
        },
    };
    let dir = out.unwrap_or_else(|| {
        let stem = config.file_stem().map(|s| s.to_owned()).unwrap_or_else(|| "run".into());
        default_root().join(stem)
    });
    let outcome = pipeline::solve(
        &dir,
        &SolveRequest {
            config_text: text,
            s_values,
            stopping,
            shift,
        },
    )?;
    println!("run directory: {}", dir.display());
    println!("model: {}", outcome.manifest.model_hash);
    println!("grids computed: {} of {}", outcome.computed, outcome.manifest.grids.len());
    if let Some(g) = &outcome.manifest.gamma {
        match g.stopped_at {
            Some(n) => println!("checkpoint criterion met at N = {n}"),
            None => println!("checkpoint criterion not met within {max_iter} sweeps"),
        }
    }
    Ok(match outcome.status {
        RunStatus::Complete => 0,
        RunStatus::Partial => {
            let un = outcome.manifest.unconverged();
            if !un.is_empty() {
                eprintln!("unconverged s values: {un:?}");
            }
            2
        }
    })
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.cmd {
        Command::Solve {
            config,
            out,
            s_grid,
            tol,
            max_iter,
            gamma_stride,
            gamma_threshold,
            alpha,
            shift,
        } => solve(&config, out, s_grid, tol, max_iter, gamma_stride, gamma_threshold, alpha, shift),
        Command::Safesets { run, alpha, r } => {
            let metas = pipeline::safesets(
                &run.path(),
                &or_default(alpha, &DEFAULT_ALPHAS),
                &or_default(r, &DEFAULT_R_LEVELS),
            )?;
            for m in &metas {
                println!("alpha {} (quantization bound {:.4})", m.alpha, m.quantization_bound);
                for s in &m.safe_sets {
                    println!("  r {:<4} {:>6} nodes  {}", s.r, s.count, s.file);
                }
            }
            Ok(0)
        }
        Command::Policy { run, alpha, x0 } => {
            print_json(&pipeline::policy(&run.path(), alpha, &x0)?)?;
            Ok(0)
        }
        Command::Simulate {
            run,
            alpha,
            x0,
            n,
            horizon,
            seed,
            trajectories,
        } => {
            let report = pipeline::simulate(
                &run.path(),
                &SimulateRequest {
                    alpha,
                    x0,
                    n,
                    horizon: horizon.map_or_else(Horizon::adaptive, Horizon::Fixed),
                    seed,
                    trajectories,
                },
            )?;
            print_json(&report)?;
            Ok(0)
        }
        Command::Oracle { seed } => {
            let outcomes = verification_suite(seed)?;
            for o in &outcomes {
                println!("{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
            }
            Ok(if outcomes.iter().all(|o| o.passed) { 0 } else { 1 })
        }
        Command::Export { run, s } => {
            for p in pipeline::export(&run.path(), &s)? {
                println!("{}", p.display());
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
