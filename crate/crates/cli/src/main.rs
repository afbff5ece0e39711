//! `riskdp` command-line driver.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numeric or solver error,
//! 4 oracle-check violations.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "riskdp", version, about = "Risk-averse dynamic programming solvers")]
struct Cli {
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct RiskArgs {
    /// Risk family: cvar, kl, chi2 or tv (overrides the problem file).
    #[arg(long)]
    pub risk: Option<String>,
    /// CVaR level in (0, 1].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Divergence budget of the φ-dual.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Density cap of the φ-dual; `inf` for the untruncated dual.
    #[arg(long = "trunc-l")]
    pub trunc_l: Option<String>,
    /// θ grid: points per axis (`129`) or spacing (`step:0.05`).
    #[arg(long = "theta-grid")]
    pub theta_grid: Option<String>,
    /// Accumulated-cost grid: `lattice:K` or `uniform:h`.
    #[arg(long)]
    pub xgrid: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct FiniteArgs {
    /// Problem file (JSON).
    pub problem: PathBuf,
    #[command(flatten)]
    pub risk: RiskArgs,
    /// Initial state index (overrides the problem file).
    #[arg(long)]
    pub s0: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Optimal risk, θ* and the greedy augmented policy of a finite-horizon MDP.
    Solve {
        #[command(flatten)]
        args: FiniteArgs,
        /// Output JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Risk of a policy previously written by `solve`.
    Evaluate {
        #[command(flatten)]
        args: FiniteArgs,
        /// JSON file with a `policy` field.
        #[arg(long)]
        policy: PathBuf,
        /// Output JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Plug-in error against sample size under a generative model.
    Sweep {
        #[command(flatten)]
        args: FiniteArgs,
        /// Sample sizes: comma list of integers, `2^k`, or `2^a..2^b`.
        #[arg(long = "n-list")]
        n_list: String,
        /// Replicates per sample size.
        #[arg(long, default_value_t = 32)]
        reps: usize,
        /// Base seed of the generative model.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Sweep the risk of this fixed policy instead of the optimal risk.
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Accuracy for the reported proof-calibrated sample size.
        #[arg(long)]
        eps: Option<f64>,
        /// Confidence level for the reported proof-calibrated sample size.
        #[arg(long)]
        delta: Option<f64>,
        /// Record wall-clock seconds (makes the CSV run-dependent).
        #[arg(long)]
        timing: bool,
        /// CSV of (n, rep, error, seconds).
        /// Output JSON.
        #[arg(long)]
        out: PathBuf,
        /// Summary JSON (default: `<out>.summary.json`).
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Cross-check the DP against brute-force enumeration on a small lattice instance.
    OracleCheck {
        #[command(flatten)]
        args: FiniteArgs,
        /// Output JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Optimal risk of a stochastic optimal control problem on grids.
    SocSolve {
        /// Problem file (JSON).
        problem: PathBuf,
        #[command(flatten)]
        risk: RiskArgs,
        /// Output JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Discounted infinite-horizon risk via truncation, with fixed-point residuals.
    HorizonSolve {
        /// Problem file (JSON).
        problem: PathBuf,
        #[command(flatten)]
        risk: RiskArgs,
        /// Discount factor (overrides the problem file).
        #[arg(long)]
        gamma: Option<f64>,
        /// Truncation tolerance.
        #[arg(long = "eps-trunc", default_value_t = 1e-3)]
        eps_trunc: f64,
        /// Initial state index (overrides the problem file).
        #[arg(long)]
        s0: Option<usize>,
        /// Output JSON.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numeric(String),
    Violations(usize),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Violations(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numeric(m) => write!(f, "solver error: {m}"),
            CliError::Violations(n) => write!(f, "{n} oracle check(s) failed"),
        }
    }
}

impl From<riskdp::Error> for CliError {
    fn from(e: riskdp::Error) -> Self {
        match e {
            riskdp::Error::Numeric { .. } | riskdp::Error::Dynamics { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RISKDP_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("configuration error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("configuration error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Solve { args, out } => commands::solve(&args, &out),
        Command::Evaluate { args, policy, out } => commands::evaluate(&args, &policy, &out),
        Command::Sweep {
            args,
            n_list,
            reps,
            seed,
            policy,
            eps,
            delta,
            timing,
            out,
            summary,
        } => commands::sweep(&commands::SweepRequest {
            args: &args,
            n_list: &n_list,
            reps,
            seed,
            policy: policy.as_deref(),
            accuracy: eps.zip(delta),
            timing,
            out: &out,
            summary: summary.as_deref(),
        }),
        Command::OracleCheck { args, out } => commands::oracle_check(&args, &out),
        Command::SocSolve { problem, risk, out } => commands::soc_solve(&problem, &risk, &out),
        Command::HorizonSolve {
            problem,
            risk,
            gamma,
            eps_trunc,
            s0,
            out,
        } => commands::horizon_solve(&problem, &risk, gamma, eps_trunc, s0, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}
