//! `cis`: validate, solve, enumerate and simulate decentralized control
//! problems described in JSON.

mod commands;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "cis", version, about = "Exact common-information solver for decentralized control problems")]
struct Cli {
    /// Worker threads; 0 lets the runtime decide.
    #[arg(long, global = true, env = "CIS_THREADS", default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a problem file and report every violation.
    Validate(ValidateArgs),
    /// Compute the optimal value and policy.
    Solve(SolveArgs),
    /// Brute-force both strategy spaces and compare their minima.
    Enumerate(EnumerateArgs),
    /// Monte-Carlo rollouts of a solved policy.
    Simulate(SimulateArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Variant {
    Full,
    Reduced,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Executor {
    /// Follow the policy tree, auditing every message.
    Coordinator,
    /// Run the controllers on the extracted control strategy.
    Basic,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    pub input: PathBuf,
    #[arg(long, short, env = "CIS_OUTPUT")]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    pub input: PathBuf,
    #[arg(long, short, env = "CIS_OUTPUT")]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, env = "CIS_VARIANT", default_value_t = Variant::Full)]
    pub variant: Variant,
    /// Accuracy of discounted solves.
    #[arg(long, env = "CIS_EPSILON", default_value_t = 1e-4, value_parser = positive)]
    pub epsilon: f64,
    #[arg(long, env = "CIS_CAP_PRESCRIPTIONS", default_value_t = 10_000_000)]
    pub cap_prescriptions: u128,
    /// Largest number of belief nodes.
    #[arg(long, env = "CIS_CAP_NODES", default_value_t = 5_000_000)]
    pub cap_nodes: usize,
}

#[derive(Args, Debug)]
pub struct EnumerateArgs {
    pub input: PathBuf,
    #[arg(long, short, env = "CIS_OUTPUT")]
    pub output: Option<PathBuf>,
    #[arg(long, env = "CIS_CAP_BRANCHES", default_value_t = 100_000_000)]
    pub cap_branches: u128,
    #[arg(long, env = "CIS_CAP_STRATEGIES", default_value_t = 10_000_000)]
    pub cap_strategies: u128,
    #[arg(long, env = "CIS_CAP_PRESCRIPTIONS", default_value_t = 10_000_000)]
    pub cap_prescriptions: u128,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    pub input: PathBuf,
    /// Policy file written by `cis solve`.
    #[arg(long, env = "CIS_POLICY")]
    pub policy: PathBuf,
    #[arg(long, short, env = "CIS_OUTPUT")]
    pub output: Option<PathBuf>,
    #[arg(long, env = "CIS_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "CIS_EPISODES", default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(1..))]
    pub episodes: u64,
    #[arg(long, value_enum, env = "CIS_EXECUTOR", default_value_t = Executor::Coordinator)]
    pub executor: Executor,
    /// Write every trajectory here, one JSON object per line.
    #[arg(long, env = "CIS_TRAJECTORIES")]
    pub trajectories: Option<PathBuf>,
}

fn positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be positive, got {v}"))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let result = match &cli.command {
        Command::Validate(args) => commands::validate(args),
        Command::Solve(args) => commands::solve(args),
        Command::Enumerate(args) => commands::enumerate(args),
        Command::Simulate(args) => commands::simulate(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.code)
        }
    }
}
