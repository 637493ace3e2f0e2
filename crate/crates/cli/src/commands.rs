use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use cis_core::dp::{
    extract_control_strategy, solve_discounted, solve_finite_with, PolicyTree, Representation, SolverConfig,
    StationaryPolicy, ValueReport,
};
use cis_core::model::{load_problem, Mode, ProblemSpec};
use cis_core::oracle::{enumerate_basic_strategies, enumerate_coordinator_strategies, EnumerationReport, OracleConfig};
use cis_core::sim::{rollout, rollout_trajectories, write_jsonl, Policy, SimReport};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::exit::{self, Failure};
use crate::{EnumerateArgs, Executor, SimulateArgs, SolveArgs, ValidateArgs, Variant};

pub const POLICY_FORMAT: &str = "cis-policy/1";
/// Largest gap between the two enumeration minima still counted as agreement.
pub const AGREEMENT_TOLERANCE: f64 = 1e-9;

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PolicyBody {
    Tree(PolicyTree),
    Stationary(StationaryPolicy),
}

#[derive(Serialize, Deserialize)]
pub struct PolicyFile {
    pub format: String,
    pub problem_sha256: String,
    pub report: ValueReport,
    pub policy: PolicyBody,
}

#[derive(Serialize)]
struct EnumerationFile {
    problem_sha256: String,
    agree: bool,
    difference: f64,
    basic: EnumerationReport,
    coordinator: EnumerationReport,
}

#[derive(Serialize)]
struct SimulationFile {
    problem_sha256: String,
    executor: &'static str,
    report: SimReport,
}

/// Hash of the parsed problem, so formatting changes in the file do not matter.
pub fn problem_hash(spec: &ProblemSpec) -> String {
    let bytes = serde_json::to_vec(spec).expect("problem serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// `v` with 12 significant digits.
pub fn significant(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let decimals = 11 - v.abs().log10().floor() as i32;
    if (0..=20).contains(&decimals) {
        format!("{:.*}", decimals as usize, v)
    } else {
        format!("{v:.11e}")
    }
}

fn write_json<T: Serialize>(output: &Option<PathBuf>, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::new(exit::INVALID, e.to_string()))?;
    text.push('\n');
    match output {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| Failure::new(exit::PARSE, format!("cannot write {}: {e}", path.display()))),
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::new(exit::PARSE, format!("cannot write to standard output: {e}"))),
    }
}

/// Summary lines go to standard output unless the JSON document does.
fn summary(output: &Option<PathBuf>, line: &str) {
    if output.is_some() {
        println!("{line}");
    } else {
        eprintln!("{line}");
    }
}

fn load_valid(path: &Path) -> Result<ProblemSpec, Failure> {
    let spec = load_problem(path)?;
    let report = spec.validate();
    if !report.is_valid() {
        return Err(Failure::new(exit::INVALID, format!("{} failed validation:\n{report}", path.display())));
    }
    Ok(spec)
}

pub fn validate(args: &ValidateArgs) -> Result<u8, Failure> {
    let spec = load_problem(&args.input)?;
    let report = spec.validate();
    write_json(&args.output, &report)?;
    if report.is_valid() {
        log::info!("{} is valid", args.input.display());
        Ok(exit::OK)
    } else {
        eprintln!("{} failed validation:\n{report}", args.input.display());
        Ok(exit::INVALID)
    }
}

pub fn solve(args: &SolveArgs) -> Result<u8, Failure> {
    let spec = load_valid(&args.input)?;
    let repr = match args.variant {
        Variant::Full => Representation::Full,
        Variant::Reduced => Representation::Reduced,
    };
    let config = SolverConfig { prescription_cap: args.cap_prescriptions, node_cap: args.cap_nodes };
    let (report, policy) = match spec.mode {
        Mode::Finite => {
            let (report, tree) = solve_finite_with(&spec, repr, &config)?;
            (report, PolicyBody::Tree(tree))
        }
        Mode::Discounted => {
            let (report, policy) = solve_discounted(&spec, args.epsilon, repr, &config)?;
            (report, PolicyBody::Stationary(policy))
        }
    };
    log::info!("solved in {:?}; nodes per step {:?}", report.elapsed, report.stage_nodes);
    let value = report.optimal_value;
    let file = PolicyFile { format: POLICY_FORMAT.into(), problem_sha256: problem_hash(&spec), report, policy };
    write_json(&args.output, &file)?;
    summary(&args.output, &format!("J* = {}", significant(value)));
    Ok(exit::OK)
}

pub fn enumerate(args: &EnumerateArgs) -> Result<u8, Failure> {
    let spec = load_valid(&args.input)?;
    let config = OracleConfig {
        branch_cap: args.cap_branches,
        strategy_cap: args.cap_strategies,
        prescription_cap: args.cap_prescriptions,
    };
    let basic = enumerate_basic_strategies(&spec, &config)?;
    let coordinator = enumerate_coordinator_strategies(&spec, &config)?;
    log::info!("basic search {:?}, coordinator search {:?}", basic.elapsed, coordinator.elapsed);
    let difference = (basic.min_cost - coordinator.min_cost).abs();
    let agree = difference <= AGREEMENT_TOLERANCE;
    summary(
        &args.output,
        &format!(
            "basic: {} strategies, min = {}; coordinator: {} prescription evaluations, min = {}",
            basic.count,
            significant(basic.min_cost),
            coordinator.count,
            significant(coordinator.min_cost)
        ),
    );
    let file = EnumerationFile { problem_sha256: problem_hash(&spec), agree, difference, basic, coordinator };
    write_json(&args.output, &file)?;
    if agree {
        Ok(exit::OK)
    } else {
        Err(Failure::new(exit::DISAGREEMENT, format!("the two searches disagree by {difference:e}")))
    }
}

fn read_policy(path: &Path) -> Result<PolicyFile, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::new(exit::PARSE, format!("cannot read {}: {e}", path.display())))?;
    let file: PolicyFile = serde_json::from_str(&text).map_err(|e| {
        Failure::new(exit::PARSE, format!("{}: line {}, column {}: {e}", path.display(), e.line(), e.column()))
    })?;
    if file.format != POLICY_FORMAT {
        return Err(Failure::new(exit::INVALID, format!("unknown policy format '{}'", file.format)));
    }
    Ok(file)
}

pub fn simulate(args: &SimulateArgs) -> Result<u8, Failure> {
    let spec = load_valid(&args.input)?;
    let file = read_policy(&args.policy)?;
    let hash = problem_hash(&spec);
    if file.problem_sha256 != hash {
        return Err(Failure::new(
            exit::INVALID,
            format!(
                "policy {} was solved for a different problem (sha256 {} but {} hashes to {})",
                args.policy.display(),
                file.problem_sha256,
                args.input.display(),
                hash
            ),
        ));
    }
    let strategy;
    let policy = match (&file.policy, args.executor) {
        (PolicyBody::Tree(tree), Executor::Coordinator) => Policy::Tree(tree),
        (PolicyBody::Tree(tree), Executor::Basic) => {
            strategy = extract_control_strategy(tree);
            Policy::Strategy(&strategy)
        }
        (PolicyBody::Stationary(p), Executor::Coordinator) => Policy::Stationary(p),
        (PolicyBody::Stationary(_), Executor::Basic) => {
            return Err(Failure::new(exit::INVALID, "the basic executor needs a finite-horizon policy tree"));
        }
    };
    let report = match &args.trajectories {
        Some(path) => {
            let (report, runs) = rollout_trajectories(&spec, policy, args.seed, args.episodes)?;
            let out = File::create(path)
                .map_err(|e| Failure::new(exit::PARSE, format!("cannot write {}: {e}", path.display())))?;
            write_jsonl(BufWriter::new(out), &runs)
                .map_err(|e| Failure::new(exit::PARSE, format!("cannot write {}: {e}", path.display())))?;
            report
        }
        None => rollout(&spec, policy, args.seed, args.episodes)?,
    };
    let executor = match args.executor {
        Executor::Coordinator => "coordinator",
        Executor::Basic => "basic",
    };
    summary(
        &args.output,
        &format!(
            "mean = {} +/- {} over {} episodes (J* = {})",
            significant(report.mean),
            significant(report.stderr),
            report.episodes,
            significant(file.report.optimal_value)
        ),
    );
    let violations = report.audit_violations;
    write_json(&args.output, &SimulationFile { problem_sha256: hash, executor, report })?;
    if violations > 0 {
        return Err(Failure::new(
            exit::AUDIT,
            format!("{violations} episodes observed a message the policy gave zero probability"),
        ));
    }
    Ok(exit::OK)
}
