//! Seeded Monte-Carlo simulation of the basic model.
//!
//! Per step: observe, act, send to the shared memory, update local memory,
//! then move the state. Every random draw is read from a ChaCha8 stream
//! chosen by the episode, at a word offset fixed by the step and the kind of
//! draw, so two executions of the same episode see the same primitive
//! randomness no matter how episodes are scheduled.

use std::io::{self, Write};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dp::{PolicyNode, PolicyTree, StationaryEntry, StationaryPolicy};
use crate::error::{Error, Result};
use crate::model::{ControlStrategy, Mode, ProblemSpec};

/// Words reserved per draw; one `f64` needs two.
const WORDS_PER_DRAW: u128 = 16;

#[derive(Clone, Copy, Debug)]
pub enum Policy<'a> {
    Strategy(&'a ControlStrategy),
    Tree(&'a PolicyTree),
    Stationary(&'a StationaryPolicy),
}

impl Policy<'_> {
    /// Steps per episode: the horizon, or the lookahead depth of a stationary policy.
    pub fn steps(&self, spec: &ProblemSpec) -> usize {
        match self {
            Policy::Stationary(p) => p.depth,
            _ => spec.horizon,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub t: usize,
    pub x: usize,
    pub y: Vec<usize>,
    pub m: Vec<usize>,
    pub u: Vec<usize>,
    /// Joint message.
    pub z: usize,
    pub cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub episode: u64,
    pub steps: Vec<Step>,
    /// Sum of `beta^t` times the stage costs.
    pub total: f64,
    /// Set when a message the policy gave zero probability was observed.
    pub audit_failure: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub episodes: u64,
    pub seed: u64,
    pub steps: usize,
    pub mean: f64,
    pub stderr: f64,
    /// Episodes whose realized message had zero probability under the policy's belief.
    pub audit_violations: u64,
}

/// Counter-addressed uniforms for one episode.
pub struct Draws {
    rng: ChaCha8Rng,
    n: usize,
}

impl Draws {
    pub fn new(seed: u64, episode: u64, n: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(episode);
        Self { rng, n }
    }

    /// Kind 0 is the initial state, 1 the transition out of step `t`,
    /// `2 + i` the observation of controller `i`.
    pub fn uniform(&mut self, t: usize, kind: usize) -> f64 {
        let slot = (t * (self.n + 2) + kind) as u128;
        self.rng.set_word_pos(slot * WORDS_PER_DRAW);
        self.rng.gen::<f64>()
    }

    pub fn initial(&mut self) -> f64 {
        self.uniform(0, 0)
    }

    pub fn transition(&mut self, t: usize) -> f64 {
        self.uniform(t, 1)
    }

    pub fn observation(&mut self, t: usize, i: usize) -> f64 {
        self.uniform(t, 2 + i)
    }
}

/// Inverse-CDF sample; rounding past the total lands on the last positive entry.
pub fn sample(row: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (k, &p) in row.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = k;
            if u < acc {
                return k;
            }
        }
    }
    last
}

enum Cursor<'a> {
    Strategy(&'a ControlStrategy, Vec<usize>),
    Tree(&'a PolicyTree, &'a PolicyNode),
    Stationary(&'a StationaryPolicy, &'a StationaryEntry),
}

impl<'a> Cursor<'a> {
    fn new(policy: Policy<'a>) -> Self {
        match policy {
            Policy::Strategy(g) => Cursor::Strategy(g, Vec::new()),
            Policy::Tree(tree) => Cursor::Tree(tree, tree.root()),
            Policy::Stationary(p) => Cursor::Stationary(p, &p.entries[0]),
        }
    }

    fn action(&self, episode: u64, t: usize, i: usize, row: usize) -> Result<usize> {
        let missing = || Error::UnreachableInformation { episode, t };
        match self {
            Cursor::Strategy(g, history) => g.action(i, t, history, row).ok_or_else(missing),
            Cursor::Tree(_, node) => node.prescription.tables[i].get(row).copied().ok_or_else(missing),
            Cursor::Stationary(_, entry) => {
                entry.prescription.as_ref().and_then(|g| g.tables[i].get(row).copied()).ok_or_else(missing)
            }
        }
    }

    /// Moves along message `z`; false when the policy gave it no probability.
    fn advance(&mut self, z: usize) -> bool {
        match self {
            Cursor::Strategy(_, history) => {
                history.push(z);
                true
            }
            Cursor::Tree(tree, node) => match tree.child(node, z) {
                Some(next) => {
                    let p = node.children.iter().find(|c| c.message == z).map_or(0.0, |c| c.probability);
                    *node = next;
                    p > 0.0
                }
                None => false,
            },
            Cursor::Stationary(policy, entry) => match policy.child(entry, z) {
                Some(next) => {
                    *entry = next;
                    true
                }
                None => false,
            },
        }
    }
}

fn check_policy(spec: &ProblemSpec, policy: Policy<'_>) -> Result<()> {
    spec.ensure_valid()?;
    match policy {
        Policy::Tree(tree) if tree.start != 0 || tree.horizon != spec.horizon || spec.mode != Mode::Finite => {
            Err(Error::InvalidParameter("policy tree does not cover this problem from the start".into()))
        }
        Policy::Stationary(_) if spec.mode != Mode::Discounted => {
            Err(Error::InvalidParameter("a stationary policy needs a discounted problem".into()))
        }
        Policy::Strategy(_) if spec.mode != Mode::Finite => {
            Err(Error::InvalidParameter("a control strategy needs a finite-horizon problem".into()))
        }
        _ => Ok(()),
    }
}

/// Runs a single episode.
pub fn run_episode(spec: &ProblemSpec, policy: Policy<'_>, seed: u64, episode: u64) -> Result<Trajectory> {
    match run_partial(spec, policy, seed, episode) {
        (trajectory, None) => Ok(trajectory),
        (_, Some(err)) => Err(err),
    }
}

/// Runs an episode up to its end or the first error, keeping the steps taken.
fn run_partial(spec: &ProblemSpec, policy: Policy<'_>, seed: u64, episode: u64) -> (Trajectory, Option<Error>) {
    let n = spec.n;
    let beta = spec.discount_factor();
    let horizon = policy.steps(spec);
    let mut draws = Draws::new(seed, episode, n);
    let mut cursor = Cursor::new(policy);
    let mut x = sample(&spec.initial_dist, draws.initial());
    let mut ms = vec![0; n];
    let mut steps = Vec::with_capacity(horizon);
    let mut total = 0.0;
    let mut weight = 1.0;
    let mut audit_failure = None;
    for t in 0..horizon {
        let ys: Vec<usize> = (0..n).map(|i| sample(spec.obs_row(i, t, x), draws.observation(t, i))).collect();
        let mut us = Vec::with_capacity(n);
        let mut next_ms = Vec::with_capacity(n);
        let mut z = 0;
        for i in 0..n {
            let row = ys[i] * spec.memory_card(i, t) + ms[i];
            let u = match cursor.action(episode, t, i, row) {
                Ok(u) if u < spec.action_card(i, t) => u,
                Ok(u) => {
                    let err =
                        Error::InvalidParameter(format!("action {u} out of range for controller {i} at step {t}"));
                    return (Trajectory { episode, steps, total, audit_failure }, Some(err));
                }
                Err(err) => return (Trajectory { episode, steps, total, audit_failure }, Some(err)),
            };
            z = z * spec.message_card(i, t) + spec.message(i, t, ms[i], ys[i], u);
            next_ms.push(spec.next_memory(i, t, ms[i], ys[i], u));
            us.push(u);
        }
        let joint = spec.flatten_actions(t, &us);
        let cost = spec.cost_of(t, x, joint);
        total += weight * cost;
        weight *= beta;
        steps.push(Step { t, x, y: ys, m: ms, u: us, z, cost });
        if t + 1 == horizon {
            break;
        }
        x = sample(spec.transition_row(t, x, joint), draws.transition(t));
        ms = next_ms;
        if !cursor.advance(z) {
            audit_failure = Some(t);
            break;
        }
    }
    (Trajectory { episode, steps, total, audit_failure }, None)
}

/// Neumaier-compensated sum, in iteration order.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for v in values {
        let s = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - s) + v;
        } else {
            carry += (v - s) + sum;
        }
        sum = s;
    }
    sum + carry
}

fn summarize(totals: &[f64], violations: u64, seed: u64, steps: usize) -> SimReport {
    let n = totals.len() as f64;
    let mean = compensated_sum(totals.iter().copied()) / n;
    let stderr = if totals.len() > 1 {
        let ss = compensated_sum(totals.iter().map(|c| (c - mean) * (c - mean)));
        (ss / (n - 1.0)).sqrt() / n.sqrt()
    } else {
        0.0
    };
    SimReport { episodes: totals.len() as u64, seed, steps, mean, stderr, audit_violations: violations }
}

/// Simulates `episodes` episodes and returns the summary with every trajectory.
pub fn rollout_trajectories(
    spec: &ProblemSpec,
    policy: Policy<'_>,
    seed: u64,
    episodes: u64,
) -> Result<(SimReport, Vec<Trajectory>)> {
    check_policy(spec, policy)?;
    if episodes == 0 {
        return Err(Error::InvalidParameter("episodes must be at least 1".into()));
    }
    let runs: Vec<Trajectory> =
        (0..episodes).into_par_iter().map(|e| run_episode(spec, policy, seed, e)).collect::<Result<_>>()?;
    let totals: Vec<f64> = runs.iter().map(|r| r.total).collect();
    let violations = runs.iter().filter(|r| r.audit_failure.is_some()).count() as u64;
    Ok((summarize(&totals, violations, seed, policy.steps(spec)), runs))
}

/// Simulates `episodes` episodes keeping only their costs.
pub fn rollout(spec: &ProblemSpec, policy: Policy<'_>, seed: u64, episodes: u64) -> Result<SimReport> {
    check_policy(spec, policy)?;
    if episodes == 0 {
        return Err(Error::InvalidParameter("episodes must be at least 1".into()));
    }
    let runs: Vec<(f64, bool)> = (0..episodes)
        .into_par_iter()
        .map(|e| run_episode(spec, policy, seed, e).map(|r| (r.total, r.audit_failure.is_some())))
        .collect::<Result<_>>()?;
    let totals: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let violations = runs.iter().filter(|r| r.1).count() as u64;
    Ok(summarize(&totals, violations, seed, policy.steps(spec)))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Divergence {
    pub episode: u64,
    pub t: usize,
    /// First differing field: "x", "y", "m", "u", "z", "cost", "length" or "missing".
    pub field: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedReport {
    pub episodes: u64,
    pub seed: u64,
    pub identical: bool,
    pub divergent_episodes: u64,
    /// Earliest divergence of the lowest-numbered divergent episode.
    pub first: Option<Divergence>,
}

fn compare(a: &Trajectory, b: &Trajectory) -> Option<Divergence> {
    let at = |t: usize, field: &str| Some(Divergence { episode: a.episode, t, field: field.into() });
    for (sa, sb) in a.steps.iter().zip(&b.steps) {
        let t = sa.t;
        if sa.x != sb.x {
            return at(t, "x");
        }
        if sa.y != sb.y {
            return at(t, "y");
        }
        if sa.m != sb.m {
            return at(t, "m");
        }
        if sa.u != sb.u {
            return at(t, "u");
        }
        if sa.z != sb.z {
            return at(t, "z");
        }
        if sa.cost.to_bits() != sb.cost.to_bits() {
            return at(t, "cost");
        }
    }
    if a.steps.len() != b.steps.len() {
        return at(a.steps.len().min(b.steps.len()), "length");
    }
    None
}

/// Runs the coordinator execution of `tree` and the basic-model execution
/// of `g` on the same primitive randomness and compares the trajectories.
pub fn paired_rollout(
    spec: &ProblemSpec,
    tree: &PolicyTree,
    g: &ControlStrategy,
    seed: u64,
    episodes: u64,
) -> Result<PairedReport> {
    check_policy(spec, Policy::Tree(tree))?;
    check_policy(spec, Policy::Strategy(g))?;
    let found: Vec<Option<Divergence>> = (0..episodes)
        .into_par_iter()
        .map(|e| {
            let a = run_episode(spec, Policy::Tree(tree), seed, e)?;
            match run_partial(spec, Policy::Strategy(g), seed, e) {
                (b, None) => Ok(compare(&a, &b)),
                (b, Some(Error::UnreachableInformation { episode, t })) => {
                    // a difference before the gap is the earlier divergence
                    let before = Trajectory { steps: a.steps[..b.steps.len()].to_vec(), ..a.clone() };
                    Ok(compare(&before, &b).or(Some(Divergence { episode, t, field: "missing".into() })))
                }
                (_, Some(err)) => Err(err),
            }
        })
        .collect::<Result<_>>()?;
    let divergent = found.iter().filter(|d| d.is_some()).count() as u64;
    Ok(PairedReport {
        episodes,
        seed,
        identical: divergent == 0,
        divergent_episodes: divergent,
        first: found.into_iter().flatten().next(),
    })
}

/// One JSON object per line.
pub fn write_jsonl<W: Write>(mut out: W, trajectories: &[Trajectory]) -> io::Result<()> {
    for t in trajectories {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
