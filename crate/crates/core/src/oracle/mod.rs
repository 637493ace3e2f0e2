//! Brute-force ground truth.
//!
//! Everything here works from the primitive random variables: initial state,
//! observation draws and state transitions. Nothing goes through the
//! coordinator's belief update, so agreement with `dp` is a real check.

mod pomdp;
mod posterior;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ControlStrategy, Mode, ProblemSpec, StrategyEntry};

pub use pomdp::{discounted_alpha_value, textbook_pomdp_value, AlphaReport};
pub use posterior::{trajectory_posterior, Posterior};

pub const DEFAULT_BRANCH_CAP: u128 = 100_000_000;
pub const DEFAULT_STRATEGY_CAP: u128 = 10_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OracleConfig {
    /// Trajectory branches per cost evaluation, and total prescription
    /// evaluations in the coordinator search.
    pub branch_cap: u128,
    /// Basic-model strategies.
    pub strategy_cap: u128,
    /// Prescriptions at a single common-information node.
    pub prescription_cap: u128,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            branch_cap: DEFAULT_BRANCH_CAP,
            strategy_cap: DEFAULT_STRATEGY_CAP,
            prescription_cap: crate::coordinator::DEFAULT_PRESCRIPTION_CAP,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchKind {
    Basic,
    Coordinator,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnumerationReport {
    pub kind: SearchKind,
    /// Strategies examined (basic) or prescription evaluations (coordinator).
    pub count: u64,
    /// Basic: decision points of the first optimal strategy found.
    /// Coordinator: common-information nodes visited.
    pub points: u64,
    /// Coordinator nodes with a single prescription; not counted as evaluations.
    pub forced_nodes: u64,
    pub min_cost: f64,
    pub argmin: ControlStrategy,
    #[serde(skip)]
    pub elapsed: Duration,
}

fn require_finite(spec: &ProblemSpec) -> Result<()> {
    spec.ensure_valid()?;
    if spec.mode != Mode::Finite {
        return Err(Error::Unsupported("the enumeration oracle handles finite-horizon problems only".into()));
    }
    Ok(())
}

type JointObservations = Vec<(Vec<usize>, f64)>;

/// Joint observations with positive probability in state `x`.
fn joint_observations(spec: &ProblemSpec, t: usize, x: usize) -> JointObservations {
    let mut out = vec![(Vec::with_capacity(spec.n), 1.0)];
    for i in 0..spec.n {
        let row = spec.obs_row(i, t, x);
        let mut next = Vec::with_capacity(out.len() * row.len());
        for (ys, p) in &out {
            for (y, &q) in row.iter().enumerate() {
                if q > 0.0 {
                    let mut ys = ys.clone();
                    ys.push(y);
                    next.push((ys, p * q));
                }
            }
        }
        out = next;
    }
    out
}

fn support(row: &[f64]) -> u128 {
    row.iter().filter(|&&p| p > 0.0).count() as u128
}

/// Upper bound on the number of trajectory branches a cost evaluation visits.
pub fn branch_bound(spec: &ProblemSpec) -> u128 {
    let states = spec.num_states();
    let mut bound = support(&spec.initial_dist);
    for t in 0..spec.horizon {
        for i in 0..spec.n {
            let widest = (0..states).map(|x| support(spec.obs_row(i, t, x))).max().unwrap_or(0);
            bound = bound.saturating_mul(widest);
        }
        if t + 1 < spec.horizon {
            let widest = (0..states)
                .flat_map(|x| (0..spec.joint_action_card(t)).map(move |u| (x, u)))
                .map(|(x, u)| support(spec.transition_row(t, x, u)))
                .max()
                .unwrap_or(0);
            bound = bound.saturating_mul(widest);
        }
    }
    bound
}

fn check_branches(spec: &ProblemSpec, cap: u128) -> Result<()> {
    let bound = branch_bound(spec);
    if bound > cap {
        return Err(Error::Infeasible { what: "trajectory branches".into(), count: bound, cap });
    }
    Ok(())
}

/// Cost walker with the observation tables unrolled and scratch space for
/// memories, so a strategy evaluation does not allocate.
struct Walk<'a> {
    spec: &'a ProblemSpec,
    /// `obs[t][x]`: positive-probability joint observations.
    obs: Vec<Vec<JointObservations>>,
    history: Vec<usize>,
    /// Local memories of step `t` at `mem[t * n..(t + 1) * n]`.
    mem: Vec<usize>,
}

impl<'a> Walk<'a> {
    fn new(spec: &'a ProblemSpec) -> Self {
        let obs = (0..spec.horizon)
            .map(|t| (0..spec.num_states()).map(|x| joint_observations(spec, t, x)).collect())
            .collect();
        Self { spec, obs, history: Vec::with_capacity(spec.horizon), mem: vec![0; (spec.horizon + 1) * spec.n] }
    }

    fn cost(&mut self, g: &ControlStrategy) -> Result<f64> {
        let spec = self.spec;
        self.history.clear();
        self.mem[..spec.n].fill(0);
        let mut total = 0.0;
        for (x, &p) in spec.initial_dist.iter().enumerate() {
            if p > 0.0 {
                total += p * self.cost_to_go(g, 0, x)?;
            }
        }
        Ok(total)
    }

    /// Expected cost from step `t` on, before the step's observations.
    fn cost_to_go(&mut self, g: &ControlStrategy, t: usize, x: usize) -> Result<f64> {
        let spec = self.spec;
        let n = spec.n;
        let entry = g.lookup(t, &self.history).ok_or_else(|| {
            Error::InvalidParameter(format!("strategy has no entry at step {t} for history {:?}", self.history))
        })?;
        let mut total = 0.0;
        for k in 0..self.obs[t][x].len() {
            let py = self.obs[t][x][k].1;
            let (mut u, mut z) = (0, 0);
            for i in 0..n {
                let y = self.obs[t][x][k].0[i];
                let m = self.mem[t * n + i];
                let ui = *entry.tables[i].get(y * spec.memory_card(i, t) + m).ok_or_else(|| {
                    Error::InvalidParameter(format!("strategy table of controller {i} at step {t} is too short"))
                })?;
                let card = spec.action_card(i, t);
                if ui >= card {
                    return Err(Error::InvalidParameter(format!("action {ui} out of range for controller {i}")));
                }
                u = u * card + ui;
                z = z * spec.message_card(i, t) + spec.message(i, t, m, y, ui);
                self.mem[(t + 1) * n + i] = spec.next_memory(i, t, m, y, ui);
            }
            let mut v = spec.cost_of(t, x, u);
            if t + 1 < spec.horizon {
                self.history.push(z);
                for (x2, &p) in spec.transition_row(t, x, u).iter().enumerate() {
                    if p > 0.0 {
                        v += p * self.cost_to_go(g, t + 1, x2)?;
                    }
                }
                self.history.pop();
            }
            total += py * v;
        }
        Ok(total)
    }
}

fn cost_unchecked(spec: &ProblemSpec, g: &ControlStrategy) -> Result<f64> {
    Walk::new(spec).cost(g)
}

/// Expected total cost of a basic-model strategy, summed over every
/// realization of the primitive random variables.
pub fn exact_cost_of_strategy(spec: &ProblemSpec, g: &ControlStrategy) -> Result<f64> {
    exact_cost_with(spec, g, DEFAULT_BRANCH_CAP)
}

pub fn exact_cost_with(spec: &ProblemSpec, g: &ControlStrategy, branch_cap: u128) -> Result<f64> {
    require_finite(spec)?;
    check_branches(spec, branch_cap)?;
    cost_unchecked(spec, g)
}

/// Pre-observation particles at one step: (history, x, local memories).
type Particles = BTreeMap<(Vec<usize>, usize, Vec<usize>), f64>;

fn initial_particles(spec: &ProblemSpec) -> Particles {
    spec.initial_dist
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(x, &p)| ((Vec::new(), x, vec![0; spec.n]), p))
        .collect()
}

/// Pushes particles through step `t` under the entries already in `g`.
fn advance(spec: &ProblemSpec, g: &ControlStrategy, t: usize, particles: &Particles) -> Particles {
    let mut next = Particles::new();
    for ((history, x, ms), &w) in particles {
        let entry = g.lookup(t, history).expect("entry for a realizable node");
        for (ys, py) in joint_observations(spec, t, *x) {
            let mut us = Vec::with_capacity(spec.n);
            let (mut z, mut next_ms) = (0, Vec::with_capacity(spec.n));
            for i in 0..spec.n {
                let u = entry.tables[i][ys[i] * spec.memory_card(i, t) + ms[i]];
                us.push(u);
                z = z * spec.message_card(i, t) + spec.message(i, t, ms[i], ys[i], u);
                next_ms.push(spec.next_memory(i, t, ms[i], ys[i], u));
            }
            let u = spec.flatten_actions(t, &us);
            let mut h = history.clone();
            h.push(z);
            for (x2, &p) in spec.transition_row(t, *x, u).iter().enumerate() {
                if p > 0.0 {
                    *next.entry((h.clone(), x2, next_ms.clone())).or_insert(0.0) += w * py * p;
                }
            }
        }
    }
    next
}

/// Decision points of one step: per node history, the (controller, row)
/// pairs reached with positive probability, plus blank entries to fill.
struct Layer {
    entries: Vec<StrategyEntry>,
    /// (entry index, controller, row)
    points: Vec<(usize, usize, usize)>,
    radices: Vec<usize>,
}

impl Layer {
    fn new(spec: &ProblemSpec, t: usize, particles: &Particles) -> Self {
        let mut reached: BTreeMap<&Vec<usize>, BTreeSet<(usize, usize)>> = BTreeMap::new();
        for (history, x, ms) in particles.keys() {
            let set = reached.entry(history).or_default();
            for i in 0..spec.n {
                for (y, &q) in spec.obs_row(i, t, *x).iter().enumerate() {
                    if q > 0.0 {
                        set.insert((i, y * spec.memory_card(i, t) + ms[i]));
                    }
                }
            }
        }
        let mut entries = Vec::new();
        let mut points = Vec::new();
        let mut radices = Vec::new();
        for (node, (history, set)) in reached.into_iter().enumerate() {
            entries.push(StrategyEntry {
                t,
                history: history.clone(),
                node,
                tables: (0..spec.n).map(|i| vec![0; spec.obs_card(i, t) * spec.memory_card(i, t)]).collect(),
            });
            for (i, row) in set {
                points.push((node, i, row));
                radices.push(spec.action_card(i, t));
            }
        }
        Self { entries, points, radices }
    }

    fn count(&self) -> u128 {
        self.radices.iter().fold(1u128, |a, &r| a.saturating_mul(r as u128))
    }

    /// Writes assignment `k` (first point most significant) into `entries`.
    fn assign(&self, mut k: u128, entries: &mut [StrategyEntry]) {
        for (p, &(node, i, row)) in self.points.iter().enumerate().rev() {
            let r = self.radices[p] as u128;
            entries[node].tables[i][row] = (k % r) as usize;
            k /= r;
        }
    }
}

struct Best {
    cost: f64,
    strategy: Option<ControlStrategy>,
    points: u64,
    count: u128,
}

impl Best {
    fn empty() -> Self {
        Self { cost: f64::INFINITY, strategy: None, points: 0, count: 0 }
    }

    fn merge(mut self, other: Best) -> Best {
        self.count += other.count;
        if other.cost < self.cost {
            self.cost = other.cost;
            self.strategy = other.strategy;
            self.points = other.points;
        }
        self
    }
}

struct Basic<'a> {
    spec: &'a ProblemSpec,
    cap: u128,
}

impl Basic<'_> {
    /// Number of complete strategies extending the prefix in `g`.
    fn count(&self, g: &mut ControlStrategy, t: usize, particles: &Particles, so_far: &mut u128) -> Result<u128> {
        let layer = Layer::new(self.spec, t, particles);
        let n = layer.count();
        if t + 1 == self.spec.horizon {
            *so_far = so_far.saturating_add(n);
            self.check(*so_far)?;
            return Ok(n);
        }
        let mut total = 0u128;
        g.stages[t] = layer.entries.clone();
        for k in 0..n {
            layer.assign(k, &mut g.stages[t]);
            let next = advance(self.spec, g, t, particles);
            total = total.saturating_add(self.count(g, t + 1, &next, so_far)?);
        }
        Ok(total)
    }

    fn check(&self, count: u128) -> Result<()> {
        if count > self.cap {
            return Err(Error::Infeasible { what: "basic-model strategies".into(), count, cap: self.cap });
        }
        Ok(())
    }

    fn search(
        &self,
        walk: &mut Walk<'_>,
        g: &mut ControlStrategy,
        t: usize,
        particles: &Particles,
        points: u64,
    ) -> Result<Best> {
        let layer = Layer::new(self.spec, t, particles);
        let points = points + layer.points.len() as u64;
        let mut best = Best::empty();
        g.stages[t] = layer.entries.clone();
        for k in 0..layer.count() {
            layer.assign(k, &mut g.stages[t]);
            let found = if t + 1 == self.spec.horizon {
                let cost = walk.cost(g)?;
                Best { cost, strategy: None, points, count: 1 }
            } else {
                let next = advance(self.spec, g, t, particles);
                self.search(walk, g, t + 1, &next, points)?
            };
            let improved = found.cost < best.cost;
            best = best.merge(found);
            if improved && best.strategy.is_none() {
                best.strategy = Some(g.clone());
            }
        }
        Ok(best)
    }
}

/// Minimum over every basic-model strategy, enumerated over the decision
/// points `(controller, step, local observation, local memory, node)`
/// that are reached with positive probability.
pub fn enumerate_basic_strategies(spec: &ProblemSpec, config: &OracleConfig) -> Result<EnumerationReport> {
    require_finite(spec)?;
    check_branches(spec, config.branch_cap)?;
    let began = Instant::now();
    let basic = Basic { spec, cap: config.strategy_cap };
    let root = initial_particles(spec);
    let mut g = ControlStrategy::new(spec.horizon);
    let mut so_far = 0;
    basic.count(&mut g, 0, &root, &mut so_far)?;

    // Split the first step's assignments across threads; merge in index order.
    let layer = Layer::new(spec, 0, &root);
    let results: Vec<Result<Best>> = (0..layer.count())
        .into_par_iter()
        .map(|k| {
            let mut g = ControlStrategy::new(spec.horizon);
            let mut entries = layer.entries.clone();
            layer.assign(k, &mut entries);
            g.stages[0] = entries;
            let points = layer.points.len() as u64;
            if spec.horizon == 1 {
                let cost = cost_unchecked(spec, &g)?;
                return Ok(Best { cost, strategy: Some(g), points, count: 1 });
            }
            let next = advance(spec, &g, 0, &root);
            basic.search(&mut Walk::new(spec), &mut g, 1, &next, points)
        })
        .collect();
    let mut best = Best::empty();
    for r in results {
        best = best.merge(r?);
    }
    let argmin = best.strategy.unwrap_or_default();
    Ok(EnumerationReport {
        kind: SearchKind::Basic,
        count: best.count as u64,
        points: best.points,
        forced_nodes: 0,
        min_cost: best.cost,
        argmin,
        elapsed: began.elapsed(),
    })
}

/// Post-observation particles at a coordinator node: (x, ys, ms).
type NodeMass = BTreeMap<(usize, Vec<usize>, Vec<usize>), f64>;

struct NodeResult {
    value: f64,
    entries: Vec<StrategyEntry>,
    evaluations: u64,
    forced: u64,
    nodes: u64,
}

struct Coord<'a> {
    spec: &'a ProblemSpec,
    config: &'a OracleConfig,
    spent: AtomicU64,
}

impl Coord<'_> {
    fn observe(&self, t: usize, pre: &BTreeMap<(usize, Vec<usize>), f64>) -> NodeMass {
        let mut post = NodeMass::new();
        for ((x, ms), &w) in pre {
            for (ys, py) in joint_observations(self.spec, t, *x) {
                *post.entry((*x, ys, ms.clone())).or_insert(0.0) += w * py;
            }
        }
        post
    }

    /// Prescription count at step `t` and the row count of each controller.
    fn space(&self, t: usize) -> Result<(u128, Vec<usize>)> {
        let spec = self.spec;
        let rows: Vec<usize> = (0..spec.n).map(|i| spec.obs_card(i, t) * spec.memory_card(i, t)).collect();
        let mut size = 1u128;
        for i in 0..spec.n {
            for _ in 0..rows[i] {
                size = size.saturating_mul(spec.action_card(i, t) as u128);
            }
        }
        if size > self.config.prescription_cap {
            return Err(Error::Infeasible {
                what: format!("prescriptions at step {t}"),
                count: size,
                cap: self.config.prescription_cap,
            });
        }
        Ok((size, rows))
    }

    fn decode(&self, t: usize, rows: &[usize], mut k: u128) -> Vec<Vec<usize>> {
        let mut tables: Vec<Vec<usize>> = rows.iter().map(|&r| vec![0; r]).collect();
        for i in (0..self.spec.n).rev() {
            let r = self.spec.action_card(i, t) as u128;
            for row in (0..rows[i]).rev() {
                tables[i][row] = (k % r) as usize;
                k /= r;
            }
        }
        tables
    }

    /// Unnormalized optimal cost-to-go of a node, as a minimum over its
    /// prescriptions of immediate cost plus the children's values.
    fn node(&self, t: usize, history: &[usize], mass: &NodeMass) -> Result<NodeResult> {
        let (size, rows) = self.space(t)?;
        if size > 1 {
            let spent = self.spent.fetch_add(size as u64, Ordering::Relaxed) as u128 + size;
            if spent > self.config.branch_cap {
                return Err(Error::Infeasible {
                    what: "prescription evaluations".into(),
                    count: spent,
                    cap: self.config.branch_cap,
                });
            }
        }
        let mut out = NodeResult {
            value: f64::INFINITY,
            entries: Vec::new(),
            evaluations: if size > 1 { size as u64 } else { 0 },
            forced: if size > 1 { 0 } else { 1 },
            nodes: 1,
        };
        for k in 0..size {
            let tables = self.decode(t, &rows, k);
            let r = self.evaluate(t, history, mass, &tables)?;
            out.evaluations += r.evaluations;
            out.forced += r.forced;
            out.nodes += r.nodes;
            if r.value < out.value {
                out.value = r.value;
                let mut entries = vec![StrategyEntry { t, history: history.to_vec(), node: 0, tables }];
                entries.extend(r.entries);
                out.entries = entries;
            }
        }
        Ok(out)
    }

    /// Cost of one prescription at a node; counts come from the subtrees.
    fn evaluate(&self, t: usize, history: &[usize], mass: &NodeMass, tables: &[Vec<usize>]) -> Result<NodeResult> {
        let spec = self.spec;
        let mut value = 0.0;
        let mut children: BTreeMap<usize, BTreeMap<(usize, Vec<usize>), f64>> = BTreeMap::new();
        for ((x, ys, ms), &w) in mass {
            let mut us = Vec::with_capacity(spec.n);
            let (mut z, mut next_ms) = (0, Vec::with_capacity(spec.n));
            for i in 0..spec.n {
                let u = tables[i][ys[i] * spec.memory_card(i, t) + ms[i]];
                us.push(u);
                z = z * spec.message_card(i, t) + spec.message(i, t, ms[i], ys[i], u);
                next_ms.push(spec.next_memory(i, t, ms[i], ys[i], u));
            }
            let u = spec.flatten_actions(t, &us);
            value += w * spec.cost_of(t, *x, u);
            if t + 1 < spec.horizon {
                let child = children.entry(z).or_default();
                for (x2, &p) in spec.transition_row(t, *x, u).iter().enumerate() {
                    if p > 0.0 {
                        *child.entry((x2, next_ms.clone())).or_insert(0.0) += w * p;
                    }
                }
            }
        }
        let mut out = NodeResult { value, entries: Vec::new(), evaluations: 0, forced: 0, nodes: 0 };
        let mut h = history.to_vec();
        for (z, pre) in children {
            h.push(z);
            let r = self.node(t + 1, &h, &self.observe(t + 1, &pre))?;
            h.pop();
            out.value += r.value;
            out.entries.extend(r.entries);
            out.evaluations += r.evaluations;
            out.forced += r.forced;
            out.nodes += r.nodes;
        }
        Ok(out)
    }
}

/// Minimum over coordination strategies, by choosing the best prescription
/// at every common-information node reachable under some prescription
/// sequence. Evaluations sum the prescription counts of nodes with more than
/// one prescription.
pub fn enumerate_coordinator_strategies(spec: &ProblemSpec, config: &OracleConfig) -> Result<EnumerationReport> {
    require_finite(spec)?;
    let began = Instant::now();
    let search = Coord { spec, config, spent: AtomicU64::new(0) };
    let pre: BTreeMap<(usize, Vec<usize>), f64> = spec
        .initial_dist
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(x, &p)| ((x, vec![0; spec.n]), p))
        .collect();
    let root = search.observe(0, &pre);
    let (size, rows) = search.space(0)?;

    // Root prescriptions in parallel, folded in index order.
    let results: Vec<Result<(Vec<Vec<usize>>, NodeResult)>> = (0..size)
        .into_par_iter()
        .map(|k| {
            let tables = search.decode(0, &rows, k);
            let r = search.evaluate(0, &[], &root, &tables)?;
            Ok((tables, r))
        })
        .collect();
    let mut best = NodeResult {
        value: f64::INFINITY,
        entries: Vec::new(),
        evaluations: if size > 1 { size as u64 } else { 0 },
        forced: if size > 1 { 0 } else { 1 },
        nodes: 1,
    };
    for r in results {
        let (tables, r) = r?;
        best.evaluations += r.evaluations;
        best.forced += r.forced;
        best.nodes += r.nodes;
        if r.value < best.value {
            best.value = r.value;
            let mut entries = vec![StrategyEntry { t: 0, history: Vec::new(), node: 0, tables }];
            entries.extend(r.entries);
            best.entries = entries;
        }
    }
    let mut argmin = ControlStrategy::new(spec.horizon);
    for e in best.entries {
        argmin.push(e);
    }
    argmin.finish();
    for stage in &mut argmin.stages {
        for (node, e) in stage.iter_mut().enumerate() {
            e.node = node;
        }
    }
    Ok(EnumerationReport {
        kind: SearchKind::Coordinator,
        count: best.evaluations,
        points: best.nodes,
        forced_nodes: best.forced,
        min_cost: best.value,
        argmin,
        elapsed: began.elapsed(),
    })
}

#[cfg(test)]
mod tests;
