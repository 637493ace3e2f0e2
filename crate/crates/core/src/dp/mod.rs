//! Exact dynamic programming for the coordinator.
//!
//! The finite-horizon solver grows the tree of reachable beliefs forward,
//! one step at a time, merging beliefs with equal canonical keys, and then
//! runs the backward recursion over it. Only the part of the tree reached
//! under the chosen prescriptions is returned.

mod discounted;

use std::collections::HashMap;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use discounted::{solve_discounted, truncation_depth, StationaryEntry, StationaryPolicy};

use crate::coordinator::{
    canonical_key, Belief, BeliefKey, Coordinator, JointPrescription, PrescriptionSpace, ReducedBelief,
    DEFAULT_PRESCRIPTION_CAP, ZERO_PROBABILITY,
};
use crate::error::{Error, Result};
use crate::model::{ControlStrategy, Mode, ProblemSpec, StrategyEntry};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    /// Beliefs over `(x, y, m)`.
    Full,
    /// Beliefs over `(x, m)`.
    Reduced,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SolverConfig {
    pub prescription_cap: u128,
    /// Largest number of belief nodes the forward pass may create.
    pub node_cap: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { prescription_cap: DEFAULT_PRESCRIPTION_CAP, node_cap: 5_000_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Child {
    pub message: usize,
    pub probability: f64,
    pub node: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyNode {
    pub id: usize,
    pub t: usize,
    pub belief: Vec<f64>,
    pub prescription: JointPrescription,
    pub immediate_cost: f64,
    pub value: f64,
    pub children: Vec<Child>,
}

/// The solved coordination strategy on the reachable common-information
/// nodes. `stages[k]` holds the nodes of step `start + k`, root first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyTree {
    pub representation: Representation,
    pub start: usize,
    pub horizon: usize,
    pub stages: Vec<Vec<PolicyNode>>,
}

impl PolicyTree {
    pub fn root(&self) -> &PolicyNode {
        &self.stages[0][0]
    }

    pub fn node(&self, t: usize, id: usize) -> &PolicyNode {
        &self.stages[t - self.start][id]
    }

    pub fn node_count(&self) -> usize {
        self.stages.iter().map(Vec::len).sum()
    }

    /// Child reached from `node` when message `z` is observed.
    pub fn child(&self, node: &PolicyNode, z: usize) -> Option<&PolicyNode> {
        node.children.binary_search_by_key(&z, |c| c.message).ok().map(|k| self.node(node.t + 1, node.children[k].node))
    }

    /// Full belief of a node, lifting reduced beliefs.
    pub fn full_belief(&self, coord: &Coordinator<'_>, node: &PolicyNode) -> Belief {
        match self.representation {
            Representation::Full => Belief { t: node.t, weights: node.belief.clone() },
            Representation::Reduced => coord.zeta(&ReducedBelief { t: node.t, weights: node.belief.clone() }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueReport {
    pub optimal_value: f64,
    pub representation: Representation,
    /// Belief nodes explored per step.
    pub stage_nodes: Vec<usize>,
    /// Nodes kept in the returned policy per step.
    pub policy_nodes: Vec<usize>,
    pub prescription_space_sizes: Vec<usize>,
    /// Prescriptions evaluated at nodes with a real choice.
    pub evaluations: u64,
    /// Nodes whose prescription space is a single point.
    pub forced_nodes: u64,
    #[serde(skip)]
    pub elapsed: Duration,
}

struct Edge {
    cost: f64,
    /// `(z, probability, child id)` sorted by `z`.
    outcomes: Vec<(usize, f64, u32)>,
}

struct Explored {
    weights: Vec<f64>,
    /// One edge per prescription; empty at the last step.
    edges: Vec<Edge>,
    /// Best `(cost, prescription)` at the last step.
    terminal: Option<(f64, usize)>,
}

/// A node's edges with child ids pointing into `successors`, where equal
/// successor beliefs have been merged.
struct Expansion {
    edges: Vec<Edge>,
    successors: Vec<(BeliefKey, Vec<f64>)>,
}

const CHUNK: usize = 64;

/// Relative gap below which two candidate values count as tied. Sums over
/// different message partitions round differently, so exact ties would
/// otherwise depend on summation order.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// True when `v` beats the incumbent `best` by more than the tie tolerance.
pub fn improves(v: f64, best: f64) -> bool {
    if best.is_infinite() {
        return v < best;
    }
    v < best - TIE_TOLERANCE * best.abs().max(1.0)
}

fn lift(coord: &Coordinator<'_>, repr: Representation, t: usize, weights: &[f64]) -> Belief {
    match repr {
        Representation::Full => Belief { t, weights: weights.to_vec() },
        Representation::Reduced => coord.zeta(&ReducedBelief { t, weights: weights.to_vec() }),
    }
}

fn expand_node(
    coord: &Coordinator<'_>,
    repr: Representation,
    t: usize,
    weights: &[f64],
    space: &PrescriptionSpace,
) -> Expansion {
    let full = lift(coord, repr, t, weights);
    let mut local: HashMap<BeliefKey, u32> = HashMap::new();
    let mut successors = Vec::new();
    let mut edges = Vec::with_capacity(space.size());
    for g in 0..space.size() {
        let branching = coord.branch(&full, &space.decode(g), true);
        let mut outcomes = Vec::with_capacity(branching.outcomes.len());
        for o in branching.outcomes {
            if o.probability <= ZERO_PROBABILITY {
                continue;
            }
            let next = match repr {
                Representation::Full => coord.zeta(&o.next).weights,
                Representation::Reduced => o.next.weights,
            };
            let key = belief_key(coord.spec, t + 1, &next);
            let id = match local.get(&key) {
                Some(&id) => id,
                None => {
                    local.insert(key.clone(), successors.len() as u32);
                    successors.push((key, next));
                    (successors.len() - 1) as u32
                }
            };
            outcomes.push((o.z, o.probability, id));
        }
        edges.push(Edge { cost: branching.cost, outcomes });
    }
    Expansion { edges, successors }
}

/// Cheapest prescription when no step follows.
fn best_terminal(
    coord: &Coordinator<'_>,
    repr: Representation,
    t: usize,
    weights: &[f64],
    space: &PrescriptionSpace,
) -> (f64, usize) {
    let full = lift(coord, repr, t, weights);
    let mut best = (f64::INFINITY, 0);
    for g in 0..space.size() {
        let c = coord.expected_cost(&full, &space.decode(g));
        if improves(c, best.0) {
            best = (c, g);
        }
    }
    best
}

/// Merges a node's successors into the next step's index and rewrites its
/// child ids to the shared numbering.
fn link(expansion: Expansion, index: &mut HashMap<BeliefKey, u32>, beliefs: &mut Vec<Vec<f64>>) -> Vec<Edge> {
    let remap: Vec<u32> = expansion
        .successors
        .into_iter()
        .map(|(key, weights)| {
            *index.entry(key).or_insert_with(|| {
                beliefs.push(weights);
                (beliefs.len() - 1) as u32
            })
        })
        .collect();
    let mut edges = expansion.edges;
    for edge in &mut edges {
        for o in &mut edge.outcomes {
            o.2 = remap[o.2 as usize];
        }
    }
    edges
}

/// Key under which beliefs of step `t` are merged.
fn belief_key(spec: &ProblemSpec, t: usize, weights: &[f64]) -> BeliefKey {
    let t = if spec.mode == Mode::Discounted { 0 } else { t };
    canonical_key(t, weights)
}

pub fn solve_finite(spec: &ProblemSpec, config: &SolverConfig) -> Result<(ValueReport, PolicyTree)> {
    solve_finite_with(spec, Representation::Full, config)
}

pub fn solve_finite_reduced(spec: &ProblemSpec, config: &SolverConfig) -> Result<(ValueReport, PolicyTree)> {
    solve_finite_with(spec, Representation::Reduced, config)
}

pub fn solve_finite_with(
    spec: &ProblemSpec,
    repr: Representation,
    config: &SolverConfig,
) -> Result<(ValueReport, PolicyTree)> {
    let coord = Coordinator::new(spec)?;
    let root = coord.initial_belief();
    let weights = match repr {
        Representation::Full => root.weights,
        Representation::Reduced => coord.chi(&root).weights,
    };
    solve_tree(&coord, 0, weights, repr, config)
}

/// Solves the remaining steps from an arbitrary belief at step `root.t`.
pub fn solve_finite_from(
    spec: &ProblemSpec,
    root: &Belief,
    repr: Representation,
    config: &SolverConfig,
) -> Result<(ValueReport, PolicyTree)> {
    let coord = Coordinator::new(spec)?;
    let weights = match repr {
        Representation::Full => root.weights.clone(),
        Representation::Reduced => coord.chi(root).weights,
    };
    solve_tree(&coord, root.t, weights, repr, config)
}

fn solve_tree(
    coord: &Coordinator<'_>,
    start: usize,
    root: Vec<f64>,
    repr: Representation,
    config: &SolverConfig,
) -> Result<(ValueReport, PolicyTree)> {
    let spec = coord.spec;
    if spec.mode != Mode::Finite {
        return Err(Error::InvalidParameter("the finite-horizon solver needs a finite-mode problem".into()));
    }
    if start >= spec.horizon {
        return Err(Error::InvalidParameter(format!("root step {start} is past the horizon {}", spec.horizon)));
    }
    let began = Instant::now();
    let spaces: Vec<PrescriptionSpace> =
        (start..spec.horizon).map(|t| coord.prescription_space(t, config.prescription_cap)).collect::<Result<_>>()?;

    // Forward: grow the reachable belief tree.
    let mut tree: Vec<Vec<Explored>> = Vec::with_capacity(spaces.len());
    let mut current = vec![root];
    let mut total_nodes = 1usize;
    for (k, space) in spaces.iter().enumerate() {
        let t = start + k;
        let predict = t + 1 < spec.horizon;
        let mut next_index: HashMap<BeliefKey, u32> = HashMap::new();
        let mut next_beliefs: Vec<Vec<f64>> = Vec::new();
        let mut explored = Vec::with_capacity(current.len());
        let mut pending = current.into_iter();
        loop {
            let chunk: Vec<Vec<f64>> = pending.by_ref().take(CHUNK).collect();
            if chunk.is_empty() {
                break;
            }
            if predict {
                let expansions: Vec<Expansion> =
                    chunk.par_iter().map(|w| expand_node(coord, repr, t, w, space)).collect();
                for (weights, expansion) in chunk.into_iter().zip(expansions) {
                    let edges = link(expansion, &mut next_index, &mut next_beliefs);
                    explored.push(Explored { weights, edges, terminal: None });
                }
            } else {
                let best: Vec<(f64, usize)> =
                    chunk.par_iter().map(|w| best_terminal(coord, repr, t, w, space)).collect();
                for (weights, b) in chunk.into_iter().zip(best) {
                    explored.push(Explored { weights, edges: Vec::new(), terminal: Some(b) });
                }
            }
            if total_nodes + next_beliefs.len() > config.node_cap {
                return Err(Error::SizeOverflow {
                    what: format!("belief tree at step {}", t + 1),
                    size: (total_nodes + next_beliefs.len()) as u128,
                    cap: config.node_cap as u128,
                });
            }
        }
        total_nodes += next_beliefs.len();
        tree.push(explored);
        current = next_beliefs;
    }

    // Backward: values and argmins, ties to the smallest prescription index.
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); tree.len()];
    let mut choices: Vec<Vec<usize>> = vec![Vec::new(); tree.len()];
    for k in (0..tree.len()).rev() {
        let next_values: &[f64] = if k + 1 < tree.len() { &values[k + 1] } else { &[] };
        let best: Vec<(f64, usize)> = tree[k]
            .par_iter()
            .map(|node| {
                if let Some(best) = node.terminal {
                    return best;
                }
                let mut best = (f64::INFINITY, 0);
                for (g, edge) in node.edges.iter().enumerate() {
                    let mut v = edge.cost;
                    for &(_, p, child) in &edge.outcomes {
                        v += p * next_values[child as usize];
                    }
                    if improves(v, best.0) {
                        best = (v, g);
                    }
                }
                best
            })
            .collect();
        values[k] = best.iter().map(|b| b.0).collect();
        choices[k] = best.iter().map(|b| b.1).collect();
    }

    // Keep the nodes reached under the chosen prescriptions, renumbered
    // breadth first.
    let mut stages: Vec<Vec<PolicyNode>> = Vec::with_capacity(tree.len());
    let mut frontier: Vec<u32> = vec![0];
    for k in 0..tree.len() {
        let mut next_ids: HashMap<u32, usize> = HashMap::new();
        let mut next_frontier = Vec::new();
        let mut nodes = Vec::with_capacity(frontier.len());
        for (id, &old) in frontier.iter().enumerate() {
            let node = &tree[k][old as usize];
            let g = choices[k][old as usize];
            let (immediate_cost, children) = match node.terminal {
                Some((cost, _)) => (cost, Vec::new()),
                None => {
                    let edge = &node.edges[g];
                    let children = edge
                        .outcomes
                        .iter()
                        .map(|&(z, p, child)| {
                            let new = *next_ids.entry(child).or_insert_with(|| {
                                next_frontier.push(child);
                                next_frontier.len() - 1
                            });
                            Child { message: z, probability: p, node: new }
                        })
                        .collect();
                    (edge.cost, children)
                }
            };
            nodes.push(PolicyNode {
                id,
                t: start + k,
                belief: node.weights.clone(),
                prescription: spaces[k].decode(g),
                immediate_cost,
                value: values[k][old as usize],
                children,
            });
        }
        stages.push(nodes);
        frontier = next_frontier;
    }

    let mut evaluations = 0u64;
    let mut forced = 0u64;
    for (k, explored) in tree.iter().enumerate() {
        if spaces[k].size() == 1 {
            forced += explored.len() as u64;
        } else {
            evaluations += (explored.len() * spaces[k].size()) as u64;
        }
    }
    let report = ValueReport {
        optimal_value: values[0][0],
        representation: repr,
        stage_nodes: tree.iter().map(Vec::len).collect(),
        policy_nodes: stages.iter().map(Vec::len).collect(),
        prescription_space_sizes: spaces.iter().map(PrescriptionSpace::size).collect(),
        evaluations,
        forced_nodes: forced,
        elapsed: began.elapsed(),
    };
    Ok((report, PolicyTree { representation: repr, start, horizon: spec.horizon, stages }))
}

/// The basic-model strategy that plays the tree's prescriptions: at the
/// node reached by a message history, controller `i` applies its part of
/// the node's prescription to its own `(y, m)`.
pub fn extract_control_strategy(tree: &PolicyTree) -> ControlStrategy {
    let mut strategy = ControlStrategy::new(tree.horizon);
    let mut frontier: Vec<(usize, Vec<usize>)> = vec![(0, Vec::new())];
    for (k, stage) in tree.stages.iter().enumerate() {
        let mut next = Vec::new();
        for (id, history) in frontier {
            let node = &stage[id];
            for c in &node.children {
                let mut h = history.clone();
                h.push(c.message);
                next.push((c.node, h));
            }
            strategy.push(StrategyEntry {
                t: tree.start + k,
                history,
                node: id,
                tables: node.prescription.tables.clone(),
            });
        }
        frontier = next;
    }
    strategy.finish();
    strategy
}

#[cfg(test)]
mod tests;
