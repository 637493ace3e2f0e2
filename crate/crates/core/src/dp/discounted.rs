//! Discounted infinite-horizon problems by depth-limited lookahead.
//!
//! With stage costs bounded by `L` in absolute value, a lookahead of `K`
//! steps is within `beta^K L / (1 - beta)` of the fixed point, so `K` is
//! chosen to make that at most `epsilon`. Beliefs are shared across depths:
//! the set within `K` steps of the start is collected once, then `K` rounds
//! of value iteration run over it.

use std::collections::HashMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{belief_key, expand_node, link, Child, Edge, Expansion, Representation, SolverConfig, ValueReport};
use crate::coordinator::{BeliefKey, Coordinator, JointPrescription};
use crate::error::{Error, Result};
use crate::model::{Mode, ProblemSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationaryEntry {
    pub id: usize,
    pub belief: Vec<f64>,
    /// Greedy prescription; absent on beliefs first met at the full lookahead depth.
    pub prescription: Option<JointPrescription>,
    pub value: f64,
    /// Steps of lookahead behind `value`.
    pub lookahead: usize,
    /// Successors under the greedy prescription.
    pub children: Vec<Child>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationaryPolicy {
    pub representation: Representation,
    pub discount: f64,
    pub epsilon: f64,
    /// Lookahead depth `K`.
    pub depth: usize,
    /// `beta^K max|l| / (1 - beta)`.
    pub truncation_bound: f64,
    /// Largest change of any value in the last round.
    pub residual: f64,
    pub value: f64,
    /// Entry 0 is the initial belief.
    pub entries: Vec<StationaryEntry>,
}

impl StationaryPolicy {
    pub fn child(&self, entry: &StationaryEntry, z: usize) -> Option<&StationaryEntry> {
        entry.children.binary_search_by_key(&z, |c| c.message).ok().map(|k| &self.entries[entry.children[k].node])
    }
}

/// Smallest `K >= 1` with `beta^K max_abs_cost / (1 - beta) <= epsilon`.
pub fn truncation_depth(beta: f64, epsilon: f64, max_abs_cost: f64) -> usize {
    if beta <= 0.0 || max_abs_cost <= 0.0 {
        return 1;
    }
    let ratio = (1.0 - beta) * epsilon / max_abs_cost;
    if ratio >= 1.0 {
        return 1;
    }
    let mut k = (ratio.ln() / beta.ln()).ceil().max(1.0) as usize;
    // Guard against rounding in the logarithms.
    while beta.powi(k as i32) * max_abs_cost / (1.0 - beta) > epsilon {
        k += 1;
    }
    k
}

pub fn solve_discounted(
    spec: &ProblemSpec,
    epsilon: f64,
    repr: Representation,
    config: &SolverConfig,
) -> Result<(ValueReport, StationaryPolicy)> {
    if spec.mode != Mode::Discounted {
        return Err(Error::InvalidParameter("the discounted solver needs a discounted-mode problem".into()));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
    }
    if !spec.protocol.is_stationary() {
        return Err(Error::Unsupported(format!(
            "protocol '{}' has local memory that grows with time; no time-invariant strategy exists",
            spec.protocol.name
        )));
    }
    let began = Instant::now();
    let coord = Coordinator::new(spec)?;
    let beta = spec.discount_factor();
    let (lo, hi) = spec.cost_range();
    let max_abs = lo.abs().max(hi.abs());
    let depth = truncation_depth(beta, epsilon, max_abs);
    let space = coord.prescription_space(0, config.prescription_cap)?;

    let root = coord.initial_belief();
    let root = match repr {
        Representation::Full => root.weights,
        Representation::Reduced => coord.chi(&root).weights,
    };
    let mut index: HashMap<BeliefKey, u32> = HashMap::new();
    index.insert(belief_key(spec, 0, &root), 0);
    let mut beliefs = vec![root];
    let mut levels = vec![0usize];
    let mut edges: Vec<Vec<Edge>> = Vec::new();
    let mut level_counts = vec![1usize];

    // Beliefs within `depth` steps; those at the last level are not expanded.
    let mut level_start = 0;
    for level in 0..depth {
        let level_end = beliefs.len();
        if level_start == level_end {
            break;
        }
        for chunk_start in (level_start..level_end).step_by(super::CHUNK) {
            let chunk_end = (chunk_start + super::CHUNK).min(level_end);
            let expansions: Vec<Expansion> = (chunk_start..chunk_end)
                .into_par_iter()
                .map(|b| expand_node(&coord, repr, 0, &beliefs[b], &space))
                .collect();
            for expansion in expansions {
                edges.push(link(expansion, &mut index, &mut beliefs));
                levels.resize(beliefs.len(), level + 1);
            }
            if beliefs.len() > config.node_cap {
                return Err(Error::SizeOverflow {
                    what: "reachable belief set".into(),
                    size: beliefs.len() as u128,
                    cap: config.node_cap as u128,
                });
            }
        }
        level_counts.push(beliefs.len() - level_end);
        level_start = level_end;
    }
    while level_counts.last() == Some(&0) {
        level_counts.pop();
    }

    // Value iteration over the collected beliefs. The value of a belief
    // first met at level L is read after depth - L rounds.
    let expanded = edges.len();
    let mut values = vec![0.0; beliefs.len()];
    let mut recorded: Vec<Option<(f64, usize)>> = vec![None; beliefs.len()];
    let mut residual = 0.0;
    for k in 1..=depth {
        let updated: Vec<(f64, usize)> = (0..expanded)
            .into_par_iter()
            .map(|b| {
                let mut best = (f64::INFINITY, 0);
                for (g, edge) in edges[b].iter().enumerate() {
                    let mut future = 0.0;
                    for &(_, p, child) in &edge.outcomes {
                        future += p * values[child as usize];
                    }
                    let v = edge.cost + beta * future;
                    if super::improves(v, best.0) {
                        best = (v, g);
                    }
                }
                best
            })
            .collect();
        residual = 0.0f64;
        for (b, &(v, g)) in updated.iter().enumerate() {
            residual = residual.max((v - values[b]).abs());
            values[b] = v;
            if levels[b] + k == depth {
                recorded[b] = Some((v, g));
            }
        }
    }

    let entries: Vec<StationaryEntry> = beliefs
        .into_iter()
        .enumerate()
        .map(|(b, belief)| match recorded[b] {
            Some((value, g)) if b < expanded => StationaryEntry {
                id: b,
                belief,
                prescription: Some(space.decode(g)),
                value,
                lookahead: depth - levels[b],
                children: edges[b][g]
                    .outcomes
                    .iter()
                    .map(|&(z, p, child)| Child { message: z, probability: p, node: child as usize })
                    .collect(),
            },
            _ => StationaryEntry { id: b, belief, prescription: None, value: 0.0, lookahead: 0, children: Vec::new() },
        })
        .collect();
    let value = entries[0].value;
    let truncation_bound = if beta == 0.0 { 0.0 } else { beta.powi(depth as i32) * max_abs / (1.0 - beta) };
    let report = ValueReport {
        optimal_value: value,
        representation: repr,
        stage_nodes: level_counts,
        policy_nodes: vec![entries.len()],
        prescription_space_sizes: vec![space.size()],
        evaluations: if space.size() == 1 { 0 } else { (expanded * space.size()) as u64 },
        forced_nodes: if space.size() == 1 { expanded as u64 } else { 0 },
        elapsed: began.elapsed(),
    };
    let policy = StationaryPolicy {
        representation: repr,
        discount: beta,
        epsilon,
        depth,
        truncation_bound,
        residual,
        value,
        entries,
    };
    Ok((report, policy))
}
