//! The finite decentralized control problem: spaces, stochastic kernels,
//! costs and the sharing protocol that decides what each controller keeps
//! locally and what it publishes to the shared memory.
//!
//! Time steps are zero-based throughout the crate. In discounted mode every
//! time-indexed table is read from its first slice.

mod file;
mod protocol;
mod strategy;
mod validate;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use file::{load_problem, parse_problem, LoadError, ProblemFile, ProtocolSpec, SpaceSchedule, TransitionSpec};
pub use protocol::{
    control_sharing_protocol, delayed_sharing_protocol, delayed_state_sharing_protocol, no_sharing_protocol,
    periodic_sharing_protocol, ControllerProtocol, Horizon, LocalSpaces, MemoryWindow, ProtocolStage, SharingProtocol,
    Slot, SlotKind,
};
pub use strategy::{ControlStrategy, StrategyEntry};
pub use validate::{validate_problem, ValidationReport, Violation};

/// Tolerance on row sums of every probability table.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FiniteSpace {
    pub cardinality: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

impl FiniteSpace {
    pub fn new(cardinality: usize) -> Self {
        Self { cardinality, labels: None }
    }

    pub fn labeled<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Self {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        Self { cardinality: labels.len(), labels: Some(labels) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Finite,
    Discounted,
}

/// A row-stochastic table. Rows are kept as separate vectors so that ragged
/// input survives until validation can report it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Kernel {
    pub rows: Vec<Vec<f64>>,
}

impl Kernel {
    pub fn new(rows: Vec<Vec<f64>>) -> Self {
        Self { rows }
    }

    /// `repeat` copies of the identity on `size` points, stacked row-wise.
    pub fn identity(size: usize, repeat: usize) -> Self {
        let rows = (0..size)
            .flat_map(|x| {
                (0..repeat).map(move |_| {
                    let mut row = vec![0.0; size];
                    row[x] = 1.0;
                    row
                })
            })
            .collect();
        Self { rows }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.rows[r]
    }
}

/// An i.i.d. noise source with finite support.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub dist: Vec<f64>,
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if self.dist.is_empty() {
            return Err(Error::InvalidDistribution("noise support is empty".into()));
        }
        if let Some(p) = self.dist.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidDistribution(format!("noise probability {p} is not a probability")));
        }
        let sum: f64 = self.dist.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("noise distribution sums to {sum}")));
        }
        Ok(())
    }
}

/// Turns `x' = f(x, u, w)` with i.i.d. noise `w` into the kernel
/// `P(x' | x, u) = sum_w 1[f(x, u, w) = x'] Q(w)`.
///
/// `f_table[x][u][w]` is the successor state; the table must be total over
/// states, joint actions and noise values.
pub fn build_kernel_from_functional(f_table: &[Vec<Vec<usize>>], noise: &NoiseModel) -> Result<Kernel> {
    noise.validate()?;
    let num_states = f_table.len();
    if num_states == 0 {
        return Err(Error::MissingEntry("no states".into()));
    }
    let num_actions = f_table[0].len();
    if num_actions == 0 {
        return Err(Error::MissingEntry("no joint actions".into()));
    }
    // Renormalize so rows sum to one far below the input tolerance.
    let total: f64 = noise.dist.iter().sum();
    let weights: Vec<f64> = noise.dist.iter().map(|p| p / total).collect();

    let mut rows = Vec::with_capacity(num_states * num_actions);
    for (x, per_action) in f_table.iter().enumerate() {
        if per_action.len() != num_actions {
            return Err(Error::MissingEntry(format!(
                "state {x} has {} joint actions, expected {num_actions}",
                per_action.len()
            )));
        }
        for (u, successors) in per_action.iter().enumerate() {
            if successors.len() != weights.len() {
                return Err(Error::MissingEntry(format!(
                    "(x={x}, u={u}) lists {} noise outcomes, expected {}",
                    successors.len(),
                    weights.len()
                )));
            }
            let mut row = vec![0.0; num_states];
            for (&next, &q) in successors.iter().zip(&weights) {
                if next >= num_states {
                    return Err(Error::MissingEntry(format!("(x={x}, u={u}) maps to unknown state {next}")));
                }
                row[next] += q;
            }
            rows.push(row);
        }
    }
    Ok(Kernel { rows })
}

/// Mixed-radix encoding with the first digit most significant.
#[inline]
pub fn encode_mixed(digits: &[usize], radices: &[usize]) -> usize {
    digits.iter().zip(radices).fold(0, |acc, (&d, &r)| acc * r + d)
}

#[inline]
pub fn decode_mixed(mut index: usize, radices: &[usize], out: &mut [usize]) {
    for k in (0..radices.len()).rev() {
        out[k] = index % radices[k];
        index /= radices[k];
    }
}

/// The decentralized control problem.
///
/// Indexing conventions:
/// * `transition[t].rows[x * |U_t| + u][x']` with `u` the flattened joint action,
/// * `obs_kernels[i][t].rows[x][y]`,
/// * `cost[t][x * |U_t| + u]`,
/// * joint actions flatten with controller 0 most significant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub n: usize,
    pub horizon: usize,
    pub mode: Mode,
    pub discount: Option<f64>,
    pub state_space: FiniteSpace,
    /// `[i][t]`
    pub obs_spaces: Vec<Vec<FiniteSpace>>,
    /// `[i][t]`
    pub action_spaces: Vec<Vec<FiniteSpace>>,
    pub initial_dist: Vec<f64>,
    pub transition: Vec<Kernel>,
    pub obs_kernels: Vec<Vec<Kernel>>,
    pub cost: Vec<Vec<f64>>,
    pub protocol: SharingProtocol,
}

impl ProblemSpec {
    pub fn validate(&self) -> ValidationReport {
        validate::validate_problem(self)
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let report = self.validate();
        if report.is_valid() {
            Ok(())
        } else {
            Err(Error::InvalidProblem(report))
        }
    }

    /// Index of the table slice used at time `t`.
    #[inline]
    pub fn stage(&self, t: usize) -> usize {
        match self.mode {
            Mode::Finite => t,
            Mode::Discounted => 0,
        }
    }

    #[inline]
    pub fn num_states(&self) -> usize {
        self.state_space.cardinality
    }

    #[inline]
    pub fn obs_card(&self, i: usize, t: usize) -> usize {
        self.obs_spaces[i][self.stage(t)].cardinality
    }

    #[inline]
    pub fn action_card(&self, i: usize, t: usize) -> usize {
        self.action_spaces[i][self.stage(t)].cardinality
    }

    #[inline]
    pub fn memory_card(&self, i: usize, t: usize) -> usize {
        self.protocol.memory_card(i, t)
    }

    #[inline]
    pub fn message_card(&self, i: usize, t: usize) -> usize {
        self.protocol.message_card(i, t)
    }

    pub fn action_cards(&self, t: usize) -> Vec<usize> {
        (0..self.n).map(|i| self.action_card(i, t)).collect()
    }

    pub fn obs_cards(&self, t: usize) -> Vec<usize> {
        (0..self.n).map(|i| self.obs_card(i, t)).collect()
    }

    pub fn memory_cards(&self, t: usize) -> Vec<usize> {
        (0..self.n).map(|i| self.memory_card(i, t)).collect()
    }

    pub fn message_cards(&self, t: usize) -> Vec<usize> {
        (0..self.n).map(|i| self.message_card(i, t)).collect()
    }

    pub fn joint_action_card(&self, t: usize) -> usize {
        (0..self.n).map(|i| self.action_card(i, t)).product()
    }

    pub fn flatten_actions(&self, t: usize, actions: &[usize]) -> usize {
        encode_mixed(actions, &self.action_cards(t))
    }

    pub fn unflatten_actions(&self, t: usize, flat: usize) -> Vec<usize> {
        let cards = self.action_cards(t);
        let mut out = vec![0; cards.len()];
        decode_mixed(flat, &cards, &mut out);
        out
    }

    #[inline]
    pub fn transition_row(&self, t: usize, x: usize, joint_action: usize) -> &[f64] {
        self.transition[self.stage(t)].row(x * self.joint_action_card(t) + joint_action)
    }

    #[inline]
    pub fn obs_row(&self, i: usize, t: usize, x: usize) -> &[f64] {
        self.obs_kernels[i][self.stage(t)].row(x)
    }

    #[inline]
    pub fn cost_of(&self, t: usize, x: usize, joint_action: usize) -> f64 {
        self.cost[self.stage(t)][x * self.joint_action_card(t) + joint_action]
    }

    /// Message `z^i_t = sigma^i_t(m, y, u)`.
    #[inline]
    pub fn message(&self, i: usize, t: usize, m: usize, y: usize, u: usize) -> usize {
        let stage = &self.protocol.controllers[i].stages[self.protocol.stage(t)];
        stage.msg_map[(m * self.obs_card(i, t) + y) * self.action_card(i, t) + u]
    }

    /// Memory update `m^i_{t+1} = mu^i_t(m, y, u)`.
    #[inline]
    pub fn next_memory(&self, i: usize, t: usize, m: usize, y: usize, u: usize) -> usize {
        let stage = &self.protocol.controllers[i].stages[self.protocol.stage(t)];
        stage.mem_update[(m * self.obs_card(i, t) + y) * self.action_card(i, t) + u]
    }

    /// Discount applied to stage costs; 1 in finite mode.
    pub fn discount_factor(&self) -> f64 {
        match self.mode {
            Mode::Finite => 1.0,
            Mode::Discounted => self.discount.unwrap_or(0.0),
        }
    }

    /// Smallest and largest stage cost over the tables that are actually used.
    pub fn cost_range(&self) -> (f64, f64) {
        let slices = match self.mode {
            Mode::Finite => self.horizon,
            Mode::Discounted => 1,
        };
        self.cost[..slices]
            .iter()
            .flatten()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &c| (lo.min(c), hi.max(c)))
    }

    /// Cost range of a single step `t`.
    pub fn stage_cost_range(&self, t: usize) -> (f64, f64) {
        self.cost[self.stage(t)].iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &c| (lo.min(c), hi.max(c)))
    }

    /// Per-controller local space cardinalities, the input protocol presets need.
    pub fn local_spaces(&self) -> LocalSpaces {
        LocalSpaces {
            obs: self.obs_spaces.iter().map(|s| s.iter().map(|f| f.cardinality).collect()).collect(),
            actions: self.action_spaces.iter().map(|s| s.iter().map(|f| f.cardinality).collect()).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_dynamics_give_identity_kernel() {
        let f: Vec<Vec<Vec<usize>>> = (0..3).map(|x| vec![vec![x; 2]; 4]).collect();
        let noise = NoiseModel { dist: vec![0.25, 0.75] };
        let kernel = build_kernel_from_functional(&f, &noise).unwrap();
        assert_eq!(kernel.rows.len(), 12);
        for x in 0..3 {
            for u in 0..4 {
                let row = kernel.row(x * 4 + u);
                for (k, &p) in row.iter().enumerate() {
                    assert_eq!(p, if k == x { 1.0 } else { 0.0 });
                }
            }
        }
    }

    #[test]
    fn deterministic_dynamics_give_zero_one_rows() {
        let f = vec![vec![vec![1]], vec![vec![0]]];
        let kernel = build_kernel_from_functional(&f, &NoiseModel { dist: vec![1.0] }).unwrap();
        assert_eq!(kernel.rows, vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
    }

    #[test]
    fn xor_noise_kernel_matches_noise_enumeration() {
        let q = [0.7, 0.3];
        let f: Vec<Vec<Vec<usize>>> = (0..2).map(|x| vec![(0..2).map(|w| x ^ w).collect()]).collect();
        let kernel = build_kernel_from_functional(&f, &NoiseModel { dist: q.to_vec() }).unwrap();
        // Oracle: enumerate w and add Q(w) to the reached state.
        for x in 0..2 {
            let mut expected = [0.0; 2];
            for (w, &qw) in q.iter().enumerate() {
                expected[x ^ w] += qw;
            }
            let row = kernel.row(x);
            assert!((row[0] - expected[0]).abs() < 1e-15 && (row[1] - expected[1]).abs() < 1e-15);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(kernel.row(0), &[0.7, 0.3]);
    }

    #[test]
    fn functional_errors() {
        let noise = NoiseModel { dist: vec![0.5, 0.5] };
        let short = vec![vec![vec![0, 1]], vec![vec![0]]];
        assert!(matches!(build_kernel_from_functional(&short, &noise), Err(Error::MissingEntry(_))));
        let ragged = vec![vec![vec![0, 1], vec![1, 1]], vec![vec![0, 0]]];
        assert!(matches!(build_kernel_from_functional(&ragged, &noise), Err(Error::MissingEntry(_))));
        let bad_noise = NoiseModel { dist: vec![0.5, 0.4] };
        let ok = vec![vec![vec![0, 1]], vec![vec![1, 0]]];
        assert!(matches!(build_kernel_from_functional(&ok, &bad_noise), Err(Error::InvalidDistribution(_))));
    }

    #[test]
    fn mixed_radix_roundtrip() {
        let radices = [2, 3, 4];
        let mut digits = [0; 3];
        for k in 0..24 {
            decode_mixed(k, &radices, &mut digits);
            assert_eq!(encode_mixed(&digits, &radices), k);
        }
        // first digit most significant
        assert_eq!(encode_mixed(&[1, 0, 0], &radices), 12);
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn functional_kernel_rows_are_stochastic(
            states in 1usize..5,
            actions in 1usize..4,
            raw in prop::collection::vec(0.01f64..1.0, 1..5),
            seed in any::<u64>(),
        ) {
            let total: f64 = raw.iter().sum();
            let noise = NoiseModel { dist: raw.iter().map(|p| p / total).collect() };
            let w = noise.dist.len();
            let mut s = seed;
            let mut next = || { s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); (s >> 33) as usize };
            let f: Vec<Vec<Vec<usize>>> = (0..states)
                .map(|_| (0..actions).map(|_| (0..w).map(|_| next() % states).collect()).collect())
                .collect();
            let kernel = build_kernel_from_functional(&f, &noise).unwrap();
            for row in &kernel.rows {
                prop_assert!(row.iter().all(|p| *p >= 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
    }
}
