//! The coordinator's view of the problem: a POMDP whose state is
//! `(x, y^1..y^n, m^1..m^n)`, whose actions are joint prescriptions and
//! whose observations are the joint messages written to the shared memory.
//!
//! States are enumerated lexicographically in `(x, y^1..y^n, m^1..m^n)`, so
//! a state index factors as `(x * |Y| + y_joint) * |M| + m_joint` and the
//! reduced index over `(x, m)` as `x * |M| + m_joint`.

mod belief;
mod prescription;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub use belief::{
    canonical_key, total_variation, Belief, BeliefKey, ReducedBelief, CANONICAL_FLOOR, CANONICAL_RESOLUTION,
};
pub use prescription::{prescription_count, JointPrescription, PrescriptionSpace, DEFAULT_PRESCRIPTION_CAP};

use crate::error::{Error, Result};
use crate::model::{decode_mixed, encode_mixed, Mode, ProblemSpec};

/// Messages with probability at or below this are treated as impossible.
pub const ZERO_PROBABILITY: f64 = 1e-15;

/// Largest coordinator state space that will be enumerated.
pub const MAX_STATE_SPACE: usize = 10_000_000;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CoordState {
    pub x: usize,
    pub y: Vec<usize>,
    pub m: Vec<usize>,
}

/// Index arithmetic for the coordinator states of one step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StateSpace {
    pub t: usize,
    pub num_states: usize,
    pub obs: Vec<usize>,
    pub mem: Vec<usize>,
    obs_joint: usize,
    mem_joint: usize,
}

impl StateSpace {
    pub fn new(spec: &ProblemSpec, t: usize) -> Result<Self> {
        let obs = spec.obs_cards(t);
        let mem = spec.memory_cards(t);
        let obs_joint = obs.iter().try_fold(1usize, |a, &b| a.checked_mul(b));
        let mem_joint = mem.iter().try_fold(1usize, |a, &b| a.checked_mul(b));
        let size =
            obs_joint.zip(mem_joint).and_then(|(o, m)| o.checked_mul(m)).and_then(|p| p.checked_mul(spec.num_states()));
        match size {
            Some(s) if s <= MAX_STATE_SPACE => Ok(Self {
                t,
                num_states: spec.num_states(),
                obs,
                mem,
                obs_joint: obs_joint.unwrap_or(0),
                mem_joint: mem_joint.unwrap_or(0),
            }),
            _ => Err(Error::SizeOverflow {
                what: format!("coordinator state space at step {t}"),
                size: size.map_or(u128::MAX, |s| s as u128),
                cap: MAX_STATE_SPACE as u128,
            }),
        }
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.num_states * self.obs_joint * self.mem_joint
    }

    #[inline]
    pub fn reduced_size(&self) -> usize {
        self.num_states * self.mem_joint
    }

    #[inline]
    pub fn obs_joint(&self) -> usize {
        self.obs_joint
    }

    #[inline]
    pub fn mem_joint(&self) -> usize {
        self.mem_joint
    }

    #[inline]
    pub fn index(&self, x: usize, y_joint: usize, m_joint: usize) -> usize {
        (x * self.obs_joint + y_joint) * self.mem_joint + m_joint
    }

    /// `(x, y_joint, m_joint)`
    #[inline]
    pub fn split(&self, s: usize) -> (usize, usize, usize) {
        (s / (self.obs_joint * self.mem_joint), (s / self.mem_joint) % self.obs_joint, s % self.mem_joint)
    }

    pub fn encode(&self, s: &CoordState) -> usize {
        self.index(s.x, encode_mixed(&s.y, &self.obs), encode_mixed(&s.m, &self.mem))
    }

    pub fn decode(&self, s: usize) -> CoordState {
        let (x, yj, mj) = self.split(s);
        let mut y = vec![0; self.obs.len()];
        let mut m = vec![0; self.mem.len()];
        decode_mixed(yj, &self.obs, &mut y);
        decode_mixed(mj, &self.mem, &mut m);
        CoordState { x, y, m }
    }
}

/// All coordinator states of step `t` in enumeration order.
pub fn enumerate_states(spec: &ProblemSpec, t: usize) -> Result<Vec<CoordState>> {
    let space = StateSpace::new(spec, t)?;
    Ok((0..space.size()).map(|s| space.decode(s)).collect())
}

/// Per-step tables shared by every belief operation at that step.
#[derive(Clone, Debug)]
pub struct Stage {
    pub t: usize,
    pub space: StateSpace,
    protocol_stage: usize,
    /// `[s * n + i]`
    ys: Vec<usize>,
    ms: Vec<usize>,
    xs: Vec<usize>,
    /// Joint observation likelihoods per state: `(y_joint, prob)` with prob > 0.
    obs_lift: Vec<Vec<(usize, f64)>>,
    actions: Vec<usize>,
    messages: Vec<usize>,
    next_mem: Vec<usize>,
}

impl Stage {
    fn new(spec: &ProblemSpec, t: usize) -> Result<Self> {
        let space = StateSpace::new(spec, t)?;
        let n = spec.n;
        let size = space.size();
        let mut ys = Vec::with_capacity(size * n);
        let mut ms = Vec::with_capacity(size * n);
        let mut xs = Vec::with_capacity(size);
        for s in 0..size {
            let c = space.decode(s);
            xs.push(c.x);
            ys.extend_from_slice(&c.y);
            ms.extend_from_slice(&c.m);
        }
        let mut obs_lift = Vec::with_capacity(space.num_states);
        let mut y = vec![0; n];
        for x in 0..space.num_states {
            let mut entries = Vec::new();
            for yj in 0..space.obs_joint {
                decode_mixed(yj, &space.obs, &mut y);
                let p: f64 = (0..n).map(|i| spec.obs_row(i, t, x)[y[i]]).product();
                if p > 0.0 {
                    entries.push((yj, p));
                }
            }
            obs_lift.push(entries);
        }
        Ok(Self {
            t,
            protocol_stage: spec.protocol.stage(t),
            ys,
            ms,
            xs,
            obs_lift,
            actions: spec.action_cards(t),
            messages: spec.message_cards(t),
            next_mem: spec.memory_cards(t + 1),
            space,
        })
    }

    #[inline]
    pub fn x_of(&self, s: usize) -> usize {
        self.xs[s]
    }

    #[inline]
    pub fn y_of(&self, s: usize, i: usize) -> usize {
        self.ys[s * self.actions.len() + i]
    }

    #[inline]
    pub fn m_of(&self, s: usize, i: usize) -> usize {
        self.ms[s * self.actions.len() + i]
    }

    /// Local row `y * |M^i| + m` of controller `i` in state `s`.
    #[inline]
    pub fn row_of(&self, s: usize, i: usize) -> usize {
        self.y_of(s, i) * self.space.mem[i] + self.m_of(s, i)
    }

    pub fn joint_messages(&self) -> usize {
        self.messages.iter().product()
    }
}

/// What happens in state `s` under a prescription.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Act {
    /// Flattened joint action.
    pub u: usize,
    /// Flattened joint message.
    pub z: usize,
    /// Flattened joint next memory.
    pub m_next: usize,
}

/// One message outcome of a belief under a prescription.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub z: usize,
    pub probability: f64,
    /// Reduced belief at the next step; empty when no prediction was asked for.
    pub next: ReducedBelief,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Branching {
    pub cost: f64,
    /// Sorted by message, positive probability only.
    pub outcomes: Vec<Outcome>,
}

/// The coordinator POMDP of a validated problem.
#[derive(Clone, Debug)]
pub struct Coordinator<'a> {
    pub spec: &'a ProblemSpec,
    stages: Vec<Stage>,
}

impl<'a> Coordinator<'a> {
    pub fn new(spec: &'a ProblemSpec) -> Result<Self> {
        spec.ensure_valid()?;
        let count = match spec.mode {
            Mode::Finite => spec.horizon,
            Mode::Discounted => 1,
        };
        let stages = (0..count).map(|t| Stage::new(spec, t)).collect::<Result<Vec<_>>>()?;
        Ok(Self { spec, stages })
    }

    #[inline]
    pub fn stage(&self, t: usize) -> &Stage {
        &self.stages[self.spec.stage(t)]
    }

    /// Whether a transition out of step `t` exists.
    #[inline]
    pub fn has_next(&self, t: usize) -> bool {
        match self.spec.mode {
            Mode::Finite => t + 1 < self.spec.horizon,
            Mode::Discounted => true,
        }
    }

    pub fn prescription_space(&self, t: usize, cap: u128) -> Result<PrescriptionSpace> {
        PrescriptionSpace::new(self.spec, t, cap)
    }

    /// Belief at step 0: `Q(x) prod_i P^i(y^i | x)` on the empty memories.
    pub fn initial_belief(&self) -> Belief {
        let reduced = {
            let space = &self.stage(0).space;
            let mut w = vec![0.0; space.reduced_size()];
            for (x, &q) in self.spec.initial_dist.iter().enumerate() {
                w[x * space.mem_joint()] = q;
            }
            ReducedBelief { t: 0, weights: w }
        };
        self.zeta(&reduced)
    }

    #[inline]
    pub fn act(&self, stage: &Stage, s: usize, g: &JointPrescription) -> Act {
        let (mut u, mut z, mut m_next) = (0, 0, 0);
        for i in 0..self.spec.n {
            let (y, m) = (stage.y_of(s, i), stage.m_of(s, i));
            let ui = g.tables[i][y * stage.space.mem[i] + m];
            let proto = &self.spec.protocol.controllers[i].stages[stage.protocol_stage];
            let k = (m * stage.space.obs[i] + y) * stage.actions[i] + ui;
            u = u * stage.actions[i] + ui;
            z = z * stage.messages[i] + proto.msg_map[k];
            m_next = m_next * stage.next_mem[i] + proto.mem_update[k];
        }
        Act { u, z, m_next }
    }

    /// Joint message emitted in state `s` at step `t`.
    pub fn emit_message(&self, t: usize, s: &CoordState, g: &JointPrescription) -> usize {
        let stage = self.stage(t);
        self.act(stage, stage.space.encode(s), g).z
    }

    /// Distribution of the next coordinator state, as sorted sparse pairs.
    pub fn transition(&self, t: usize, s: &CoordState, g: &JointPrescription) -> Vec<(usize, f64)> {
        assert!(self.has_next(t), "no transition out of the last step");
        let stage = self.stage(t);
        let a = self.act(stage, stage.space.encode(s), g);
        let next = self.stage(t + 1);
        let mut out = Vec::new();
        for (x2, &p) in self.spec.transition_row(t, s.x, a.u).iter().enumerate() {
            if p > 0.0 {
                for &(yj, py) in &next.obs_lift[x2] {
                    out.push((next.space.index(x2, yj, a.m_next), p * py));
                }
            }
        }
        out.sort_by_key(|e| e.0);
        out
    }

    /// Expected stage cost and, per positive-probability message, the
    /// probability and (if `predict`) the conditioned and predicted reduced
    /// belief.
    pub fn branch(&self, pi: &Belief, g: &JointPrescription, predict: bool) -> Branching {
        let t = pi.t;
        let stage = self.stage(t);
        let predict = predict && self.has_next(t);
        let next_reduced = if predict { self.stage(t + 1).space.reduced_size() } else { 0 };
        let next_mj = if predict { self.stage(t + 1).space.mem_joint() } else { 0 };
        let mut slot_of: HashMap<usize, usize> = HashMap::new();
        let mut groups: Vec<(usize, f64, Vec<f64>)> = Vec::new();
        let mut cost = 0.0;
        for (s, &w) in pi.weights.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            let a = self.act(stage, s, g);
            let x = stage.x_of(s);
            cost += w * self.spec.cost_of(t, x, a.u);
            let slot = *slot_of.entry(a.z).or_insert_with(|| {
                groups.push((a.z, 0.0, vec![0.0; next_reduced]));
                groups.len() - 1
            });
            let group = &mut groups[slot];
            group.1 += w;
            if predict {
                for (x2, &p) in self.spec.transition_row(t, x, a.u).iter().enumerate() {
                    if p > 0.0 {
                        group.2[x2 * next_mj + a.m_next] += w * p;
                    }
                }
            }
        }
        groups.sort_by_key(|g| g.0);
        let outcomes = groups
            .into_iter()
            .map(|(z, mass, mut r)| {
                for v in &mut r {
                    *v /= mass;
                }
                Outcome { z, probability: mass, next: ReducedBelief { t: t + 1, weights: r } }
            })
            .collect();
        Branching { cost, outcomes }
    }

    /// Probability of joint message `z` under belief `pi` and prescription `g`.
    pub fn observation_probability(&self, pi: &Belief, g: &JointPrescription, z: usize) -> f64 {
        let stage = self.stage(pi.t);
        pi.weights.iter().enumerate().filter(|(s, &w)| w > 0.0 && self.act(stage, *s, g).z == z).map(|(_, &w)| w).sum()
    }

    /// `(z, probability)` for every message with positive probability.
    pub fn message_distribution(&self, pi: &Belief, g: &JointPrescription) -> Vec<(usize, f64)> {
        self.branch(pi, g, false).outcomes.into_iter().map(|o| (o.z, o.probability)).collect()
    }

    pub fn expected_cost(&self, pi: &Belief, g: &JointPrescription) -> f64 {
        self.branch(pi, g, false).cost
    }

    /// Condition on `z`, then predict one step.
    pub fn eta_update(&self, pi: &Belief, g: &JointPrescription, z: usize) -> Result<Belief> {
        if !self.has_next(pi.t) {
            return Err(Error::InvalidParameter(format!("no step follows step {}", pi.t)));
        }
        let branching = self.branch(pi, g, true);
        match branching.outcomes.into_iter().find(|o| o.z == z) {
            Some(o) if o.probability > ZERO_PROBABILITY => Ok(self.zeta(&o.next)),
            Some(o) => Err(Error::ZeroProbabilityObservation { mass: o.probability }),
            None => Err(Error::ZeroProbabilityObservation { mass: 0.0 }),
        }
    }

    /// Marginalizes the current observations out of a belief.
    pub fn chi(&self, pi: &Belief) -> ReducedBelief {
        let space = &self.stage(pi.t).space;
        let mut w = vec![0.0; space.reduced_size()];
        for (s, &p) in pi.weights.iter().enumerate() {
            let (x, _, mj) = space.split(s);
            w[x * space.mem_joint() + mj] += p;
        }
        ReducedBelief { t: pi.t, weights: w }
    }

    /// Multiplies the observation likelihoods back into a reduced belief.
    pub fn zeta(&self, reduced: &ReducedBelief) -> Belief {
        let stage = self.stage(reduced.t);
        let space = &stage.space;
        let mut w = vec![0.0; space.size()];
        for (r, &p) in reduced.weights.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let (x, mj) = (r / space.mem_joint(), r % space.mem_joint());
            for &(yj, py) in &stage.obs_lift[x] {
                w[space.index(x, yj, mj)] = p * py;
            }
        }
        Belief { t: reduced.t, weights: w }
    }
}
