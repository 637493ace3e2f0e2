//! Sharing protocols.
//!
//! A protocol is a pair of total tables per controller and time: the message
//! map `sigma(m, y, u) -> z` and the local memory update `mu(m, y, u) -> m'`.
//! Memory and message elements are opaque indices, each paired with a
//! witness: the list of past local observations/actions it holds, tagged by
//! kind and by how many steps ago it was recorded. Validation uses the
//! witnesses to check that messages only carry available local data and
//! that the next local memory never keeps anything that was just shared.
//!
//! Message index 0 is always the empty message.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SlotKind {
    #[serde(rename = "y")]
    Obs,
    #[serde(rename = "u")]
    Act,
}

/// One remembered or transmitted datum. `lag` counts steps back from the
/// current time: 0 is the current observation/action, 1 the previous step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Slot {
    pub kind: SlotKind,
    pub lag: usize,
    pub value: usize,
}

impl Slot {
    pub fn obs(lag: usize, value: usize) -> Self {
        Self { kind: SlotKind::Obs, lag, value }
    }

    pub fn act(lag: usize, value: usize) -> Self {
        Self { kind: SlotKind::Act, lag, value }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolStage {
    /// Witness of every message index; entry 0 is empty.
    pub messages: Vec<Vec<Slot>>,
    /// Indexed by `(m * |Y_t| + y) * |U_t| + u`.
    pub msg_map: Vec<usize>,
    /// Same indexing; values index the memory layer of the next step.
    pub mem_update: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerProtocol {
    /// `memory[layer][m]` is the witness of memory element `m`. A
    /// time-varying protocol has one layer per step plus a final one; a
    /// stationary protocol has a single layer whose element 0 is the empty
    /// initial memory.
    pub memory: Vec<Vec<Vec<Slot>>>,
    pub stages: Vec<ProtocolStage>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharingProtocol {
    pub name: String,
    pub controllers: Vec<ControllerProtocol>,
}

impl SharingProtocol {
    /// Single time-invariant stage for every controller.
    pub fn is_stationary(&self) -> bool {
        self.controllers.iter().all(|c| c.stages.len() == 1 && c.memory.len() == 1)
    }

    #[inline]
    pub fn stage(&self, t: usize) -> usize {
        if self.is_stationary() {
            0
        } else {
            t
        }
    }

    #[inline]
    pub fn layer(&self, t: usize) -> usize {
        self.stage(t)
    }

    #[inline]
    pub fn memory_card(&self, i: usize, t: usize) -> usize {
        self.controllers[i].memory[self.layer(t)].len()
    }

    #[inline]
    pub fn message_card(&self, i: usize, t: usize) -> usize {
        self.controllers[i].stages[self.stage(t)].messages.len()
    }
}

/// Whether tables are built for a fixed horizon (ragged memory spaces near
/// the start) or as one time-invariant stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Horizon {
    Finite(usize),
    Stationary,
}

/// Local space cardinalities `[i][t]`. Stationary construction reads slice 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LocalSpaces {
    pub obs: Vec<Vec<usize>>,
    pub actions: Vec<Vec<usize>>,
}

impl LocalSpaces {
    /// Same cardinalities for every controller and step.
    pub fn uniform(n: usize, horizon: usize, obs: usize, actions: usize) -> Self {
        Self { obs: vec![vec![obs; horizon.max(1)]; n], actions: vec![vec![actions; horizon.max(1)]; n] }
    }

    fn n(&self) -> usize {
        self.obs.len()
    }
}

/// Length of the local window kept when nothing is shared.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MemoryWindow {
    Bounded(usize),
    Full,
}

#[derive(Clone, Copy, Debug)]
enum Rule {
    /// Share the observation/action pair recorded `delay - 1` steps ago.
    Delayed(usize),
    /// Share everything accumulated since the last sharing instant every `period` steps.
    Periodic(usize),
    /// Share the current action, keep all observations locally.
    Control,
    /// Share nothing, keep a sliding window.
    NoSharing(Option<usize>),
}

impl Rule {
    /// Returns the message and the next memory, both with lags relative to
    /// the current step.
    fn step(self, memory: &[Slot], y: usize, u: usize) -> (Vec<Slot>, Vec<Slot>) {
        let current = [Slot::obs(0, y), Slot::act(0, u)];
        let records = memory.len() / 2;
        match self {
            Rule::Delayed(1) => (current.to_vec(), Vec::new()),
            Rule::Delayed(delay) => {
                if records == delay - 1 {
                    let mut next = memory[2..].to_vec();
                    next.extend_from_slice(&current);
                    (memory[..2].to_vec(), next)
                } else {
                    let mut next = memory.to_vec();
                    next.extend_from_slice(&current);
                    (Vec::new(), next)
                }
            }
            Rule::Periodic(period) => {
                let mut window = memory.to_vec();
                window.extend_from_slice(&current);
                if records == period - 1 {
                    (window, Vec::new())
                } else {
                    (Vec::new(), window)
                }
            }
            Rule::Control => {
                let mut next = memory.to_vec();
                next.push(Slot::obs(0, y));
                (vec![Slot::act(0, u)], next)
            }
            Rule::NoSharing(window) => {
                let mut next = memory.to_vec();
                next.extend_from_slice(&current);
                if let Some(w) = window {
                    let excess = (next.len() / 2).saturating_sub(w);
                    next.drain(..2 * excess);
                }
                (Vec::new(), next)
            }
        }
    }
}

fn shift(mut slots: Vec<Slot>) -> Vec<Slot> {
    for s in &mut slots {
        s.lag += 1;
    }
    slots
}

fn sort_elements(set: BTreeSet<Vec<Slot>>) -> Vec<Vec<Slot>> {
    let mut v: Vec<Vec<Slot>> = set.into_iter().collect();
    v.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    v
}

/// Builds the message map and memory update of one stage from `layer`.
/// When `target` is given, memory updates index into it (stationary
/// protocols map a layer onto itself); otherwise the next layer is the
/// sorted set of reachable memories.
fn build_stage(
    rule: Rule,
    layer: &[Vec<Slot>],
    obs: usize,
    actions: usize,
    target: Option<&[Vec<Slot>]>,
) -> (ProtocolStage, Vec<Vec<Slot>>) {
    let mut outcomes = Vec::with_capacity(layer.len() * obs * actions);
    let mut messages = BTreeSet::new();
    let mut next = BTreeSet::new();
    for m in layer {
        for y in 0..obs {
            for u in 0..actions {
                let (msg, mem) = rule.step(m, y, u);
                let mem = shift(mem);
                if !msg.is_empty() {
                    messages.insert(msg.clone());
                }
                next.insert(mem.clone());
                outcomes.push((msg, mem));
            }
        }
    }
    let mut msg_list = vec![Vec::new()];
    msg_list.extend(sort_elements(messages));
    let next_layer = match target {
        Some(t) => t.to_vec(),
        None => sort_elements(next),
    };

    let msg_index: HashMap<&Vec<Slot>, usize> = msg_list.iter().enumerate().map(|(k, m)| (m, k)).collect();
    let mem_index: HashMap<&Vec<Slot>, usize> = next_layer.iter().enumerate().map(|(k, m)| (m, k)).collect();
    let msg_map = outcomes.iter().map(|(msg, _)| msg_index[msg]).collect();
    let mem_update = outcomes.iter().map(|(_, mem)| mem_index[mem]).collect();
    (ProtocolStage { messages: msg_list, msg_map, mem_update }, next_layer)
}

const MAX_STATIONARY_MEMORY: usize = 1 << 16;
const MAX_STATIONARY_LAG: usize = 64;

fn build_controller(rule: Rule, horizon: Horizon, obs: &[usize], actions: &[usize]) -> Result<ControllerProtocol> {
    match horizon {
        Horizon::Finite(t_max) => {
            if obs.len() < t_max || actions.len() < t_max {
                return Err(Error::InvalidParameter(format!(
                    "local spaces cover {} steps, horizon is {t_max}",
                    obs.len().min(actions.len())
                )));
            }
            let mut memory = vec![vec![Vec::new()]];
            let mut stages = Vec::with_capacity(t_max);
            for t in 0..t_max {
                let (stage, next) = build_stage(rule, &memory[t], obs[t], actions[t], None);
                stages.push(stage);
                memory.push(next);
            }
            Ok(ControllerProtocol { memory, stages })
        }
        Horizon::Stationary => {
            let (ny, nu) = (obs[0], actions[0]);
            let mut known: BTreeSet<Vec<Slot>> = BTreeSet::new();
            known.insert(Vec::new());
            let mut frontier = vec![Vec::new()];
            while let Some(m) = frontier.pop() {
                for y in 0..ny {
                    for u in 0..nu {
                        let next = shift(rule.step(&m, y, u).1);
                        if next.iter().any(|s| s.lag > MAX_STATIONARY_LAG) || known.len() > MAX_STATIONARY_MEMORY {
                            return Err(Error::Unsupported(
                                "local memory grows with time; no time-invariant memory space exists".into(),
                            ));
                        }
                        if known.insert(next.clone()) {
                            frontier.push(next);
                        }
                    }
                }
            }
            let layer = sort_elements(known);
            let (stage, _) = build_stage(rule, &layer, ny, nu, Some(&layer));
            Ok(ControllerProtocol { memory: vec![layer], stages: vec![stage] })
        }
    }
}

fn build(name: &str, rules: &[Rule], horizon: Horizon, spaces: &LocalSpaces) -> Result<SharingProtocol> {
    if rules.len() != spaces.n() || spaces.actions.len() != spaces.n() {
        return Err(Error::InvalidParameter(format!(
            "{} controller rules for {} controllers",
            rules.len(),
            spaces.n()
        )));
    }
    let controllers = rules
        .iter()
        .enumerate()
        .map(|(i, &rule)| build_controller(rule, horizon, &spaces.obs[i], &spaces.actions[i]))
        .collect::<Result<Vec<_>>>()?;
    Ok(SharingProtocol { name: name.to_string(), controllers })
}

/// Delayed sharing: controller `i` publishes its observation/action pair
/// `delays[i]` steps late and keeps the most recent `delays[i] - 1` pairs
/// locally. Unequal delays give asymmetric sharing.
pub fn delayed_sharing_protocol(delays: &[usize], horizon: Horizon, spaces: &LocalSpaces) -> Result<SharingProtocol> {
    if let Some(s) = delays.iter().find(|&&s| s < 1) {
        return Err(Error::InvalidParameter(format!("delay must be at least 1, got {s}")));
    }
    let rules: Vec<Rule> = delays.iter().map(|&s| Rule::Delayed(s)).collect();
    build("delayed_sharing", &rules, horizon, spaces)
}

/// Delayed sharing where each controller observes its own state component;
/// the observation wiring lives in the problem's observation kernels.
pub fn delayed_state_sharing_protocol(
    delays: &[usize],
    horizon: Horizon,
    spaces: &LocalSpaces,
) -> Result<SharingProtocol> {
    let mut p = delayed_sharing_protocol(delays, horizon, spaces)?;
    p.name = "delayed_state_sharing".into();
    Ok(p)
}

/// Periodic sharing: local data accumulates and the whole window is
/// published at the end of every period.
pub fn periodic_sharing_protocol(period: usize, horizon: Horizon, spaces: &LocalSpaces) -> Result<SharingProtocol> {
    if period < 1 {
        return Err(Error::InvalidParameter("period must be at least 1".into()));
    }
    build("periodic_sharing", &vec![Rule::Periodic(period); spaces.n()], horizon, spaces)
}

/// Control sharing: actions are published immediately, observations are
/// kept forever. Memory grows with time, so there is no stationary form.
pub fn control_sharing_protocol(horizon: Horizon, spaces: &LocalSpaces) -> Result<SharingProtocol> {
    build("control_sharing", &vec![Rule::Control; spaces.n()], horizon, spaces)
}

/// Nothing is shared; each controller keeps a sliding window of its own
/// observation/action pairs.
pub fn no_sharing_protocol(window: MemoryWindow, horizon: Horizon, spaces: &LocalSpaces) -> Result<SharingProtocol> {
    let w = match window {
        MemoryWindow::Bounded(w) => Some(w),
        MemoryWindow::Full => None,
    };
    build("no_sharing", &vec![Rule::NoSharing(w); spaces.n()], horizon, spaces)
}
