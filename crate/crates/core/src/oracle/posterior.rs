use std::collections::BTreeMap;

use super::joint_observations;
use crate::error::{Error, Result};
use crate::model::{encode_mixed, ProblemSpec};

/// Conditional law of `(x_t, y_t, m_t)` given the messages seen so far.
#[derive(Clone, Debug, PartialEq)]
pub struct Posterior {
    pub t: usize,
    /// Probability of the message sequence itself.
    pub mass: f64,
    /// Keyed by `(x, [y^i], [m^i])`; sums to 1.
    pub dist: BTreeMap<(usize, Vec<usize>, Vec<usize>), f64>,
}

impl Posterior {
    /// Dense vector in the lexicographic `(x, y^1..n, m^1..n)` order.
    pub fn dense(&self, spec: &ProblemSpec) -> Vec<f64> {
        let obs = spec.obs_cards(self.t);
        let mem = spec.memory_cards(self.t);
        let (ny, nm): (usize, usize) = (obs.iter().product(), mem.iter().product());
        let mut out = vec![0.0; spec.num_states() * ny * nm];
        for ((x, ys, ms), &p) in &self.dist {
            out[(x * ny + encode_mixed(ys, &obs)) * nm + encode_mixed(ms, &mem)] += p;
        }
        out
    }
}

struct Enumerate<'a> {
    spec: &'a ProblemSpec,
    prescriptions: &'a [Vec<Vec<usize>>],
    messages: &'a [usize],
    dist: BTreeMap<(usize, Vec<usize>, Vec<usize>), f64>,
}

impl Enumerate<'_> {
    fn walk(&mut self, t: usize, x: usize, ms: Vec<usize>, weight: f64) {
        let spec = self.spec;
        for (ys, py) in joint_observations(spec, t, x) {
            let w = weight * py;
            if t == self.messages.len() {
                *self.dist.entry((x, ys, ms.clone())).or_insert(0.0) += w;
                continue;
            }
            let tables = &self.prescriptions[t];
            let mut us = Vec::with_capacity(spec.n);
            let (mut z, mut next_ms) = (0, Vec::with_capacity(spec.n));
            for i in 0..spec.n {
                let u = tables[i][ys[i] * spec.memory_card(i, t) + ms[i]];
                us.push(u);
                z = z * spec.message_card(i, t) + spec.message(i, t, ms[i], ys[i], u);
                next_ms.push(spec.next_memory(i, t, ms[i], ys[i], u));
            }
            if z != self.messages[t] {
                continue;
            }
            let u = spec.flatten_actions(t, &us);
            for (x2, &p) in spec.transition_row(t, x, u).iter().enumerate() {
                if p > 0.0 {
                    self.walk(t + 1, x2, next_ms.clone(), w * p);
                }
            }
        }
    }
}

/// Bayes posterior at step `messages.len()` by enumerating every trajectory
/// and keeping those that emit `messages` under the given prescription
/// tables (`prescriptions[t][i][y * |M^i_t| + m]`).
pub fn trajectory_posterior(
    spec: &ProblemSpec,
    prescriptions: &[Vec<Vec<usize>>],
    messages: &[usize],
) -> Result<Posterior> {
    let t = messages.len();
    if prescriptions.len() < t || t >= spec.horizon {
        return Err(Error::InvalidParameter(format!(
            "need one prescription per message and a step before the horizon, got {} and {t}",
            prescriptions.len()
        )));
    }
    let mut e = Enumerate { spec, prescriptions, messages, dist: BTreeMap::new() };
    for (x, &p) in spec.initial_dist.iter().enumerate() {
        if p > 0.0 {
            e.walk(0, x, vec![0; spec.n], p);
        }
    }
    let mass: f64 = e.dist.values().sum();
    if mass <= 0.0 {
        return Err(Error::ZeroProbabilityObservation { mass });
    }
    let dist = e.dist.into_iter().map(|(k, w)| (k, w / mass)).collect();
    Ok(Posterior { t, mass, dist })
}
