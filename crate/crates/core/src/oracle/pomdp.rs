//! Single-controller references written the textbook way: the controller
//! recalls every observation and action, and its belief over the state is
//! updated by Bayes' rule directly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Mode, ProblemSpec};

fn single_controller(spec: &ProblemSpec) -> Result<()> {
    spec.ensure_valid()?;
    if spec.n != 1 {
        return Err(Error::Unsupported(format!("the centralized reference needs one controller, got {}", spec.n)));
    }
    Ok(())
}

/// Condition a prior on observing `y` at step `t`: returns `P(y)` and the posterior.
fn condition(spec: &ProblemSpec, t: usize, prior: &[f64], y: usize) -> (f64, Vec<f64>) {
    let joint: Vec<f64> = prior.iter().enumerate().map(|(x, &p)| p * spec.obs_row(0, t, x)[y]).collect();
    let py: f64 = joint.iter().sum();
    if py <= 0.0 {
        return (0.0, joint);
    }
    (py, joint.into_iter().map(|q| q / py).collect())
}

fn predict(spec: &ProblemSpec, t: usize, b: &[f64], u: usize) -> Vec<f64> {
    let mut next = vec![0.0; spec.num_states()];
    for (x, &p) in b.iter().enumerate() {
        if p > 0.0 {
            for (x2, &q) in spec.transition_row(t, x, u).iter().enumerate() {
                next[x2] += p * q;
            }
        }
    }
    next
}

fn value(spec: &ProblemSpec, t: usize, prior: &[f64]) -> f64 {
    let mut v = 0.0;
    for y in 0..spec.obs_card(0, t) {
        let (py, b) = condition(spec, t, prior, y);
        if py <= 0.0 {
            continue;
        }
        let mut best = f64::INFINITY;
        for u in 0..spec.action_card(0, t) {
            let mut q: f64 = b.iter().enumerate().map(|(x, &p)| p * spec.cost_of(t, x, u)).sum();
            if t + 1 < spec.horizon {
                q += value(spec, t + 1, &predict(spec, t, &b, u));
            }
            best = best.min(q);
        }
        v += py * best;
    }
    v
}

/// Optimal cost of the finite-horizon POMDP seen by a single controller
/// with perfect recall, by backward recursion over its beliefs.
pub fn textbook_pomdp_value(spec: &ProblemSpec) -> Result<f64> {
    single_controller(spec)?;
    if spec.mode != Mode::Finite {
        return Err(Error::Unsupported("finite-horizon reference only".into()));
    }
    Ok(value(spec, 0, &spec.initial_dist))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaReport {
    pub value: f64,
    pub iterations: usize,
    /// Vectors in the final lower envelope.
    pub vectors: usize,
}

/// Line `c + s p` on beliefs `(1 - p, p)`.
#[derive(Clone, Copy, Debug)]
struct Line {
    c: f64,
    s: f64,
}

impl Line {
    fn from_alpha(a: [f64; 2]) -> Self {
        Self { c: a[0], s: a[1] - a[0] }
    }

    fn alpha(self) -> [f64; 2] {
        [self.c, self.c + self.s]
    }

    fn at(self, p: f64) -> f64 {
        self.c + self.s * p
    }
}

/// Crossing point of two lines with different slopes.
fn cross(a: Line, b: Line) -> f64 {
    (b.c - a.c) / (a.s - b.s)
}

/// Lines of `alphas` that attain the minimum somewhere on `[0, 1]`.
fn lower_envelope(alphas: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    let mut lines: Vec<Line> = alphas.into_iter().map(Line::from_alpha).collect();
    // Decreasing slope; among equal slopes the lowest first.
    lines.sort_by(|a, b| b.s.total_cmp(&a.s).then(a.c.total_cmp(&b.c)));
    lines.dedup_by(|b, a| (a.s - b.s).abs() <= 1e-15);
    let mut hull: Vec<Line> = Vec::new();
    for l in lines {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            if cross(a, l) <= cross(a, b) {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(l);
    }
    // Keep the pieces that overlap [0, 1].
    let mut out = Vec::new();
    for k in 0..hull.len() {
        let from = if k == 0 { f64::NEG_INFINITY } else { cross(hull[k - 1], hull[k]) };
        let to = if k + 1 == hull.len() { f64::INFINITY } else { cross(hull[k], hull[k + 1]) };
        if from < 1.0 && to > 0.0 {
            out.push(hull[k].alpha());
        }
    }
    out
}

/// Discounted value of a two-state single-controller problem by exact
/// alpha-vector value iteration, run until the remaining tail is below
/// `epsilon / 2`.
pub fn discounted_alpha_value(spec: &ProblemSpec, epsilon: f64) -> Result<AlphaReport> {
    single_controller(spec)?;
    if spec.mode != Mode::Discounted || spec.num_states() != 2 {
        return Err(Error::Unsupported("alpha-vector reference needs a discounted two-state problem".into()));
    }
    let beta = spec.discount_factor();
    let (lo, hi) = spec.cost_range();
    let max_abs = lo.abs().max(hi.abs());
    let mut iterations = 0;
    let mut tail = max_abs / (1.0 - beta);
    let mut gamma: Vec<[f64; 2]> = vec![[0.0, 0.0]];
    while tail > epsilon / 2.0 || iterations == 0 {
        // Per observation: best of action and successor vector.
        let mut total: Vec<[f64; 2]> = vec![[0.0, 0.0]];
        for y in 0..spec.obs_card(0, 0) {
            let mut candidates = Vec::new();
            for u in 0..spec.action_card(0, 0) {
                for a in &gamma {
                    let mut v = [0.0; 2];
                    for (x, vx) in v.iter_mut().enumerate() {
                        let row = spec.transition_row(0, x, u);
                        let future = row[0] * a[0] + row[1] * a[1];
                        *vx = spec.obs_row(0, 0, x)[y] * (spec.cost_of(0, x, u) + beta * future);
                    }
                    candidates.push(v);
                }
            }
            let best = lower_envelope(candidates);
            let mut sums = Vec::with_capacity(total.len() * best.len());
            for s in &total {
                for b in &best {
                    sums.push([s[0] + b[0], s[1] + b[1]]);
                }
            }
            total = lower_envelope(sums);
        }
        gamma = total;
        iterations += 1;
        tail *= beta;
    }
    let b = &spec.initial_dist;
    let value = gamma.iter().map(|a| Line::from_alpha(*a).at(b[1] / (b[0] + b[1]))).fold(f64::INFINITY, f64::min);
    Ok(AlphaReport { value, iterations, vectors: gamma.len() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_drops_dominated_lines() {
        let env = lower_envelope(vec![[0.0, 1.0], [1.0, 0.0], [2.0, 2.0], [0.4, 0.4]]);
        assert_eq!(env, vec![[0.0, 1.0], [0.4, 0.4], [1.0, 0.0]]);
        // touching the envelope at a single point only
        let env = lower_envelope(vec![[0.0, 1.0], [1.0, 0.0], [0.5, 0.5]]);
        assert_eq!(env, vec![[0.0, 1.0], [1.0, 0.0]]);
        let env = lower_envelope(vec![[0.0, 1.0], [1.0, 0.0], [0.6, 0.6]]);
        assert_eq!(env.len(), 2);
        // a line that is optimal only outside [0, 1]
        let env = lower_envelope(vec![[0.0, 0.0], [10.0, 1.0]]);
        assert_eq!(env, vec![[0.0, 0.0]]);
    }

    #[test]
    fn parallel_lines_keep_the_lowest() {
        assert_eq!(lower_envelope(vec![[1.0, 1.0], [0.5, 0.5], [0.7, 0.7]]), vec![[0.5, 0.5]]);
    }
}
