use serde::{Deserialize, Serialize};

/// Resolution of the canonical form used to deduplicate beliefs.
pub const CANONICAL_RESOLUTION: f64 = 1e-12;
/// Entries below this are treated as exact zeros by the canonical form.
pub const CANONICAL_FLOOR: f64 = 1e-15;

/// Hashable canonical form of a probability vector: the nonzero entries,
/// rounded to multiples of 1e-12, with their positions.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BeliefKey {
    pub t: usize,
    pub entries: Vec<(u32, u64)>,
}

pub fn canonical_key(t: usize, weights: &[f64]) -> BeliefKey {
    let entries = weights
        .iter()
        .enumerate()
        .filter(|(_, &w)| w >= CANONICAL_FLOOR)
        .map(|(k, &w)| (k as u32, (w / CANONICAL_RESOLUTION).round() as u64))
        .filter(|&(_, q)| q > 0)
        .collect();
    BeliefKey { t, entries }
}

/// Coordinator belief over the enumerated states `(x, y, m)` of step `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Belief {
    pub t: usize,
    pub weights: Vec<f64>,
}

/// Belief over `(x, m)` with the current observations marginalized out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReducedBelief {
    pub t: usize,
    pub weights: Vec<f64>,
}

impl Belief {
    pub fn canonical_key(&self) -> BeliefKey {
        canonical_key(self.t, &self.weights)
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }
}

impl ReducedBelief {
    pub fn canonical_key(&self) -> BeliefKey {
        canonical_key(self.t, &self.weights)
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Half the l1 distance between two vectors of equal length.
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "total variation of vectors with different supports");
    0.5 * a.iter().zip(b).map(|(p, q)| (p - q).abs()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_key_ignores_sub_resolution_noise() {
        let a = canonical_key(1, &[0.25, 0.75, 0.0]);
        let b = canonical_key(1, &[0.25 + 1e-14, 0.75 - 1e-14, 1e-16]);
        assert_eq!(a, b);
        assert_ne!(a, canonical_key(2, &[0.25, 0.75, 0.0]));
        assert_ne!(a, canonical_key(1, &[0.25 + 1e-10, 0.75 - 1e-10, 0.0]));
    }

    #[test]
    fn tv_distance() {
        assert_eq!(total_variation(&[1.0, 0.0], &[0.0, 1.0]), 1.0);
        assert_eq!(total_variation(&[0.5, 0.5], &[0.5, 0.5]), 0.0);
    }
}
