//! Seeded problem generators used by tests, fixtures and the acceptance suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::error::Result;
use crate::model::{
    control_sharing_protocol, delayed_sharing_protocol, delayed_state_sharing_protocol, no_sharing_protocol,
    periodic_sharing_protocol, FiniteSpace, Horizon, Kernel, LocalSpaces, MemoryWindow, Mode, ProblemSpec,
    ProtocolSpec, SharingProtocol,
};

/// A protocol preset together with its parameter.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Preset {
    Delayed(usize),
    DelayedState(usize),
    Periodic(usize),
    Control,
    NoSharing(MemoryWindow),
}

impl Preset {
    pub fn build(&self, n: usize, horizon: Horizon, spaces: &LocalSpaces) -> Result<SharingProtocol> {
        match *self {
            Preset::Delayed(s) => delayed_sharing_protocol(&vec![s; n], horizon, spaces),
            Preset::DelayedState(s) => delayed_state_sharing_protocol(&vec![s; n], horizon, spaces),
            Preset::Periodic(s) => periodic_sharing_protocol(s, horizon, spaces),
            // same fallback as the file loader, so validation reports the exclusion
            Preset::Control => match horizon {
                Horizon::Stationary => control_sharing_protocol(Horizon::Finite(1), spaces),
                h => control_sharing_protocol(h, spaces),
            },
            Preset::NoSharing(w) => no_sharing_protocol(w, horizon, spaces),
        }
    }

    /// The same preset in problem-file form.
    pub fn file_spec(&self) -> ProtocolSpec {
        let (preset, params) = match *self {
            Preset::Delayed(s) => ("delayed_sharing", json!({ "delay": s })),
            Preset::DelayedState(s) => ("delayed_state_sharing", json!({ "delay": s })),
            Preset::Periodic(s) => ("periodic_sharing", json!({ "period": s })),
            Preset::Control => ("control_sharing", json!({})),
            Preset::NoSharing(MemoryWindow::Full) => ("no_sharing", json!({ "window": "full" })),
            Preset::NoSharing(MemoryWindow::Bounded(w)) => ("no_sharing", json!({ "window": w })),
        };
        let serde_json::Value::Object(params) = params else { unreachable!() };
        ProtocolSpec::Preset { preset: preset.into(), params }
    }
}

/// Sizes of a random instance; every controller gets the same local spaces.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shape {
    pub n: usize,
    pub states: usize,
    pub obs: usize,
    pub actions: usize,
    pub horizon: usize,
}

fn stochastic_row(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|_| rng.gen::<f64>() + f64::MIN_POSITIVE).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|p| p / total).collect()
}

fn stochastic_kernel(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Kernel {
    Kernel::new((0..rows).map(|_| stochastic_row(rng, cols)).collect())
}

/// Assembles a problem from tables, building the protocol from `preset`.
#[allow(clippy::too_many_arguments)]
fn assemble(
    n: usize,
    horizon: usize,
    mode: Mode,
    discount: Option<f64>,
    states: usize,
    obs_spaces: Vec<Vec<FiniteSpace>>,
    action_spaces: Vec<Vec<FiniteSpace>>,
    initial_dist: Vec<f64>,
    transition: Vec<Kernel>,
    obs_kernels: Vec<Vec<Kernel>>,
    cost: Vec<Vec<f64>>,
    preset: &Preset,
) -> Result<ProblemSpec> {
    let spaces = LocalSpaces {
        obs: obs_spaces.iter().map(|s| s.iter().map(|f| f.cardinality).collect()).collect(),
        actions: action_spaces.iter().map(|s| s.iter().map(|f| f.cardinality).collect()).collect(),
    };
    let h = match mode {
        Mode::Finite => Horizon::Finite(horizon),
        Mode::Discounted => Horizon::Stationary,
    };
    let protocol = preset.build(n, h, &spaces)?;
    Ok(ProblemSpec {
        n,
        horizon,
        mode,
        discount,
        state_space: FiniteSpace::new(states),
        obs_spaces,
        action_spaces,
        initial_dist,
        transition,
        obs_kernels,
        cost,
        protocol,
    })
}

/// Kernels sampled uniformly then row-normalized, costs uniform in [0, 1].
pub fn random_instance(seed: u64, shape: Shape, preset: &Preset) -> Result<ProblemSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let Shape { n, states, obs, actions, horizon } = shape;
    let joint = actions.pow(n as u32);
    let initial_dist = stochastic_row(&mut rng, states);
    let transition =
        (0..horizon.saturating_sub(1)).map(|_| stochastic_kernel(&mut rng, states * joint, states)).collect();
    let obs_kernels =
        (0..n).map(|_| (0..horizon).map(|_| stochastic_kernel(&mut rng, states, obs)).collect()).collect();
    let cost = (0..horizon).map(|_| (0..states * joint).map(|_| rng.gen::<f64>()).collect()).collect();
    assemble(
        n,
        horizon,
        Mode::Finite,
        None,
        states,
        vec![vec![FiniteSpace::new(obs); horizon]; n],
        vec![vec![FiniteSpace::new(actions); horizon]; n],
        initial_dist,
        transition,
        obs_kernels,
        cost,
        preset,
    )
}

/// Replaces every cost entry by `c`.
pub fn with_constant_cost(mut spec: ProblemSpec, c: f64) -> ProblemSpec {
    for table in &mut spec.cost {
        for v in table.iter_mut() {
            *v = c;
        }
    }
    spec
}

/// The two-controller static team with a common binary observation.
///
/// The state is `(xi, y*, y1, y2)` encoded as `8 xi + 4 y* + 2 y1 + y2`
/// with a seeded joint distribution of full support. At step 0 controller 0
/// sees `y*` and nothing can be done; the observation is then shared. At
/// step 1 controller `i` sees `y_i` and picks a binary action, paying
/// `l(xi, u1, u2)`.
pub fn static_team(seed: u64) -> Result<ProblemSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let initial_dist = stochastic_row(&mut rng, 16);
    let loss: Vec<f64> = (0..8).map(|_| rng.gen::<f64>()).collect();
    let bit = |x: usize, k: usize| (x >> k) & 1;
    let deterministic = |f: &dyn Fn(usize) -> usize, card: usize| {
        Kernel::new(
            (0..16)
                .map(|x| {
                    let mut row = vec![0.0; card];
                    row[f(x)] = 1.0;
                    row
                })
                .collect(),
        )
    };
    let obs_kernels = vec![
        vec![deterministic(&|x| bit(x, 2), 2), deterministic(&|x| bit(x, 1), 2)],
        vec![deterministic(&|_| 0, 1), deterministic(&|x| bit(x, 0), 2)],
    ];
    let cost = vec![
        vec![0.0; 16],
        (0..16).flat_map(|x| (0..4).map(move |u| (x, u))).map(|(x, u)| loss[bit(x, 3) * 4 + u]).collect(),
    ];
    assemble(
        2,
        2,
        Mode::Finite,
        None,
        16,
        vec![vec![FiniteSpace::new(2), FiniteSpace::new(2)], vec![FiniteSpace::new(1), FiniteSpace::new(2)]],
        vec![vec![FiniteSpace::new(1), FiniteSpace::new(2)]; 2],
        initial_dist,
        vec![Kernel::identity(16, 1)],
        obs_kernels,
        cost,
        &Preset::Delayed(1),
    )
}

/// Single controller, two states, noisy binary observations. The next state
/// depends only on the action, so only finitely many beliefs are reachable.
pub fn reset_discounted_instance(seed: u64, beta: f64) -> Result<ProblemSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let initial_dist = stochastic_row(&mut rng, 2);
    let after: Vec<Vec<f64>> = (0..2).map(|_| stochastic_row(&mut rng, 2)).collect();
    let transition = Kernel::new((0..2).flat_map(|_| after.clone()).collect());
    let p0 = 0.8 + 0.15 * rng.gen::<f64>();
    let p1 = 0.7 + 0.25 * rng.gen::<f64>();
    let obs = Kernel::new(vec![vec![p0, 1.0 - p0], vec![1.0 - p1, p1]]);
    let cost = (0..4).map(|_| rng.gen::<f64>()).collect();
    assemble(
        1,
        1,
        Mode::Discounted,
        Some(beta),
        2,
        vec![vec![FiniteSpace::new(2)]],
        vec![vec![FiniteSpace::new(2)]],
        initial_dist,
        vec![transition],
        vec![vec![obs]],
        vec![cost],
        &Preset::Delayed(1),
    )
}

/// Two-controller discounted problem with constant cost `c` and generic
/// dynamics over a reset kernel.
pub fn constant_discounted_instance(seed: u64, beta: f64, c: f64) -> Result<ProblemSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let initial_dist = stochastic_row(&mut rng, 2);
    let after: Vec<Vec<f64>> = (0..4).map(|_| stochastic_row(&mut rng, 2)).collect();
    let transition = Kernel::new((0..2).flat_map(|_| after.clone()).collect());
    let obs_kernels = (0..2).map(|_| vec![stochastic_kernel(&mut rng, 2, 2)]).collect();
    assemble(
        2,
        1,
        Mode::Discounted,
        Some(beta),
        2,
        vec![vec![FiniteSpace::new(2)]; 2],
        vec![vec![FiniteSpace::new(2)]; 2],
        initial_dist,
        vec![transition],
        obs_kernels,
        vec![vec![c; 8]],
        &Preset::Delayed(1),
    )
}

/// Two subsystems with state `(x1, x2)`; controller `i` observes `x_i`
/// exactly and the pair is shared with a delay.
pub fn delayed_state_sharing_instance(seed: u64, delay: usize, horizon: usize) -> Result<ProblemSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let initial_dist = stochastic_row(&mut rng, 4);
    let transition = (0..horizon.saturating_sub(1)).map(|_| stochastic_kernel(&mut rng, 16, 4)).collect();
    let component = |i: usize| {
        Kernel::new(
            (0..4)
                .map(|x| {
                    let mut row = vec![0.0; 2];
                    row[if i == 0 { x >> 1 } else { x & 1 }] = 1.0;
                    row
                })
                .collect(),
        )
    };
    let obs_kernels = (0..2).map(|i| vec![component(i); horizon]).collect();
    let cost = (0..horizon).map(|_| (0..16).map(|_| rng.gen::<f64>()).collect()).collect();
    assemble(
        2,
        horizon,
        Mode::Finite,
        None,
        4,
        vec![vec![FiniteSpace::new(2); horizon]; 2],
        vec![vec![FiniteSpace::new(2); horizon]; 2],
        initial_dist,
        transition,
        obs_kernels,
        cost,
        &Preset::DelayedState(delay),
    )
}

/// Turns a finite problem into a discounted one built from its first slice.
pub fn discounted_from_first_slice(spec: &ProblemSpec, beta: f64, preset: &Preset) -> Result<ProblemSpec> {
    assemble(
        spec.n,
        1,
        Mode::Discounted,
        Some(beta),
        spec.num_states(),
        spec.obs_spaces.iter().map(|s| vec![s[0].clone()]).collect(),
        spec.action_spaces.iter().map(|s| vec![s[0].clone()]).collect(),
        spec.initial_dist.clone(),
        vec![spec.transition[0].clone()],
        spec.obs_kernels.iter().map(|k| vec![k[0].clone()]).collect(),
        vec![spec.cost[0].clone()],
        preset,
    )
}

/// A single-controller problem whose protocol sends the current pair at
/// step 0 and also keeps it in local memory, which is not allowed.
pub fn overlapping_protocol_instance(seed: u64) -> Result<ProblemSpec> {
    let shape = Shape { n: 1, states: 2, obs: 2, actions: 2, horizon: 2 };
    let mut spec = random_instance(seed, shape, &Preset::Delayed(2))?;
    let spaces = spec.local_spaces();
    let immediate = delayed_sharing_protocol(&[1], Horizon::Finite(2), &spaces)?;
    let stage = &mut spec.protocol.controllers[0].stages[0];
    stage.messages = immediate.controllers[0].stages[0].messages.clone();
    stage.msg_map = immediate.controllers[0].stages[0].msg_map.clone();
    spec.protocol.name = "send_and_keep".into();
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_instances_are_valid() {
        let shape = Shape { n: 2, states: 2, obs: 2, actions: 2, horizon: 3 };
        for preset in [
            Preset::Delayed(1),
            Preset::Delayed(2),
            Preset::DelayedState(2),
            Preset::Periodic(2),
            Preset::Control,
            Preset::NoSharing(MemoryWindow::Bounded(1)),
            Preset::NoSharing(MemoryWindow::Full),
        ] {
            let spec = random_instance(7, shape, &preset).unwrap();
            assert!(spec.validate().is_valid(), "{preset:?}: {}", spec.validate());
        }
        for spec in [
            static_team(1).unwrap(),
            reset_discounted_instance(1, 0.5).unwrap(),
            constant_discounted_instance(1, 0.9, 2.0).unwrap(),
            delayed_state_sharing_instance(3, 2, 3).unwrap(),
        ] {
            assert!(spec.validate().is_valid(), "{}", spec.validate());
        }
    }

    #[test]
    fn seeds_are_reproducible() {
        let shape = Shape { n: 2, states: 2, obs: 2, actions: 2, horizon: 2 };
        assert_eq!(
            random_instance(3, shape, &Preset::Delayed(1)).unwrap(),
            random_instance(3, shape, &Preset::Delayed(1)).unwrap()
        );
        assert_ne!(
            random_instance(3, shape, &Preset::Delayed(1)).unwrap(),
            random_instance(4, shape, &Preset::Delayed(1)).unwrap()
        );
    }
}
