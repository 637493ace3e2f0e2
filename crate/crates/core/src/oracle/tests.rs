use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::coordinator::{total_variation, Coordinator};
use crate::dp::{extract_control_strategy, solve_discounted, solve_finite, Representation, SolverConfig};
use crate::instances::{random_instance, reset_discounted_instance, static_team, with_constant_cost, Preset, Shape};
use crate::model::{FiniteSpace, Kernel, MemoryWindow};

fn binary(seed: u64, n: usize, horizon: usize, preset: Preset) -> ProblemSpec {
    random_instance(seed, Shape { n, states: 2, obs: 2, actions: 2, horizon }, &preset).unwrap()
}

/// A strategy with random actions on every realizable decision point.
fn random_strategy(spec: &ProblemSpec, seed: u64) -> ControlStrategy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = ControlStrategy::new(spec.horizon);
    let mut particles = initial_particles(spec);
    for t in 0..spec.horizon {
        let layer = Layer::new(spec, t, &particles);
        g.stages[t] = layer.entries.clone();
        let k = rng.gen_range(0..layer.count());
        layer.assign(k, &mut g.stages[t]);
        if t + 1 < spec.horizon {
            particles = advance(spec, &g, t, &particles);
        }
    }
    g
}

#[test]
fn constant_cost_for_every_strategy() {
    let spec = with_constant_cost(binary(3, 2, 2, Preset::Delayed(1)), 0.5);
    for seed in 0..5 {
        let g = random_strategy(&spec, seed);
        assert!((exact_cost_of_strategy(&spec, &g).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn deterministic_system_follows_one_trajectory() {
    let mut spec = binary(1, 1, 3, Preset::Delayed(1));
    spec.initial_dist = vec![0.0, 1.0];
    // next state = action, observation = state
    spec.transition = vec![Kernel::new(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]]); 2];
    spec.obs_kernels = vec![vec![Kernel::identity(2, 1); 3]];
    spec.cost = vec![vec![1.0, 2.0, 3.0, 4.0]; 3];
    // always play 1 - y
    let mut g = ControlStrategy::new(3);
    let flip = vec![vec![1, 0]];
    g.push(StrategyEntry { t: 0, history: vec![], node: 0, tables: flip.clone() });
    let mut history = Vec::new();
    let mut x = 1;
    let mut expected = 0.0;
    for t in 0..3 {
        let u = 1 - x;
        expected += spec.cost_of(t, x, u);
        if t > 0 {
            g.push(StrategyEntry { t, history: history.clone(), node: 0, tables: flip.clone() });
        }
        history.push(spec.message(0, t, 0, x, u));
        x = u;
    }
    g.finish();
    assert_eq!(exact_cost_of_strategy(&spec, &g).unwrap(), expected);
    assert_eq!(expected, 3.0 + 2.0 + 3.0);
}

#[test]
fn static_team_counts() {
    let spec = static_team(11).unwrap();
    let basic = enumerate_basic_strategies(&spec, &OracleConfig::default()).unwrap();
    let coord = enumerate_coordinator_strategies(&spec, &OracleConfig::default()).unwrap();
    assert_eq!(basic.count, 256);
    assert_eq!(coord.count, 32);
    assert_eq!(coord.forced_nodes, 1);
    assert_eq!(coord.points, 3);
    assert!((basic.min_cost - coord.min_cost).abs() <= 1e-9);
    let (report, _) = solve_finite(&spec, &SolverConfig::default()).unwrap();
    assert!((report.optimal_value - basic.min_cost).abs() <= 1e-9);
    assert!((exact_cost_of_strategy(&spec, &basic.argmin).unwrap() - basic.min_cost).abs() <= 1e-12);
    assert!((exact_cost_of_strategy(&spec, &coord.argmin).unwrap() - coord.min_cost).abs() <= 1e-12);
}

#[test]
fn single_decision_point_with_three_actions() {
    let mut spec =
        random_instance(2, Shape { n: 1, states: 2, obs: 1, actions: 3, horizon: 1 }, &Preset::Delayed(1)).unwrap();
    spec.obs_spaces = vec![vec![FiniteSpace::new(1)]];
    let basic = enumerate_basic_strategies(&spec, &OracleConfig::default()).unwrap();
    let coord = enumerate_coordinator_strategies(&spec, &OracleConfig::default()).unwrap();
    assert_eq!(basic.count, 3);
    assert_eq!(coord.count, 3);
    let one_shot = (0..3)
        .map(|u| (0..2).map(|x| spec.initial_dist[x] * spec.cost_of(0, x, u)).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    assert!((basic.min_cost - one_shot).abs() < 1e-15);
    assert!((coord.min_cost - one_shot).abs() < 1e-15);
}

#[test]
fn three_way_agreement_on_delayed_sharing() {
    let spec = binary(21, 2, 2, Preset::Delayed(1));
    let basic = enumerate_basic_strategies(&spec, &OracleConfig::default()).unwrap();
    let coord = enumerate_coordinator_strategies(&spec, &OracleConfig::default()).unwrap();
    let (report, tree) = solve_finite(&spec, &SolverConfig::default()).unwrap();
    assert!((basic.min_cost - coord.min_cost).abs() <= 1e-9);
    assert!((basic.min_cost - report.optimal_value).abs() <= 1e-9);
    assert!(coord.count < basic.count);
    // 16 choices at step 0, then 2^16 per step-0 choice
    assert_eq!(basic.count, 1 << 20);
    let g = extract_control_strategy(&tree);
    assert!((exact_cost_of_strategy(&spec, &g).unwrap() - report.optimal_value).abs() <= 1e-9);
}

#[test]
fn agreement_without_sharing_and_with_control_sharing() {
    for preset in [Preset::NoSharing(MemoryWindow::Bounded(1)), Preset::Control, Preset::Delayed(2)] {
        let spec = binary(5, 1, 3, preset);
        let basic = enumerate_basic_strategies(&spec, &OracleConfig::default()).unwrap();
        let coord = enumerate_coordinator_strategies(&spec, &OracleConfig::default()).unwrap();
        let (report, _) = solve_finite(&spec, &SolverConfig::default()).unwrap();
        assert!((basic.min_cost - coord.min_cost).abs() <= 1e-9, "{}", spec.protocol.name);
        assert!((basic.min_cost - report.optimal_value).abs() <= 1e-9, "{}", spec.protocol.name);
    }
}

#[test]
fn caps_fail_fast() {
    let spec = binary(21, 2, 2, Preset::Delayed(1));
    let tight = OracleConfig { strategy_cap: 1000, ..OracleConfig::default() };
    assert!(matches!(enumerate_basic_strategies(&spec, &tight), Err(Error::Infeasible { cap: 1000, .. })));
    let few = OracleConfig { branch_cap: 10, ..OracleConfig::default() };
    let g = random_strategy(&spec, 0);
    assert!(matches!(exact_cost_with(&spec, &g, 10), Err(Error::Infeasible { count: 64, .. })));
    assert!(matches!(enumerate_coordinator_strategies(&spec, &few), Err(Error::Infeasible { .. })));
    let narrow = OracleConfig { prescription_cap: 8, ..OracleConfig::default() };
    assert!(matches!(enumerate_coordinator_strategies(&spec, &narrow), Err(Error::Infeasible { count: 16, .. })));
}

#[test]
fn posterior_matches_the_filter() {
    let spec = binary(8, 2, 3, Preset::Delayed(2));
    let coord = Coordinator::new(&spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..4 {
        let mut belief = coord.initial_belief();
        let mut tables = Vec::new();
        let mut messages = Vec::new();
        for t in 0..spec.horizon - 1 {
            let space = coord.prescription_space(t, 1 << 20).unwrap();
            let g = space.decode(rng.gen_range(0..space.size()));
            let dist = coord.message_distribution(&belief, &g);
            let z = dist[rng.gen_range(0..dist.len())].0;
            tables.push(g.tables.clone());
            messages.push(z);
            belief = coord.eta_update(&belief, &g, z).unwrap();
            let post = trajectory_posterior(&spec, &tables, &messages).unwrap();
            assert!(total_variation(&post.dense(&spec), &belief.weights) <= 1e-12);
            let p: f64 = dist.iter().find(|d| d.0 == z).unwrap().1;
            assert!(p > 0.0);
        }
    }
}

#[test]
fn posterior_rejects_impossible_messages() {
    let spec = binary(8, 1, 2, Preset::Delayed(1));
    // message 0 is the empty message, never sent under delayed sharing
    assert!(matches!(
        trajectory_posterior(&spec, &[vec![vec![0, 0]]], &[0]),
        Err(Error::ZeroProbabilityObservation { .. })
    ));
}

#[test]
fn textbook_recursion_matches_single_controller_solves() {
    for seed in 0..3 {
        let spec =
            random_instance(seed, Shape { n: 1, states: 3, obs: 2, actions: 2, horizon: 3 }, &Preset::Delayed(1))
                .unwrap();
        let (report, _) = solve_finite(&spec, &SolverConfig::default()).unwrap();
        let reference = textbook_pomdp_value(&spec).unwrap();
        assert!((report.optimal_value - reference).abs() <= 1e-9);
    }
}

#[test]
fn alpha_vectors_match_the_discounted_solver() {
    let eps = 1e-4;
    for beta in [0.5, 0.9] {
        let spec = reset_discounted_instance(6, beta).unwrap();
        let alpha = discounted_alpha_value(&spec, eps).unwrap();
        let (report, _) = solve_discounted(&spec, eps, Representation::Full, &SolverConfig::default()).unwrap();
        assert!((alpha.value - report.optimal_value).abs() <= 2.0 * eps);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn no_strategy_beats_the_coordinator_minimum(seed in 0u64..1000, pick in 0u64..1000) {
        let spec = binary(seed, 1, 3, Preset::Delayed(1));
        let coord = enumerate_coordinator_strategies(&spec, &OracleConfig::default()).unwrap();
        let g = random_strategy(&spec, pick);
        let cost = exact_cost_of_strategy(&spec, &g).unwrap();
        prop_assert!(cost >= coord.min_cost - 1e-12);
        let (lo, hi) = spec.cost_range();
        prop_assert!(cost >= 3.0 * lo - 1e-12 && cost <= 3.0 * hi + 1e-12);
    }
}
