use super::*;
use crate::instances::{
    constant_discounted_instance, random_instance, reset_discounted_instance, static_team, with_constant_cost, Preset,
    Shape,
};
use crate::model::{control_sharing_protocol, Horizon, MemoryWindow};

fn binary(seed: u64, n: usize, horizon: usize, preset: Preset) -> ProblemSpec {
    random_instance(seed, Shape { n, states: 2, obs: 2, actions: 2, horizon }, &preset).unwrap()
}

fn config() -> SolverConfig {
    SolverConfig::default()
}

/// Recomputes every node's value from its children.
fn assert_bellman(spec: &ProblemSpec, tree: &PolicyTree) {
    for stage in &tree.stages {
        for node in stage {
            let mut v = node.immediate_cost;
            for c in &node.children {
                v += c.probability * tree.node(node.t + 1, c.node).value;
            }
            assert!((v - node.value).abs() <= 1e-9, "node {} at step {}", node.id, node.t);
            let steps = (spec.horizon - node.t) as f64;
            let (lo, hi) = spec.cost_range();
            assert!(node.value >= steps * lo - 1e-9 && node.value <= steps * hi + 1e-9);
            let total: f64 = node.children.iter().map(|c| c.probability).sum();
            if !node.children.is_empty() {
                assert!((total - 1.0).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn constant_cost_gives_c_times_horizon() {
    let spec = with_constant_cost(binary(1, 2, 3, Preset::Delayed(1)), 0.75);
    let (report, tree) = solve_finite(&spec, &config()).unwrap();
    assert!((report.optimal_value - 2.25).abs() < 1e-12);
    assert!(tree.stages.iter().flatten().all(|n| n.prescription.index == 0));
}

#[test]
fn bellman_consistency_and_bounds() {
    let cases = [
        (2, 2, Preset::Delayed(1)),
        (2, 2, Preset::Control),
        (2, 2, Preset::NoSharing(MemoryWindow::Bounded(1))),
        (1, 3, Preset::Delayed(2)),
        (1, 3, Preset::Control),
        (1, 4, Preset::Periodic(2)),
    ];
    for (n, horizon, preset) in cases {
        let spec = binary(4, n, horizon, preset);
        let (_, tree) = solve_finite(&spec, &config()).unwrap();
        assert_bellman(&spec, &tree);
        let (_, reduced) = solve_finite_reduced(&spec, &config()).unwrap();
        assert_bellman(&spec, &reduced);
    }
}

#[test]
fn reduced_matches_full() {
    for seed in 0..4 {
        let spec = binary(seed, 2, 2, Preset::Delayed(1));
        let (full, _) = solve_finite(&spec, &config()).unwrap();
        let (reduced, _) = solve_finite_reduced(&spec, &config()).unwrap();
        assert!((full.optimal_value - reduced.optimal_value).abs() <= 1e-9);
        for (a, b) in reduced.stage_nodes.iter().zip(&full.stage_nodes) {
            assert!(a <= b);
        }
    }
}

#[test]
fn reduced_node_values_match_lifted_full_solves() {
    let spec = binary(9, 1, 4, Preset::Delayed(2));
    let coord = Coordinator::new(&spec).unwrap();
    let (_, reduced) = solve_finite_reduced(&spec, &config()).unwrap();
    for node in reduced.stages[1].iter().take(5) {
        let lifted = reduced.full_belief(&coord, node);
        let (full, _) = solve_finite_from(&spec, &lifted, Representation::Full, &config()).unwrap();
        assert!((full.optimal_value - node.value).abs() <= 1e-9);
    }
}

#[test]
fn single_step_strategy_is_the_root_prescription() {
    let spec = binary(2, 2, 1, Preset::Delayed(1));
    let (_, tree) = solve_finite(&spec, &config()).unwrap();
    let g = extract_control_strategy(&tree);
    assert_eq!(g.node_count(), 1);
    assert_eq!(g.lookup(0, &[]).unwrap().tables, tree.root().prescription.tables);
}

#[test]
fn extracted_strategy_covers_every_history() {
    let spec = binary(5, 2, 3, Preset::Delayed(1));
    let (_, tree) = solve_finite(&spec, &config()).unwrap();
    let g = extract_control_strategy(&tree);
    // Walk the tree along histories and compare entries.
    let mut frontier = vec![(tree.root(), Vec::<usize>::new())];
    while let Some((node, history)) = frontier.pop() {
        assert_eq!(g.lookup(node.t, &history).unwrap().tables, node.prescription.tables);
        for c in &node.children {
            let mut h = history.clone();
            h.push(c.message);
            frontier.push((tree.node(node.t + 1, c.node), h));
        }
    }
}

#[test]
fn solver_is_deterministic() {
    let spec = binary(3, 1, 4, Preset::Delayed(2));
    let a = solve_finite(&spec, &config()).unwrap();
    let b = solve_finite(&spec, &config()).unwrap();
    assert_eq!(a.1, b.1);
    assert_eq!(a.0.optimal_value.to_bits(), b.0.optimal_value.to_bits());
    let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let c = serial.install(|| solve_finite(&spec, &config()).unwrap());
    assert_eq!(serde_json::to_string(&a.1).unwrap(), serde_json::to_string(&c.1).unwrap());
}

#[test]
fn static_team_counts() {
    let spec = static_team(3).unwrap();
    let (report, tree) = solve_finite(&spec, &config()).unwrap();
    assert_eq!(report.stage_nodes, vec![1, 2]);
    assert_eq!(report.evaluations, 32);
    assert_eq!(report.forced_nodes, 1);
    assert_eq!(tree.stages[1].len(), 2);
}

#[test]
fn caps_are_enforced() {
    let spec = binary(1, 2, 2, Preset::Control);
    let tight = SolverConfig { prescription_cap: 100, ..config() };
    assert!(matches!(solve_finite(&spec, &tight), Err(Error::SizeOverflow { size: 256, cap: 100, .. })));
    let few_nodes = SolverConfig { node_cap: 2, ..config() };
    assert!(matches!(solve_finite(&spec, &few_nodes), Err(Error::SizeOverflow { .. })));
}

#[test]
fn truncation_depth_formula() {
    assert_eq!(truncation_depth(0.0, 1e-4, 1.0), 1);
    assert_eq!(truncation_depth(0.5, 1e-4, 0.0), 1);
    // 0.5^K / 0.5 <= 1e-4  =>  K >= 14.29
    assert_eq!(truncation_depth(0.5, 1e-4, 1.0), 15);
    let k = truncation_depth(0.9, 1e-4, 2.0);
    assert!(0.9f64.powi(k as i32) * 2.0 / 0.1 <= 1e-4);
    assert!(0.9f64.powi(k as i32 - 1) * 2.0 / 0.1 > 1e-4);
}

#[test]
fn discounted_constant_cost() {
    for beta in [0.5, 0.9] {
        let spec = constant_discounted_instance(2, beta, 1.25).unwrap();
        let (report, policy) = solve_discounted(&spec, 1e-4, Representation::Full, &config()).unwrap();
        assert!((report.optimal_value - 1.25 / (1.0 - beta)).abs() <= 1e-4);
        assert!(policy.truncation_bound <= 1e-4);
    }
}

#[test]
fn discounted_with_zero_discount_is_one_step() {
    let spec = constant_discounted_instance(4, 0.0, 1.0).unwrap();
    let mut spec = spec;
    spec.cost[0] = vec![0.3, 0.1, 0.7, 0.2, 0.9, 0.4, 0.5, 0.6];
    let (disc, _) = solve_discounted(&spec, 1e-3, Representation::Full, &config()).unwrap();
    let mut finite = spec.clone();
    finite.mode = Mode::Finite;
    finite.discount = None;
    let (one, _) = solve_finite(&finite, &config()).unwrap();
    assert_eq!(disc.optimal_value, one.optimal_value);
}

#[test]
fn discounted_refinement_is_stable() {
    let spec = reset_discounted_instance(6, 0.9).unwrap();
    let (coarse, p) = solve_discounted(&spec, 1e-3, Representation::Full, &config()).unwrap();
    let (fine, _) = solve_discounted(&spec, 5e-4, Representation::Full, &config()).unwrap();
    assert!((coarse.optimal_value - fine.optimal_value).abs() < 1e-3);
    let (reduced, _) = solve_discounted(&spec, 1e-3, Representation::Reduced, &config()).unwrap();
    assert!((coarse.optimal_value - reduced.optimal_value).abs() < 1e-12);
    // the reachable set closes: root, one belief per action
    assert!(p.entries.len() <= 3);
    assert!(p.entries.iter().all(|e| e.prescription.is_some()));
}

#[test]
fn control_sharing_has_no_stationary_solution() {
    let mut spec = constant_discounted_instance(1, 0.5, 1.0).unwrap();
    spec.protocol = control_sharing_protocol(Horizon::Finite(1), &spec.local_spaces()).unwrap();
    assert!(matches!(solve_discounted(&spec, 1e-3, Representation::Full, &config()), Err(Error::Unsupported(_))));
}
