//! Monte Carlo estimators: exact special cases, reproducibility and the
//! statistical checks at reduced scale.

mod common;

use common::*;
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regime_stackelberg::equilibrium::ControlTable;
use regime_stackelberg::model::{load_problem, probe_convexity};
use regime_stackelberg::montecarlo::*;
use regime_stackelberg::riccati::SolveOptions;
use regime_stackelberg::{Equilibrium, Error, ProblemData, Regime};

fn opts() -> SolveOptions {
    SolveOptions::default()
}

fn with_diffusion(sigma: f64) -> ProblemData {
    let text = std::fs::read_to_string(format!("{}/../../problems/example1.prob", env!("CARGO_MANIFEST_DIR"))).unwrap();
    load_problem(&text.replace("M = -1\n", &format!("M = -1\nsigma = {sigma}\n"))).unwrap()
}

#[test]
fn zero_controls_leave_the_state_at_rest() {
    let est = estimate_cost(&example1(), None, FollowerSpec::Zero, LeaderSpec::Zero, &McConfig::new(500, 50, 1)).unwrap();
    assert_eq!(est.mean, -1.0);
    assert_eq!(est.std_error, 0.0);
}

#[test]
fn zero_problem_costs_nothing() {
    let p = example1().with_initial_state(DVector::zeros(1)).unwrap();
    let est = estimate_cost(&p, None, FollowerSpec::Zero, LeaderSpec::Zero, &McConfig::new(300, 50, 1)).unwrap();
    assert_eq!(est.mean, 0.0);
    let eq = Equilibrium::solve(&p, 100, opts()).unwrap();
    let cl = simulate_closed_loop(&eq, &McConfig::new(100, 50, 1)).unwrap();
    for b in &cl.bundles {
        assert!(b.x.iter().chain(&b.phi_star).chain(&b.u1).chain(&b.u2).all(|v| v[0] == 0.0));
        assert_eq!(b.cost, 0.0);
    }
    let res = stationarity_residual(&cl, &eq).unwrap();
    assert_eq!(res.max, 0.0);
}

#[test]
fn follower_only_cost_equals_control_energy() {
    let p = example1().with_initial_state(DVector::zeros(1)).unwrap();
    let grid = p.grid(50).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let v = random_direction(&p, &grid, Regime::from_index(0), 1, &mut rng);
    let batch = estimate_costs(&p, None, &[(FollowerSpec::Table(&v), LeaderSpec::Zero)], &McConfig::new(20_000, 50, 8)).unwrap();
    let gap: Vec<f64> = batch.costs[0].iter().zip(&batch.follower_energy[0]).map(|(c, e)| c - e).collect();
    let est = CostEstimate::from_samples(&gap, Functional::Game);
    assert!(est.agrees_with(0.0, 3.0), "{est:?}");
}

#[test]
fn estimates_are_reproducible_and_worker_independent() {
    let eq = Equilibrium::solve(&with_diffusion(0.3), 200, opts()).unwrap();
    let p = eq.problem().clone();
    let cfg = McConfig::new(3000, 50, 21);
    let a = estimate_cost(&p, Some(&eq), FollowerSpec::Equilibrium, LeaderSpec::Equilibrium, &cfg).unwrap();
    let b = estimate_cost(&p, Some(&eq), FollowerSpec::Equilibrium, LeaderSpec::Equilibrium, &cfg).unwrap();
    let c = estimate_cost(&p, Some(&eq), FollowerSpec::Equilibrium, LeaderSpec::Equilibrium, &cfg.with_workers(3)).unwrap();
    assert_eq!(a.mean.to_bits(), b.mean.to_bits());
    assert_eq!(a.mean.to_bits(), c.mean.to_bits());
    assert_eq!(a.std_error.to_bits(), c.std_error.to_bits());
    let d = estimate_cost(&p, Some(&eq), FollowerSpec::Equilibrium, LeaderSpec::Equilibrium, &McConfig::new(3000, 50, 22)).unwrap();
    assert_ne!(a.mean, d.mean);
}

#[test]
fn common_random_numbers_shrink_the_difference_error() {
    let eq = Equilibrium::solve(&with_diffusion(1.0), 200, opts()).unwrap();
    let report = saddle_probe(&eq, 0.1, 3, &McConfig::new(5000, 50, 13)).unwrap();
    for o in report.follower.iter().chain(&report.leader) {
        assert!(o.unpaired_std_error >= 10.0 * o.difference.std_error, "{o:?}");
    }
}

#[test]
fn example1_equilibrium_cost_has_no_spread() {
    // Every path costs exactly -x^2/2, so pairing cannot reduce variance further.
    let eq = Equilibrium::solve(&example1(), 1000, opts()).unwrap();
    let est = estimate_cost(eq.problem(), Some(&eq), FollowerSpec::Equilibrium, LeaderSpec::Equilibrium, &McConfig::new(2000, 100, 3)).unwrap();
    assert!(est.std_error < 1e-12);
    assert!((est.mean + 0.5).abs() < 1e-12);
}

#[test]
fn zero_perturbation_changes_nothing() {
    let eq = Equilibrium::solve(&example1(), 200, opts()).unwrap();
    let report = saddle_probe(&eq, 0.0, 2, &McConfig::new(500, 50, 5)).unwrap();
    for o in report.follower.iter().chain(&report.leader) {
        assert!(o.difference.mean.abs() < 1e-12 && o.holds);
    }
}

#[test]
fn saddle_inequalities_hold_at_small_scale() {
    let eq = Equilibrium::solve(&example1(), 1000, opts()).unwrap();
    let report = saddle_probe(&eq, 0.1, 4, &McConfig::new(20_000, 100, 17)).unwrap();
    assert_eq!(report.follower_pass_rate(), 1.0);
    assert_eq!(report.leader_pass_rate(), 1.0);
    assert!(report.skipped.is_empty());
    assert!((report.scaling_ratio - 4.0).abs() <= 1.0, "{}", report.scaling_ratio);
}

#[test]
fn stationarity_residual_detects_a_shifted_control() {
    let eq = Equilibrium::solve(&example1(), 1000, opts()).unwrap();
    let mut cl = simulate_closed_loop(&eq, &McConfig::new(100, 100, 6)).unwrap();
    assert!(stationarity_residual(&cl, &eq).unwrap().max < 1e-10);
    for b in &mut cl.bundles {
        for u in &mut b.u2 {
            u[0] += 0.1;
        }
    }
    let res = stationarity_residual(&cl, &eq).unwrap();
    assert!((res.max - 0.4).abs() < 1e-12, "{res:?}");
    for b in &cl.bundles {
        for j in 0..=100 {
            let expected = [0.1, 0.4][b.regimes[j]];
            let pol = eq.node_policy(10 * j, b.regimes[j]);
            let r = pol.stationarity(&b.phi_star[j], &b.y[j], &b.z[j], &b.u2[j]).norm();
            assert!((r - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn stationarity_holds_along_example2_paths() {
    let p = example2().with_initial_state(DVector::from_element(1, 0.3)).unwrap();
    let eq = Equilibrium::solve(&p, 1000, opts()).unwrap();
    let cl = simulate_closed_loop(&eq, &McConfig::new(300, 100, 6)).unwrap();
    assert!(stationarity_residual(&cl, &eq).unwrap().max < 1e-10);
}

#[test]
fn value_check_at_the_origin() {
    let eq = Equilibrium::solve(&example1(), 1000, opts()).unwrap();
    let rows = value_check(&eq, &[DVector::zeros(1)], Regime::from_index(1), &McConfig::new(500, 100, 2)).unwrap();
    assert_eq!(rows[0].estimate.mean, 0.0);
    assert_eq!(rows[0].analytic.equilibrium, Some(0.0));
}

#[test]
fn example2_leader_value_matches_simulation() {
    let eq = Equilibrium::solve(&example2(), 1000, opts()).unwrap();
    let xs = [DVector::zeros(1), DVector::from_element(1, 0.5)];
    // Two step sizes give the discretization bias allowance.
    let fine = value_check(&eq, &xs, Regime::from_index(0), &McConfig::new(20_000, 200, 12)).unwrap();
    let coarse = value_check(&eq, &xs, Regime::from_index(0), &McConfig::new(20_000, 100, 12)).unwrap();
    for (f, c) in fine.iter().zip(&coarse) {
        let bias = (f.estimate.mean - c.estimate.mean).abs();
        assert!((f.estimate.mean - f.analytic.leader).abs() <= 3.0 * f.estimate.std_error + bias, "{f:?}");
    }
}

fn discretization_gap(a: &CostEstimate, b: &CostEstimate) -> bool {
    let floor = 1e-12 * a.mean.abs().max(1.0);
    (a.mean - b.mean).abs() <= 3.0 * (a.std_error + b.std_error) + floor
}

#[test]
fn example1_cost_is_stable_under_step_refinement() {
    let eq = Equilibrium::solve(&with_diffusion(0.5), 800, opts()).unwrap();
    let est = |steps| {
        estimate_cost(eq.problem(), Some(&eq), FollowerSpec::Equilibrium, LeaderSpec::Equilibrium, &McConfig::new(20_000, steps, 30)).unwrap()
    };
    assert!(discretization_gap(&est(100), &est(400)));
}

#[test]
fn too_many_blown_up_paths_fail_the_run() {
    let text = "[meta]\nT = 1\nn = 1\nm1 = 1\nm2 = 1\nD = 1\n[generator]\n0\n[regime 1]\nA = 1e6\nR1 = 1\nR2 = -1\n[initial]\nx = 1\ni = 1\n";
    let p = load_problem(text).unwrap();
    match estimate_cost(&p, None, FollowerSpec::Zero, LeaderSpec::Zero, &McConfig::new(200, 100, 1)) {
        Err(Error::TooManyExclusions { excluded, total }) => assert_eq!((excluded, total), (200, 200)),
        other => panic!("{other:?}"),
    }
}

#[test]
fn policy_controls_need_a_solved_equilibrium() {
    let r = estimate_cost(&example1(), None, FollowerSpec::Equilibrium, LeaderSpec::Zero, &McConfig::new(10, 10, 1));
    assert!(matches!(r, Err(Error::InvalidArgument(_))));
    let grid = example1().grid(10).unwrap();
    let wrong = ControlTable::zeros(grid, 2, 3);
    let r = estimate_cost(&example1(), None, FollowerSpec::Table(&wrong), LeaderSpec::Zero, &McConfig::new(10, 10, 1));
    assert!(matches!(r, Err(Error::InvalidArgument(_))));
}

#[test]
fn convexity_ratios_at_small_scale() {
    let report = probe_convexity(&example1(), 4, &McConfig::new(20_000, 50, 31)).unwrap();
    for r in &report.follower {
        assert!((r.ratio - 1.0).abs() <= 3.0 * r.std_error, "{r:?}");
    }
    for r in &report.leader {
        assert!(r.ratio <= -1.0 + 3.0 * r.std_error, "{r:?}");
    }
    assert_eq!(report.by_regime().len(), 2);
}
