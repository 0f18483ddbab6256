//! Property tests for the invariants of each layer.

mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regime_stackelberg::linalg::{general_inverse, spd_inverse};
use regime_stackelberg::model::{load_problem, to_problem_file};
use regime_stackelberg::montecarlo::{estimate_cost, FollowerSpec, LeaderSpec, McConfig};
use regime_stackelberg::regime::{regime_distribution, simulate_chain, validate_generator};
use regime_stackelberg::report::float;
use regime_stackelberg::riccati::{solve_follower_cdre, solve_leader_cdre, SolveOptions};
use regime_stackelberg::{Equilibrium, Generator, Regime, TimeGrid};

fn generator_strategy() -> impl Strategy<Value = DMatrix<f64>> {
    (1usize..5).prop_flat_map(|d| {
        prop::collection::vec(0.0f64..5.0, d * d).prop_map(move |v| {
            let mut m = DMatrix::from_row_slice(d, d, &v);
            for i in 0..d {
                m[(i, i)] = 0.0;
                let s: f64 = m.row(i).sum();
                m[(i, i)] = -s;
            }
            m
        })
    })
}

fn decimal() -> impl Strategy<Value = f64> {
    (-99_999i64..99_999, 0u32..4).prop_map(|(n, e)| n as f64 / 10f64.powi(e as i32))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn valid_generators_pass_and_negative_rates_fail(g in generator_strategy(), pick in 0usize..16) {
        prop_assert!(validate_generator(&g).is_ok());
        let d = g.nrows();
        if d > 1 {
            let (i, k) = (pick % d, (pick / d + 1 + pick % d) % d);
            if i != k {
                let mut bad = g.clone();
                bad[(i, k)] = -0.5;
                bad[(i, i)] += 0.5 + g[(i, k)];
                prop_assert!(validate_generator(&bad).is_err());
            }
        }
    }

    #[test]
    fn simulated_chains_are_well_formed(g in generator_strategy(), seed in any::<u64>(), horizon in 0.1f64..3.0) {
        let gen = Generator::constant(g.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = Regime::from_index(seed as usize % g.nrows());
        let path = simulate_chain(&gen, start, horizon, &mut rng);
        let times = path.jump_times();
        prop_assert!(times.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(times.iter().all(|&t| t > 0.0 && t < horizon));
        let mut prev = start;
        for (&t, &s) in times.iter().zip(path.post_jump_states()) {
            prop_assert_ne!(s, prev);
            prop_assert!(g[(prev.index(), s.index())] > 0.0);
            prop_assert_eq!(path.state_at(t), s);
            prop_assert_eq!(path.state_before(t), prev);
            prev = s;
        }
        let occupied: f64 = (0..g.nrows()).map(|k| path.occupation_time(Regime::from_index(k), horizon)).sum();
        prop_assert!((occupied - horizon).abs() < 1e-12);
    }

    #[test]
    fn regime_law_is_a_distribution(g in generator_strategy(), steps in 10usize..200) {
        let gen = Generator::constant(g.clone()).unwrap();
        let grid = TimeGrid::new(1.0, steps).unwrap();
        for p in regime_distribution(&gen, Regime::from_index(0), &grid) {
            prop_assert!((p.sum() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&v| v > -1e-12));
        }
    }

    #[test]
    fn grid_nodes_are_exact(horizon in 0.01f64..100.0, steps in 1usize..5000, t in 0.0f64..1.0) {
        let grid = TimeGrid::new(horizon, steps).unwrap();
        prop_assert_eq!(grid.time(0), 0.0);
        prop_assert_eq!(grid.time(steps), horizon);
        let cell = grid.cell_at(t * horizon);
        prop_assert!(cell < steps);
        prop_assert!(grid.time(cell) <= t * horizon + 1e-12 * horizon);
    }

    #[test]
    fn problem_files_round_trip(vals in prop::collection::vec(decimal(), 12), r1 in 0.5f64..10.0, horizon in 0.1f64..5.0) {
        let text = format!(
            "[meta]\nT = {horizon}\nn = 2\nm1 = 1\nm2 = 1\nD = 2\ngrid_steps = 50\n[generator]\n-1 1\n2 -2\n\
             [regime 1]\nA = {} {}; {} {}\nB1 = {}; {}\nQ = {} {}; {} {}\nR1 = {r1}\nR2 = -1\n\
             [regime 2]\nb = {}; {}\nR1 = 1\nR2 = -2\nm = 1; 2\n[initial]\nx = 0.1; -0.2\ni = 2\n",
            vals[0], vals[1], vals[2], vals[3], vals[4], vals[5], vals[6], vals[7], vals[7], vals[8], vals[9], vals[10],
        );
        let p = load_problem(&text).unwrap();
        let again = load_problem(&to_problem_file(&p)).unwrap();
        prop_assert_eq!(p, again);
    }

    #[test]
    fn csv_numbers_round_trip(v in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
        prop_assert_eq!(float(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
    }

    #[test]
    fn spd_inverse_inverts(entries in prop::collection::vec(-1.0f64..1.0, 9), shift in 0.1f64..3.0) {
        let a = DMatrix::from_row_slice(3, 3, &entries);
        let m = &a * a.transpose() + DMatrix::identity(3, 3) * shift;
        let inv = spd_inverse(&m, 1e12).unwrap();
        prop_assert!((&m * &inv.inverse - DMatrix::identity(3, 3)).amax() < 1e-10);
        prop_assert!(inv.min_eigenvalue >= shift - 1e-10);
        let g = general_inverse(&(&m + &a), 1e12);
        if let Ok(g) = g {
            prop_assert!(((&m + &a) * g.inverse - DMatrix::identity(3, 3)).amax() < 1e-6 * g.condition.max(1.0));
        }
        let mut neg = m.clone();
        neg[(0, 0)] = -1.0;
        neg[(1, 1)] = -1.0;
        prop_assert!(spd_inverse(&neg, 1e12).is_err());
    }

    #[test]
    fn rk4_converges_at_fourth_order(rate in -3.0f64..3.0, target in 0.5f64..2.0) {
        let text = format!(
            "[meta]\nkind = leader\nT = 1\nn = 1\nm2 = 1\nD = 1\n[generator]\n0\n[regime 1]\nAhat = {}\nHhat = 1\nS2 = 1\nT11 = 4\nT22 = 4\nG = {}\nm = 1\n[initial]\nx = 0\ni = 1\n",
            rate, target
        );
        let p = load_problem(&text).unwrap();
        let reference = solve_leader_cdre(&p, 2000, SolveOptions::default()).unwrap().sigma.value(0, 0)[(0, 0)];
        let err = |steps| (solve_leader_cdre(&p, steps, SolveOptions::default()).unwrap().sigma.value(0, 0)[(0, 0)] - reference).abs();
        let (e1, e2) = (err(20), err(40));
        prop_assume!(e2 > 1e-13);
        prop_assert!((e1 / e2 - 16.0).abs() <= 4.0, "ratio {}", e1 / e2);
    }
}

fn random_game_text(vals: &[f64]) -> String {
    format!(
        "[meta]\nT = 0.5\nn = 2\nm1 = 1\nm2 = 1\nD = 2\n[generator]\n-1 1\n1 -1\n\
         [regime 1]\nA = {} {}; {} {}\nC = {} 0; 0 {}\nB1 = {}; {}\nD1 = {}; {}\nB2 = 1; 0\nQ = 1 0; 0 2\nR1 = 3\nR2 = -4\nM = 1 0.2; 0.2 1\nsigma = 0.3; 0.1\nm = 0.5; -0.5\n\
         [regime 2]\nA = 0.1 0; 0 -0.2\nB1 = 1; 1\nB2 = 0; 1\nD1 = 0.5; 0\nQ = 2 0; 0 1\nR1 = 2\nR2 = -5\nM = 0.5 0; 0 0.5\n[initial]\nx = 1; 0\ni = 1\n",
        vals[0], vals[1], vals[2], vals[3], vals[4], vals[5], vals[6], vals[7], vals[8], vals[9]
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn riccati_solutions_are_symmetric(vals in prop::collection::vec(-0.5f64..0.5, 10)) {
        let p = load_problem(&random_game_text(&vals)).unwrap();
        let f = solve_follower_cdre(&p, 100, SolveOptions::default()).unwrap();
        prop_assert_eq!(f.max_asymmetry(), 0.0);
        for i in 0..2 {
            prop_assert_eq!(f.value(100, i), &p.game_regimes().unwrap()[i].terminal_weight);
        }
        if let Ok(l) = solve_leader_cdre(&p, 100, SolveOptions::default()) {
            prop_assert_eq!(l.sigma.max_asymmetry(), 0.0);
            prop_assert!(l.sigma.value(100, 0).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn terminal_data_is_reproduced_exactly(m1 in -5.0f64..5.0, m2 in -5.0f64..5.0) {
        let p = common::example2().with_terminal_linear(&[DVector::from_element(1, m1), DVector::from_element(1, m2)]).unwrap();
        let eq = Equilibrium::solve(&p, 100, SolveOptions::default()).unwrap();
        prop_assert_eq!(eq.phi.value(100, 0)[0], m1);
        prop_assert_eq!(eq.phi.value(100, 1)[0], m2);
        for i in 0..2 {
            let pol = eq.node_policy(100, i);
            let phi_star = DVector::from_element(1, 0.3);
            prop_assert_eq!(pol.y(&phi_star)[0], [m1, m2][i]);
        }
    }

    #[test]
    fn stationarity_holds_for_random_games(vals in prop::collection::vec(-0.5f64..0.5, 10), s in 0.0f64..0.5, phi in -2.0f64..2.0) {
        let p = load_problem(&random_game_text(&vals)).unwrap();
        prop_assume!(Equilibrium::solve(&p, 100, SolveOptions::default()).is_ok());
        let eq = Equilibrium::solve(&p, 100, SolveOptions::default()).unwrap();
        for i in 0..2 {
            let pol = eq.policy_at(s, i).unwrap();
            let phi = DVector::from_vec(vec![phi, -0.5 * phi]);
            let (u2, y, z) = (pol.u2(&phi), pol.y(&phi), pol.z(&phi));
            prop_assert!(pol.stationarity(&phi, &y, &z, &u2).norm() < 1e-10);
        }
    }

    #[test]
    fn estimates_repeat_bit_for_bit(seed in any::<u64>()) {
        let p = common::example1();
        let grid = p.grid(20).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = regime_stackelberg::montecarlo::random_direction(&p, &grid, Regime::from_index(0), 1, &mut rng);
        let cfg = McConfig::new(200, 20, seed);
        let a = estimate_cost(&p, None, FollowerSpec::Table(&v), LeaderSpec::Table(&v), &cfg).unwrap();
        let b = estimate_cost(&p, None, FollowerSpec::Table(&v), LeaderSpec::Table(&v), &cfg.with_workers(2)).unwrap();
        prop_assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        prop_assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
    }
}
