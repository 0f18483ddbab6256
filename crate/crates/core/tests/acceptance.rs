//! End-to-end acceptance run. Prints one line per criterion and exits with a
//! nonzero status if any fails.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use nalgebra::DVector;
use regime_stackelberg::coefficients::DerivedBlocks;
use regime_stackelberg::coefficients::derived_table;
use regime_stackelberg::model::probe_convexity;
use regime_stackelberg::montecarlo::{saddle_probe, simulate_closed_loop, stationarity_residual, value_check, McConfig};
use regime_stackelberg::riccati::*;
use regime_stackelberg::{Equilibrium, Regime};

const SEED: u64 = 7;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn scalar(m: &nalgebra::DMatrix<f64>) -> f64 {
    m[(0, 0)]
}

fn follower_riccati() -> Outcome {
    let start = Instant::now();
    let p = solve_follower_cdre(&example1(), 1000, SolveOptions::default()).unwrap();
    let elapsed = start.elapsed();
    let mut worst: f64 = 0.0;
    for j in 0..=1000 {
        for i in 0..2 {
            worst = worst.max((scalar(p.value(j, i)) + 1.0).abs());
        }
    }
    outcome(worst <= 1e-8 && elapsed < Duration::from_secs(1), format!("max |P + 1| = {worst:.3e}"))
}

fn leader_riccati() -> Outcome {
    let start = Instant::now();
    let sol = solve_leader_cdre(&example1(), 1000, SolveOptions::default()).unwrap();
    let elapsed = start.elapsed();
    let grid = sol.sigma.grid();
    let mut worst: f64 = 0.0;
    for j in 0..=1000 {
        let s = grid.time(j);
        for i in 0..2 {
            worst = worst.max((scalar(sol.sigma.value(j, i)) - (s - 1.0) / (s - 2.0)).abs());
        }
    }
    let err = |steps| {
        let sol = solve_leader_cdre(&example1(), steps, SolveOptions::default()).unwrap();
        (scalar(sol.sigma.value(0, 0)) - 0.5).abs()
    };
    let ratio = err(10) / err(20);
    outcome(
        worst <= 1e-6 && (ratio - 16.0).abs() <= 4.0 && elapsed < Duration::from_secs(1),
        format!("max error {worst:.3e}, halving ratio {ratio:.2}"),
    )
}

fn block_fixtures() -> Outcome {
    let p = example1();
    let follower = solve_follower_cdre(&p, 100, SolveOptions::default()).unwrap();
    let table = derived_table(&p, follower.grid(), Some(&follower), 1e12).unwrap();
    let mut worst: f64 = 0.0;
    let expected = [(1.0, 1.0, 4.0, 1.0, -1.0), (1.0, -2.0, 1.0, 4.0, 2.0)];
    for j in [0, 50, 100] {
        for (i, (r1, h, t11, t22, s2)) in expected.iter().enumerate() {
            let b = table.at(j, i);
            for (got, want) in [
                (&b.hat.r1_hat, r1),
                (&b.hat.h_hat, h),
                (&b.leader.t11, t11),
                (&b.leader.t22, t22),
                (&b.leader.s2, s2),
            ] {
                worst = worst.max((scalar(got) - want).abs());
            }
        }
    }
    let p2 = example2();
    for (i, (f, s1, t11)) in [(0.0, -0.5, 3.5), (2.0, 2.0, 3.0)].iter().enumerate() {
        let b = DerivedBlocks::evaluate(&p2, i, 0.5, None, 1e12).unwrap();
        worst = worst.max((scalar(&b.tilde.f_tilde) - f).abs());
        worst = worst.max((scalar(&b.tilde.s1_tilde) - s1).abs());
        worst = worst.max((scalar(&b.tilde.t11_tilde) - t11).abs());
    }
    outcome(worst <= 1e-12, format!("max deviation {worst:.3e}"))
}

fn certificate() -> Outcome {
    let (_, cert) = certify_problem(&example2(), 1000, SolveOptions::default()).unwrap();
    let eigs: Vec<f64> = cert.regimes.iter().map(|r| r.min_eigenvalue).collect();
    let exact = (eigs[0] - 7.0 / 17.0).abs() <= 1e-12;
    outcome(cert.pass() && exact, format!("min eigenvalues {eigs:?}"))
}

fn example2_sigma() -> Outcome {
    let start = Instant::now();
    let sol = solve_leader_cdre(&example2(), 1000, SolveOptions::default()).unwrap();
    let elapsed = start.elapsed();
    let oracle = kutta38_backward(&example2_sigma_phi_rhs, &[0.0, 0.0], 0.0, 1.0, 10_000);
    let mut gap: f64 = 0.0;
    for j in 0..=1000 {
        for i in 0..2 {
            gap = gap.max((scalar(sol.sigma.value(j, i)) - oracle[10 * j][i]).abs());
        }
    }
    let terminal_zero = (0..2).all(|i| sol.sigma.value(1000, i).iter().all(|&v| v == 0.0));
    let meta = sol.sigma.meta();
    let residual = meta.max_residual.unwrap_or(f64::NAN);
    let condition = meta.max_condition.unwrap_or(f64::NAN);
    outcome(
        terminal_zero && residual < 1e-6 && condition < 1e6 && gap <= 1e-7 && elapsed < Duration::from_secs(5),
        format!("residual {residual:.3e}, condition {condition:.3e}, integrator gap {gap:.3e}"),
    )
}

fn lambda_study() -> Outcome {
    let start = Instant::now();
    let lambdas = [10.0, 1e2, 1e3, 1e4];
    let rows2 = lambda_limit_study(&example2(), &lambdas, 1000, SolveOptions::default()).unwrap();
    let rows1 = lambda_limit_study(&example1(), &lambdas, 1000, SolveOptions::default()).unwrap();
    let elapsed = start.elapsed();
    let dist = |rows: &[LambdaStudyRow]| rows.iter().map(|r| r.distance.unwrap_or(f64::NAN)).collect::<Vec<_>>();
    let (d2, d1) = (dist(&rows2), dist(&rows1));
    let decreasing = d2.windows(2).all(|w| w[1] < w[0]);
    let monotone = rows2.iter().skip(1).all(|r| r.monotone == Some(true));
    let final_gap = d1[d1.len() - 1];
    outcome(
        decreasing && monotone && final_gap < 1e-2 && elapsed < Duration::from_secs(30),
        format!(
            "example 2 distances [{}], example 1 final gap {final_gap:.3e}",
            d2.iter().map(|d| format!("{d:.3e}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn saddle() -> Outcome {
    let start = Instant::now();
    let eq = Equilibrium::solve(&example1(), 1000, SolveOptions::default()).unwrap();
    let report = saddle_probe(&eq, 0.1, 20, &McConfig::new(100_000, 100, SEED)).unwrap();
    let elapsed = start.elapsed();
    let (f, l) = (report.follower_pass_rate(), report.leader_pass_rate());
    outcome(
        f == 1.0 && l >= 0.95 && (report.scaling_ratio - 4.0).abs() <= 1.0 && elapsed < Duration::from_secs(300),
        format!(
            "follower {:.0}%, leader {:.0}%, scaling ratio {:.3}, {} skipped",
            100.0 * f,
            100.0 * l,
            report.scaling_ratio,
            report.skipped.len()
        ),
    )
}

fn value_resolution() -> Outcome {
    let eq = Equilibrium::solve(&example1(), 1000, SolveOptions::default()).unwrap();
    let xs: Vec<DVector<f64>> = [-1.0, 1.0, 2.0].iter().map(|&x| DVector::from_element(1, x)).collect();
    let regime = Regime::from_index(0);
    let fine = value_check(&eq, &xs, regime, &McConfig::new(100_000, 200, SEED)).unwrap();
    let coarse = value_check(&eq, &xs, regime, &McConfig::new(100_000, 100, SEED)).unwrap();
    let quadratic = |x: f64| -0.5 * x * x;
    let with_linear = |x: f64| 0.5 * x - x * x;
    let mut consistent = [true, true];
    let mut lines = Vec::new();
    for (f, c) in fine.iter().zip(&coarse) {
        let x = f.x[0];
        let est = &f.estimate;
        let tol = 3.0 * est.std_error + (est.mean - c.estimate.mean).abs() + 1e-12 * est.mean.abs().max(1.0);
        let hits = [(est.mean - quadratic(x)).abs() <= tol, (est.mean - with_linear(x)).abs() <= tol];
        consistent[0] &= hits[0];
        consistent[1] &= hits[1];
        lines.push(format!("x={x}: {:.6}±{:.1e}", est.mean, est.std_error));
    }
    let verdict = match consistent {
        [true, false] => Some("-x^2/2"),
        [false, true] => Some("x/2 - x^2"),
        _ => None,
    };
    outcome(
        verdict.is_some(),
        format!("{}; supported value {}", lines.join(", "), verdict.unwrap_or("undecided")),
    )
}

fn convexity() -> Outcome {
    let start = Instant::now();
    let report = probe_convexity(&example1(), 50, &McConfig::new(20_000, 50, SEED)).unwrap();
    let elapsed = start.elapsed();
    let follower_ok = report.follower.iter().all(|r| (r.ratio - 1.0).abs() <= 3.0 * r.std_error);
    let leader_ok = report.leader.iter().all(|r| r.ratio <= -1.0 + 3.0 * r.std_error);
    outcome(
        follower_ok && leader_ok && elapsed < Duration::from_secs(120),
        format!(
            "{} probes per side, follower ratio min {:.4}, leader ratio max {:.4}",
            report.follower.len(),
            report.min_follower_ratio().map_or(f64::NAN, |r| r.ratio),
            report.max_leader_ratio().map_or(f64::NAN, |r| r.ratio)
        ),
    )
}

fn stationarity() -> Outcome {
    let mut worst: f64 = 0.0;
    for p in [example1(), example2()] {
        let eq = Equilibrium::solve(&p, 1000, SolveOptions::default()).unwrap();
        let cl = simulate_closed_loop(&eq, &McConfig::new(1000, 100, SEED)).unwrap();
        worst = worst.max(stationarity_residual(&cl, &eq).unwrap().max);
    }
    outcome(worst < 1e-9, format!("max residual {worst:.3e}"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("follower Riccati, example 1", follower_riccati),
        ("leader Riccati, example 1", leader_riccati),
        ("derived coefficient fixtures", block_fixtures),
        ("solvability certificate, example 2", certificate),
        ("leader Riccati, example 2", example2_sigma),
        ("lambda-limit study", lambda_study),
        ("saddle verification, example 1", saddle),
        ("value function resolution, example 1", value_resolution),
        ("convexity and concavity identities", convexity),
        ("stationarity along simulated paths", stationarity),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = std::panic::catch_unwind(run).unwrap_or_else(|_| outcome(false, "panicked"));
        let tag = if result.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!result.pass);
        println!("{tag} [{:>2}] {name} ({:.2}s): {}", k + 1, start.elapsed().as_secs_f64(), result.detail);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
