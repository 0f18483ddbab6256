//! Monte Carlo estimation of game costs and statistical verification of the
//! equilibrium.
//!
//! Each path owns a ChaCha stream selected by its index. The chain is drawn
//! first, then one standard normal per step. Every control configuration in a
//! batch is evaluated on the same draws, so differences are paired. Paths
//! may run on several threads; results are collected in path order and
//! summed serially, which makes estimates independent of the worker count.

pub mod convexity;
mod engine;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::equilibrium::{follower_reaction, BackwardTable, ControlTable, Equilibrium, ValueFunctions};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::model::ProblemData;
use crate::regime::{regime_distribution, simulate_chain, Regime, RegimePath};

pub use engine::StepMaps;

/// Largest tolerated fraction of excluded (non-finite) paths.
pub const MAX_EXCLUDED_FRACTION: f64 = 0.01;

/// Sampling configuration shared by all estimators.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McConfig {
    pub paths: usize,
    /// Euler-Maruyama steps; must divide the Riccati grid when a policy is used.
    pub steps: usize,
    pub seed: u64,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl McConfig {
    pub fn new(paths: usize, steps: usize, seed: u64) -> Self {
        Self {
            paths,
            steps,
            seed,
            workers: None,
        }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = Some(workers);
        self
    }
}

/// Follower control used in a simulation.
#[derive(Clone, Copy, Debug)]
pub enum FollowerSpec<'a> {
    Zero,
    Table(&'a ControlTable),
    /// u1* with u2*, Y*, Z*.
    Equilibrium,
    /// u1* + eps v.
    Shifted(&'a ControlTable, f64),
    /// Optimal feedback against the leader control actually in use, with
    /// Y = Y* + eps y_w and Z = Z*.
    Reaction(Option<(&'a BackwardTable, f64)>),
}

/// Leader control used in a simulation.
#[derive(Clone, Copy, Debug)]
pub enum LeaderSpec<'a> {
    Zero,
    Table(&'a ControlTable),
    Equilibrium,
    /// u2* + eps w.
    Shifted(&'a ControlTable, f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Functional {
    /// The game criterion J.
    Game,
    /// J with all forcing, terminal linear data and the initial state removed.
    Homogeneous,
    /// The leader's backward-problem cost J_L.
    Leader,
}

/// Sample mean with standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub paths: usize,
    pub functional: Functional,
}

impl CostEstimate {
    pub fn from_samples(samples: &[f64], functional: Functional) -> Self {
        let (mean, std_error) = mean_and_se(samples);
        Self {
            mean,
            std_error,
            paths: samples.len(),
            functional,
        }
    }

    /// `|mean - target| <= k * SE`.
    pub fn agrees_with(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.std_error
    }
}

pub(crate) fn mean_and_se(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Random draws of one path.
#[derive(Clone, Debug)]
pub struct PathNoise {
    pub index: usize,
    pub path: RegimePath,
    /// Brownian increments, one per step.
    pub increments: Vec<f64>,
    /// Regime in force at each left node.
    pub regimes: Vec<usize>,
}

pub fn draw_noise(problem: &ProblemData, regime: Regime, grid: &TimeGrid, seed: u64, index: usize) -> PathNoise {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let path = simulate_chain(&problem.generator, regime, grid.horizon(), &mut rng);
    let scale = grid.step().sqrt();
    let increments = (0..grid.steps())
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scale
        })
        .collect();
    let regimes = (0..grid.steps()).map(|j| path.state_at(grid.time(j)).index()).collect();
    PathNoise {
        index,
        path,
        increments,
        regimes,
    }
}

fn run_paths<T, F>(config: &McConfig, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    let work = || (0..config.paths).into_par_iter().with_min_len(64).map(&f).collect::<Vec<T>>();
    match config.workers {
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
            Ok(pool.install(work))
        }
        None => Ok(work()),
    }
}

/// Per-path costs (and control energies) of several configurations on common
/// random numbers. Paths where any configuration went non-finite are dropped
/// for all of them.
#[derive(Clone, Debug)]
pub struct CostBatch {
    pub functional: Functional,
    /// `costs[spec][path]`.
    pub costs: Vec<Vec<f64>>,
    /// `∫|u1|^2 ds` per spec and path.
    pub follower_energy: Vec<Vec<f64>>,
    /// `∫|u2|^2 ds` per spec and path.
    pub leader_energy: Vec<Vec<f64>>,
    pub excluded: usize,
    pub attempted: usize,
}

impl CostBatch {
    pub fn estimate(&self, spec: usize) -> CostEstimate {
        CostEstimate::from_samples(&self.costs[spec], self.functional)
    }

    /// Paired difference `spec - base`.
    pub fn paired_difference(&self, spec: usize, base: usize) -> CostEstimate {
        let diff: Vec<f64> = self.costs[spec].iter().zip(&self.costs[base]).map(|(a, b)| a - b).collect();
        CostEstimate::from_samples(&diff, self.functional)
    }

    /// Standard error the difference would have with independent samples.
    pub fn unpaired_std_error(&self, spec: usize, base: usize) -> f64 {
        self.estimate(spec).std_error.hypot(self.estimate(base).std_error)
    }
}

/// Simulates every configuration on each path of `config`.
pub fn estimate_costs(
    problem: &ProblemData,
    equilibrium: Option<&Equilibrium>,
    specs: &[(FollowerSpec<'_>, LeaderSpec<'_>)],
    config: &McConfig,
) -> Result<CostBatch> {
    let game = problem
        .game_regimes()
        .ok_or_else(|| Error::InvalidArgument("cost estimation needs a full game".into()))?;
    let _ = game;
    if config.paths == 0 {
        return Err(Error::InvalidArgument("path count must be positive".into()));
    }
    let grid = problem.grid(config.steps)?;
    let maps = specs
        .iter()
        .map(|&(f, l)| StepMaps::build(problem, equilibrium, &grid, f, l))
        .collect::<Result<Vec<_>>>()?;
    let regime = problem.initial_regime;
    let x = &problem.initial_state;
    let per_path = run_paths(config, |p| {
        let noise = draw_noise(problem, regime, &grid, config.seed, p);
        let mut out = Vec::with_capacity(3 * maps.len());
        for m in &maps {
            let r = m.run(&noise, x, None)?;
            out.extend([r.cost, r.follower_energy, r.leader_energy]);
        }
        Some(out)
    })?;
    collect_batch(per_path, specs.len(), config.paths, Functional::Game)
}

fn collect_batch(per_path: Vec<Option<Vec<f64>>>, specs: usize, attempted: usize, functional: Functional) -> Result<CostBatch> {
    let mut batch = CostBatch {
        functional,
        costs: vec![Vec::with_capacity(attempted); specs],
        follower_energy: vec![Vec::with_capacity(attempted); specs],
        leader_energy: vec![Vec::with_capacity(attempted); specs],
        excluded: 0,
        attempted,
    };
    for row in per_path {
        match row {
            Some(v) if v.iter().all(|x| x.is_finite()) => {
                for s in 0..specs {
                    batch.costs[s].push(v[3 * s]);
                    batch.follower_energy[s].push(v[3 * s + 1]);
                    batch.leader_energy[s].push(v[3 * s + 2]);
                }
            }
            _ => batch.excluded += 1,
        }
    }
    if batch.excluded as f64 > MAX_EXCLUDED_FRACTION * attempted as f64 {
        return Err(Error::TooManyExclusions {
            excluded: batch.excluded,
            total: attempted,
        });
    }
    Ok(batch)
}

/// Sample-mean estimate of J for one control configuration.
pub fn estimate_cost(
    problem: &ProblemData,
    equilibrium: Option<&Equilibrium>,
    follower: FollowerSpec<'_>,
    leader: LeaderSpec<'_>,
    config: &McConfig,
) -> Result<CostEstimate> {
    Ok(estimate_costs(problem, equilibrium, &[(follower, leader)], config)?.estimate(0))
}

/// One simulated equilibrium trajectory. Vectors are indexed by grid node.
#[derive(Clone, Debug)]
pub struct PathBundle {
    pub index: usize,
    pub path: RegimePath,
    pub increments: Vec<f64>,
    /// Regime used at each node (the last entry is α(T)).
    pub regimes: Vec<usize>,
    /// Empty for reduced problems.
    pub x: Vec<DVector<f64>>,
    pub phi_star: Vec<DVector<f64>>,
    pub u1: Vec<DVector<f64>>,
    pub u2: Vec<DVector<f64>>,
    pub upsilon: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
    pub z: Vec<DVector<f64>>,
    /// Realized J for games, J_L for reduced problems.
    pub cost: f64,
}

/// Closed-loop equilibrium paths with the count of dropped paths.
#[derive(Clone, Debug)]
pub struct ClosedLoop {
    pub grid: TimeGrid,
    pub bundles: Vec<PathBundle>,
    pub excluded: usize,
    pub functional: Functional,
}

impl ClosedLoop {
    pub fn cost_estimate(&self) -> CostEstimate {
        let costs: Vec<f64> = self.bundles.iter().map(|b| b.cost).collect();
        CostEstimate::from_samples(&costs, self.functional)
    }
}

/// Simulates (X*, φ*) jointly under the equilibrium controls from the
/// problem's initial data and records all reconstructed quantities.
pub fn simulate_closed_loop(eq: &Equilibrium, config: &McConfig) -> Result<ClosedLoop> {
    let problem = eq.problem();
    simulate_closed_loop_from(eq, &problem.initial_state, problem.initial_regime, config)
}

/// As [`simulate_closed_loop`] from the given initial data.
pub fn simulate_closed_loop_from(eq: &Equilibrium, x0: &DVector<f64>, regime: Regime, config: &McConfig) -> Result<ClosedLoop> {
    let problem = eq.problem();
    if x0.len() != problem.state_dim || regime.index() >= problem.num_regimes() {
        return Err(Error::InvalidArgument("initial data does not match the problem".into()));
    }
    let grid = problem.grid(config.steps)?;
    let stride = eq.grid().refinement_of(&grid)?;
    let maps = StepMaps::build(problem, Some(eq), &grid, FollowerSpec::Equilibrium, LeaderSpec::Equilibrium)?;
    let nx = if problem.is_game() { problem.state_dim } else { 0 };
    let results = run_paths(config, |p| -> Option<PathBundle> {
        let noise = draw_noise(problem, regime, &grid, config.seed, p);
        let mut traj = Vec::new();
        let run = maps.run(&noise, x0, Some(&mut traj))?;
        let dim = maps.state_dim();
        let mut regimes = noise.regimes.clone();
        regimes.push(noise.path.state_at(grid.horizon()).index());
        let mut b = PathBundle {
            index: p,
            path: noise.path,
            increments: noise.increments,
            regimes,
            x: Vec::new(),
            phi_star: Vec::new(),
            u1: Vec::new(),
            u2: Vec::new(),
            upsilon: Vec::new(),
            y: Vec::new(),
            z: Vec::new(),
            cost: run.cost,
        };
        for j in 0..grid.num_nodes() {
            let state = &traj[j * dim..(j + 1) * dim];
            let x = DVector::from_column_slice(&state[..nx]);
            let phi = DVector::from_column_slice(&state[nx..]);
            let policy = eq.node_policy(j * stride, b.regimes[j]);
            let u2 = policy.u2(&phi);
            let y = policy.y(&phi);
            let z = policy.z(&phi);
            if nx > 0 {
                b.u1.push(policy.u1(&x, &u2, &y, &z));
                b.x.push(x);
            }
            b.upsilon.push(policy.upsilon(&phi));
            b.phi_star.push(phi);
            b.u2.push(u2);
            b.y.push(y);
            b.z.push(z);
        }
        if nx == 0 {
            b.cost = leader_cost(eq, &b, &grid, stride, x0);
        }
        Some(b)
    })?;
    let attempted = results.len();
    let bundles: Vec<PathBundle> = results.into_iter().flatten().collect();
    let excluded = attempted - bundles.len();
    if excluded as f64 > MAX_EXCLUDED_FRACTION * attempted as f64 {
        return Err(Error::TooManyExclusions {
            excluded,
            total: attempted,
        });
    }
    let functional = if nx > 0 { Functional::Game } else { Functional::Leader };
    Ok(ClosedLoop {
        grid,
        bundles,
        excluded,
        functional,
    })
}

/// Realized J_L: trapezoid rule on the node values of (Y*, Z*, u2*).
fn leader_cost(eq: &Equilibrium, b: &PathBundle, grid: &TimeGrid, stride: usize, x0: &DVector<f64>) -> f64 {
    let integrand = |j: usize| {
        let policy = eq.node_policy(j * stride, b.regimes[j]);
        let lb = &policy.blocks.leader;
        let v = DVector::from_iterator(
            b.y[j].len() + b.z[j].len() + b.u2[j].len(),
            b.y[j].iter().chain(b.z[j].iter()).chain(b.u2[j].iter()).copied(),
        );
        let lin = DVector::from_iterator(
            v.len(),
            lb.q.iter().chain(lb.rho1.iter()).chain(lb.rho2.iter()).copied(),
        );
        (v.transpose() * lb.cost_matrix() * &v)[(0, 0)] + 2.0 * lin.dot(&v)
    };
    let h = grid.step();
    let mut total = 0.0;
    let mut left = integrand(0);
    for j in 1..grid.num_nodes() {
        let right = integrand(j);
        total += 0.5 * h * (left + right);
        left = right;
    }
    total - 2.0 * b.y[0].dot(x0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualSummary {
    pub max: f64,
    pub mean: f64,
    pub evaluations: usize,
}

/// Euclidean norm of `-Hhat'φ* + S2 Y* + T21 Z* + T22 u2* + rho2` over all
/// recorded nodes.
pub fn stationarity_residual(closed: &ClosedLoop, eq: &Equilibrium) -> Result<ResidualSummary> {
    let stride = eq.grid().refinement_of(&closed.grid)?;
    let mut max: f64 = 0.0;
    let mut sum = 0.0;
    let mut count = 0;
    for b in &closed.bundles {
        for j in 0..closed.grid.num_nodes() {
            let policy = eq.node_policy(j * stride, b.regimes[j]);
            let r = policy.stationarity(&b.phi_star[j], &b.y[j], &b.z[j], &b.u2[j]).norm();
            max = max.max(r);
            sum += r;
            count += 1;
        }
    }
    Ok(ResidualSummary {
        max,
        mean: if count == 0 { 0.0 } else { sum / count as f64 },
        evaluations: count,
    })
}

/// Deterministic regime-indexed direction with standard normal entries per
/// (cell, regime), scaled so that its expected energy under the chain law
/// from `regime` is one. Zero-energy draws are redrawn.
pub fn random_direction<R: rand::Rng + ?Sized>(
    problem: &ProblemData,
    grid: &TimeGrid,
    regime: Regime,
    dim: usize,
    rng: &mut R,
) -> ControlTable {
    let d = problem.num_regimes();
    let law = regime_distribution(&problem.generator, regime, grid);
    loop {
        let values: Vec<Vec<DVector<f64>>> = (0..grid.steps())
            .map(|_| {
                (0..d)
                    .map(|_| DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut *rng)))
                    .collect()
            })
            .collect();
        let energy: f64 = values
            .iter()
            .enumerate()
            .map(|(c, row)| {
                row.iter()
                    .enumerate()
                    .map(|(i, v)| 0.5 * (law[c][i] + law[c + 1][i]) * v.norm_squared())
                    .sum::<f64>()
                    * grid.step()
            })
            .sum();
        if energy > 1e-300 && energy.is_finite() {
            let scale = energy.sqrt().recip();
            let values = values.into_iter().map(|row| row.into_iter().map(|v| v * scale).collect()).collect();
            return ControlTable::new(*grid, values).expect("shape is consistent");
        }
    }
}

/// Which player's control a probe perturbs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Follower,
    Leader,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeOutcome {
    pub side: Side,
    pub direction: usize,
    /// Paired estimate of J(probe) - J(equilibrium).
    pub difference: CostEstimate,
    /// SE the difference would have without pairing.
    pub unpaired_std_error: f64,
    /// Follower side: difference >= -3 SE. Leader side: difference <= 3 SE.
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaddleReport {
    pub epsilon: f64,
    pub baseline: CostEstimate,
    pub follower: Vec<ProbeOutcome>,
    pub leader: Vec<ProbeOutcome>,
    /// Mean follower difference at 2 eps over the mean at eps.
    pub scaling_ratio: f64,
    /// Leader directions whose reaction solve failed.
    pub skipped: Vec<(usize, String)>,
    pub excluded: usize,
}

impl SaddleReport {
    pub fn follower_pass_rate(&self) -> f64 {
        pass_rate(&self.follower)
    }

    pub fn leader_pass_rate(&self) -> f64 {
        pass_rate(&self.leader)
    }
}

fn pass_rate(v: &[ProbeOutcome]) -> f64 {
    if v.is_empty() {
        return 1.0;
    }
    v.iter().filter(|o| o.holds).count() as f64 / v.len() as f64
}

/// Number of standard errors used by all statistical checks.
pub const SE_MULTIPLIER: f64 = 3.0;

/// Perturbs each player's equilibrium control along random directions and
/// checks the defining inequalities on common random numbers. Leader probes
/// let the follower respond optimally through `follower_reaction`.
pub fn saddle_probe(eq: &Equilibrium, epsilon: f64, directions: usize, config: &McConfig) -> Result<SaddleReport> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument("perturbation scale must be finite and nonnegative".into()));
    }
    let problem = eq.problem();
    let grid = problem.grid(config.steps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(u64::MAX);
    let regime = problem.initial_regime;
    let v_dirs: Vec<ControlTable> = (0..directions)
        .map(|_| random_direction(problem, &grid, regime, problem.follower_dim(), &mut rng))
        .collect();
    let w_dirs: Vec<ControlTable> = (0..directions)
        .map(|_| random_direction(problem, &grid, regime, problem.leader_dim(), &mut rng))
        .collect();
    let mut skipped = Vec::new();
    let mut reactions: Vec<(usize, BackwardTable)> = Vec::new();
    for (k, w) in w_dirs.iter().enumerate() {
        match follower_reaction(problem, eq.grid().steps(), eq.options(), w, true) {
            Ok(t) => reactions.push((k, t)),
            Err(e) => skipped.push((k, e.to_string())),
        }
    }
    let mut specs = vec![(FollowerSpec::Equilibrium, LeaderSpec::Equilibrium)];
    for v in &v_dirs {
        specs.push((FollowerSpec::Shifted(v, epsilon), LeaderSpec::Equilibrium));
    }
    for v in &v_dirs {
        specs.push((FollowerSpec::Shifted(v, 2.0 * epsilon), LeaderSpec::Equilibrium));
    }
    for (k, y) in &reactions {
        specs.push((FollowerSpec::Reaction(Some((y, epsilon))), LeaderSpec::Shifted(&w_dirs[*k], epsilon)));
    }
    let batch = estimate_costs(problem, Some(eq), &specs, config)?;
    let outcome = |side, direction, spec| {
        let difference = batch.paired_difference(spec, 0);
        let bound = SE_MULTIPLIER * difference.std_error;
        let holds = match side {
            Side::Follower => difference.mean >= -bound,
            Side::Leader => difference.mean <= bound,
        };
        ProbeOutcome {
            side,
            direction,
            difference,
            unpaired_std_error: batch.unpaired_std_error(spec, 0),
            holds,
        }
    };
    let follower: Vec<ProbeOutcome> = (0..directions).map(|k| outcome(Side::Follower, k, 1 + k)).collect();
    let leader = reactions
        .iter()
        .enumerate()
        .map(|(s, (k, _))| outcome(Side::Leader, *k, 1 + 2 * directions + s))
        .collect();
    let small: f64 = follower.iter().map(|o| o.difference.mean).sum();
    let large: f64 = (0..directions).map(|k| batch.paired_difference(1 + directions + k, 0).mean).sum();
    Ok(SaddleReport {
        epsilon,
        baseline: batch.estimate(0),
        follower,
        leader,
        scaling_ratio: large / small,
        skipped,
        excluded: batch.excluded,
    })
}

/// Monte Carlo J at the equilibrium against the quadrature value function.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueRow {
    pub x: DVector<f64>,
    pub regime: Regime,
    pub analytic: ValueFunctions,
    /// Also the follower's value at the equilibrium leader control.
    pub estimate: CostEstimate,
    pub agrees: bool,
}

/// For games the estimate is J against V; for reduced problems it is J_L
/// against V_L.
pub fn value_check(eq: &Equilibrium, xs: &[DVector<f64>], regime: Regime, config: &McConfig) -> Result<Vec<ValueRow>> {
    let mut rows = Vec::with_capacity(xs.len());
    for x in xs {
        let analytic = crate::equilibrium::value_functions(eq, x, regime)?;
        let (estimate, target) = if eq.problem().is_game() {
            let problem = eq.problem().with_initial_state(x.clone())?.with_initial_regime(regime)?;
            let est = estimate_cost(&problem, Some(eq), FollowerSpec::Equilibrium, LeaderSpec::Equilibrium, config)?;
            (est, analytic.equilibrium.unwrap_or(f64::NAN))
        } else {
            (simulate_closed_loop_from(eq, x, regime, config)?.cost_estimate(), analytic.leader)
        };
        rows.push(ValueRow {
            x: x.clone(),
            regime,
            analytic,
            agrees: estimate.agrees_with(target, SE_MULTIPLIER),
            estimate,
        });
    }
    Ok(rows)
}
