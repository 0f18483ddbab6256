//! Closed-form equilibrium synthesis.
//!
//! All forcing and terminal data are deterministic functions of the regime,
//! so every backward equation here has a solution of the form
//! `Y(s) = y(s, α(s))` with zero Brownian integrand: the candidate is adapted
//! and solves the equation, and adapted solutions are unique. Each backward
//! equation therefore reduces to `D` coupled linear ODEs
//!
//! ```text
//! dy_i/ds = drift_i(y_i) - Σ_k λ_ik y_k,   y_i(T) = terminal_i
//! ```
//!
//! and its jump integrand into regime `k` is `y(s, k) - y(s, α(s-))`.

use std::borrow::Cow;

use nalgebra::{DMatrix, DVector};

use crate::coefficients::{derived_table, DerivedBlocks};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::model::ProblemData;
use crate::regime::{regime_distribution, Regime, RegimePath};
use crate::riccati::{leader_system, reaction_system, LeaderSolution, RiccatiSolution, SolutionKind, SolveOptions, SolverMeta};

/// A deterministic control that is constant on each cell of its grid and
/// depends on the current regime.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlTable {
    grid: TimeGrid,
    values: Vec<Vec<DVector<f64>>>,
}

impl ControlTable {
    /// `values[cell][regime]`.
    pub fn new(grid: TimeGrid, values: Vec<Vec<DVector<f64>>>) -> Result<Self> {
        if values.len() != grid.steps() {
            return Err(Error::InvalidArgument(format!(
                "control table has {} cells, grid has {}",
                values.len(),
                grid.steps()
            )));
        }
        let d = values[0].len();
        let m = values[0].first().map_or(0, |v| v.len());
        if values.iter().any(|row| row.len() != d || row.iter().any(|v| v.len() != m)) {
            return Err(Error::InvalidArgument("ragged control table".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: TimeGrid, num_regimes: usize, value: DVector<f64>) -> Self {
        Self {
            grid,
            values: vec![vec![value; num_regimes]; grid.steps()],
        }
    }

    pub fn zeros(grid: TimeGrid, num_regimes: usize, dim: usize) -> Self {
        Self::constant(grid, num_regimes, DVector::zeros(dim))
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.values[0][0].len()
    }

    pub fn num_regimes(&self) -> usize {
        self.values[0].len()
    }

    pub fn at_cell(&self, cell: usize, regime: usize) -> &DVector<f64> {
        &self.values[cell][regime]
    }

    pub fn at_time(&self, t: f64, regime: usize) -> &DVector<f64> {
        &self.values[self.grid.cell_at(t)][regime]
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .map(|row| row.iter().map(|v| v * factor).collect())
                .collect(),
        }
    }

    /// `∫ |u(s, α(s))|^2 ds` along a path sampled at the control grid's left
    /// nodes (exact for a step function that follows the node regime).
    pub fn energy_along(&self, regimes: &[usize]) -> f64 {
        let h = self.grid.step();
        regimes
            .iter()
            .enumerate()
            .map(|(c, &i)| self.values[c][i].norm_squared() * h)
            .sum()
    }
}

/// Regime-indexed solution table of a reduced backward equation.
#[derive(Clone, Debug, PartialEq)]
pub struct BackwardTable {
    grid: TimeGrid,
    values: Vec<Vec<DVector<f64>>>,
}

impl BackwardTable {
    fn from_states(grid: TimeGrid, nodes: &[Vec<DMatrix<f64>>], range: std::ops::Range<usize>) -> Self {
        Self {
            grid,
            values: nodes
                .iter()
                .map(|v| {
                    v[range.clone()]
                        .iter()
                        .map(|m| DVector::from_column_slice(m.as_slice()))
                        .collect()
                })
                .collect(),
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn value(&self, node: usize, regime: usize) -> &DVector<f64> {
        &self.values[node][regime]
    }

    pub fn interpolate(&self, t: f64, regime: usize) -> DVector<f64> {
        let cell = self.grid.cell_at(t);
        let (t0, t1) = (self.grid.time(cell), self.grid.time(cell + 1));
        let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        self.value(cell, regime) * (1.0 - w) + self.value(cell + 1, regime) * w
    }

    /// Jump integrand into regime `k` when the pre-jump regime is `from`.
    pub fn jump(&self, node: usize, k: usize, from: usize) -> DVector<f64> {
        self.value(node, k) - self.value(node, from)
    }

    /// The Brownian integrand. It vanishes identically under the reduction.
    pub fn martingale_integrand(&self) -> DVector<f64> {
        DVector::zeros(self.values[0][0].len())
    }

    pub fn max_distance(&self, other: &BackwardTable) -> f64 {
        self.values
            .iter()
            .flatten()
            .zip(other.values.iter().flatten())
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max)
    }
}

/// Affine maps in φ* (and the follower feedback) at one node and regime.
/// `*_phi` multiplies φ*, `*_0` is the constant part.
#[derive(Clone, Debug)]
pub struct NodePolicy {
    pub sigma: DMatrix<f64>,
    pub phi: DVector<f64>,
    pub u2_phi: DMatrix<f64>,
    pub u2_0: DVector<f64>,
    pub upsilon_phi: DMatrix<f64>,
    pub upsilon_0: DVector<f64>,
    pub z_phi: DMatrix<f64>,
    pub z_0: DVector<f64>,
    pub drift_phi: DMatrix<f64>,
    pub drift_0: DVector<f64>,
    pub diffusion_phi: DMatrix<f64>,
    pub diffusion_0: DVector<f64>,
    /// u1 = fb_x X + fb_u u2 + fb_y Y + fb_z Z + fb_0.
    pub fb_x: DMatrix<f64>,
    pub fb_u: DMatrix<f64>,
    pub fb_y: DMatrix<f64>,
    pub fb_z: DMatrix<f64>,
    pub fb_0: DVector<f64>,
    pub blocks: DerivedBlocks,
}

impl NodePolicy {
    fn build(problem: &ProblemData, regime: usize, t: f64, blocks: DerivedBlocks, p: Option<&DMatrix<f64>>, sigma: DMatrix<f64>, phi: DVector<f64>, ceiling: f64) -> Result<Self> {
        let ops = blocks.sigma_ops(&sigma, regime, t, ceiling)?;
        let lb = &blocks.leader;
        let tb = &blocks.tilde;
        let col = |m: DMatrix<f64>| DVector::from_column_slice(m.as_slice());
        let phi_m = DMatrix::from_column_slice(phi.len(), 1, phi.as_slice());
        let ti_sigma = &ops.t_hat_inv * &sigma;
        let s1t_rho = &tb.s1_tilde * &phi_m + &tb.rho1_tilde;
        let k22 = &lb.t22_inv;
        let z_phi = &ti_sigma * ops.f_hat_sigma.transpose();
        let z_0 = -(&ti_sigma * &s1t_rho);
        let upsilon_phi = k22 * ops.h_hat_sigma.transpose();
        let upsilon_0 = -(k22 * (&lb.s2 * &phi_m + &lb.rho2));
        let u2_phi = &upsilon_phi - k22 * &lb.t21 * &z_phi;
        let u2_0 = &upsilon_0 - k22 * &lb.t21 * &z_0;
        let s1t_t = tb.s1_tilde.transpose() * &ti_sigma;
        let s2t_k = lb.s2.transpose() * k22;
        let drift_phi = -blocks.hat.a_hat.transpose() - &lb.g * &sigma
            + &s1t_t * ops.f_hat_sigma.transpose()
            + &s2t_k * ops.h_hat_sigma.transpose();
        let drift_0 = -((&s1t_t * &tb.s1_tilde + &s2t_k * &lb.s2 - &lb.g) * &phi_m)
            - &s1t_t * &tb.rho1_tilde
            - &s2t_k * &lb.rho2
            + &lb.q;
        let ti_t = ops.t_hat_inv.transpose();
        let diffusion_phi = -(&ti_t * ops.f_hat_sigma.transpose());
        let diffusion_0 = &ti_t * &s1t_rho;

        let (fb_x, fb_u, fb_y, fb_z, fb_0) = match (problem.game_regimes(), p) {
            (Some(regimes), Some(p)) => {
                let r = &regimes[regime];
                let k = -&blocks.hat.r1_hat_inv;
                let d1t = r.d1.at(t).transpose();
                (
                    &k * &blocks.hat.s1_hat,
                    &k * &blocks.hat.xi,
                    &k * r.b1.at(t).transpose(),
                    &k * &d1t,
                    col(&k * &d1t * p * r.diffusion.at(t)),
                )
            }
            _ => {
                let (n, m2) = (problem.state_dim, problem.leader_dim());
                (
                    DMatrix::zeros(0, n),
                    DMatrix::zeros(0, m2),
                    DMatrix::zeros(0, n),
                    DMatrix::zeros(0, n),
                    DVector::zeros(0),
                )
            }
        };
        Ok(Self {
            u2_phi,
            u2_0: col(u2_0),
            upsilon_phi,
            upsilon_0: col(upsilon_0),
            z_phi,
            z_0: col(z_0),
            drift_phi,
            drift_0: col(drift_0),
            diffusion_phi,
            diffusion_0: col(diffusion_0),
            fb_x,
            fb_u,
            fb_y,
            fb_z,
            fb_0,
            sigma,
            phi,
            blocks,
        })
    }

    pub fn u2(&self, phi_star: &DVector<f64>) -> DVector<f64> {
        &self.u2_phi * phi_star + &self.u2_0
    }

    pub fn upsilon(&self, phi_star: &DVector<f64>) -> DVector<f64> {
        &self.upsilon_phi * phi_star + &self.upsilon_0
    }

    pub fn y(&self, phi_star: &DVector<f64>) -> DVector<f64> {
        -(&self.sigma * phi_star) + &self.phi
    }

    pub fn z(&self, phi_star: &DVector<f64>) -> DVector<f64> {
        &self.z_phi * phi_star + &self.z_0
    }

    pub fn phi_drift(&self, phi_star: &DVector<f64>) -> DVector<f64> {
        &self.drift_phi * phi_star + &self.drift_0
    }

    pub fn phi_diffusion(&self, phi_star: &DVector<f64>) -> DVector<f64> {
        &self.diffusion_phi * phi_star + &self.diffusion_0
    }

    /// Follower feedback `-R1hat^{-1}[S1hat X + Xi u2 + B1'Y + D1'Z + D1'P sigma]`.
    pub fn u1(&self, x: &DVector<f64>, u2: &DVector<f64>, y: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
        &self.fb_x * x + &self.fb_u * u2 + &self.fb_y * y + &self.fb_z * z + &self.fb_0
    }

    /// `-Hhat' φ* + S2 Y + T21 Z + T22 u2 + rho2`, zero at the equilibrium.
    pub fn stationarity(&self, phi_star: &DVector<f64>, y: &DVector<f64>, z: &DVector<f64>, u2: &DVector<f64>) -> DVector<f64> {
        let lb = &self.blocks.leader;
        let rho2 = DVector::from_column_slice(lb.rho2.as_slice());
        -(self.blocks.hat.h_hat.transpose() * phi_star) + &lb.s2 * y + &lb.t21 * z + &lb.t22 * u2 + rho2
    }
}

/// Solved equilibrium: Riccati tables, the φ table and per-node policy maps.
#[derive(Clone, Debug)]
pub struct Equilibrium {
    problem: ProblemData,
    options: SolveOptions,
    pub follower: Option<RiccatiSolution>,
    pub sigma: RiccatiSolution,
    pub phi: BackwardTable,
    nodes: Vec<Vec<NodePolicy>>,
}

/// Solves [P, Sigma, φ] jointly and returns the leader solution and φ table.
pub fn solve_phi_bsde(problem: &ProblemData, steps: usize, options: SolveOptions) -> Result<(LeaderSolution, BackwardTable)> {
    let grid = problem.grid(steps)?;
    let d = problem.num_regimes();
    let terminal: Vec<DVector<f64>> = (0..d).map(|i| problem.terminal_linear(i).clone()).collect();
    let (nodes, rk4_steps, residual) = leader_system(problem, grid, options, Some(&terminal))?;
    let off = if problem.is_game() { d } else { 0 };
    let meta = SolverMeta {
        step: grid.step(),
        order: 4,
        rk4_steps,
        max_residual: Some(residual),
        max_condition: None,
        min_margin: None,
    };
    let split = |r: std::ops::Range<usize>| nodes.iter().map(|v| v[r.clone()].to_vec()).collect::<Vec<_>>();
    let follower = problem
        .is_game()
        .then(|| RiccatiSolution::new(grid, SolutionKind::FollowerP, split(0..d), meta.clone()));
    let sigma = RiccatiSolution::new(grid, SolutionKind::LeaderSigma, split(off..off + d), meta);
    let phi = BackwardTable::from_states(grid, &nodes, off + d..off + 2 * d);
    Ok((LeaderSolution { follower, sigma }, phi))
}

impl Equilibrium {
    pub fn solve(problem: &ProblemData, steps: usize, options: SolveOptions) -> Result<Self> {
        let (leader, phi) = solve_phi_bsde(problem, steps, options)?;
        let grid = *leader.sigma.grid();
        let table = derived_table(problem, &grid, leader.follower.as_ref(), options.condition_ceiling)?;
        let mut nodes = Vec::with_capacity(grid.num_nodes());
        for j in 0..grid.num_nodes() {
            let t = grid.midpoint(grid.cell_of_node(j));
            let mut row = Vec::with_capacity(problem.num_regimes());
            for i in 0..problem.num_regimes() {
                row.push(NodePolicy::build(
                    problem,
                    i,
                    t,
                    table.at(j, i).clone(),
                    leader.follower.as_ref().map(|f| f.value(j, i)),
                    leader.sigma.value(j, i).clone(),
                    phi.value(j, i).clone(),
                    options.condition_ceiling,
                )?);
            }
            nodes.push(row);
        }
        Ok(Self {
            problem: problem.clone(),
            options,
            follower: leader.follower,
            sigma: leader.sigma,
            phi,
            nodes,
        })
    }

    pub fn problem(&self) -> &ProblemData {
        &self.problem
    }

    pub fn options(&self) -> SolveOptions {
        self.options
    }

    pub fn grid(&self) -> &TimeGrid {
        self.sigma.grid()
    }

    /// Policy maps at a grid node (coefficients of the cell to its right).
    pub fn node_policy(&self, node: usize, regime: usize) -> &NodePolicy {
        &self.nodes[node][regime]
    }

    /// Policy maps at an arbitrary time, with Riccati and φ tables linearly
    /// interpolated between nodes.
    pub fn policy_at(&self, t: f64, regime: usize) -> Result<NodePolicy> {
        let p = self.follower.as_ref().map(|f| f.interpolate(t, regime));
        let blocks = DerivedBlocks::evaluate(&self.problem, regime, t, p.as_ref(), self.options.condition_ceiling)?;
        NodePolicy::build(
            &self.problem,
            regime,
            t,
            blocks,
            p.as_ref(),
            self.sigma.interpolate(t, regime),
            self.phi.interpolate(t, regime),
            self.options.condition_ceiling,
        )
    }

    /// Γ*_k at a node: `-(Σ(s,k) - Σ(s,α(s-))) φ* + φ(s,k) - φ(s,α(s-))`.
    pub fn gamma(&self, node: usize, k: usize, from: usize, phi_star: &DVector<f64>) -> DVector<f64> {
        -((self.sigma.value(node, k) - self.sigma.value(node, from)) * phi_star) + self.phi.jump(node, k, from)
    }

    fn blocks_for_cell(&self, node: usize, cell: usize, regime: usize) -> Result<Cow<'_, NodePolicy>> {
        if self.grid().cell_of_node(node) == cell {
            return Ok(Cow::Borrowed(&self.nodes[node][regime]));
        }
        let t = self.grid().midpoint(cell);
        let p = self.follower.as_ref().map(|f| f.value(node, regime));
        let blocks = DerivedBlocks::evaluate(&self.problem, regime, t, p, self.options.condition_ceiling)?;
        Ok(Cow::Owned(NodePolicy::build(
            &self.problem,
            regime,
            t,
            blocks,
            p,
            self.sigma.value(node, regime).clone(),
            self.phi.value(node, regime).clone(),
            self.options.condition_ceiling,
        )?))
    }
}

/// Value functions at (x, i).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValueFunctions {
    /// The leader's reduced value V_L.
    pub leader: f64,
    /// The equilibrium value V (full games only).
    pub equilibrium: Option<f64>,
}

fn quad(a: &DVector<f64>, m: &DMatrix<f64>, b: &DVector<f64>) -> f64 {
    (a.transpose() * m * b)[(0, 0)]
}

fn leader_integrand(policy: &NodePolicy, t: f64, regime: usize, ceiling: f64) -> Result<f64> {
    let b = &policy.blocks;
    let (lb, tb) = (&b.leader, &b.tilde);
    let sigma = &policy.sigma;
    let phi = &policy.phi;
    let ops = b.sigma_ops(sigma, regime, t, ceiling)?;
    let ti_sigma = &ops.t_hat_inv * sigma;
    let col = |m: &DMatrix<f64>| DVector::from_column_slice(m.as_slice());
    let rho1 = col(&tb.rho1_tilde);
    let rho2 = col(&lb.rho2);
    let m = tb.s1_tilde.transpose() * &ti_sigma * &tb.s1_tilde + lb.s2.transpose() * &lb.t22_inv * &lb.s2 - &lb.g;
    let lin = -(tb.s1_tilde.transpose() * &ti_sigma * &rho1) - lb.s2.transpose() * &lb.t22_inv * &rho2 + col(&lb.q);
    Ok(-quad(phi, &m, phi) + 2.0 * phi.dot(&lin) - quad(&rho1, &ti_sigma, &rho1) - quad(&rho2, &lb.t22_inv, &rho2))
}

fn noise_integrand(problem: &ProblemData, policy: &NodePolicy, p: &DMatrix<f64>, t: f64, regime: usize) -> f64 {
    let r = &problem.game_regimes().expect("game")[regime];
    let sigma = DVector::from_column_slice(r.diffusion.at(t).as_slice());
    let p_sigma = p * &sigma;
    let d1t_p_sigma = r.d1.at(t).transpose() * &p_sigma;
    -quad(&d1t_p_sigma, &policy.blocks.hat.r1_hat_inv, &d1t_p_sigma) + p_sigma.dot(&sigma)
}

/// V_L and V by quadrature over the regime law (forward Kolmogorov equation,
/// RK4 on the Riccati grid, trapezoid in time with per-cell coefficients).
pub fn value_functions(eq: &Equilibrium, x: &DVector<f64>, regime: Regime) -> Result<ValueFunctions> {
    let problem = eq.problem();
    let grid = *eq.grid();
    let d = problem.num_regimes();
    let ceiling = eq.options().condition_ceiling;
    let law = regime_distribution(&problem.generator, regime, &grid);
    let h = grid.step();
    let mut leader_integral = 0.0;
    let mut noise_integral = 0.0;
    for cell in 0..grid.steps() {
        let t = grid.midpoint(cell);
        for (w_node, node) in [(cell, cell), (cell + 1, cell + 1)] {
            for k in 0..d {
                let weight = 0.5 * h * law[w_node][k];
                if weight == 0.0 {
                    continue;
                }
                let policy = eq.blocks_for_cell(node, cell, k)?;
                leader_integral += weight * leader_integrand(&policy, t, k, ceiling)?;
                if let Some(f) = &eq.follower {
                    noise_integral += weight * noise_integrand(problem, &policy, f.value(node, k), t, k);
                }
            }
        }
    }
    let i = regime.index();
    let sigma0 = eq.sigma.value(0, i);
    let phi0 = eq.phi.value(0, i);
    let boundary = -(sigma0 * x + phi0 * 2.0).dot(x);
    let leader = boundary + leader_integral;
    let equilibrium = eq
        .follower
        .as_ref()
        .map(|f| -leader + noise_integral + quad(x, f.value(0, i), x));
    Ok(ValueFunctions { leader, equilibrium })
}

/// Solves the follower-side backward equation for a deterministic leader
/// control `u2`. With `homogeneous` the forcing and terminal data are
/// dropped (the response to `u2` alone). Z vanishes identically, so the
/// follower's feedback is `NodePolicy::u1` with this Y and Z = 0.
pub fn follower_reaction(
    problem: &ProblemData,
    steps: usize,
    options: SolveOptions,
    u2: &ControlTable,
    homogeneous: bool,
) -> Result<BackwardTable> {
    let grid = problem.grid(steps)?;
    grid.refinement_of(u2.grid())?;
    let nodes = reaction_system(problem, grid, options, u2, homogeneous)?;
    let d = problem.num_regimes();
    let off = if problem.is_game() { d } else { 0 };
    Ok(BackwardTable::from_states(grid, &nodes, off..off + d))
}

/// Euler-Maruyama for φ* along a given regime path and Brownian increments.
/// `increments.len()` sets the number of steps, which must divide the
/// Riccati grid.
pub fn simulate_phi_star(eq: &Equilibrium, path: &RegimePath, increments: &[f64], x: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
    let grid = *eq.grid();
    let sim = TimeGrid::new(grid.horizon(), increments.len())?;
    let stride = grid.refinement_of(&sim)?;
    let h = sim.step();
    let mut phi = -x.clone();
    let mut out = Vec::with_capacity(increments.len() + 1);
    out.push(phi.clone());
    for (j, dw) in increments.iter().enumerate() {
        let node = j * stride;
        let policy = eq.node_policy(node, path.state_at(sim.time(j)).index());
        let next = &phi + policy.phi_drift(&phi) * h + policy.phi_diffusion(&phi) * *dw;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp {
                time: sim.time(j + 1),
                last_valid: sim.time(j),
            });
        }
        phi = next;
        out.push(phi.clone());
    }
    Ok(out)
}

/// Leader-side table dump helper: φ(s, i) rows in node order.
pub fn phi_rows(table: &BackwardTable) -> impl Iterator<Item = (f64, usize, &DVector<f64>)> {
    let grid = *table.grid();
    table
        .values
        .iter()
        .enumerate()
        .flat_map(move |(j, row)| row.iter().enumerate().map(move |(i, v)| (grid.time(j), i, v)))
}
