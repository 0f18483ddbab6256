use nalgebra::{DMatrix, DVector};

use super::engine::{integrate_backward, max_residual, State, Substeps};
use super::{RiccatiSolution, SolutionKind, SolverMeta};
use crate::coefficients::{derived_table, follower_hat_at, one_dim_rewrite, DerivedBlocks, FollowerHat, OneDimRewriteTable};
use crate::error::{Checkpoint, Error, Result};
use crate::grid::TimeGrid;
use crate::linalg::{min_eigenvalue, spd_inverse, DEFAULT_CONDITION_CEILING};
use crate::model::{GameRegime, ProblemData};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveOptions {
    /// Condition-number ceiling for every guarded inverse.
    pub condition_ceiling: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            condition_ceiling: DEFAULT_CONDITION_CEILING,
        }
    }
}

fn breakpoint_nodes(problem: &ProblemData, grid: &TimeGrid) -> Vec<usize> {
    problem
        .breakpoints()
        .into_iter()
        .map(|b| (b / grid.horizon() * grid.steps() as f64).round() as usize)
        .collect()
}

fn p_rhs(r: &GameRegime, t: f64, rates: &DMatrix<f64>, i: usize, p_all: &[DMatrix<f64>], hat: &FollowerHat) -> DMatrix<f64> {
    let p = &p_all[i];
    let (a, c) = (r.a.at(t), r.c.at(t));
    let mut out = -(p * a) - a.transpose() * p - c.transpose() * p * c
        + hat.s1_hat.transpose() * &hat.r1_hat_inv * &hat.s1_hat
        - r.q.at(t);
    for (k, pk) in p_all.iter().enumerate() {
        let rate = rates[(i, k)];
        if rate != 0.0 {
            out -= pk * rate;
        }
    }
    out
}

/// Shared machinery for every system that carries the follower's P along
/// with leader-side unknowns.
pub(crate) struct LeaderSystem<'a> {
    pub(crate) problem: &'a ProblemData,
    pub(crate) grid: TimeGrid,
    pub(crate) ceiling: f64,
    pub(crate) d: usize,
    pub(crate) game: bool,
    cache_cell: Option<usize>,
    blocks: Vec<DerivedBlocks>,
}

impl<'a> LeaderSystem<'a> {
    pub(crate) fn new(problem: &'a ProblemData, grid: TimeGrid, ceiling: f64) -> Self {
        Self {
            problem,
            grid,
            ceiling,
            d: problem.num_regimes(),
            game: problem.is_game(),
            cache_cell: None,
            blocks: Vec::new(),
        }
    }

    /// Offset of the first leader-side component in the state vector.
    pub(crate) fn offset(&self) -> usize {
        if self.game {
            self.d
        } else {
            0
        }
    }

    pub(crate) fn terminal_p(&self) -> State {
        match self.problem.game_regimes() {
            Some(regimes) => regimes.iter().map(|r| r.terminal_weight.clone()).collect(),
            None => Vec::new(),
        }
    }

    /// Blocks for every regime at a stage. For games they depend on the stage
    /// value of P; reduced problems reuse them across a cell.
    pub(crate) fn stage_blocks(&mut self, cell: usize, s: f64, state: &State) -> Result<(&[DerivedBlocks], Option<State>)> {
        let t = self.grid.midpoint(cell);
        if !self.game {
            if self.cache_cell != Some(cell) {
                self.blocks.clear();
                for i in 0..self.d {
                    self.blocks.push(DerivedBlocks::evaluate(self.problem, i, t, None, self.ceiling)?);
                }
                self.cache_cell = Some(cell);
            }
            return Ok((&self.blocks, None));
        }
        let regimes = self.problem.game_regimes().expect("game");
        let rates = self.problem.generator.rates_at(t);
        self.blocks.clear();
        let mut dp = Vec::with_capacity(self.d);
        for i in 0..self.d {
            let b = DerivedBlocks::evaluate(self.problem, i, t, Some(&state[i]), self.ceiling)
                .map_err(|e| retime(e, s))?;
            dp.push(p_rhs(&regimes[i], t, rates, i, &state[..self.d], &b.hat));
            self.blocks.push(b);
        }
        self.cache_cell = None;
        Ok((&self.blocks, Some(dp)))
    }
}

/// Blocks are evaluated at the cell midpoint; report the stage time instead.
fn retime(e: Error, s: f64) -> Error {
    match e {
        Error::Singular { checkpoint, regime, failure, .. } => Error::Singular {
            checkpoint,
            time: s,
            regime,
            failure,
        },
        other => other,
    }
}

pub fn solve_follower_cdre(problem: &ProblemData, steps: usize, options: SolveOptions) -> Result<RiccatiSolution> {
    let regimes = problem
        .game_regimes()
        .ok_or_else(|| Error::InvalidArgument("a reduced leader problem has no follower Riccati equation".into()))?;
    if steps < 10 {
        return Err(Error::InvalidArgument(format!("steps must be at least 10, got {steps}")));
    }
    let grid = problem.grid(steps)?;
    let d = problem.num_regimes();
    let ceiling = options.condition_ceiling;
    let mut margin = f64::INFINITY;
    let mut rhs = |cell: usize, s: f64, p: &State| -> Result<State> {
        let t = grid.midpoint(cell);
        let rates = problem.generator.rates_at(t);
        let mut out = Vec::with_capacity(d);
        for i in 0..d {
            let hat = follower_hat_at(&regimes[i], i, t, &p[i], ceiling).map_err(|e| retime(e, s))?;
            margin = margin.min(hat.r1_hat_min_eigenvalue);
            out.push(p_rhs(&regimes[i], t, rates, i, p, &hat));
        }
        Ok(out)
    };
    let terminal: State = regimes.iter().map(|r| r.terminal_weight.clone()).collect();
    let (nodes, rk4_steps) = integrate_backward(&grid, terminal, &mut rhs, Substeps::One)?;
    let residual = max_residual(&grid, &nodes, &mut rhs, 0..d, &breakpoint_nodes(problem, &grid))?;
    Ok(RiccatiSolution::new(
        grid,
        SolutionKind::FollowerP,
        nodes,
        SolverMeta {
            step: grid.step(),
            order: 4,
            rk4_steps,
            max_residual: Some(residual),
            max_condition: None,
            min_margin: Some(margin),
        },
    ))
}

/// Leader solve output. Games also carry the follower's P, integrated jointly
/// so that mid-step blocks see the exact stage value of P.
#[derive(Clone, Debug)]
pub struct LeaderSolution {
    pub follower: Option<RiccatiSolution>,
    pub sigma: RiccatiSolution,
}

/// Integrates [P, Sigma] (and optionally phi, n x 1 per regime) backward.
pub(crate) fn leader_system(
    problem: &ProblemData,
    grid: TimeGrid,
    options: SolveOptions,
    phi_terminal: Option<&[DVector<f64>]>,
) -> Result<(Vec<State>, usize, f64)> {
    let mut sys = LeaderSystem::new(problem, grid, options.condition_ceiling);
    let d = sys.d;
    let off = sys.offset();
    let n = problem.state_dim;
    let mut terminal = sys.terminal_p();
    terminal.extend((0..d).map(|_| DMatrix::zeros(n, n)));
    if let Some(m) = phi_terminal {
        terminal.extend(m.iter().map(|v| DMatrix::from_column_slice(n, 1, v.as_slice())));
    }
    let with_phi = phi_terminal.is_some();
    let ceiling = options.condition_ceiling;
    let mut rhs = |cell: usize, s: f64, v: &State| -> Result<State> {
        let rates = problem.generator.rates_at(grid.midpoint(cell)).clone();
        let (blocks, dp) = sys.stage_blocks(cell, s, v)?;
        let mut out = dp.unwrap_or_default();
        let mut dphi = Vec::new();
        for (i, b) in blocks.iter().enumerate() {
            let sigma = &v[off + i];
            let ops = b.sigma_ops(sigma, i, s, ceiling)?;
            let mut ds = b.sigma_rhs(sigma, &ops);
            for k in 0..d {
                if rates[(i, k)] != 0.0 {
                    ds -= &v[off + k] * rates[(i, k)];
                }
            }
            out.push(ds);
            if with_phi {
                let lb = &b.leader;
                let tb = &b.tilde;
                let ft_sigma = &ops.f_hat_sigma * &ops.t_hat_inv * sigma;
                let hk = &ops.h_hat_sigma * &lb.t22_inv;
                let coef = &b.hat.a_hat - &ft_sigma * &tb.s1_tilde + sigma * &lb.g - &hk * &lb.s2;
                let forcing = -(&ft_sigma * &tb.rho1_tilde) - &hk * &lb.rho2 + sigma * &lb.q + &b.hat.f_hat;
                let mut dv = coef * &v[off + d + i] + forcing;
                for k in 0..d {
                    if rates[(i, k)] != 0.0 {
                        dv -= &v[off + d + k] * rates[(i, k)];
                    }
                }
                dphi.push(dv);
            }
        }
        out.extend(dphi);
        Ok(out)
    };
    let (nodes, rk4_steps) = integrate_backward(&grid, terminal, &mut rhs, Substeps::One)?;
    let residual = max_residual(&grid, &nodes, &mut rhs, 0..off + d, &breakpoint_nodes(problem, &grid))?;
    Ok((nodes, rk4_steps, residual))
}

fn split_solution(nodes: &[State], range: std::ops::Range<usize>) -> Vec<Vec<DMatrix<f64>>> {
    nodes.iter().map(|v| v[range.clone()].to_vec()).collect()
}

pub fn solve_leader_cdre(problem: &ProblemData, steps: usize, options: SolveOptions) -> Result<LeaderSolution> {
    if steps < 10 {
        return Err(Error::InvalidArgument(format!("steps must be at least 10, got {steps}")));
    }
    let grid = problem.grid(steps)?;
    let (nodes, rk4_steps, residual) = leader_system(problem, grid, options, None)?;
    let d = problem.num_regimes();
    let off = if problem.is_game() { d } else { 0 };
    let meta = SolverMeta {
        step: grid.step(),
        order: 4,
        rk4_steps,
        max_residual: Some(residual),
        max_condition: None,
        min_margin: None,
    };
    let follower = problem.is_game().then(|| {
        RiccatiSolution::new(grid, SolutionKind::FollowerP, split_solution(&nodes, 0..d), meta.clone())
    });
    let table = derived_table(problem, &grid, follower.as_ref(), options.condition_ceiling)?;
    let mut max_condition: f64 = 0.0;
    let mut margin = f64::INFINITY;
    for (j, v) in nodes.iter().enumerate() {
        for i in 0..d {
            let b = table.at(j, i);
            let ops = b.sigma_ops(&v[off + i], i, grid.time(j), options.condition_ceiling)?;
            max_condition = max_condition.max(ops.condition);
            margin = margin.min(b.leader.t22_min_eigenvalue);
        }
    }
    let sigma = RiccatiSolution::new(
        grid,
        SolutionKind::LeaderSigma,
        split_solution(&nodes, off..off + d),
        SolverMeta {
            max_condition: Some(max_condition),
            min_margin: Some(margin),
            ..meta
        },
    );
    Ok(LeaderSolution { follower, sigma })
}

const MAX_SUBSTEPS: usize = 100_000;
const STIFFNESS_TARGET: f64 = 0.05;

/// Solves the lambda-family with terminal value `lambda * I`. The equation is
/// stiff for large lambda, so each cell is subdivided until
/// `h * (local rate) <= 0.05`; values are still reported on the grid.
pub fn solve_lambda_cdre(problem: &ProblemData, lambda: f64, steps: usize, options: SolveOptions) -> Result<RiccatiSolution> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    if steps < 10 {
        return Err(Error::InvalidArgument(format!("steps must be at least 10, got {steps}")));
    }
    let grid = problem.grid(steps)?;
    let mut sys = LeaderSystem::new(problem, grid, options.condition_ceiling);
    let d = sys.d;
    let off = sys.offset();
    let n = problem.state_dim;
    let mut terminal = sys.terminal_p();
    terminal.extend((0..d).map(|_| DMatrix::identity(n, n) * lambda));
    let ceiling = options.condition_ceiling;
    let mut block_margin = f64::INFINITY;
    let mut value_margin = f64::INFINITY;
    let mut rhs = |cell: usize, s: f64, v: &State| -> Result<State> {
        let rates = problem.generator.rates_at(grid.midpoint(cell)).clone();
        let (blocks, dp) = sys.stage_blocks(cell, s, v)?;
        let mut inverses = Vec::with_capacity(d);
        for i in 0..d {
            let inv = spd_inverse(&v[off + i], ceiling)
                .map_err(|f| Error::singular(Checkpoint::LambdaValue, s, i, f))?;
            value_margin = value_margin.min(inv.min_eigenvalue);
            inverses.push(inv.inverse);
        }
        let mut out = dp.unwrap_or_default();
        for (i, b) in blocks.iter().enumerate() {
            let p = &v[off + i];
            let a_hat = &b.hat.a_hat;
            let w1 = b.tilde.f_tilde.transpose() * p + &b.tilde.s1_tilde;
            let w2 = b.hat.h_hat.transpose() * p + &b.leader.s2;
            let block = spd_inverse(&(&b.tilde.t11_tilde + p), ceiling)
                .map_err(|f| Error::singular(Checkpoint::LambdaBlock, s, i, f))?;
            block_margin = block_margin.min(block.min_eigenvalue);
            let mut dv = -(p * a_hat) - a_hat.transpose() * p - &b.leader.g
                + w1.transpose() * &block.inverse * &w1
                + w2.transpose() * &b.leader.t22_inv * &w2;
            for (k, inv) in inverses.iter().enumerate() {
                if rates[(i, k)] != 0.0 {
                    dv += p * inv * p * rates[(i, k)];
                }
            }
            out.push(dv);
        }
        Ok(out)
    };
    let extra_rate = problem
        .generator
        .pieces()
        .iter()
        .flat_map(|p| (0..d).map(move |i| p.rates[(i, i)].abs()))
        .fold(0.0, f64::max);
    let rule = Substeps::Stiff {
        target: STIFFNESS_TARGET,
        max: MAX_SUBSTEPS,
        extra_rate,
    };
    let (nodes, rk4_steps) = integrate_backward(&grid, terminal, &mut rhs, rule)?;
    Ok(RiccatiSolution::new(
        grid,
        SolutionKind::LambdaP,
        split_solution(&nodes, off..off + d),
        SolverMeta {
            step: grid.step(),
            order: 4,
            rk4_steps,
            max_residual: None,
            max_condition: None,
            min_margin: Some(block_margin.min(value_margin)),
        },
    ))
}

/// Integrates [P, Y] where Y solves the follower-side backward equation for a
/// deterministic regime-indexed leader control. With `homogeneous` the
/// forcing and terminal data are dropped, which yields the linear response
/// to `u2` alone.
pub(crate) fn reaction_system(
    problem: &ProblemData,
    grid: TimeGrid,
    options: SolveOptions,
    u2: &crate::equilibrium::ControlTable,
    homogeneous: bool,
) -> Result<Vec<State>> {
    if u2.dim() != problem.leader_dim() || u2.num_regimes() != problem.num_regimes() {
        return Err(Error::InvalidArgument("leader control table has the wrong shape".into()));
    }
    let mut sys = LeaderSystem::new(problem, grid, options.condition_ceiling);
    let d = sys.d;
    let off = sys.offset();
    let n = problem.state_dim;
    let mut terminal = sys.terminal_p();
    for i in 0..d {
        terminal.push(if homogeneous {
            DMatrix::zeros(n, 1)
        } else {
            DMatrix::from_column_slice(n, 1, problem.terminal_linear(i).as_slice())
        });
    }
    let mut rhs = |cell: usize, s: f64, v: &State| -> Result<State> {
        let t = grid.midpoint(cell);
        let rates = problem.generator.rates_at(t).clone();
        let (blocks, dp) = sys.stage_blocks(cell, s, v)?;
        let mut out = dp.unwrap_or_default();
        for (i, b) in blocks.iter().enumerate() {
            let control = u2.at_time(t, i);
            let control = DMatrix::from_column_slice(control.len(), 1, control.as_slice());
            let mut dy = &b.hat.a_hat * &v[off + i] + &b.hat.h_hat * &control;
            if !homogeneous {
                dy += &b.hat.f_hat;
            }
            for k in 0..d {
                if rates[(i, k)] != 0.0 {
                    dy -= &v[off + k] * rates[(i, k)];
                }
            }
            out.push(dy);
        }
        Ok(out)
    };
    let (nodes, _) = integrate_backward(&grid, terminal, &mut rhs, Substeps::One)?;
    Ok(nodes)
}

/// One row of the lambda convergence table.
#[derive(Clone, Debug, PartialEq)]
pub struct LambdaStudyRow {
    pub lambda: f64,
    /// max over nodes, regimes and entries of |P_lambda^{-1} - Sigma|.
    pub distance: Option<f64>,
    /// Whether P_lambda^{-1} sits below the previous row's inverse (within
    /// 1e-8, in the eigenvalue sense) at every node. `None` for the first
    /// successful row.
    pub monotone: Option<bool>,
    /// Smallest eigenvalue seen of P_lambda and T11~ + P_lambda.
    pub margin: Option<f64>,
    pub error: Option<String>,
}

pub const MONOTONICITY_TOLERANCE: f64 = 1e-8;

/// Solves the lambda-family for each (ascending) lambda and compares the
/// inverse to the leader's Sigma. Solver failures are recorded per row.
pub fn lambda_limit_study(
    problem: &ProblemData,
    lambdas: &[f64],
    steps: usize,
    options: SolveOptions,
) -> Result<Vec<LambdaStudyRow>> {
    if lambdas.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument("lambdas must be strictly ascending".into()));
    }
    let sigma = solve_leader_cdre(problem, steps, options)?.sigma;
    let mut rows = Vec::with_capacity(lambdas.len());
    let mut previous: Option<RiccatiSolution> = None;
    for &lambda in lambdas {
        match solve_lambda_cdre(problem, lambda, steps, options) {
            Err(e) => rows.push(LambdaStudyRow {
                lambda,
                distance: None,
                monotone: None,
                margin: None,
                error: Some(e.to_string()),
            }),
            Ok(sol) => {
                let inverse = sol.map_values(SolutionKind::LambdaP, |p| {
                    p.clone().try_inverse().unwrap_or_else(|| DMatrix::from_element(p.nrows(), p.ncols(), f64::NAN))
                });
                let distance = inverse.max_distance(&sigma);
                let monotone = previous.as_ref().map(|prev| {
                    (0..=sol.grid().steps()).all(|j| {
                        (0..sol.num_regimes()).all(|i| {
                            min_eigenvalue(&(prev.value(j, i) - inverse.value(j, i))) >= -MONOTONICITY_TOLERANCE
                        })
                    })
                });
                rows.push(LambdaStudyRow {
                    lambda,
                    distance: Some(distance),
                    monotone,
                    margin: sol.meta().min_margin,
                    error: None,
                });
                previous = Some(inverse);
            }
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegimeCertificate {
    pub regime: usize,
    /// Smallest eigenvalue of the 3x3 certificate matrix over the grid.
    pub min_eigenvalue: f64,
    /// Certificate matrix where that minimum was attained.
    pub worst_matrix: DMatrix<f64>,
    pub worst_time: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Certificate {
    pub regimes: Vec<RegimeCertificate>,
}

impl Certificate {
    pub fn pass(&self) -> bool {
        self.regimes.iter().all(|r| r.pass)
    }
}

/// Checks positive definiteness of [[Q, 0, S], [0, R1, 0], [S, 0, R2]] for
/// every regime and node. A vanishing or negative R1^{-1} fails outright.
pub fn solvability_certificate(table: &OneDimRewriteTable) -> Certificate {
    let d = table.nodes()[0].len();
    let regimes = (0..d)
        .map(|i| {
            let mut best = RegimeCertificate {
                regime: i + 1,
                min_eigenvalue: f64::INFINITY,
                worst_matrix: DMatrix::zeros(3, 3),
                worst_time: 0.0,
                pass: true,
            };
            for (j, row) in table.nodes().iter().enumerate() {
                let r = &row[i];
                let m = r.certificate_matrix();
                let eig = if r.r1_inv > 0.0 && m.iter().all(|v| v.is_finite()) {
                    min_eigenvalue(&m)
                } else {
                    f64::NEG_INFINITY
                };
                if eig < best.min_eigenvalue {
                    best.min_eigenvalue = eig;
                    best.worst_matrix = m;
                    best.worst_time = table.grid().time(j);
                }
            }
            best.pass = best.min_eigenvalue > 0.0;
            best
        })
        .collect();
    Certificate { regimes }
}

/// Convenience: certificate straight from a problem (n = 1 only).
pub fn certify_problem(problem: &ProblemData, steps: usize, options: SolveOptions) -> Result<(OneDimRewriteTable, Certificate)> {
    if problem.state_dim != 1 {
        return Err(Error::UnsupportedDimension(format!(
            "the solvability certificate needs n = 1, got n = {}",
            problem.state_dim
        )));
    }
    let grid = problem.grid(steps)?;
    let follower = if problem.is_game() {
        Some(solve_follower_cdre(problem, steps, options)?)
    } else {
        None
    };
    let blocks = derived_table(problem, &grid, follower.as_ref(), options.condition_ceiling)?;
    let table = one_dim_rewrite(&blocks)?;
    let cert = solvability_certificate(&table);
    Ok((table, cert))
}
