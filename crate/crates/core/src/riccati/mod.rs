//! Backward solvers for the follower's and leader's coupled Riccati systems
//! and the lambda-regularised family, plus the scalar solvability certificate.

pub(crate) mod engine;
mod systems;

use nalgebra::DMatrix;

pub use systems::{
    certify_problem, lambda_limit_study, solvability_certificate, solve_follower_cdre, solve_lambda_cdre,
    solve_leader_cdre, Certificate, LambdaStudyRow, LeaderSolution, RegimeCertificate, SolveOptions, MONOTONICITY_TOLERANCE,
};

pub(crate) use systems::{leader_system, reaction_system};

use crate::grid::TimeGrid;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolutionKind {
    FollowerP,
    LeaderSigma,
    LambdaP,
}

impl SolutionKind {
    pub fn label(self) -> &'static str {
        match self {
            SolutionKind::FollowerP => "follower-P",
            SolutionKind::LeaderSigma => "leader-Sigma",
            SolutionKind::LambdaP => "lambda-P",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverMeta {
    pub step: f64,
    pub order: u32,
    /// Total RK4 steps taken (exceeds the grid size when cells were subdivided).
    pub rk4_steps: usize,
    pub max_residual: Option<f64>,
    /// Largest condition number of the factor inverted along the solution.
    pub max_condition: Option<f64>,
    /// Smallest eigenvalue of the matrix whose definiteness was monitored.
    pub min_margin: Option<f64>,
}

/// Per-node, per-regime symmetric matrices on a uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct RiccatiSolution {
    grid: TimeGrid,
    kind: SolutionKind,
    values: Vec<Vec<DMatrix<f64>>>,
    meta: SolverMeta,
}

impl RiccatiSolution {
    pub(crate) fn new(grid: TimeGrid, kind: SolutionKind, values: Vec<Vec<DMatrix<f64>>>, meta: SolverMeta) -> Self {
        Self {
            grid,
            kind,
            values,
            meta,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn kind(&self) -> SolutionKind {
        self.kind
    }

    pub fn meta(&self) -> &SolverMeta {
        &self.meta
    }

    pub fn num_regimes(&self) -> usize {
        self.values[0].len()
    }

    pub fn value(&self, node: usize, regime: usize) -> &DMatrix<f64> {
        &self.values[node][regime]
    }

    pub fn node_values(&self, node: usize) -> &[DMatrix<f64>] {
        &self.values[node]
    }

    /// Linear interpolation between nodes.
    pub fn interpolate(&self, t: f64, regime: usize) -> DMatrix<f64> {
        let cell = self.grid.cell_at(t);
        let (t0, t1) = (self.grid.time(cell), self.grid.time(cell + 1));
        let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        self.value(cell, regime) * (1.0 - w) + self.value(cell + 1, regime) * w
    }

    /// Largest |V - V'| entry over all nodes and regimes.
    pub fn max_asymmetry(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .map(crate::linalg::asymmetry)
            .fold(0.0, f64::max)
    }

    /// Largest entrywise gap to another solution on the same grid.
    pub fn max_distance(&self, other: &RiccatiSolution) -> f64 {
        self.values
            .iter()
            .flatten()
            .zip(other.values.iter().flatten())
            .map(|(a, b)| (a - b).abs().max())
            .fold(0.0, f64::max)
    }

    pub(crate) fn map_values(&self, kind: SolutionKind, f: impl Fn(&DMatrix<f64>) -> DMatrix<f64>) -> Self {
        Self {
            grid: self.grid,
            kind,
            values: self
                .values
                .iter()
                .map(|row| row.iter().map(&f).collect())
                .collect(),
            meta: self.meta.clone(),
        }
    }
}
