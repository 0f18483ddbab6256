//! Problem data: coefficients indexed by regime, horizon, initial condition.

mod parse;

use nalgebra::{DMatrix, DVector};

pub use crate::montecarlo::convexity::{probe_convexity, ConvexityReport, ProbeRatio};
pub use parse::{load_problem, parse_lambda_list, parse_matrix_literal, to_problem_file, MAX_DIMENSION, MAX_GRID_STEPS};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::regime::{Generator, Regime};

#[derive(Clone, Debug, PartialEq)]
pub struct TimePiece {
    pub start: f64,
    pub end: f64,
    pub value: DMatrix<f64>,
}

/// A matrix-valued function of time that is constant on finitely many pieces.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseMatrix {
    pieces: Vec<TimePiece>,
}

impl PiecewiseMatrix {
    pub fn constant(value: DMatrix<f64>) -> Self {
        Self {
            pieces: vec![TimePiece {
                start: 0.0,
                end: f64::INFINITY,
                value,
            }],
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::constant(DMatrix::zeros(rows, cols))
    }

    /// Pieces must share a shape, start at 0, be contiguous and end at `horizon`.
    pub fn from_pieces(mut pieces: Vec<TimePiece>, horizon: f64) -> Result<Self> {
        pieces.sort_by(|a, b| a.start.total_cmp(&b.start));
        let (Some(first), Some(last)) = (pieces.first(), pieces.last()) else {
            return Err(Error::InvalidArgument("no pieces".into()));
        };
        if first.start != 0.0 || last.end != horizon {
            return Err(Error::InvalidArgument(format!(
                "pieces cover [{}, {}] instead of [0, {horizon}]",
                first.start, last.end
            )));
        }
        let shape = first.value.shape();
        for w in pieces.windows(2) {
            if w[0].end != w[1].start {
                return Err(Error::InvalidArgument(format!(
                    "pieces leave a gap or overlap at t = {}",
                    w[0].end
                )));
            }
        }
        if let Some(p) = pieces.iter().find(|p| p.value.shape() != shape) {
            return Err(Error::Dimension {
                key: "piece".into(),
                expected: format!("{}x{}", shape.0, shape.1),
                found: format!("{}x{}", p.value.nrows(), p.value.ncols()),
            });
        }
        Ok(Self { pieces })
    }

    pub fn pieces(&self) -> &[TimePiece] {
        &self.pieces
    }

    pub fn is_constant(&self) -> bool {
        self.pieces.len() == 1
    }

    pub fn shape(&self) -> (usize, usize) {
        self.pieces[0].value.shape()
    }

    /// Value in force at `t` (right-continuous; clamped outside the pieces).
    pub fn at(&self, t: f64) -> &DMatrix<f64> {
        let idx = self
            .pieces
            .iter()
            .position(|p| t < p.end)
            .unwrap_or(self.pieces.len() - 1);
        &self.pieces[idx].value
    }

    pub fn breakpoints(&self) -> impl Iterator<Item = f64> + '_ {
        self.pieces[..self.pieces.len() - 1].iter().map(|p| p.end)
    }

    pub fn is_zero(&self) -> bool {
        self.pieces.iter().all(|p| p.value.iter().all(|&v| v == 0.0))
    }

    fn zeroed(&self) -> Self {
        let (r, c) = self.shape();
        Self::zeros(r, c)
    }
}

/// Coefficients of the full game in one regime.
#[derive(Clone, Debug, PartialEq)]
pub struct GameRegime {
    pub a: PiecewiseMatrix,
    pub b1: PiecewiseMatrix,
    pub b2: PiecewiseMatrix,
    pub c: PiecewiseMatrix,
    pub d1: PiecewiseMatrix,
    pub d2: PiecewiseMatrix,
    pub q: PiecewiseMatrix,
    pub r1: PiecewiseMatrix,
    pub r2: PiecewiseMatrix,
    /// Drift forcing `b`, n x 1.
    pub drift: PiecewiseMatrix,
    /// Diffusion forcing `sigma`, n x 1.
    pub diffusion: PiecewiseMatrix,
    /// Terminal weight `M(T, i)`.
    pub terminal_weight: DMatrix<f64>,
    /// Terminal linear term `m(i)`.
    pub terminal_linear: DVector<f64>,
}

/// The leader's backward problem given directly by its reduced blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedRegime {
    pub a_hat: PiecewiseMatrix,
    pub c_hat: PiecewiseMatrix,
    pub h_hat: PiecewiseMatrix,
    pub f_hat: PiecewiseMatrix,
    pub g: PiecewiseMatrix,
    pub s1: PiecewiseMatrix,
    pub s2: PiecewiseMatrix,
    pub t11: PiecewiseMatrix,
    pub t12: PiecewiseMatrix,
    pub t22: PiecewiseMatrix,
    pub q: PiecewiseMatrix,
    pub rho1: PiecewiseMatrix,
    pub rho2: PiecewiseMatrix,
    pub terminal_linear: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ProblemKind {
    Game {
        follower_dim: usize,
        leader_dim: usize,
        regimes: Vec<GameRegime>,
    },
    Leader {
        leader_dim: usize,
        regimes: Vec<ReducedRegime>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemData {
    pub horizon: f64,
    pub state_dim: usize,
    pub grid_steps: usize,
    pub generator: Generator,
    pub initial_state: DVector<f64>,
    pub initial_regime: Regime,
    pub kind: ProblemKind,
}

impl ProblemData {
    pub fn num_regimes(&self) -> usize {
        self.generator.num_regimes()
    }

    pub fn is_game(&self) -> bool {
        matches!(self.kind, ProblemKind::Game { .. })
    }

    pub fn follower_dim(&self) -> usize {
        match &self.kind {
            ProblemKind::Game { follower_dim, .. } => *follower_dim,
            ProblemKind::Leader { .. } => 0,
        }
    }

    pub fn leader_dim(&self) -> usize {
        match &self.kind {
            ProblemKind::Game { leader_dim, .. } | ProblemKind::Leader { leader_dim, .. } => *leader_dim,
        }
    }

    pub fn game_regimes(&self) -> Option<&[GameRegime]> {
        match &self.kind {
            ProblemKind::Game { regimes, .. } => Some(regimes),
            ProblemKind::Leader { .. } => None,
        }
    }

    pub fn reduced_regimes(&self) -> Option<&[ReducedRegime]> {
        match &self.kind {
            ProblemKind::Leader { regimes, .. } => Some(regimes),
            ProblemKind::Game { .. } => None,
        }
    }

    pub fn terminal_linear(&self, regime: usize) -> &DVector<f64> {
        match &self.kind {
            ProblemKind::Game { regimes, .. } => &regimes[regime].terminal_linear,
            ProblemKind::Leader { regimes, .. } => &regimes[regime].terminal_linear,
        }
    }

    /// All interior times where some coefficient or the generator switches.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out = self.generator.breakpoints();
        let mut add = |m: &PiecewiseMatrix| out.extend(m.breakpoints());
        match &self.kind {
            ProblemKind::Game { regimes, .. } => {
                for r in regimes {
                    for m in [
                        &r.a, &r.b1, &r.b2, &r.c, &r.d1, &r.d2, &r.q, &r.r1, &r.r2, &r.drift,
                        &r.diffusion,
                    ] {
                        add(m);
                    }
                }
            }
            ProblemKind::Leader { regimes, .. } => {
                for r in regimes {
                    for m in [
                        &r.a_hat, &r.c_hat, &r.h_hat, &r.f_hat, &r.g, &r.s1, &r.s2, &r.t11,
                        &r.t12, &r.t22, &r.q, &r.rho1, &r.rho2,
                    ] {
                        add(m);
                    }
                }
            }
        }
        out.retain(|&t| t > 0.0 && t < self.horizon);
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    /// Uniform grid with `steps` cells, checked against every breakpoint.
    pub fn grid(&self, steps: usize) -> Result<TimeGrid> {
        let grid = TimeGrid::new(self.horizon, steps)?;
        grid.check_breakpoints(&self.breakpoints())?;
        Ok(grid)
    }

    /// The grid named in the problem file.
    pub fn default_grid(&self) -> Result<TimeGrid> {
        self.grid(self.grid_steps)
    }

    /// Copy with every inhomogeneous term (forcing, terminal linear term,
    /// initial state) set to zero.
    pub fn homogeneous(&self) -> Self {
        let mut out = self.clone();
        out.initial_state.fill(0.0);
        match &mut out.kind {
            ProblemKind::Game { regimes, .. } => {
                for r in regimes {
                    r.drift = r.drift.zeroed();
                    r.diffusion = r.diffusion.zeroed();
                    r.terminal_linear.fill(0.0);
                }
            }
            ProblemKind::Leader { regimes, .. } => {
                for r in regimes {
                    r.f_hat = r.f_hat.zeroed();
                    r.q = r.q.zeroed();
                    r.rho1 = r.rho1.zeroed();
                    r.rho2 = r.rho2.zeroed();
                    r.terminal_linear.fill(0.0);
                }
            }
        }
        out
    }

    pub fn with_initial_state(&self, x: DVector<f64>) -> Result<Self> {
        if x.len() != self.state_dim {
            return Err(Error::Dimension {
                key: "x".into(),
                expected: self.state_dim.to_string(),
                found: x.len().to_string(),
            });
        }
        let mut out = self.clone();
        out.initial_state = x;
        Ok(out)
    }

    pub fn with_initial_regime(&self, regime: Regime) -> Result<Self> {
        if regime.index() >= self.num_regimes() {
            return Err(Error::InvalidArgument(format!("regime {regime} out of range")));
        }
        let mut out = self.clone();
        out.initial_regime = regime;
        Ok(out)
    }

    /// Overwrites the terminal linear term in every regime.
    pub fn with_terminal_linear(&self, terminal: &[DVector<f64>]) -> Result<Self> {
        if terminal.len() != self.num_regimes() || terminal.iter().any(|v| v.len() != self.state_dim) {
            return Err(Error::InvalidArgument("terminal data has the wrong shape".into()));
        }
        let mut out = self.clone();
        match &mut out.kind {
            ProblemKind::Game { regimes, .. } => {
                for (r, m) in regimes.iter_mut().zip(terminal) {
                    r.terminal_linear = m.clone();
                }
            }
            ProblemKind::Leader { regimes, .. } => {
                for (r, m) in regimes.iter_mut().zip(terminal) {
                    r.terminal_linear = m.clone();
                }
            }
        }
        Ok(out)
    }
}
