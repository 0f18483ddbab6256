//! Derived coefficient blocks: the follower's feedback block, the leader's
//! reduced cost block, its Schur-complement transform, and the scalar rewrite
//! used by the solvability certificate.

use nalgebra::DMatrix;

use crate::error::{Checkpoint, Error, Result};
use crate::grid::TimeGrid;
use crate::linalg::{general_inverse, spd_inverse, symmetrize_in_place, GeneralInverse};
use crate::model::{GameRegime, ProblemData, ProblemKind, ReducedRegime};
use crate::riccati::RiccatiSolution;

/// Follower feedback block at one (time, regime). Vectors are n x 1 matrices.
///
/// For a reduced leader problem the follower has no control: `s1_hat`,
/// `r1_hat` and `xi` are empty and the remaining fields come from the file.
#[derive(Clone, Debug, PartialEq)]
pub struct FollowerHat {
    pub s1_hat: DMatrix<f64>,
    pub r1_hat: DMatrix<f64>,
    pub r1_hat_inv: DMatrix<f64>,
    pub r1_hat_min_eigenvalue: f64,
    pub xi: DMatrix<f64>,
    pub a_hat: DMatrix<f64>,
    pub c_hat: DMatrix<f64>,
    pub h_hat: DMatrix<f64>,
    pub f_hat: DMatrix<f64>,
}

/// The leader's reduced cost block.
#[derive(Clone, Debug, PartialEq)]
pub struct LeaderBlock {
    pub g: DMatrix<f64>,
    pub s1: DMatrix<f64>,
    pub s2: DMatrix<f64>,
    pub t11: DMatrix<f64>,
    pub t12: DMatrix<f64>,
    pub t21: DMatrix<f64>,
    pub t22: DMatrix<f64>,
    pub t22_inv: DMatrix<f64>,
    pub t22_min_eigenvalue: f64,
    pub q: DMatrix<f64>,
    pub rho1: DMatrix<f64>,
    pub rho2: DMatrix<f64>,
}

impl LeaderBlock {
    /// The symmetric (n + n + m2) square weight on (Y, Z, u2).
    pub fn cost_matrix(&self) -> DMatrix<f64> {
        let n = self.g.nrows();
        let m2 = self.t22.nrows();
        let mut k = DMatrix::zeros(2 * n + m2, 2 * n + m2);
        k.view_mut((0, 0), (n, n)).copy_from(&self.g);
        k.view_mut((0, n), (n, n)).copy_from(&self.s1.transpose());
        k.view_mut((0, 2 * n), (n, m2)).copy_from(&self.s2.transpose());
        k.view_mut((n, 0), (n, n)).copy_from(&self.s1);
        k.view_mut((n, n), (n, n)).copy_from(&self.t11);
        k.view_mut((n, 2 * n), (n, m2)).copy_from(&self.t12);
        k.view_mut((2 * n, 0), (m2, n)).copy_from(&self.s2);
        k.view_mut((2 * n, n), (m2, n)).copy_from(&self.t21);
        k.view_mut((2 * n, 2 * n), (m2, m2)).copy_from(&self.t22);
        k
    }
}

/// Blocks after eliminating the Z-u2 cross term.
#[derive(Clone, Debug, PartialEq)]
pub struct TildeBlock {
    pub f_tilde: DMatrix<f64>,
    pub s1_tilde: DMatrix<f64>,
    pub t11_tilde: DMatrix<f64>,
    pub rho1_tilde: DMatrix<f64>,
}

/// Everything derived at one (time, regime).
#[derive(Clone, Debug, PartialEq)]
pub struct DerivedBlocks {
    pub hat: FollowerHat,
    pub leader: LeaderBlock,
    pub tilde: TildeBlock,
}

/// Sigma-dependent combinations used by the leader's Riccati equation.
#[derive(Clone, Debug)]
pub struct SigmaOps {
    pub t_hat: DMatrix<f64>,
    pub t_hat_inv: DMatrix<f64>,
    pub condition: f64,
    pub f_hat_sigma: DMatrix<f64>,
    pub h_hat_sigma: DMatrix<f64>,
}

fn symmetric(mut m: DMatrix<f64>) -> DMatrix<f64> {
    symmetrize_in_place(&mut m);
    m
}

pub fn follower_hat_at(
    r: &GameRegime,
    regime: usize,
    t: f64,
    p: &DMatrix<f64>,
    ceiling: f64,
) -> Result<FollowerHat> {
    let (a, b1, b2, c, d1, d2) = (r.a.at(t), r.b1.at(t), r.b2.at(t), r.c.at(t), r.d1.at(t), r.d2.at(t));
    let d1t_p = d1.transpose() * p;
    let s1_hat = b1.transpose() * p + &d1t_p * c;
    let r1_hat = symmetric(r.r1.at(t) + &d1t_p * d1);
    let inv = spd_inverse(&r1_hat, ceiling)
        .map_err(|f| Error::singular(Checkpoint::FollowerWeight, t, regime, f))?;
    let xi = &d1t_p * d2;
    let gain = s1_hat.transpose() * &inv.inverse;
    let a_hat = &gain * b1.transpose() - a.transpose();
    let c_hat = &gain * d1.transpose() - c.transpose();
    let c_hat_p = &c_hat * p;
    let h_hat = &c_hat_p * d2 - p * b2;
    let f_hat = &c_hat_p * r.diffusion.at(t) - p * r.drift.at(t);
    Ok(FollowerHat {
        s1_hat,
        r1_hat,
        r1_hat_inv: inv.inverse,
        r1_hat_min_eigenvalue: inv.min_eigenvalue,
        xi,
        a_hat,
        c_hat,
        h_hat,
        f_hat,
    })
}

pub fn leader_block_at(
    r: &GameRegime,
    regime: usize,
    t: f64,
    p: &DMatrix<f64>,
    hat: &FollowerHat,
    ceiling: f64,
) -> Result<LeaderBlock> {
    let (b1, b2, d1, d2) = (r.b1.at(t), r.b2.at(t), r.d1.at(t), r.d2.at(t));
    let (b, sigma) = (r.drift.at(t), r.diffusion.at(t));
    let k = &hat.r1_hat_inv;
    let b1_k = b1 * k;
    let d1_k = d1 * k;
    let xit_k = hat.xi.transpose() * k;
    let p_sigma = p * sigma;
    let d1t_p_sigma = d1.transpose() * &p_sigma;
    let t21 = &xit_k * d1.transpose() - d2.transpose();
    let t22 = symmetric(&xit_k * &hat.xi - r.r2.at(t) - d2.transpose() * p * d2);
    let inv = spd_inverse(&t22, ceiling)
        .map_err(|f| Error::singular(Checkpoint::LeaderWeight, t, regime, f))?;
    Ok(LeaderBlock {
        g: symmetric(&b1_k * b1.transpose()),
        s1: &d1_k * b1.transpose(),
        s2: &xit_k * b1.transpose() - b2.transpose(),
        t11: symmetric(&d1_k * d1.transpose()),
        t12: t21.transpose(),
        t21,
        t22,
        t22_inv: inv.inverse,
        t22_min_eigenvalue: inv.min_eigenvalue,
        q: &b1_k * &d1t_p_sigma - b,
        rho1: &d1_k * &d1t_p_sigma - sigma,
        rho2: &xit_k * &d1t_p_sigma - d2.transpose() * &p_sigma,
    })
}

pub fn tilde_block_at(lb: &LeaderBlock, hat: &FollowerHat) -> TildeBlock {
    let w = &lb.t12 * &lb.t22_inv;
    TildeBlock {
        f_tilde: &hat.c_hat - &hat.h_hat * &lb.t22_inv * &lb.t21,
        s1_tilde: &lb.s1 - &w * &lb.s2,
        t11_tilde: symmetric(&lb.t11 - &w * &lb.t21),
        rho1_tilde: &lb.rho1 - &w * &lb.rho2,
    }
}

fn reduced_blocks_at(r: &ReducedRegime, n: usize, regime: usize, t: f64, ceiling: f64) -> Result<DerivedBlocks> {
    let m2 = r.t22.shape().0;
    let t22 = r.t22.at(t).clone();
    let inv = spd_inverse(&t22, ceiling)
        .map_err(|f| Error::singular(Checkpoint::LeaderWeight, t, regime, f))?;
    let hat = FollowerHat {
        s1_hat: DMatrix::zeros(0, n),
        r1_hat: DMatrix::zeros(0, 0),
        r1_hat_inv: DMatrix::zeros(0, 0),
        r1_hat_min_eigenvalue: f64::INFINITY,
        xi: DMatrix::zeros(0, m2),
        a_hat: r.a_hat.at(t).clone(),
        c_hat: r.c_hat.at(t).clone(),
        h_hat: r.h_hat.at(t).clone(),
        f_hat: r.f_hat.at(t).clone(),
    };
    let t12 = r.t12.at(t).clone();
    let leader = LeaderBlock {
        g: r.g.at(t).clone(),
        s1: r.s1.at(t).clone(),
        s2: r.s2.at(t).clone(),
        t11: r.t11.at(t).clone(),
        t21: t12.transpose(),
        t12,
        t22,
        t22_inv: inv.inverse,
        t22_min_eigenvalue: inv.min_eigenvalue,
        q: r.q.at(t).clone(),
        rho1: r.rho1.at(t).clone(),
        rho2: r.rho2.at(t).clone(),
    };
    let tilde = tilde_block_at(&leader, &hat);
    Ok(DerivedBlocks { hat, leader, tilde })
}

impl DerivedBlocks {
    /// Evaluates every block for `regime` at time `t`. `p` is the follower's
    /// Riccati value and is required for (and only used by) full games.
    pub fn evaluate(
        problem: &ProblemData,
        regime: usize,
        t: f64,
        p: Option<&DMatrix<f64>>,
        ceiling: f64,
    ) -> Result<Self> {
        match &problem.kind {
            ProblemKind::Game { regimes, .. } => {
                let p = p.ok_or_else(|| {
                    Error::InvalidArgument("game blocks need the follower Riccati value".into())
                })?;
                let r = &regimes[regime];
                let hat = follower_hat_at(r, regime, t, p, ceiling)?;
                let leader = leader_block_at(r, regime, t, p, &hat, ceiling)?;
                let tilde = tilde_block_at(&leader, &hat);
                Ok(Self { hat, leader, tilde })
            }
            ProblemKind::Leader { regimes, .. } => {
                reduced_blocks_at(&regimes[regime], problem.state_dim, regime, t, ceiling)
            }
        }
    }

    pub fn sigma_ops(&self, sigma: &DMatrix<f64>, regime: usize, t: f64, ceiling: f64) -> Result<SigmaOps> {
        let n = sigma.nrows();
        let t_hat = DMatrix::identity(n, n) + sigma * &self.tilde.t11_tilde;
        let GeneralInverse { inverse, condition } = general_inverse(&t_hat, ceiling)
            .map_err(|f| Error::singular(Checkpoint::Decoupling, t, regime, f))?;
        Ok(SigmaOps {
            f_hat_sigma: &self.tilde.f_tilde + sigma * self.tilde.s1_tilde.transpose(),
            h_hat_sigma: &self.hat.h_hat + sigma * self.leader.s2.transpose(),
            t_hat,
            t_hat_inv: inverse,
            condition,
        })
    }

    /// Right-hand side of the leader's Riccati equation without the jump
    /// coupling term.
    pub fn sigma_rhs(&self, sigma: &DMatrix<f64>, ops: &SigmaOps) -> DMatrix<f64> {
        let a_hat = &self.hat.a_hat;
        let fs = &ops.f_hat_sigma;
        let hs = &ops.h_hat_sigma;
        a_hat * sigma + sigma * a_hat.transpose() + sigma * &self.leader.g * sigma
            - fs * &ops.t_hat_inv * sigma * fs.transpose()
            - hs * &self.leader.t22_inv * hs.transpose()
    }
}

/// Scalar coefficients of the rewritten leader Riccati equation (n = 1).
///
/// `r1_inv` is stored alongside `r1` because the rewritten equation only ever
/// uses the inverse, and it may vanish.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OneDimRewrite {
    pub a: f64,
    pub b: f64,
    pub d: f64,
    pub s: f64,
    pub q: f64,
    pub r1: f64,
    pub r1_inv: f64,
    pub r2: f64,
}

/// Block form of the rewrite: a forward LQ problem with controls (u1, u2).
#[derive(Clone, Debug, PartialEq)]
pub struct BlockEmbedding {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl OneDimRewrite {
    pub fn from_blocks(blocks: &DerivedBlocks, regime: usize, t: f64) -> Result<Self> {
        if blocks.hat.a_hat.nrows() != 1 {
            return Err(Error::UnsupportedDimension(format!(
                "the scalar rewrite needs n = 1, got n = {}",
                blocks.hat.a_hat.nrows()
            )));
        }
        let t11 = blocks.tilde.t11_tilde[(0, 0)];
        if t11 == 0.0 || !t11.is_finite() {
            return Err(Error::singular(
                Checkpoint::SchurComplement,
                t,
                regime,
                crate::linalg::InverseFailure::Singular,
            ));
        }
        let f = blocks.tilde.f_tilde[(0, 0)];
        let s1 = blocks.tilde.s1_tilde[(0, 0)];
        let lb = &blocks.leader;
        let h = &blocks.hat.h_hat;
        let s2t_k = lb.s2.transpose() * &lb.t22_inv;
        let r1_inv = lb.g[(0, 0)] - s1 * s1 / t11 - (&s2t_k * &lb.s2)[(0, 0)];
        Ok(Self {
            a: f * s1 / t11 + (&s2t_k * h.transpose())[(0, 0)] - blocks.hat.a_hat[(0, 0)],
            b: s1,
            d: t11,
            s: f,
            q: f * f / t11 + (h * &lb.t22_inv * h.transpose())[(0, 0)],
            r1: 1.0 / r1_inv,
            r1_inv,
            r2: t11,
        })
    }

    /// Rewritten right-hand side, jump coupling excluded.
    pub fn sigma_rhs(&self, sigma: f64) -> f64 {
        let lin = self.b * sigma + self.s;
        -2.0 * self.a * sigma - self.q + sigma * self.r1_inv * sigma + lin * lin / (self.r2 + self.d * self.d * sigma)
    }

    pub fn embedding(&self) -> BlockEmbedding {
        BlockEmbedding {
            a: DMatrix::from_element(1, 1, self.a),
            b: DMatrix::from_row_slice(1, 2, &[1.0, self.b]),
            c: DMatrix::zeros(1, 1),
            d: DMatrix::from_row_slice(1, 2, &[0.0, self.d]),
            q: DMatrix::from_element(1, 1, self.q),
            s: DMatrix::from_column_slice(2, 1, &[0.0, self.s]),
            r: DMatrix::from_row_slice(2, 2, &[self.r1, 0.0, 0.0, self.r2]),
        }
    }

    /// The 3x3 matrix [[Q, 0, S], [0, R1, 0], [S, 0, R2]] whose positive
    /// definiteness is the sufficient solvability condition.
    pub fn certificate_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(
            3,
            3,
            &[self.q, 0.0, self.s, 0.0, self.r1, 0.0, self.s, 0.0, self.r2],
        )
    }
}

/// Blocks at every node of a grid, indexed `[node][regime]`.
#[derive(Clone, Debug)]
pub struct BlockTable<T> {
    grid: TimeGrid,
    nodes: Vec<Vec<T>>,
}

impl<T> BlockTable<T> {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn at(&self, node: usize, regime: usize) -> &T {
        &self.nodes[node][regime]
    }

    pub fn nodes(&self) -> &[Vec<T>] {
        &self.nodes
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> BlockTable<U> {
        BlockTable {
            grid: self.grid,
            nodes: self.nodes.iter().map(|row| row.iter().map(&f).collect()).collect(),
        }
    }

    pub fn try_map<U>(&self, f: impl Fn(usize, usize, &T) -> Result<U>) -> Result<BlockTable<U>> {
        let mut nodes = Vec::with_capacity(self.nodes.len());
        for (j, row) in self.nodes.iter().enumerate() {
            let mut out = Vec::with_capacity(row.len());
            for (i, v) in row.iter().enumerate() {
                out.push(f(j, i, v)?);
            }
            nodes.push(out);
        }
        Ok(BlockTable { grid: self.grid, nodes })
    }
}

pub type FollowerHatTable = BlockTable<FollowerHat>;
pub type LeaderBlockTable = BlockTable<LeaderBlock>;
pub type TildeBlockTable = BlockTable<TildeBlock>;
pub type OneDimRewriteTable = BlockTable<OneDimRewrite>;

/// Derived blocks on every node of `grid`. Node `j` takes the coefficients of
/// cell `j` (right-continuous at breakpoints) and `P(s_j)`.
pub fn derived_table(
    problem: &ProblemData,
    grid: &TimeGrid,
    follower: Option<&RiccatiSolution>,
    ceiling: f64,
) -> Result<BlockTable<DerivedBlocks>> {
    if problem.is_game() && follower.is_none() {
        return Err(Error::InvalidArgument("game blocks need the follower Riccati solution".into()));
    }
    if let Some(f) = follower {
        if f.grid() != grid {
            return Err(Error::Grid("follower solution lives on a different grid".into()));
        }
    }
    let mut nodes = Vec::with_capacity(grid.num_nodes());
    for j in 0..grid.num_nodes() {
        let t = grid.midpoint(grid.cell_of_node(j));
        let mut row = Vec::with_capacity(problem.num_regimes());
        for i in 0..problem.num_regimes() {
            let p = follower.map(|f| f.value(j, i));
            row.push(DerivedBlocks::evaluate(problem, i, t, p, ceiling)?);
        }
        nodes.push(row);
    }
    Ok(BlockTable { grid: *grid, nodes })
}

pub fn follower_hat(table: &BlockTable<DerivedBlocks>) -> FollowerHatTable {
    table.map(|b| b.hat.clone())
}

pub fn leader_block(table: &BlockTable<DerivedBlocks>) -> LeaderBlockTable {
    table.map(|b| b.leader.clone())
}

pub fn tilde_block(table: &BlockTable<DerivedBlocks>) -> TildeBlockTable {
    table.map(|b| b.tilde.clone())
}

pub fn one_dim_rewrite(table: &BlockTable<DerivedBlocks>) -> Result<OneDimRewriteTable> {
    let grid = *table.grid();
    table.try_map(|j, i, b| OneDimRewrite::from_blocks(b, i, grid.time(j)))
}

/// Smallest eigenvalue of the follower weight over the table.
pub fn follower_margin(table: &FollowerHatTable) -> f64 {
    table
        .nodes()
        .iter()
        .flatten()
        .map(|h| h.r1_hat_min_eigenvalue)
        .fold(f64::INFINITY, f64::min)
}

/// Smallest eigenvalue of T22 over the table.
pub fn leader_margin(table: &LeaderBlockTable) -> f64 {
    table
        .nodes()
        .iter()
        .flatten()
        .map(|b| b.t22_min_eigenvalue)
        .fold(f64::INFINITY, f64::min)
}
