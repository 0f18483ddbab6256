//! Allocation-free Euler-Maruyama stepping.
//!
//! With the regime fixed on a cell, the controls and the joint state
//! (X, φ*) evolve by affine maps. These are assembled once per
//! (cell, regime) and flattened, so the inner loop only does small dense
//! products on preallocated buffers.

use nalgebra::{DMatrix, DVector};

use super::{FollowerSpec, LeaderSpec, PathNoise};
use crate::equilibrium::{ControlTable, Equilibrium};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::model::ProblemData;

#[derive(Clone, Debug)]
struct Affine {
    rows: usize,
    cols: usize,
    mat: Vec<f64>,
    off: Vec<f64>,
}

impl Affine {
    fn new(mat: &DMatrix<f64>, off: &DVector<f64>) -> Self {
        debug_assert_eq!(mat.nrows(), off.len());
        Self {
            rows: mat.nrows(),
            cols: mat.ncols(),
            mat: (0..mat.nrows()).flat_map(|r| (0..mat.ncols()).map(move |c| mat[(r, c)])).collect(),
            off: off.as_slice().to_vec(),
        }
    }

    #[inline]
    fn apply(&self, z: &[f64], out: &mut [f64]) {
        for r in 0..self.rows {
            let row = &self.mat[r * self.cols..(r + 1) * self.cols];
            out[r] = self.off[r] + row.iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

#[inline]
fn quadratic(m: &[f64], v: &[f64]) -> f64 {
    let n = v.len();
    let mut acc = 0.0;
    for r in 0..n {
        let row = &m[r * n..(r + 1) * n];
        acc += v[r] * row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    }
    acc
}

fn flat(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.nrows()).flat_map(|r| (0..m.ncols()).map(move |c| m[(r, c)])).collect()
}

#[derive(Clone, Debug)]
struct CellMap {
    drift: Affine,
    diffusion: Affine,
    u1: Affine,
    u2: Affine,
    q: Vec<f64>,
    r1: Vec<f64>,
    r2: Vec<f64>,
}

/// Result of one path under one configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunResult {
    pub cost: f64,
    pub follower_energy: f64,
    pub leader_energy: f64,
}

/// Flattened step maps of one control configuration on one grid.
#[derive(Clone, Debug)]
pub struct StepMaps {
    grid: TimeGrid,
    regimes: usize,
    nx: usize,
    nphi: usize,
    cells: Vec<CellMap>,
    terminal_weight: Vec<Vec<f64>>,
    terminal_linear: Vec<Vec<f64>>,
}

fn table_value(table: &ControlTable, dim: usize, t: f64, regime: usize) -> Result<DVector<f64>> {
    if table.dim() != dim {
        return Err(Error::InvalidArgument(format!(
            "control table has dimension {}, expected {dim}",
            table.dim()
        )));
    }
    Ok(table.at_time(t, regime).clone())
}

impl StepMaps {
    pub fn build(
        problem: &ProblemData,
        eq: Option<&Equilibrium>,
        grid: &TimeGrid,
        follower: FollowerSpec<'_>,
        leader: LeaderSpec<'_>,
    ) -> Result<Self> {
        grid.check_breakpoints(&problem.breakpoints())?;
        let d = problem.num_regimes();
        let n = problem.state_dim;
        let game = problem.game_regimes();
        let nx = if game.is_some() { n } else { 0 };
        let needs_policy = matches!(
            follower,
            FollowerSpec::Equilibrium | FollowerSpec::Shifted(..) | FollowerSpec::Reaction(_)
        ) || matches!(leader, LeaderSpec::Equilibrium | LeaderSpec::Shifted(..));
        let eq = match (eq, needs_policy) {
            (Some(e), true) => Some(e),
            (None, true) => return Err(Error::InvalidArgument("equilibrium controls need a solved equilibrium".into())),
            _ => None,
        };
        let stride = match eq {
            Some(e) => e.grid().refinement_of(grid)?,
            None => 0,
        };
        let nphi = if eq.is_some() { n } else { 0 };
        let nz = nx + nphi;
        let (m1, m2) = (problem.follower_dim(), problem.leader_dim());
        let mut ex = DMatrix::zeros(nx, nz);
        let mut ephi = DMatrix::zeros(nphi, nz);
        for k in 0..nx {
            ex[(k, k)] = 1.0;
        }
        for k in 0..nphi {
            ephi[(k, nx + k)] = 1.0;
        }
        let mut cells = Vec::with_capacity(grid.steps() * d);
        for c in 0..grid.steps() {
            let t = grid.midpoint(c);
            for i in 0..d {
                let policy = eq.map(|e| e.node_policy(c * stride, i));
                let (mut k2, mut c2) = (DMatrix::zeros(m2, nz), DVector::zeros(m2));
                match leader {
                    LeaderSpec::Zero => {}
                    LeaderSpec::Table(w) => c2 = table_value(w, m2, t, i)?,
                    LeaderSpec::Equilibrium | LeaderSpec::Shifted(..) => {
                        let p = policy.expect("policy checked");
                        k2 = &p.u2_phi * &ephi;
                        c2 = p.u2_0.clone();
                        if let LeaderSpec::Shifted(w, eps) = leader {
                            c2 += table_value(w, m2, t, i)? * eps;
                        }
                    }
                }
                let (mut k1, mut c1) = (DMatrix::zeros(m1, nz), DVector::zeros(m1));
                match follower {
                    _ if m1 == 0 => {}
                    FollowerSpec::Zero => {}
                    FollowerSpec::Table(v) => c1 = table_value(v, m1, t, i)?,
                    FollowerSpec::Equilibrium | FollowerSpec::Shifted(..) | FollowerSpec::Reaction(_) => {
                        let p = policy.expect("policy checked");
                        let (ku, cu) = match follower {
                            FollowerSpec::Reaction(_) => (k2.clone(), c2.clone()),
                            _ => (&p.u2_phi * &ephi, p.u2_0.clone()),
                        };
                        let mut y0 = p.phi.clone();
                        if let FollowerSpec::Reaction(Some((yw, eps))) = follower {
                            if yw.grid() != eq.expect("policy checked").grid() {
                                return Err(Error::InvalidArgument("reaction table is on a different grid".into()));
                            }
                            y0 += yw.value(c * stride, i) * eps;
                        }
                        k1 = &p.fb_x * &ex + &p.fb_u * &ku - &p.fb_y * &p.sigma * &ephi + &p.fb_z * &p.z_phi * &ephi;
                        c1 = &p.fb_u * &cu + &p.fb_y * &y0 + &p.fb_z * &p.z_0 + &p.fb_0;
                        if let FollowerSpec::Shifted(v, eps) = follower {
                            c1 += table_value(v, m1, t, i)? * eps;
                        }
                    }
                }
                let mut drift = DMatrix::zeros(nz, nz);
                let mut drift0 = DVector::zeros(nz);
                let mut diff = DMatrix::zeros(nz, nz);
                let mut diff0 = DVector::zeros(nz);
                let (q, r1, r2);
                if let Some(regimes) = game {
                    let r = &regimes[i];
                    let col = |m: &DMatrix<f64>| DVector::from_column_slice(m.as_slice());
                    let dx = r.a.at(t) * &ex + r.b1.at(t) * &k1 + r.b2.at(t) * &k2;
                    let dx0 = r.b1.at(t) * &c1 + r.b2.at(t) * &c2 + col(r.drift.at(t));
                    let sx = r.c.at(t) * &ex + r.d1.at(t) * &k1 + r.d2.at(t) * &k2;
                    let sx0 = r.d1.at(t) * &c1 + r.d2.at(t) * &c2 + col(r.diffusion.at(t));
                    drift.rows_mut(0, nx).copy_from(&dx);
                    drift0.rows_mut(0, nx).copy_from(&dx0);
                    diff.rows_mut(0, nx).copy_from(&sx);
                    diff0.rows_mut(0, nx).copy_from(&sx0);
                    q = flat(r.q.at(t));
                    r1 = flat(r.r1.at(t));
                    r2 = flat(r.r2.at(t));
                } else {
                    q = Vec::new();
                    r1 = vec![0.0; m1 * m1];
                    r2 = vec![0.0; m2 * m2];
                }
                if let Some(p) = policy.filter(|_| nphi > 0) {
                    drift.rows_mut(nx, nphi).copy_from(&(&p.drift_phi * &ephi));
                    drift0.rows_mut(nx, nphi).copy_from(&p.drift_0);
                    diff.rows_mut(nx, nphi).copy_from(&(&p.diffusion_phi * &ephi));
                    diff0.rows_mut(nx, nphi).copy_from(&p.diffusion_0);
                }
                cells.push(CellMap {
                    drift: Affine::new(&drift, &drift0),
                    diffusion: Affine::new(&diff, &diff0),
                    u1: Affine::new(&k1, &c1),
                    u2: Affine::new(&k2, &c2),
                    q,
                    r1,
                    r2,
                });
            }
        }
        let (terminal_weight, terminal_linear) = match game {
            Some(regimes) => (
                regimes.iter().map(|r| flat(&r.terminal_weight)).collect(),
                regimes.iter().map(|r| r.terminal_linear.as_slice().to_vec()).collect(),
            ),
            None => (vec![Vec::new(); d], vec![Vec::new(); d]),
        };
        Ok(Self {
            grid: *grid,
            regimes: d,
            nx,
            nphi,
            cells,
            terminal_weight,
            terminal_linear,
        })
    }

    /// Length of the joint state (X, φ*).
    pub fn state_dim(&self) -> usize {
        self.nx + self.nphi
    }

    /// Runs one path from X(0) = x, φ*(0) = -x. With `record`, the joint
    /// state at every node is appended. Returns `None` on a non-finite value.
    pub fn run(&self, noise: &PathNoise, x: &DVector<f64>, record: Option<&mut Vec<f64>>) -> Option<RunResult> {
        let (nx, nz) = (self.nx, self.nx + self.nphi);
        let h = self.grid.step();
        let mut z = vec![0.0; nz];
        if nx > 0 {
            z[..nx].copy_from_slice(x.as_slice());
        }
        if self.nphi > 0 {
            for (k, v) in x.iter().enumerate() {
                z[nx + k] = -v;
            }
        }
        let first = &self.cells[0];
        let mut u1 = vec![0.0; first.u1.rows];
        let mut u2 = vec![0.0; first.u2.rows];
        let mut drift = vec![0.0; nz];
        let mut diff = vec![0.0; nz];
        let mut record = record;
        if let Some(r) = record.as_deref_mut() {
            r.reserve(nz * self.grid.num_nodes());
            r.extend_from_slice(&z);
        }
        let (mut cost, mut e1, mut e2) = (0.0, 0.0, 0.0);
        for (c, &dw) in noise.increments.iter().enumerate() {
            let m = &self.cells[c * self.regimes + noise.regimes[c]];
            m.u1.apply(&z, &mut u1);
            m.u2.apply(&z, &mut u2);
            m.drift.apply(&z, &mut drift);
            m.diffusion.apply(&z, &mut diff);
            let state_left = if nx > 0 { quadratic(&m.q, &z[..nx]) } else { 0.0 };
            for k in 0..nz {
                z[k] += drift[k] * h + diff[k] * dw;
            }
            let state_right = if nx > 0 { quadratic(&m.q, &z[..nx]) } else { 0.0 };
            cost += 0.5 * h * (state_left + state_right) + h * (quadratic(&m.r1, &u1) + quadratic(&m.r2, &u2));
            e1 += h * u1.iter().map(|v| v * v).sum::<f64>();
            e2 += h * u2.iter().map(|v| v * v).sum::<f64>();
            if !z.iter().all(|v| v.is_finite()) {
                return None;
            }
            if let Some(r) = record.as_deref_mut() {
                r.extend_from_slice(&z);
            }
        }
        if nx > 0 {
            let last = noise.path.state_at(self.grid.horizon()).index();
            let xt = &z[..nx];
            cost += quadratic(&self.terminal_weight[last], xt)
                + 2.0 * self.terminal_linear[last].iter().zip(xt).map(|(a, b)| a * b).sum::<f64>();
        }
        cost.is_finite().then_some(RunResult {
            cost,
            follower_energy: e1,
            leader_energy: e2,
        })
    }
}
