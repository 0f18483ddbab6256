//! Fixed-step classical RK4, integrated backward from the terminal node.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::linalg::symmetrize_in_place;

pub(crate) type State = Vec<DMatrix<f64>>;

const BLOW_UP: f64 = 1e12;

fn combine(base: &State, k: &State, scale: f64) -> State {
    base.iter().zip(k).map(|(b, k)| b + k * scale).collect()
}

fn healthy(state: &State) -> bool {
    state.iter().flatten().all(|v| v.is_finite() && v.abs() <= BLOW_UP)
}

/// How many RK4 steps to take inside one grid cell.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Substeps {
    One,
    /// Subdivide until `h * rate <= target`, where `rate` is the largest
    /// relative rate of change at the start of the cell plus `extra_rate`.
    Stiff { target: f64, max: usize, extra_rate: f64 },
}

/// Integrates `dV/ds = rhs(cell, s, V)` from `terminal` at `s = T` down to 0.
///
/// Outputs stay on the grid whatever the substep rule. Square components are
/// symmetrized after every step. Returns one state per node, node 0 first,
/// and the total number of RK4 steps taken.
pub(crate) fn integrate_backward<F>(
    grid: &TimeGrid,
    terminal: State,
    rhs: &mut F,
    substeps: Substeps,
) -> Result<(Vec<State>, usize)>
where
    F: FnMut(usize, f64, &State) -> Result<State>,
{
    let n = grid.steps();
    let mut out: Vec<State> = Vec::with_capacity(n + 1);
    let mut v = terminal;
    out.push(v.clone());
    let mut total_steps = 0;
    for cell in (0..n).rev() {
        let s_hi = grid.time(cell + 1);
        let s_lo = grid.time(cell);
        let m = match substeps {
            Substeps::One => 1,
            Substeps::Stiff { target, max, extra_rate } => {
                let f = rhs(cell, s_hi, &v)?;
                let mut rate: f64 = 0.0;
                for (fi, vi) in f.iter().zip(&v) {
                    rate = rate.max(fi.abs().max() / vi.abs().max().max(1e-12));
                }
                let h = s_hi - s_lo;
                ((h * (rate + extra_rate) / target).ceil() as usize).clamp(1, max)
            }
        };
        let h = -(s_hi - s_lo) / m as f64;
        for k in 0..m {
            let s = s_hi + h * k as f64;
            let k1 = rhs(cell, s, &v)?;
            let k2 = rhs(cell, s + 0.5 * h, &combine(&v, &k1, 0.5 * h))?;
            let k3 = rhs(cell, s + 0.5 * h, &combine(&v, &k2, 0.5 * h))?;
            let k4 = rhs(cell, s + h, &combine(&v, &k3, h))?;
            for (idx, x) in v.iter_mut().enumerate() {
                *x += (&k1[idx] + &k2[idx] * 2.0 + &k3[idx] * 2.0 + &k4[idx]) * (h / 6.0);
                if x.is_square() {
                    symmetrize_in_place(x);
                }
            }
            if !healthy(&v) {
                return Err(Error::BlowUp {
                    time: s + h,
                    last_valid: grid.time(cell + 1),
                });
            }
        }
        total_steps += m;
        out.push(v.clone());
    }
    out.reverse();
    Ok((out, total_steps))
}

/// Largest gap between a fourth-order finite-difference derivative of the
/// discrete solution and the right-hand side, over components `range`.
/// Stencils that straddle a breakpoint node are skipped.
pub(crate) fn max_residual<F>(
    grid: &TimeGrid,
    nodes: &[State],
    rhs: &mut F,
    range: std::ops::Range<usize>,
    breakpoint_nodes: &[usize],
) -> Result<f64>
where
    F: FnMut(usize, f64, &State) -> Result<State>,
{
    let n = grid.steps();
    if n < 4 {
        return Ok(f64::NAN);
    }
    let h = grid.step();
    let mut worst: f64 = 0.0;
    for j in 0..=n {
        let (lo, weights): (usize, [f64; 5]) = if j < 2 {
            let w = [-25.0, 48.0, -36.0, 16.0, -3.0];
            if j == 0 {
                (0, w)
            } else {
                (0, [-3.0, -10.0, 18.0, -6.0, 1.0])
            }
        } else if j + 2 > n {
            if j == n {
                (n - 4, [3.0, -16.0, 36.0, -48.0, 25.0])
            } else {
                (n - 4, [-1.0, 6.0, -18.0, 10.0, 3.0])
            }
        } else {
            (j - 2, [1.0, -8.0, 0.0, 8.0, -1.0])
        };
        let hi = lo + 4;
        if breakpoint_nodes.iter().any(|&b| b > lo && b < hi || (b == lo || b == hi) && b == j) {
            continue;
        }
        let f = rhs(grid.cell_of_node(j), grid.time(j), &nodes[j])?;
        for c in range.clone() {
            let mut deriv = nodes[lo][c].clone() * weights[0];
            for (k, w) in weights.iter().enumerate().skip(1) {
                deriv += &nodes[lo + k][c] * *w;
            }
            deriv /= 12.0 * h;
            worst = worst.max((deriv - &f[c]).abs().max());
        }
    }
    Ok(worst)
}
