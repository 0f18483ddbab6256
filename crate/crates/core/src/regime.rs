//! Continuous-time finite-state Markov chains: generators, exact path
//! simulation, jump counters and their compensators.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;

const ROW_SUM_TOLERANCE: f64 = 1e-12;

/// A regime label. Printed 1-based, stored 0-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Regime(usize);

impl Regime {
    pub fn from_number(number: usize) -> Option<Self> {
        number.checked_sub(1).map(Regime)
    }

    pub fn from_index(index: usize) -> Self {
        Regime(index)
    }

    pub fn index(self) -> usize {
        self.0
    }

    pub fn number(self) -> usize {
        self.0 + 1
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.number())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorPiece {
    pub start: f64,
    pub end: f64,
    pub rates: DMatrix<f64>,
}

/// Piecewise-constant transition-rate matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pieces: Vec<GeneratorPiece>,
}

/// Checks sign and row-sum conditions of a single rate matrix.
pub fn validate_generator(rates: &DMatrix<f64>) -> Result<()> {
    if rates.nrows() != rates.ncols() || rates.nrows() == 0 {
        return Err(Error::Dimension {
            key: "generator".into(),
            expected: "non-empty square matrix".into(),
            found: format!("{}x{}", rates.nrows(), rates.ncols()),
        });
    }
    let d = rates.nrows();
    for i in 0..d {
        let mut sum = 0.0;
        let mut scale: f64 = 1.0;
        for j in 0..d {
            let v = rates[(i, j)];
            if !v.is_finite() {
                return Err(Error::Generator {
                    row: i + 1,
                    col: j + 1,
                    reason: format!("non-finite rate {v}"),
                });
            }
            if i != j && v < 0.0 {
                return Err(Error::Generator {
                    row: i + 1,
                    col: j + 1,
                    reason: format!("negative off-diagonal rate {v}"),
                });
            }
            sum += v;
            scale = scale.max(v.abs());
        }
        if sum.abs() > ROW_SUM_TOLERANCE * scale {
            return Err(Error::Generator {
                row: i + 1,
                col: d,
                reason: format!("row {} sums to {sum}", i + 1),
            });
        }
    }
    Ok(())
}

impl Generator {
    pub fn constant(rates: DMatrix<f64>) -> Result<Self> {
        Self::piecewise(vec![GeneratorPiece {
            start: 0.0,
            end: f64::INFINITY,
            rates,
        }])
    }

    /// Pieces must be contiguous and start at 0. The last piece extends to
    /// infinity regardless of its stated end.
    pub fn piecewise(mut pieces: Vec<GeneratorPiece>) -> Result<Self> {
        let Some(first) = pieces.first() else {
            return Err(Error::InvalidArgument("generator needs at least one piece".into()));
        };
        if first.start != 0.0 {
            return Err(Error::InvalidArgument("generator must start at t = 0".into()));
        }
        let d = first.rates.nrows();
        for w in pieces.windows(2) {
            if w[0].end != w[1].start || !(w[0].start < w[0].end) {
                return Err(Error::InvalidArgument(format!(
                    "generator pieces are not contiguous near t = {}",
                    w[0].end
                )));
            }
        }
        for p in &pieces {
            if p.rates.nrows() != d {
                return Err(Error::Dimension {
                    key: "generator".into(),
                    expected: format!("{d}x{d}"),
                    found: format!("{}x{}", p.rates.nrows(), p.rates.ncols()),
                });
            }
            validate_generator(&p.rates)?;
        }
        if let Some(last) = pieces.last_mut() {
            last.end = f64::INFINITY;
        }
        Ok(Self { pieces })
    }

    pub fn num_regimes(&self) -> usize {
        self.pieces[0].rates.nrows()
    }

    pub fn pieces(&self) -> &[GeneratorPiece] {
        &self.pieces
    }

    fn piece_index(&self, t: f64) -> usize {
        self.pieces
            .iter()
            .position(|p| t < p.end)
            .unwrap_or(self.pieces.len() - 1)
    }

    /// Rates in force at `t` (right-continuous).
    pub fn rates_at(&self, t: f64) -> &DMatrix<f64> {
        &self.pieces[self.piece_index(t)].rates
    }

    /// Interior switching times.
    pub fn breakpoints(&self) -> Vec<f64> {
        self.pieces[..self.pieces.len() - 1]
            .iter()
            .map(|p| p.end)
            .collect()
    }

    /// `∫_a^b λ_ik(s) ds`, exact for piecewise-constant rates.
    pub fn integrated_rate(&self, i: usize, k: usize, a: f64, b: f64) -> f64 {
        let mut total = 0.0;
        for p in &self.pieces {
            let lo = a.max(p.start);
            let hi = b.min(p.end);
            if hi > lo {
                total += p.rates[(i, k)] * (hi - lo);
            }
        }
        total
    }
}

/// One realisation of the chain on `[0, horizon]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RegimePath {
    initial: Regime,
    horizon: f64,
    jump_times: Vec<f64>,
    states: Vec<Regime>,
}

impl RegimePath {
    pub fn constant(regime: Regime, horizon: f64) -> Self {
        Self {
            initial: regime,
            horizon,
            jump_times: Vec::new(),
            states: Vec::new(),
        }
    }

    /// Builds a path from explicit jumps, checking ordering and that each
    /// jump changes the state.
    pub fn from_jumps(initial: Regime, horizon: f64, jumps: Vec<(f64, Regime)>) -> Result<Self> {
        let mut prev_t = 0.0;
        let mut prev_state = initial;
        for &(t, s) in &jumps {
            if !(t > prev_t && t <= horizon) {
                return Err(Error::InvalidArgument(format!("jump time {t} out of order")));
            }
            if s == prev_state {
                return Err(Error::InvalidArgument(format!("jump at {t} does not change state")));
            }
            prev_t = t;
            prev_state = s;
        }
        let (jump_times, states) = jumps.into_iter().unzip();
        Ok(Self {
            initial,
            horizon,
            jump_times,
            states,
        })
    }

    pub fn initial(&self) -> Regime {
        self.initial
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    pub fn post_jump_states(&self) -> &[Regime] {
        &self.states
    }

    pub fn num_jumps(&self) -> usize {
        self.jump_times.len()
    }

    /// α(t), right-continuous.
    pub fn state_at(&self, t: f64) -> Regime {
        let n = self.jump_times.partition_point(|&s| s <= t);
        if n == 0 {
            self.initial
        } else {
            self.states[n - 1]
        }
    }

    /// α(t−).
    pub fn state_before(&self, t: f64) -> Regime {
        let n = self.jump_times.partition_point(|&s| s < t);
        if n == 0 {
            self.initial
        } else {
            self.states[n - 1]
        }
    }

    /// N_k(t): number of entries into `k` on `(0, t]`.
    pub fn entries_into(&self, k: Regime, t: f64) -> usize {
        let n = self.jump_times.partition_point(|&s| s <= t);
        self.states[..n].iter().filter(|&&s| s == k).count()
    }

    /// `(start, end, regime)` sojourns covering `[0, horizon]`.
    pub fn sojourns(&self) -> impl Iterator<Item = (f64, f64, Regime)> + '_ {
        let starts = std::iter::once(0.0).chain(self.jump_times.iter().copied());
        let ends = self
            .jump_times
            .iter()
            .copied()
            .chain(std::iter::once(self.horizon));
        let states = std::iter::once(self.initial).chain(self.states.iter().copied());
        starts
            .zip(ends)
            .zip(states)
            .map(|((a, b), s)| (a, b, s))
    }

    /// Time spent in `k` during `[0, t]`.
    pub fn occupation_time(&self, k: Regime, t: f64) -> f64 {
        self.sojourns()
            .filter(|&(_, _, s)| s == k)
            .map(|(a, b, _)| (b.min(t) - a).max(0.0))
            .sum()
    }
}

/// Exact simulation by exponential holding times and the embedded jump chain.
/// A generator switch restarts the clock, which is exact by memorylessness.
pub fn simulate_chain<R: Rng + ?Sized>(
    generator: &Generator,
    initial: Regime,
    horizon: f64,
    rng: &mut R,
) -> RegimePath {
    let mut path = RegimePath::constant(initial, horizon);
    let mut t = 0.0;
    let mut state = initial.index();
    let mut piece = generator.piece_index(0.0);
    let d = generator.num_regimes();
    loop {
        let p = &generator.pieces[piece];
        let seg_end = p.end.min(horizon);
        let exit = -p.rates[(state, state)];
        if exit > 0.0 {
            let hold: f64 = Exp1.sample(rng);
            let candidate = t + hold / exit;
            if candidate < seg_end {
                t = candidate;
                let target = rng.random::<f64>() * exit;
                let mut acc = 0.0;
                let mut next = None;
                for j in (0..d).filter(|&j| j != state) {
                    let rate = p.rates[(state, j)];
                    if rate <= 0.0 {
                        continue;
                    }
                    acc += rate;
                    next = Some(j);
                    if target < acc {
                        break;
                    }
                }
                // `next` is Some because exit > 0 implies a positive off-diagonal rate.
                state = next.unwrap_or(state);
                path.jump_times.push(t);
                path.states.push(Regime(state));
                continue;
            }
        }
        if seg_end >= horizon {
            break;
        }
        t = seg_end;
        piece += 1;
    }
    path
}

/// Compensated counter Ñ_k(t) = N_k(t) − ∫_0^t Σ_{i≠k} λ_ik(s) 1{α(s−)=i} ds.
pub fn compensator(path: &RegimePath, generator: &Generator, k: Regime, t: f64) -> Result<f64> {
    let d = generator.num_regimes();
    if k.index() >= d {
        return Err(Error::InvalidArgument(format!("regime {k} outside 1..={d}")));
    }
    if t > path.horizon() {
        return Err(Error::InvalidArgument(format!(
            "t = {t} beyond horizon {}",
            path.horizon()
        )));
    }
    let mut intensity = 0.0;
    for (a, b, s) in path.sojourns() {
        if a >= t {
            break;
        }
        if s != k {
            intensity += generator.integrated_rate(s.index(), k.index(), a, b.min(t));
        }
    }
    Ok(path.entries_into(k, t) as f64 - intensity)
}

/// Forward Kolmogorov equation dp/ds = p λ(s), p(0) = e_initial, RK4 on the grid.
/// Returns one probability vector per node.
pub fn regime_distribution(generator: &Generator, initial: Regime, grid: &TimeGrid) -> Vec<DVector<f64>> {
    let d = generator.num_regimes();
    let h = grid.step();
    let mut p = DVector::zeros(d);
    p[initial.index()] = 1.0;
    let mut out = Vec::with_capacity(grid.num_nodes());
    out.push(p.clone());
    for cell in 0..grid.steps() {
        let lt = generator.rates_at(grid.midpoint(cell)).transpose();
        let k1 = &lt * &p;
        let k2 = &lt * (&p + &k1 * (0.5 * h));
        let k3 = &lt * (&p + &k2 * (0.5 * h));
        let k4 = &lt * (&p + &k3 * h);
        p += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        out.push(p.clone());
    }
    out
}
