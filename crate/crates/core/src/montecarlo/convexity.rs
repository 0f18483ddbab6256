//! Empirical uniform convexity (follower) and concavity (leader) evidence.
//!
//! Sampling random controls gives necessary-condition evidence only: a ratio
//! outside the expected range refutes the condition, a ratio inside does not
//! prove it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{estimate_costs, random_direction, FollowerSpec, LeaderSpec, McConfig, Side};
use crate::error::{Error, Result};
use crate::model::ProblemData;
use crate::regime::Regime;

/// Estimate of `J0(0, i; u) / E∫|u|^2` for one probe control.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeRatio {
    pub side: Side,
    pub regime: Regime,
    pub ratio: f64,
    /// Delta-method standard error of the ratio.
    pub std_error: f64,
    pub cost: f64,
    pub energy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvexityReport {
    pub probes: usize,
    pub follower: Vec<ProbeRatio>,
    pub leader: Vec<ProbeRatio>,
}

impl ConvexityReport {
    /// Smallest follower ratio with its standard error.
    pub fn min_follower_ratio(&self) -> Option<&ProbeRatio> {
        self.follower.iter().min_by(|a, b| a.ratio.total_cmp(&b.ratio))
    }

    /// Largest leader ratio with its standard error.
    pub fn max_leader_ratio(&self) -> Option<&ProbeRatio> {
        self.leader.iter().max_by(|a, b| a.ratio.total_cmp(&b.ratio))
    }

    /// Smallest follower and largest leader ratio per starting regime.
    pub fn by_regime(&self) -> Vec<(Regime, f64, f64)> {
        let mut regimes: Vec<Regime> = self.follower.iter().map(|p| p.regime).collect();
        regimes.sort();
        regimes.dedup();
        regimes
            .into_iter()
            .map(|r| {
                let lo = self.follower.iter().filter(|p| p.regime == r).map(|p| p.ratio).fold(f64::INFINITY, f64::min);
                let hi = self.leader.iter().filter(|p| p.regime == r).map(|p| p.ratio).fold(f64::NEG_INFINITY, f64::max);
                (r, lo, hi)
            })
            .collect()
    }
}

fn ratio(side: Side, regime: Regime, costs: &[f64], energies: &[f64]) -> ProbeRatio {
    let n = costs.len() as f64;
    let cost = costs.iter().sum::<f64>() / n;
    let energy = energies.iter().sum::<f64>() / n;
    let ratio = cost / energy;
    let residuals: Vec<f64> = costs.iter().zip(energies).map(|(c, e)| c - ratio * e).collect();
    let (_, se) = super::mean_and_se(&residuals);
    ProbeRatio {
        side,
        regime,
        ratio,
        std_error: se / energy.abs(),
        cost,
        energy,
    }
}

/// Draws `probes` random unit-energy controls for each player, starting the
/// chain in alternating regimes, and estimates the homogeneous cost ratios.
/// Follower probes use `(u1, 0)`, leader probes `(0, u2)`.
pub fn probe_convexity(problem: &ProblemData, probes: usize, config: &McConfig) -> Result<ConvexityReport> {
    if probes == 0 || config.paths < 2 {
        return Err(Error::InvalidArgument("probe and path counts must be positive".into()));
    }
    if !problem.is_game() {
        return Err(Error::InvalidArgument("convexity probes need a full game".into()));
    }
    let base = problem.homogeneous();
    let grid = base.grid(config.steps)?;
    let d = base.num_regimes();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(u64::MAX - 1);
    let mut report = ConvexityReport {
        probes,
        follower: Vec::with_capacity(probes),
        leader: Vec::with_capacity(probes),
    };
    for k in 0..probes {
        let regime = Regime::from_index(k % d);
        let p = base.with_initial_regime(regime)?;
        let v = random_direction(&p, &grid, regime, p.follower_dim(), &mut rng);
        let w = random_direction(&p, &grid, regime, p.leader_dim(), &mut rng);
        let specs = [
            (FollowerSpec::Table(&v), LeaderSpec::Zero),
            (FollowerSpec::Zero, LeaderSpec::Table(&w)),
        ];
        let probe_config = McConfig {
            seed: config.seed.wrapping_add(k as u64),
            ..*config
        };
        let batch = estimate_costs(&p, None, &specs, &probe_config)?;
        report.follower.push(ratio(Side::Follower, regime, &batch.costs[0], &batch.follower_energy[0]));
        report.leader.push(ratio(Side::Leader, regime, &batch.costs[1], &batch.leader_energy[1]));
    }
    Ok(report)
}
