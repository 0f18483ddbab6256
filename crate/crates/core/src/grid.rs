use crate::error::{Error, Result};

/// Uniform partition of `[0, horizon]`.
///
/// Cell `j` is `[s_j, s_{j+1})`. Coefficients are sampled at a cell's midpoint,
/// so a breakpoint on a node never leaks into the neighbouring cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Grid(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::Grid("steps must be positive".into()));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn num_nodes(&self) -> usize {
        self.steps + 1
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, node: usize) -> f64 {
        if node >= self.steps {
            self.horizon
        } else {
            self.horizon * node as f64 / self.steps as f64
        }
    }

    pub fn midpoint(&self, cell: usize) -> f64 {
        self.horizon * (cell as f64 + 0.5) / self.steps as f64
    }

    /// Cell whose coefficients apply at node `node` (the last node borrows
    /// from the final cell).
    pub fn cell_of_node(&self, node: usize) -> usize {
        node.min(self.steps - 1)
    }

    /// Cell containing time `t` (clamped to the grid).
    pub fn cell_at(&self, t: f64) -> usize {
        let x = (t / self.horizon * self.steps as f64).floor();
        if x <= 0.0 {
            0
        } else {
            (x as usize).min(self.steps - 1)
        }
    }

    pub fn is_node(&self, t: f64) -> bool {
        let x = t / self.horizon * self.steps as f64;
        (x - x.round()).abs() <= 1e-9 * x.abs().max(1.0)
    }

    /// Errors unless every breakpoint falls on a node.
    pub fn check_breakpoints(&self, breakpoints: &[f64]) -> Result<()> {
        match breakpoints.iter().find(|&&b| !self.is_node(b)) {
            Some(b) => Err(Error::Grid(format!(
                "breakpoint {b} is not a node of the {}-step grid on [0, {}]",
                self.steps, self.horizon
            ))),
            None => Ok(()),
        }
    }

    /// Grid with `steps / factor` cells.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.steps % factor != 0 {
            return Err(Error::Grid(format!(
                "{} steps are not divisible by {factor}",
                self.steps
            )));
        }
        Self::new(self.horizon, self.steps / factor)
    }

    /// Ratio `self.steps / coarse.steps`, if it is a whole number.
    pub fn refinement_of(&self, coarse: &TimeGrid) -> Result<usize> {
        if coarse.horizon != self.horizon || self.steps % coarse.steps != 0 {
            return Err(Error::Grid(format!(
                "{}-step grid does not refine the {}-step grid",
                self.steps, coarse.steps
            )));
        }
        Ok(self.steps / coarse.steps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_are_exact() {
        let g = TimeGrid::new(1.0, 3).unwrap();
        assert_eq!(g.time(0), 0.0);
        assert_eq!(g.time(3), 1.0);
        assert_eq!(g.cell_of_node(3), 2);
        assert_eq!(g.cell_at(0.5), 1);
        assert_eq!(g.cell_at(1.0), 2);
    }

    #[test]
    fn breakpoint_alignment() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        assert!(g.check_breakpoints(&[0.3, 0.5]).is_ok());
        assert!(g.check_breakpoints(&[0.25]).is_err());
    }
}
