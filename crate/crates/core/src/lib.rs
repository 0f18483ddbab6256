//! Closed-form Stackelberg equilibria for zero-sum linear-quadratic games
//! whose coefficients switch with a finite-state Markov chain.
//!
//! The pipeline: load a [`model::ProblemData`], solve the follower and leader
//! Riccati systems ([`riccati`]), build the equilibrium ([`equilibrium`]) and
//! check it by simulation ([`montecarlo`]).

pub mod coefficients;
pub mod equilibrium;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod model;
pub mod montecarlo;
pub mod regime;
pub mod report;
pub mod riccati;

pub use equilibrium::{value_functions, Equilibrium};
pub use error::{Error, Result};
pub use grid::TimeGrid;
pub use model::{load_problem, ProblemData};
pub use regime::{Generator, Regime, RegimePath};
pub use riccati::{RiccatiSolution, SolveOptions};
