//! Empirical risk minimization over functions of bounded sectional variation
//! on `[0,1]^d`, with bracketing, Bernstein-norm and convergence-rate audits.

pub mod basis;
pub mod bernstein;
pub mod data;
pub mod design;
pub mod entropy;
pub mod error;
pub mod grid;
mod homotopy;
pub mod losses;
pub mod rng;
pub mod sim;
pub mod solver;
pub mod subset;
pub mod svn;

pub use error::{Error, Result};
pub use grid::{Evaluate, GridFunction};
pub use subset::SubsetMask;
