//! Additive decomposition of a function of two variables into functions of
//! one variable, on finite plane samples.
//!
//! Given sample points `(x_i, y_i, f_i)` whose positions contain no
//! three-point axis-parallel array, this crate constructs piecewise-linear
//! `g` and `h` with `f(x, y) ≈ g(x) + h(y)`, by building dyadic lattice
//! graphs over the sample, solving a shortest-path potential on each sign
//! class, and iterating the single-step construction until the residual is
//! below tolerance.

pub mod cli;
pub mod error;
pub mod geometry;
pub mod lattice;
pub mod oracle;
pub mod solver;
pub mod step;

pub use error::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
