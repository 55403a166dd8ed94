//! Numerical toolkit for the grand-canonical continuum gas and its
//! quasi-continuous approximation.
//!
//! The continuum gas lives on a box Λ ⊂ ℝ^d with fugacity `z` and inverse
//! temperature `β`. Partitioning Λ into hyper-cubes of edge `a` and keeping
//! only *dilute* configurations (at most one particle per cube) yields the
//! quasi-continuous partition function `Z⁻(z, β, a)` and correlation
//! functions `ρ⁻(η; z, β, a)`. As `a → 0` these converge to the continuum
//! quantities, at a rate controlled by superstability constants of the
//! interaction. This crate evaluates all of these objects numerically — with
//! explicit error bounds — so the convergence can be observed against exact
//! oracles (ideal gas, hard rods) at desk scale.
//!
//! Module map:
//!
//! * [`geometry`] — boxes, cube partitions, configurations, occupancy and
//!   the dilute/dense indicators.
//! * [`potential`] — two-body potentials, the in-cube repulsion infimum
//!   `b(a)`, the lattice attraction sum `υ_ε(a)`, superstability constants.
//! * [`manybody`] — truncated many-body families, their energies and the
//!   cube quantities behind the many-body superstability constants.
//! * [`stability`] — randomized falsification of the (S)/(SS)/(SSS)
//!   lower bounds.
//! * [`ensemble`] — `Z`, `Z⁻`, `ρ`, `ρ⁻` via the truncated expansion in
//!   particle number, with quadrature / Monte Carlo term evaluation and a
//!   rigorous truncation tail.
//! * [`convergence`] — the `ε₁(a)` series, the closed-form remainder bound,
//!   the exact decomposition identity, and `a`-sweeps.
//! * [`config`] / [`cli`] — the flat key-value run configuration and the
//!   command-line driver.
//!
//! Negated float comparisons (`!(x > 0.0)`) appear throughout as guards:
//! unlike `x <= 0.0` they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod convergence;
pub mod ensemble;
pub mod error;
pub mod geometry;
pub mod manybody;
pub mod numeric;
pub mod potential;
pub mod stability;

pub use error::{Error, Result};
