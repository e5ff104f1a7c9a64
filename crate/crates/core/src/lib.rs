//! Bayesian optimal design of seismic receiver arrays.
//!
//! The crate evaluates the expected information gain of a receiver layout for
//! inverting a point moment-tensor source in a layered 2D elastic medium. The
//! information gain is computed with a Laplace approximation of the posterior:
//! the Gauss-Newton Hessian of the data misfit is assembled from sensitivity
//! solves of a second-order finite-difference elastodynamic solver, optionally
//! corrected with a dual (adjoint) solve, and integrated over the prior with
//! Monte Carlo or Smolyak sparse quadrature.
//!
//! Module map:
//!
//! * [`grid`], [`medium`]: uniform grid and layered isotropic material.
//! * [`source`]: Gaussian time function and regularized δ / δ′ stencils.
//! * [`solver`]: operator assembly, primal/sensitivity stepping and the dual solve.
//! * [`hessian`]: `H_I`, `H_II`, parameter scaling and conditioning.
//! * [`inference`]: priors, cost functional, Laplace estimators and nested Monte Carlo.
//! * [`integrate`]: Gauss-Legendre, Smolyak total-degree rules and Monte Carlo.
//! * [`model`]: the seismic forward problem wired together for a parameter subset.
//! * [`design`], [`config`], [`run`]: receiver layouts, run configuration and batch drivers.

pub mod config;
pub mod design;
pub mod error;
pub mod grid;
pub mod hessian;
pub mod inference;
pub mod integrate;
pub mod medium;
pub mod model;
pub mod run;
pub mod source;
pub mod solver;

pub use error::{Error, Result};
