//! Finite-difference elastodynamics: operators, time stepping and adjoints.

pub mod operators;
pub mod series;
pub mod stepping;

pub use operators::{assemble_operators, Csr, DiscreteOperators};
pub use series::ReceiverSeries;
pub use stepping::{cfl_limit, Forcing, ReceiverLoad, SparseForcing, Stepper};
