//! Quantum dynamics of an extended (surface-charged) electron.
//!
//! The crate solves the delay differential equations that drive a Gaussian
//! wave packet's center `q(t)`, width `a(t)` and center-line action `S₀(t)`,
//! evaluates the closed-form packet together with its Bohmian hydrodynamic
//! fields, builds the velocity-integral propagator by quadrature, and ships a
//! set of residual checks that feed every closed form back into the equations
//! it has to satisfy.
//!
//! Layout:
//!
//! * [`params`] physical constants, dimensionless parameter sets, initial data
//! * [`dde`] method-of-steps RK4 solver with cubic Hermite dense output
//! * [`packet`] wave function, density, phase, velocity and potentials
//! * [`verify`] finite-difference residual oracles
//! * [`propagator`] velocity-family propagator, completeness and reproduction
//! * [`cli`] scenario configuration and runner

pub mod cli;
pub mod dde;
pub mod error;
pub mod output;
pub mod packet;
pub mod params;
pub mod propagator;
pub mod verify;

pub use error::{Error, Result};
pub use num_complex::Complex64;
