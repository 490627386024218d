//! Numerical laboratory for branching random walks in a static random
//! environment and their scaling limits.
//!
//! The crate provides the lattice geometry and difference operators, the
//! random potential with its two-dimensional renormalization, lattice
//! Littlewood–Paley calculus, an exact event-driven particle simulator,
//! deterministic solvers for the discrete parabolic Anderson model and
//! its moment hierarchy, the log-Laplace dual equations, Dirichlet
//! Anderson Hamiltonian spectra and a one-dimensional SPDE integrator.

pub mod besov;
pub mod dual;
pub mod environment;
pub mod error;
pub mod fourier;
pub mod io;
pub mod lattice;
pub mod linalg;
pub mod pam;
pub mod particle;
pub mod quadrature;
pub mod rng;
pub mod scalar;
pub mod spde1d;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};
pub use lattice::{Boundary, LatticeBox, TestFunction, WeightSpec};
pub use scalar::Real;

/// Double-precision lattice field used by every solver.
pub type Field = lattice::Field<f64>;
/// Single-precision lattice field.
pub type FieldF32 = lattice::Field<f32>;
