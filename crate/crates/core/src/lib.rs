//! Finite-volume numerics for lattice Schrödinger operators H = h(e) + V on ℤ^d:
//! dispersions on the torus, the dilation-type conjugate operator A, commutator
//! counts, decay functionals and the pure-point bound, singular torus integrals.

pub mod config;
pub mod error;
pub mod examples;
pub mod functionals;
pub mod lattice;
pub mod linalg;
pub mod quadrature;
pub mod spectral;
pub mod torus;

pub use config::Tolerances;
pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
