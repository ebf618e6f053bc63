//! Brake orbits of classical-type Hamiltonians in a bounded potential well,
//! computed through the Jacobi-Finsler geometry of the energy shell.
//!
//! The pipeline: homogenize H to a degree-2 Hamiltonian U on the shell,
//! pass to the Finsler metric G via the Legendre transform, measure the
//! boundary distance functional psi, certify a concave shrunken region,
//! find orthogonal geodesic chords of that region, and convert the chords
//! back into brake orbits of the original system.

pub mod error;
pub mod model;
pub mod quad;
pub mod scenario;
pub mod spline;

pub mod chords;
pub mod flow;
pub mod geodesy;
pub mod homogenize;
pub mod legendre;
pub mod psi;
pub mod reparam;

pub use error::{Error, Result};
