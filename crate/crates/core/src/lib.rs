//! Semiclassical mean-field dynamics of fermions on a grid.
//!
//! The crate covers time-dependent Hartree-Fock evolution of orbital sets,
//! commutator diagnostics, the Fefferman-de la Llave decomposition of the
//! Coulomb kernel, Wigner/Vlasov comparisons, exact small-N many-body
//! benchmarks and fermionic Fock-space fluctuation dynamics.

pub mod diagnostics;
pub mod error;
pub mod fdll;
pub mod fmf;
pub mod fock;
pub mod lattice;
pub mod linalg;
pub mod manybody;
pub mod slater;
pub mod tdhf;
pub mod vlasov;
pub mod wigner;

pub use error::{Error, Result};
pub use num_complex::Complex64;
