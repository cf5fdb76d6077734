//! Grids, grid functions, spectral operators and interaction kernels.

pub mod fft;
mod field;
mod grid;
mod potential;
mod spectral;

pub use field::{inner, lp_norm, norm_sqr, Field};
pub use grid::{make_grid, Geometry, Grid};
pub use potential::{convolve, Convolver, ExternalPotential, Potential, PotentialKind, ScalingParams, DEFAULT_SOFTENING};
pub use spectral::{apply_kinetic, apply_multiplier, derivative, kinetic_propagate, spectral_shift};
pub(crate) use spectral::kinetic_in_place;
