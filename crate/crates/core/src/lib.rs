//! Numerical realisation of stochastic parabolic evolution equations driven by
//! random non-autonomous generators on the unit interval.
//!
//! The crate is organised bottom-up:
//!
//! * [`mds`] samples two-sided Q-Wiener paths and implements the Wiener shift.
//! * [`operators`] builds the random diffusion coefficient, its spectral
//!   Galerkin matrix and fractional powers.
//! * [`evolution`] assembles the discrete evolution family as a chain of
//!   frozen-coefficient matrix exponentials.
//! * [`pathwise`] integrates linear and semilinear pathwise mild solutions.
//! * [`ou`] constructs the stationary Ornstein–Uhlenbeck-type process.
//! * [`attractor`] integrates the transformed equation and estimates pullback
//!   attractors.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attractor;
pub mod error;
pub mod evolution;
pub mod grid;
pub mod mds;
pub mod operators;
pub mod ou;
pub mod pathwise;
pub mod quadrature;
pub mod stats;

pub use error::{Error, Result};
pub use evolution::{ChainBuilder, DecayFit, PropagatorChain};
pub use grid::TimeGrid;
pub use mds::{sample_two_sided_path, wiener_shift, NoiseSpectrum, ShiftIndex, WienerPath};
pub use operators::{
    AffineOperator, DiffusionField, FractionalNormSpec, GalerkinOperator, Profile, ReferenceNorm,
};
pub use pathwise::{
    CorrectorRule, NonlinearityKind, NonlinearitySpec, SemilinearProblem, SpectralGrid, Status,
    Trajectory,
};

pub use nalgebra::{DMatrix, DVector};

/// Fixed 17-significant-digit scientific formatting used for every numeric
/// field written to disk.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}
