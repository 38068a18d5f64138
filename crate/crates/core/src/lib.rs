//! Numerical Hamiltonian dynamics on b-symplectic manifolds in action-angle form.
//!
//! The crate works on the model chart `T^n x B^n` whose exceptional hypersurface
//! is `Z = {y_1 = 0}`. It integrates b-Hamiltonian flows, extracts frequencies,
//! computes Kolmogorov normal forms by Newton iteration on Fourier-Taylor series,
//! and builds invariant tori inside `Z` for perturbations of
//! `k log|y_1| + h(y)`, checking them against the perturbed flow.

// `!(x > 0.0)` style checks are how NaN inputs get rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod action_angle;
pub mod bkam;
pub mod dynamics;
pub mod error;
pub mod examples;
pub mod frequency;
pub mod normal_form;
pub mod phase_space;
pub mod trig_poly;

pub use error::{Error, Result};
pub use phase_space::{BHamiltonian, BPhaseSpace, State};
