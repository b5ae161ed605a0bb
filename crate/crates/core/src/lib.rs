//! Numerical laboratory for alloy-type random Schrödinger operators whose
//! single site potentials change sign.
//!
//! The pieces, bottom up:
//! - [`toeplitz`]: the convolution transform `A = {α_{j-k}}` on `Λ⁺` and its inverse.
//! - [`density`] and [`densities`]: single-site densities and the transformed
//!   common, marginal and conditional densities.
//! - [`operator`]: finite-difference Hamiltonians `-Δ_h + V₀ + V_ω` with periodic
//!   boundary conditions.
//! - [`spectral`]: eigenvalues, counting functions and IDS estimates.
//! - [`wegner`]: Monte Carlo checks of the Wegner estimate and of the
//!   inequalities used to prove it.
//! - [`msa`]: good-box and resolvent-identity diagnostics from multiscale analysis.

pub mod densities;
pub mod density;
pub mod error;
pub mod msa;
pub mod operator;
pub mod quadrature;
pub mod sparse;
pub mod spectral;
pub mod stats;
pub mod toeplitz;
pub mod wegner;

pub use error::{Error, Result};
